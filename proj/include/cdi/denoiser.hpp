#pragma once

#include <optional>

#include "cdi/errors.hpp"
#include "cdi/tensor.hpp"

namespace cdi {

// Noise predictor f(x_t, t, cond) -> eps_hat. Prediction must be a pure
// function of (parameters, x_t, t, cond) and preserve the input shape.
//
// White-box surfaces additionally expose a vector-Jacobian product against
// the input, which is what the gradient-based features consume. Gray-box
// surfaces throw AccessViolation from vjp_input.
class Denoiser {
public:
    virtual ~Denoiser() = default;

    virtual Tensor predict(const Tensor& x_t, int t,
                           std::optional<int> cond = std::nullopt) const = 0;

    virtual bool supports_input_gradient() const { return false; }

    // d(grad_out . f(x_t,t,cond)) / d(x_t). Only meaningful when
    // supports_input_gradient() is true.
    virtual Tensor vjp_input(const Tensor& /*x_t*/, int /*t*/,
                             std::optional<int> /*cond*/,
                             const Tensor& /*grad_out*/) const {
        throw AccessViolation("denoiser does not expose input gradients");
    }
};

// Returns the denoising loss mean((eps - f(x_t))^2) together with its
// gradient with respect to x_t.
struct LossAndGrad {
    double loss;
    Tensor grad;
};

LossAndGrad denoising_loss_input_grad(const Denoiser& f, const Tensor& x_t, int t,
                                      const Tensor& eps,
                                      std::optional<int> cond = std::nullopt);

// Fixed-output denoiser: ignores the input and timestep entirely. Handy as a
// closed-form reference model (the DDIM round-trip is exact for it) and as a
// degenerate baseline.
class ConstantDenoiser : public Denoiser {
public:
    explicit ConstantDenoiser(Tensor value) : value_(std::move(value)) {}

    Tensor predict(const Tensor& x_t, int, std::optional<int>) const override {
        if (!x_t.same_shape(value_))
            throw std::invalid_argument("ConstantDenoiser: input shape mismatch");
        return value_;
    }

    bool supports_input_gradient() const override { return true; }

    Tensor vjp_input(const Tensor& x_t, int, std::optional<int>,
                     const Tensor&) const override {
        return Tensor(x_t.channels(), x_t.height(), x_t.width(), 0.0);
    }

private:
    Tensor value_;
};

}  // namespace cdi
