#include "cdi/diffusion.hpp"

#include <cmath>
#include <stdexcept>

#include "cdi/errors.hpp"

namespace cdi {

Tensor forward_noise(const Tensor& x, int t, const Tensor& eps,
                     const NoiseSchedule& sched) {
    if (!x.same_shape(eps))
        throw std::invalid_argument("forward_noise: eps shape must match x");
    const double a = sched.sqrt_alpha_bar(t);
    const double b = sched.sqrt_one_minus_alpha_bar(t);
    Tensor out(x.channels(), x.height(), x.width());
    for (size_t i = 0; i < x.size(); ++i) out[i] = a * x[i] + b * eps[i];
    return out;
}

double denoising_loss(const Tensor& x, int t, const Tensor& eps, const Denoiser& f,
                      const NoiseSchedule& sched, std::optional<int> cond) {
    Tensor x_t = forward_noise(x, t, eps, sched);
    Tensor pred = f.predict(x_t, t, cond);
    if (!pred.all_finite())
        throw ExtractionFailure("denoising_loss: non-finite model output");
    return mean_sq_diff(eps, pred);
}

Tensor x0_estimate(const Tensor& z_t, int t, const Denoiser& f,
                   const NoiseSchedule& sched, std::optional<int> cond) {
    const double ab = sched.alpha_bar(t);
    if (ab <= 0.0)
        throw std::domain_error("x0_estimate: alpha_bar(t) is zero");
    const double inv_sqrt_ab = 1.0 / std::sqrt(ab);
    const double coef = std::sqrt(1.0 - ab);
    Tensor pred = f.predict(z_t, t, cond);
    Tensor out(z_t.channels(), z_t.height(), z_t.width());
    for (size_t i = 0; i < z_t.size(); ++i)
        out[i] = (z_t[i] - coef * pred[i]) * inv_sqrt_ab;
    return out;
}

Tensor ddim_step_to(const Tensor& z_t, int t_from, int t_to, const Denoiser& f,
                    const NoiseSchedule& sched, std::optional<int> cond) {
    const double ab_to = sched.alpha_bar(t_to);
    const double a = std::sqrt(ab_to);
    const double b = std::sqrt(1.0 - ab_to);
    Tensor pred = f.predict(z_t, t_from, cond);

    // Inline x0_estimate so f is evaluated once.
    const double ab_from = sched.alpha_bar(t_from);
    if (ab_from <= 0.0)
        throw std::domain_error("ddim_step_to: alpha_bar(t_from) is zero");
    const double inv_sqrt_ab = 1.0 / std::sqrt(ab_from);
    const double coef = std::sqrt(1.0 - ab_from);

    Tensor out(z_t.channels(), z_t.height(), z_t.width());
    for (size_t i = 0; i < z_t.size(); ++i) {
        const double x0 = (z_t[i] - coef * pred[i]) * inv_sqrt_ab;
        out[i] = a * x0 + b * pred[i];
    }
    return out;
}

Tensor ddim_denoise_step(const Tensor& z_t, int t, const Denoiser& f,
                         const NoiseSchedule& sched, std::optional<int> cond) {
    if (t < 1) throw std::invalid_argument("ddim_denoise_step: t must be >= 1");
    return ddim_step_to(z_t, t, t - 1, f, sched, cond);
}

Tensor ddim_inverse_step(const Tensor& z_t, int t, const Denoiser& f,
                         const NoiseSchedule& sched, std::optional<int> cond) {
    if (t > sched.T() - 1)
        throw std::invalid_argument("ddim_inverse_step: t must be <= T-1");
    return ddim_step_to(z_t, t, t + 1, f, sched, cond);
}

Tensor deterministic_reverse(const Tensor& z_0, int t_target, int stride,
                             const Denoiser& f, const NoiseSchedule& sched,
                             std::optional<int> cond) {
    if (t_target < 0 || t_target > sched.T())
        throw std::invalid_argument("deterministic_reverse: t_target out of [0,T]");
    if (t_target == 0) return z_0;
    if (stride <= 0 || t_target % stride != 0)
        throw std::invalid_argument("deterministic_reverse: stride must divide t_target");
    Tensor z = z_0;
    for (int t = 0; t < t_target; t += stride)
        z = ddim_step_to(z, t, t + stride, f, sched, cond);
    return z;
}

ImageSample generate(const Denoiser& f, const NoiseSchedule& sched,
                     std::optional<int> cond, uint64_t seed, int steps,
                     int channels, int height, int width) {
    if (steps < 1 || steps > sched.T() || sched.T() % steps != 0)
        throw std::invalid_argument("generate: steps must divide T");
    Rng rng = derive_rng(seed, "generate");
    Tensor z = rng.normal_tensor(channels, height, width);
    const int stride = sched.T() / steps;
    for (int t = sched.T(); t > 0; t -= stride)
        z = ddim_step_to(z, t, t - stride, f, sched, cond);
    ImageSample out;
    out.pixels = std::move(z);
    out.label = cond;
    out.sample_id = "generated-" + std::to_string(seed);
    return out;
}

LossAndGrad denoising_loss_input_grad(const Denoiser& f, const Tensor& x_t, int t,
                                      const Tensor& eps, std::optional<int> cond) {
    if (!f.supports_input_gradient())
        throw AccessViolation("denoising_loss_input_grad: white-box access required");
    Tensor pred = f.predict(x_t, t, cond);
    if (!pred.all_finite())
        throw ExtractionFailure("denoising_loss_input_grad: non-finite model output");
    const double n = static_cast<double>(pred.size());
    // loss = mean((eps - pred)^2); d loss / d pred = -2 (eps - pred) / n
    Tensor grad_out(x_t.channels(), x_t.height(), x_t.width());
    double loss = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const double d = eps[i] - pred[i];
        loss += d * d;
        grad_out[i] = -2.0 * d / n;
    }
    LossAndGrad result{loss / n, f.vjp_input(x_t, t, cond, grad_out)};
    if (!result.grad.all_finite())
        throw ExtractionFailure("denoising_loss_input_grad: non-finite gradient");
    return result;
}

}  // namespace cdi
