#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "cdi/denoiser.hpp"
#include "cdi/tensor.hpp"

namespace cdi {

struct ConvDenoiserConfig {
    int channels = 1;
    int height = 8;
    int width = 8;
    int hidden = 64;          // trunk width (conv channels)
    int blocks = 4;           // residual 3x3 conv blocks
    int time_embed_dim = 32;  // sinusoidal embedding size, must be even
    int num_classes = 0;      // 0 = unconditional
    uint64_t init_seed = 1;

    bool operator==(const ConvDenoiserConfig&) const = default;
};

// Small residual CNN noise predictor with sinusoidal timestep embedding and
// optional additive class embedding. Forward and backward passes are written
// out explicitly; backward supports both parameter gradients (training) and
// input gradients (the white-box features).
//
// Layout per prediction:
//   e = silu(W_trunk * (sin_embed(t) [+ class_embed]) + b_trunk)
//   h = conv_in(x)
//   repeat per block l:  h <- h + conv_l(silu(h + proj_l(e)))
//   out = conv_out(silu(h))
class ConvDenoiser : public Denoiser {
public:
    explicit ConvDenoiser(const ConvDenoiserConfig& cfg);

    Tensor predict(const Tensor& x_t, int t,
                   std::optional<int> cond = std::nullopt) const override;

    bool supports_input_gradient() const override { return true; }

    Tensor vjp_input(const Tensor& x_t, int t, std::optional<int> cond,
                     const Tensor& grad_out) const override;

    // Computes loss = mean((eps - f(x_t,t,cond))^2) and accumulates
    // d loss / d params into grad_accum (flat, same layout as params()).
    double loss_backward_params(const Tensor& x_t, int t, std::optional<int> cond,
                                const Tensor& eps,
                                std::vector<double>& grad_accum) const;

    const ConvDenoiserConfig& config() const { return cfg_; }
    size_t param_count() const { return params_.size(); }
    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }

private:
    struct Workspace;

    void check_input(const Tensor& x_t, int t, std::optional<int> cond) const;
    void forward(const Tensor& x_t, int t, std::optional<int> cond, Workspace& ws) const;
    // Backward from ws.d_out. Fills ws.d_input; accumulates into param_grad
    // when non-null.
    void backward(const Tensor& x_t, std::optional<int> cond, Workspace& ws,
                  std::vector<double>* param_grad) const;

    ConvDenoiserConfig cfg_;
    std::vector<double> params_;

    // Flat-parameter offsets.
    size_t off_conv_in_w_ = 0, off_conv_in_b_ = 0;
    std::vector<size_t> off_block_w_, off_block_b_;
    std::vector<size_t> off_proj_w_, off_proj_b_;
    size_t off_conv_out_w_ = 0, off_conv_out_b_ = 0;
    size_t off_trunk_w_ = 0, off_trunk_b_ = 0;
    size_t off_class_embed_ = 0;
};

}  // namespace cdi
