#include "cdi/conv_denoiser.hpp"

#include <cmath>
#include <stdexcept>

#include "cdi/rng.hpp"

namespace cdi {

namespace {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double silu(double x) { return x * sigmoid(x); }
inline double silu_grad(double x) {
    const double s = sigmoid(x);
    return s * (1.0 + x * (1.0 - s));
}

// 3x3 convolution, padding 1, channel-major buffers.
void conv3x3(const double* in, int in_ch, double* out, int out_ch, int H, int W,
             const double* weight, const double* bias) {
    for (int oc = 0; oc < out_ch; ++oc) {
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                double acc = bias[oc];
                const double* w_oc = weight + static_cast<size_t>(oc) * in_ch * 9;
                for (int ic = 0; ic < in_ch; ++ic) {
                    const double* plane = in + static_cast<size_t>(ic) * H * W;
                    const double* w = w_oc + ic * 9;
                    for (int ky = 0; ky < 3; ++ky) {
                        const int iy = y + ky - 1;
                        if (iy < 0 || iy >= H) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            const int ix = x + kx - 1;
                            if (ix < 0 || ix >= W) continue;
                            acc += w[ky * 3 + kx] * plane[iy * W + ix];
                        }
                    }
                }
                out[(static_cast<size_t>(oc) * H + y) * W + x] = acc;
            }
        }
    }
}

// Gradient w.r.t. the convolution input (d_in must be zeroed by the caller).
void conv3x3_backward_input(const double* d_out, int out_ch, double* d_in, int in_ch,
                            int H, int W, const double* weight) {
    for (int oc = 0; oc < out_ch; ++oc) {
        const double* w_oc = weight + static_cast<size_t>(oc) * in_ch * 9;
        const double* dout_plane = d_out + static_cast<size_t>(oc) * H * W;
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                const double g = dout_plane[y * W + x];
                if (g == 0.0) continue;
                for (int ic = 0; ic < in_ch; ++ic) {
                    double* din_plane = d_in + static_cast<size_t>(ic) * H * W;
                    const double* w = w_oc + ic * 9;
                    for (int ky = 0; ky < 3; ++ky) {
                        const int iy = y + ky - 1;
                        if (iy < 0 || iy >= H) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            const int ix = x + kx - 1;
                            if (ix < 0 || ix >= W) continue;
                            din_plane[iy * W + ix] += w[ky * 3 + kx] * g;
                        }
                    }
                }
            }
        }
    }
}

void conv3x3_backward_params(const double* d_out, int out_ch, const double* in,
                             int in_ch, int H, int W, double* d_weight,
                             double* d_bias) {
    for (int oc = 0; oc < out_ch; ++oc) {
        const double* dout_plane = d_out + static_cast<size_t>(oc) * H * W;
        double* dw_oc = d_weight + static_cast<size_t>(oc) * in_ch * 9;
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                const double g = dout_plane[y * W + x];
                if (g == 0.0) continue;
                d_bias[oc] += g;
                for (int ic = 0; ic < in_ch; ++ic) {
                    const double* plane = in + static_cast<size_t>(ic) * H * W;
                    double* dw = dw_oc + ic * 9;
                    for (int ky = 0; ky < 3; ++ky) {
                        const int iy = y + ky - 1;
                        if (iy < 0 || iy >= H) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            const int ix = x + kx - 1;
                            if (ix < 0 || ix >= W) continue;
                            dw[ky * 3 + kx] += g * plane[iy * W + ix];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

struct ConvDenoiser::Workspace {
    std::vector<double> embed_raw;   // sinusoidal (+ class) embedding, E
    std::vector<double> trunk_pre;   // W_trunk * embed + b, F
    std::vector<double> trunk;       // silu(trunk_pre), F
    std::vector<double> h;           // running trunk activation, F*H*W
    std::vector<std::vector<double>> block_pre;   // h + proj(e) per block
    std::vector<std::vector<double>> block_act;   // silu(block_pre)
    std::vector<std::vector<double>> block_h_in;  // h entering each block
    std::vector<double> out_pre;     // h after last block
    std::vector<double> out_act;     // silu(out_pre)
    std::vector<double> out;         // prediction, C*H*W

    // backward scratch
    std::vector<double> d_out;       // dL/d prediction
    std::vector<double> d_h;
    std::vector<double> d_tmp;
    std::vector<double> d_trunk;
    std::vector<double> d_input;
};

ConvDenoiser::ConvDenoiser(const ConvDenoiserConfig& cfg) : cfg_(cfg) {
    if (cfg.channels <= 0 || cfg.height <= 0 || cfg.width <= 0)
        throw std::invalid_argument("ConvDenoiser: bad input shape");
    if (cfg.hidden <= 0 || cfg.blocks <= 0)
        throw std::invalid_argument("ConvDenoiser: hidden and blocks must be positive");
    if (cfg.time_embed_dim <= 0 || cfg.time_embed_dim % 2 != 0)
        throw std::invalid_argument("ConvDenoiser: time_embed_dim must be positive and even");

    const int C = cfg.channels, F = cfg.hidden, E = cfg.time_embed_dim;
    size_t n = 0;
    auto take = [&n](size_t count) {
        size_t off = n;
        n += count;
        return off;
    };
    off_conv_in_w_ = take(static_cast<size_t>(F) * C * 9);
    off_conv_in_b_ = take(F);
    off_block_w_.resize(cfg.blocks);
    off_block_b_.resize(cfg.blocks);
    off_proj_w_.resize(cfg.blocks);
    off_proj_b_.resize(cfg.blocks);
    for (int l = 0; l < cfg.blocks; ++l) {
        off_block_w_[l] = take(static_cast<size_t>(F) * F * 9);
        off_block_b_[l] = take(F);
        off_proj_w_[l] = take(static_cast<size_t>(F) * F);
        off_proj_b_[l] = take(F);
    }
    off_conv_out_w_ = take(static_cast<size_t>(C) * F * 9);
    off_conv_out_b_ = take(C);
    off_trunk_w_ = take(static_cast<size_t>(F) * E);
    off_trunk_b_ = take(F);
    off_class_embed_ = take(static_cast<size_t>(cfg.num_classes) * E);

    params_.assign(n, 0.0);
    Rng rng(cfg.init_seed);
    auto init_gauss = [&](size_t off, size_t count, double std) {
        for (size_t i = 0; i < count; ++i) params_[off + i] = std * rng.normal();
    };
    init_gauss(off_conv_in_w_, static_cast<size_t>(F) * C * 9, 1.0 / std::sqrt(9.0 * C));
    for (int l = 0; l < cfg.blocks; ++l) {
        init_gauss(off_block_w_[l], static_cast<size_t>(F) * F * 9,
                   1.0 / std::sqrt(9.0 * F));
        init_gauss(off_proj_w_[l], static_cast<size_t>(F) * F, 1.0 / std::sqrt(double(F)));
    }
    // Small output head: initial predictions stay near zero.
    init_gauss(off_conv_out_w_, static_cast<size_t>(C) * F * 9,
               0.1 / std::sqrt(9.0 * F));
    init_gauss(off_trunk_w_, static_cast<size_t>(F) * E, 1.0 / std::sqrt(double(E)));
    if (cfg.num_classes > 0)
        init_gauss(off_class_embed_, static_cast<size_t>(cfg.num_classes) * E, 0.1);
}

void ConvDenoiser::check_input(const Tensor& x_t, int t, std::optional<int> cond) const {
    if (x_t.channels() != cfg_.channels || x_t.height() != cfg_.height ||
        x_t.width() != cfg_.width)
        throw std::invalid_argument("ConvDenoiser: input shape mismatch");
    if (t < 0) throw std::invalid_argument("ConvDenoiser: negative timestep");
    if (cond && (cfg_.num_classes <= 0 || *cond < 0 || *cond >= cfg_.num_classes))
        throw std::invalid_argument("ConvDenoiser: class label out of range");
}

void ConvDenoiser::forward(const Tensor& x_t, int t, std::optional<int> cond,
                           Workspace& ws) const {
    const int C = cfg_.channels, F = cfg_.hidden, E = cfg_.time_embed_dim;
    const int H = cfg_.height, W = cfg_.width;
    const size_t plane = static_cast<size_t>(H) * W;
    const double* p = params_.data();

    // Sinusoidal timestep embedding, frequencies log-spaced down from 1.
    ws.embed_raw.assign(E, 0.0);
    const int half = E / 2;
    for (int k = 0; k < half; ++k) {
        const double freq = std::exp(-std::log(10000.0) * k / half);
        ws.embed_raw[2 * k] = std::sin(t * freq);
        ws.embed_raw[2 * k + 1] = std::cos(t * freq);
    }
    if (cond) {
        const double* emb = p + off_class_embed_ + static_cast<size_t>(*cond) * E;
        for (int i = 0; i < E; ++i) ws.embed_raw[i] += emb[i];
    }

    ws.trunk_pre.assign(F, 0.0);
    ws.trunk.assign(F, 0.0);
    for (int i = 0; i < F; ++i) {
        double acc = p[off_trunk_b_ + i];
        const double* w = p + off_trunk_w_ + static_cast<size_t>(i) * E;
        for (int j = 0; j < E; ++j) acc += w[j] * ws.embed_raw[j];
        ws.trunk_pre[i] = acc;
        ws.trunk[i] = silu(acc);
    }

    ws.h.assign(static_cast<size_t>(F) * plane, 0.0);
    conv3x3(x_t.data(), C, ws.h.data(), F, H, W, p + off_conv_in_w_, p + off_conv_in_b_);

    ws.block_pre.resize(cfg_.blocks);
    ws.block_act.resize(cfg_.blocks);
    ws.block_h_in.resize(cfg_.blocks);
    std::vector<double> conv_out_buf(static_cast<size_t>(F) * plane);
    for (int l = 0; l < cfg_.blocks; ++l) {
        ws.block_h_in[l] = ws.h;
        auto& pre = ws.block_pre[l];
        auto& act = ws.block_act[l];
        pre.assign(static_cast<size_t>(F) * plane, 0.0);
        act.assign(static_cast<size_t>(F) * plane, 0.0);
        // per-channel time bias
        for (int f = 0; f < F; ++f) {
            double bias = p[off_proj_b_[l] + f];
            const double* w = p + off_proj_w_[l] + static_cast<size_t>(f) * F;
            for (int j = 0; j < F; ++j) bias += w[j] * ws.trunk[j];
            double* pre_plane = pre.data() + f * plane;
            const double* h_plane = ws.h.data() + f * plane;
            for (size_t i = 0; i < plane; ++i) pre_plane[i] = h_plane[i] + bias;
        }
        for (size_t i = 0; i < pre.size(); ++i) act[i] = silu(pre[i]);
        conv3x3(act.data(), F, conv_out_buf.data(), F, H, W, p + off_block_w_[l],
                p + off_block_b_[l]);
        for (size_t i = 0; i < ws.h.size(); ++i) ws.h[i] += conv_out_buf[i];
    }

    ws.out_pre = ws.h;
    ws.out_act.assign(ws.h.size(), 0.0);
    for (size_t i = 0; i < ws.h.size(); ++i) ws.out_act[i] = silu(ws.out_pre[i]);
    ws.out.assign(static_cast<size_t>(C) * plane, 0.0);
    conv3x3(ws.out_act.data(), F, ws.out.data(), C, H, W, p + off_conv_out_w_,
            p + off_conv_out_b_);
}

void ConvDenoiser::backward(const Tensor& x_t, std::optional<int> cond, Workspace& ws,
                            std::vector<double>* pg) const {
    const int C = cfg_.channels, F = cfg_.hidden, E = cfg_.time_embed_dim;
    const int H = cfg_.height, W = cfg_.width;
    const size_t plane = static_cast<size_t>(H) * W;
    const double* p = params_.data();

    // conv_out
    ws.d_h.assign(static_cast<size_t>(F) * plane, 0.0);
    conv3x3_backward_input(ws.d_out.data(), C, ws.d_h.data(), F, H, W,
                           p + off_conv_out_w_);
    if (pg)
        conv3x3_backward_params(ws.d_out.data(), C, ws.out_act.data(), F, H, W,
                                pg->data() + off_conv_out_w_,
                                pg->data() + off_conv_out_b_);
    for (size_t i = 0; i < ws.d_h.size(); ++i) ws.d_h[i] *= silu_grad(ws.out_pre[i]);

    ws.d_trunk.assign(F, 0.0);
    ws.d_tmp.assign(static_cast<size_t>(F) * plane, 0.0);
    for (int l = cfg_.blocks - 1; l >= 0; --l) {
        // d_h holds dL/dh_{l+1}; residual passes it straight through, the
        // conv branch adds its own contribution.
        ws.d_tmp.assign(static_cast<size_t>(F) * plane, 0.0);
        conv3x3_backward_input(ws.d_h.data(), F, ws.d_tmp.data(), F, H, W,
                               p + off_block_w_[l]);
        if (pg)
            conv3x3_backward_params(ws.d_h.data(), F, ws.block_act[l].data(), F, H, W,
                                    pg->data() + off_block_w_[l],
                                    pg->data() + off_block_b_[l]);
        // through silu into (h + bias)
        for (size_t i = 0; i < ws.d_tmp.size(); ++i)
            ws.d_tmp[i] *= silu_grad(ws.block_pre[l][i]);
        // bias path: per-channel spatial sum
        for (int f = 0; f < F; ++f) {
            double g = 0.0;
            const double* dt = ws.d_tmp.data() + f * plane;
            for (size_t i = 0; i < plane; ++i) g += dt[i];
            if (pg) {
                (*pg)[off_proj_b_[l] + f] += g;
                double* dw = pg->data() + off_proj_w_[l] + static_cast<size_t>(f) * F;
                for (int j = 0; j < F; ++j) dw[j] += g * ws.trunk[j];
            }
            const double* w = p + off_proj_w_[l] + static_cast<size_t>(f) * F;
            for (int j = 0; j < F; ++j) ws.d_trunk[j] += g * w[j];
        }
        for (size_t i = 0; i < ws.d_h.size(); ++i) ws.d_h[i] += ws.d_tmp[i];
    }

    // conv_in
    ws.d_input.assign(static_cast<size_t>(C) * plane, 0.0);
    conv3x3_backward_input(ws.d_h.data(), F, ws.d_input.data(), C, H, W,
                           p + off_conv_in_w_);
    if (pg) {
        conv3x3_backward_params(ws.d_h.data(), F, x_t.data(), C, H, W,
                                pg->data() + off_conv_in_w_,
                                pg->data() + off_conv_in_b_);
        // trunk MLP and class embedding only matter for parameter training
        for (int i = 0; i < F; ++i) {
            const double g = ws.d_trunk[i] * silu_grad(ws.trunk_pre[i]);
            (*pg)[off_trunk_b_ + i] += g;
            double* dw = pg->data() + off_trunk_w_ + static_cast<size_t>(i) * E;
            for (int j = 0; j < E; ++j) dw[j] += g * ws.embed_raw[j];
            if (cond) {
                const double* w = p + off_trunk_w_ + static_cast<size_t>(i) * E;
                double* demb =
                    pg->data() + off_class_embed_ + static_cast<size_t>(*cond) * E;
                for (int j = 0; j < E; ++j) demb[j] += g * w[j];
            }
        }
    }
}

Tensor ConvDenoiser::predict(const Tensor& x_t, int t, std::optional<int> cond) const {
    check_input(x_t, t, cond);
    Workspace ws;
    forward(x_t, t, cond, ws);
    Tensor out(cfg_.channels, cfg_.height, cfg_.width);
    std::copy(ws.out.begin(), ws.out.end(), out.data());
    return out;
}

Tensor ConvDenoiser::vjp_input(const Tensor& x_t, int t, std::optional<int> cond,
                               const Tensor& grad_out) const {
    check_input(x_t, t, cond);
    if (!grad_out.same_shape(x_t))
        throw std::invalid_argument("ConvDenoiser: grad_out shape mismatch");
    Workspace ws;
    forward(x_t, t, cond, ws);
    ws.d_out.assign(grad_out.data(), grad_out.data() + grad_out.size());
    backward(x_t, cond, ws, nullptr);
    Tensor g(cfg_.channels, cfg_.height, cfg_.width);
    std::copy(ws.d_input.begin(), ws.d_input.end(), g.data());
    return g;
}

double ConvDenoiser::loss_backward_params(const Tensor& x_t, int t,
                                          std::optional<int> cond, const Tensor& eps,
                                          std::vector<double>& grad_accum) const {
    check_input(x_t, t, cond);
    if (grad_accum.size() != params_.size())
        throw std::invalid_argument("ConvDenoiser: grad buffer size mismatch");
    Workspace ws;
    forward(x_t, t, cond, ws);
    const double n = static_cast<double>(ws.out.size());
    double loss = 0.0;
    ws.d_out.assign(ws.out.size(), 0.0);
    for (size_t i = 0; i < ws.out.size(); ++i) {
        const double d = eps[i] - ws.out[i];
        loss += d * d;
        ws.d_out[i] = -2.0 * d / n;
    }
    backward(x_t, cond, ws, &grad_accum);
    return loss / n;
}

}  // namespace cdi
