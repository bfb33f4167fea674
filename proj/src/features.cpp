#include "cdi/features.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "cdi/diffusion.hpp"
#include "cdi/errors.hpp"
#include "cdi/lbfgs.hpp"
#include "cdi/rng.hpp"

namespace cdi {

namespace {

Rng sample_rng(const ExtractionContext& ctx, const ImageSample& x,
               const std::string& feature_tag) {
    return derive_rng(ctx.global_seed, feature_tag + ":" + x.sample_id);
}

std::optional<int> cond_of(const ExtractionContext& ctx, const ImageSample& x) {
    return ctx.use_labels ? x.label : std::nullopt;
}

void require_white_box(const ExtractionContext& ctx, const char* feature) {
    if (ctx.access != AccessLevel::white_box)
        throw AccessViolation(std::string(feature) + ": white-box access required");
    if (!ctx.denoiser->supports_input_gradient())
        throw AccessViolation(std::string(feature) +
                              ": model surface exposes no input gradients");
}

double finite_or_throw(double v, const char* feature) {
    if (!std::isfinite(v))
        throw ExtractionFailure(std::string(feature) + ": non-finite feature value");
    return v;
}

}  // namespace

double pnorm_mean(const Tensor& d, double p) {
    if (p <= 0.0) throw std::invalid_argument("pnorm_mean: p must be positive");
    double acc = 0.0;
    for (size_t i = 0; i < d.size(); ++i) acc += std::pow(std::fabs(d[i]), p);
    return std::pow(acc / static_cast<double>(d.size()), 1.0 / p);
}

std::vector<uint8_t> top_fraction_mask(const Tensor& abs_grad, double frac) {
    const size_t n = abs_grad.size();
    const int k = std::max(1, static_cast<int>(std::llround(frac * static_cast<double>(n))));
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), size_t{0});
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
        if (abs_grad[a] != abs_grad[b]) return abs_grad[a] > abs_grad[b];
        return a < b;
    });
    std::vector<uint8_t> mask(n, 0);
    for (int i = 0; i < k && i < static_cast<int>(n); ++i) mask[idx[static_cast<size_t>(i)]] = 1;
    return mask;
}

double extract_denoising_loss(const ImageSample& x, const ExtractionContext& ctx) {
    Rng rng = sample_rng(ctx, x, "dl");
    const auto& px = x.pixels;
    double acc = 0.0;
    for (int r = 0; r < ctx.dl_repeats; ++r) {
        Tensor eps = rng.normal_tensor(px.channels(), px.height(), px.width());
        acc += denoising_loss(px, ctx.dl_timestep, eps, *ctx.denoiser, *ctx.schedule,
                              cond_of(ctx, x));
    }
    return finite_or_throw(acc / ctx.dl_repeats, "denoising_loss");
}

double extract_secmi_stat(const ImageSample& x, const ExtractionContext& ctx) {
    const int t = ctx.secmi_timestep;
    if (ctx.secmi_stride <= 0 || t % ctx.secmi_stride != 0)
        throw std::invalid_argument("secmi_stat: stride must divide the timestep");
    const auto cond = cond_of(ctx, x);
    Tensor z_tilde = deterministic_reverse(x.pixels, t, ctx.secmi_stride, *ctx.denoiser,
                                           *ctx.schedule, cond);
    Tensor up = ddim_inverse_step(z_tilde, t, *ctx.denoiser, *ctx.schedule, cond);
    Tensor back = ddim_denoise_step(up, t + 1, *ctx.denoiser, *ctx.schedule, cond);
    return finite_or_throw(mean_sq_diff(back, z_tilde), "secmi_stat");
}

double extract_pia(const ImageSample& x, const ExtractionContext& ctx) {
    const auto cond = cond_of(ctx, x);
    const auto& z = x.pixels;
    Tensor f0 = ctx.denoiser->predict(z, 0, cond);
    Tensor z_t = forward_noise(z, ctx.pia_timestep, f0, *ctx.schedule);
    Tensor ft = ctx.denoiser->predict(z_t, ctx.pia_timestep, cond);
    return finite_or_throw(pnorm_mean(f0 - ft, ctx.pia_p), "pia");
}

double extract_pian(const ImageSample& x, const ExtractionContext& ctx) {
    const auto cond = cond_of(ctx, x);
    const auto& z = x.pixels;
    Tensor f0 = ctx.denoiser->predict(z, 0, cond);
    const double l1 = f0.l1_norm();
    if (l1 <= 0.0)
        throw ExtractionFailure("pian: zero L1 norm of clean-sample prediction");
    const double target = static_cast<double>(f0.size()) * std::sqrt(M_PI / 2.0);
    Tensor f0n = f0 * (target / l1);
    Tensor z_t = forward_noise(z, ctx.pia_timestep, f0n, *ctx.schedule);
    Tensor ft = ctx.denoiser->predict(z_t, ctx.pia_timestep, cond);
    return finite_or_throw(pnorm_mean(f0n - ft, ctx.pia_p), "pian");
}

std::vector<double> extract_gradient_masking(const ImageSample& x,
                                             const ExtractionContext& ctx) {
    require_white_box(ctx, "gradient_masking");
    const auto cond = cond_of(ctx, x);
    const auto& px = x.pixels;
    std::vector<double> out;
    out.reserve(ctx.gm_timesteps.size());
    for (int t : ctx.gm_timesteps) {
        Rng rng = sample_rng(ctx, x, "gm:t" + std::to_string(t));
        Tensor eps = rng.normal_tensor(px.channels(), px.height(), px.width());
        Tensor z_t = forward_noise(px, t, eps, *ctx.schedule);
        LossAndGrad lg =
            denoising_loss_input_grad(*ctx.denoiser, z_t, t, eps, cond);
        Tensor abs_g = lg.grad;
        for (size_t i = 0; i < abs_g.size(); ++i) abs_g[i] = std::fabs(abs_g[i]);
        const std::vector<uint8_t> mask = top_fraction_mask(abs_g, ctx.gm_top_frac);

        Tensor fill = ctx.gm_independent_fill
                          ? rng.normal_tensor(px.channels(), px.height(), px.width())
                          : eps;
        Tensor z_hat = z_t;
        for (size_t i = 0; i < z_hat.size(); ++i)
            if (mask[i]) z_hat[i] = fill[i];
        Tensor pred = ctx.denoiser->predict(z_hat, t, cond);

        double acc = 0.0;
        size_t m = 0;
        for (size_t i = 0; i < mask.size(); ++i) {
            if (!mask[i]) continue;
            const double d = (eps[i] - z_t[i]) - pred[i];
            acc += d * d;
            ++m;
        }
        out.push_back(finite_or_throw(acc / static_cast<double>(m), "gradient_masking"));
    }
    return out;
}

std::vector<double> extract_multiple_loss(const ImageSample& x,
                                          const ExtractionContext& ctx) {
    Rng rng = sample_rng(ctx, x, "ml");
    const auto& px = x.pixels;
    std::vector<double> out;
    out.reserve(ctx.ml_timesteps.size());
    for (int t : ctx.ml_timesteps) {
        Tensor eps = rng.normal_tensor(px.channels(), px.height(), px.width());
        out.push_back(finite_or_throw(
            denoising_loss(px, t, eps, *ctx.denoiser, *ctx.schedule, cond_of(ctx, x)),
            "multiple_loss"));
    }
    return out;
}

std::pair<double, double> extract_noise_optimization(const ImageSample& x,
                                                     const ExtractionContext& ctx) {
    require_white_box(ctx, "noise_optimization");
    const auto cond = cond_of(ctx, x);
    const auto& px = x.pixels;
    const int t = ctx.no_timestep;
    Rng rng = sample_rng(ctx, x, "no");
    Tensor eps = rng.normal_tensor(px.channels(), px.height(), px.width());
    Tensor z_t = forward_noise(px, t, eps, *ctx.schedule);

    Tensor probe = z_t;  // reused buffer for z_t + delta
    auto objective = [&](const std::vector<double>& delta,
                         std::vector<double>& grad) -> double {
        for (size_t i = 0; i < probe.size(); ++i) probe[i] = z_t[i] + delta[i];
        LossAndGrad lg = denoising_loss_input_grad(*ctx.denoiser, probe, t, eps, cond);
        grad.assign(lg.grad.data(), lg.grad.data() + lg.grad.size());
        return lg.loss;
    };

    std::vector<double> delta0(px.size(), 0.0);
    LbfgsResult res = lbfgs_minimize(objective, delta0, ctx.no_steps);
    double delta_sq = 0.0;
    for (double v : res.x) delta_sq += v * v;
    delta_sq /= static_cast<double>(res.x.size());
    return {finite_or_throw(res.fx, "noise_optimization"),
            finite_or_throw(delta_sq, "noise_optimization")};
}

namespace {

FeatureSpec make_spec(const std::string& name, const ExtractionContext& ctx) {
    FeatureSpec s;
    s.name = name;
    if (name == "denoising_loss") {
        s.access = AccessLevel::gray_box;
        s.timesteps = {ctx.dl_timestep};
        s.repeats = ctx.dl_repeats;
        s.output_dim = 1;
    } else if (name == "secmi_stat") {
        s.access = AccessLevel::gray_box;
        s.timesteps = {ctx.secmi_timestep};
        s.output_dim = 1;
    } else if (name == "pia" || name == "pian") {
        s.access = AccessLevel::gray_box;
        s.timesteps = {ctx.pia_timestep};
        s.output_dim = 1;
    } else if (name == "gradient_masking") {
        s.access = AccessLevel::white_box;
        s.timesteps = ctx.gm_timesteps;
        s.output_dim = static_cast<int>(ctx.gm_timesteps.size());
    } else if (name == "multiple_loss") {
        s.access = AccessLevel::gray_box;
        s.timesteps = ctx.ml_timesteps;
        s.output_dim = static_cast<int>(ctx.ml_timesteps.size());
    } else if (name == "noise_optimization") {
        s.access = AccessLevel::white_box;
        s.timesteps = {ctx.no_timestep};
        s.output_dim = 2;
    } else {
        throw std::invalid_argument("unknown feature name: " + name);
    }
    return s;
}

}  // namespace

std::vector<FeatureSpec> default_feature_set(const ExtractionContext& ctx) {
    return feature_set_by_names(
        ctx, {"denoising_loss", "secmi_stat", "pia", "pian", "gradient_masking",
              "multiple_loss", "noise_optimization"});
}

std::vector<FeatureSpec> gray_box_feature_set(const ExtractionContext& ctx) {
    return feature_set_by_names(
        ctx, {"denoising_loss", "secmi_stat", "pia", "pian", "multiple_loss"});
}

std::vector<FeatureSpec> existing_mias_feature_set(const ExtractionContext& ctx) {
    return feature_set_by_names(ctx, {"denoising_loss", "secmi_stat", "pia", "pian"});
}

std::vector<FeatureSpec> feature_set_by_names(const ExtractionContext& ctx,
                                              const std::vector<std::string>& names) {
    std::vector<FeatureSpec> set;
    set.reserve(names.size());
    for (const auto& n : names) set.push_back(make_spec(n, ctx));
    return set;
}

FeatureVector extract_all(const ImageSample& x, const ExtractionContext& ctx,
                          const std::vector<FeatureSpec>& feature_set) {
    if (feature_set.empty())
        throw std::invalid_argument("extract_all: empty feature set");
    if (ctx.denoiser == nullptr || ctx.schedule == nullptr)
        throw std::invalid_argument("extract_all: context missing denoiser or schedule");
    for (const auto& spec : feature_set)
        if (spec.access == AccessLevel::white_box && ctx.access != AccessLevel::white_box)
            throw AccessViolation("extract_all: feature '" + spec.name +
                                  "' needs white-box access");

    FeatureVector fv;
    fv.sample_id = x.sample_id;
    auto push = [&fv](const std::string& name, double v) {
        fv.names.push_back(name);
        fv.values.push_back(v);
    };
    for (const auto& spec : feature_set) {
        if (spec.name == "denoising_loss") {
            push("denoising_loss", extract_denoising_loss(x, ctx));
        } else if (spec.name == "secmi_stat") {
            push("secmi_stat", extract_secmi_stat(x, ctx));
        } else if (spec.name == "pia") {
            push("pia", extract_pia(x, ctx));
        } else if (spec.name == "pian") {
            push("pian", extract_pian(x, ctx));
        } else if (spec.name == "gradient_masking") {
            auto vals = extract_gradient_masking(x, ctx);
            for (size_t i = 0; i < vals.size(); ++i)
                push("gm_t" + std::to_string(ctx.gm_timesteps[i]), vals[i]);
        } else if (spec.name == "multiple_loss") {
            auto vals = extract_multiple_loss(x, ctx);
            for (size_t i = 0; i < vals.size(); ++i)
                push("ml_t" + std::to_string(ctx.ml_timesteps[i]), vals[i]);
        } else if (spec.name == "noise_optimization") {
            auto [err, dsq] = extract_noise_optimization(x, ctx);
            push("no_error", err);
            push("no_delta_sq", dsq);
        } else {
            throw std::invalid_argument("extract_all: unknown feature " + spec.name);
        }
    }
    return fv;
}

}  // namespace cdi
