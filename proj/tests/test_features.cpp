#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "cdi/diffusion.hpp"
#include "cdi/features.hpp"
#include "cdi/rng.hpp"
#include "oracles.hpp"

using namespace cdi;

namespace {

const NoiseSchedule& sched() {
    static NoiseSchedule s = NoiseSchedule::linear_beta();
    return s;
}

ImageSample make_sample(uint64_t seed, int c = 2, int h = 2, int w = 2) {
    Rng rng(seed);
    ImageSample s;
    s.pixels = rng.normal_tensor(c, h, w);
    s.sample_id = "sample-" + std::to_string(seed);
    return s;
}

ExtractionContext make_ctx(const Denoiser& f, uint64_t seed = 5) {
    ExtractionContext ctx;
    ctx.denoiser = &f;
    ctx.schedule = &sched();
    ctx.global_seed = seed;
    return ctx;
}

// the documented per-feature stream derivation, replicated for oracles
Rng feature_rng(const ExtractionContext& ctx, const ImageSample& x,
                const std::string& tag) {
    return derive_rng(ctx.global_seed, tag + ":" + x.sample_id);
}

// returns a canned prediction per timestep
class TimestepLookupDenoiser : public Denoiser {
public:
    std::map<int, Tensor> table;
    Tensor predict(const Tensor&, int t, std::optional<int>) const override {
        return table.at(t);
    }
};

}  // namespace

TEST_CASE("denoising loss feature") {
    ImageSample x = make_sample(1, 1, 16, 16);

    SUBCASE("oracle denoiser gives zero") {
        // feed the same stream the extractor will use
        ExtractionContext probe;
        probe.global_seed = 5;
        Rng rng = feature_rng(probe, x, "dl");
        TimestepLookupDenoiser f;
        // 5 sequential draws at t=100; the lookup denoiser must return each
        // in turn, so run the extraction against a per-call playback
        std::vector<Tensor> draws;
        for (int i = 0; i < 5; ++i) draws.push_back(rng.normal_tensor(1, 16, 16));
        struct Playback : Denoiser {
            std::vector<Tensor> draws;
            mutable size_t next = 0;
            Tensor predict(const Tensor&, int, std::optional<int>) const override {
                return draws.at(next++);
            }
        } playback;
        playback.draws = draws;
        ExtractionContext ctx = make_ctx(playback);
        CHECK(extract_denoising_loss(x, ctx) == doctest::Approx(0.0));
    }
    SUBCASE("constant-zero denoiser near 1") {
        ConstantDenoiser f(Tensor(1, 16, 16, 0.0));
        ExtractionContext ctx = make_ctx(f);
        CHECK(extract_denoising_loss(x, ctx) == doctest::Approx(1.0).epsilon(0.1));
    }
    SUBCASE("non-finite prediction is an extraction failure") {
        ConstantDenoiser f(Tensor(1, 16, 16, std::numeric_limits<double>::infinity()));
        ExtractionContext ctx = make_ctx(f);
        CHECK_THROWS_AS(extract_denoising_loss(x, ctx), ExtractionFailure);
    }
}

TEST_CASE("secmi t-error") {
    ImageSample x = make_sample(2);

    SUBCASE("constant denoiser: round trip is exact") {
        Rng rng(3);
        ConstantDenoiser f(rng.normal_tensor(2, 2, 2));
        ExtractionContext ctx = make_ctx(f);
        CHECK(extract_secmi_stat(x, ctx) < 1e-8);
    }
    SUBCASE("f == 0 closed form") {
        ConstantDenoiser f(Tensor(2, 2, 2, 0.0));
        ExtractionContext ctx = make_ctx(f);
        // z~_100 telescopes to sqrt(ab_100) * z0; the round trip is exact
        Tensor z_tilde = deterministic_reverse(x.pixels, 100, ctx.secmi_stride, f, sched());
        const double scale = std::sqrt(sched().alpha_bar(100));
        for (size_t i = 0; i < z_tilde.size(); ++i)
            CHECK(std::fabs(z_tilde[i] - scale * x.pixels[i]) < 1e-6);
        CHECK(extract_secmi_stat(x, ctx) < 1e-8);
    }
    SUBCASE("stride misconfiguration rejected") {
        ConstantDenoiser f(Tensor(2, 2, 2, 0.0));
        ExtractionContext ctx = make_ctx(f);
        ctx.secmi_stride = 7;
        CHECK_THROWS_AS(extract_secmi_stat(x, ctx), std::invalid_argument);
    }
}

TEST_CASE("pia") {
    SUBCASE("constant denoiser gives zero") {
        Rng rng(4);
        ConstantDenoiser f(rng.normal_tensor(2, 2, 2));
        ImageSample x = make_sample(5);
        ExtractionContext ctx = make_ctx(f);
        CHECK(extract_pia(x, ctx) == doctest::Approx(0.0));
    }
    SUBCASE("two-element tensor equals the scalar oracle to 1e-9") {
        ImageSample x = make_sample(6, 1, 1, 2);
        oracle::ScalingDenoiser f(0.5);
        ExtractionContext ctx = make_ctx(f);
        const double got = extract_pia(x, ctx);

        const double ab = sched().alpha_bar(ctx.pia_timestep);
        Tensor f0(1, 1, 2);
        for (size_t i = 0; i < 2; ++i) f0[i] = 0.5 * x.pixels[i];
        Tensor noised = oracle::forward_noise_scalar(x.pixels, ab, f0);
        Tensor ft(1, 1, 2);
        for (size_t i = 0; i < 2; ++i) ft[i] = 0.5 * noised[i];
        const double want = oracle::pnorm_mean_scalar(f0 - ft, 5.0);
        CHECK(std::fabs(got - want) < 1e-9);
    }
    SUBCASE("p is configurable") {
        ImageSample x = make_sample(7, 1, 1, 2);
        oracle::ScalingDenoiser f(0.3);
        ExtractionContext ctx = make_ctx(f);
        ctx.pia_p = 2.0;
        const double p2 = extract_pia(x, ctx);
        ctx.pia_p = 5.0;
        const double p5 = extract_pia(x, ctx);
        CHECK(p2 != doctest::Approx(p5));
    }
}

namespace {

// records the input it was asked about; used to audit the PIAN rescaling
class RecordingDenoiser : public Denoiser {
public:
    explicit RecordingDenoiser(double scale) : scale_(scale) {}
    Tensor predict(const Tensor& x, int t, std::optional<int>) const override {
        if (t > 0) last_noised = x;
        Tensor out = x;
        out *= scale_;
        return out;
    }
    mutable Tensor last_noised;

private:
    double scale_;
};

}  // namespace

TEST_CASE("pian") {
    SUBCASE("rescaled prediction has the pinned L1 norm") {
        ImageSample x = make_sample(8, 1, 4, 4);
        RecordingDenoiser f(0.7);
        ExtractionContext ctx = make_ctx(f);
        (void)extract_pian(x, ctx);
        // recover f_hat from the recorded noised input
        const double ab = sched().alpha_bar(ctx.pia_timestep);
        const Tensor& z_t = f.last_noised;
        double l1 = 0.0;
        for (size_t i = 0; i < z_t.size(); ++i)
            l1 += std::fabs((z_t[i] - std::sqrt(ab) * x.pixels[i]) / std::sqrt(1.0 - ab));
        const double want = 16.0 * std::sqrt(M_PI / 2.0);
        CHECK(l1 == doctest::Approx(want).epsilon(1e-6));
    }
    SUBCASE("fixed point: prediction already at the target norm") {
        // constant pixels c with |c| = 2*sqrt(pi/2), scale 0.5: the clean
        // prediction 0.5*z already satisfies the norm, so PIAN == PIA
        ImageSample x;
        x.sample_id = "fixed-point";
        x.pixels = Tensor(1, 2, 2, 2.0 * std::sqrt(M_PI / 2.0));
        oracle::ScalingDenoiser f(0.5);
        ExtractionContext ctx = make_ctx(f);
        CHECK(extract_pian(x, ctx) == doctest::Approx(extract_pia(x, ctx)).epsilon(1e-12));
    }
    SUBCASE("normalization denominator concentrates for gaussian predictions") {
        // |f|_1 approaches CHW * E|eps| = CHW * sqrt(2/pi); at CHW=4096 the
        // ratio is within 5%
        Rng rng(9);
        Tensor f = rng.normal_tensor(1, 64, 64);
        const double ratio = f.l1_norm() / (4096.0 * std::sqrt(2.0 / M_PI));
        CHECK(ratio == doctest::Approx(1.0).epsilon(0.05));
    }
    SUBCASE("zero prediction fails cleanly") {
        ImageSample x = make_sample(10);
        ConstantDenoiser f(Tensor(2, 2, 2, 0.0));
        ExtractionContext ctx = make_ctx(f);
        CHECK_THROWS_AS(extract_pian(x, ctx), ExtractionFailure);
    }
}

TEST_CASE("gm top-fraction mask") {
    SUBCASE("worked 8-element example") {
        Tensor g(1, 2, 4);
        const double vals[] = {5, 1, 2, 3, 4, 0, 1, 2};
        for (size_t i = 0; i < 8; ++i) g[i] = vals[i];
        const auto mask = top_fraction_mask(g, 0.2);  // round(1.6) = 2 entries
        size_t count = 0;
        for (auto b : mask) count += b;
        CHECK(count == 2);
        CHECK(mask[0] == 1);  // value 5
        CHECK(mask[4] == 1);  // value 4
    }
    SUBCASE("ties break by ascending flat index") {
        Tensor g(1, 1, 4, 1.0);
        const auto mask = top_fraction_mask(g, 0.5);
        CHECK(mask == std::vector<uint8_t>{1, 1, 0, 0});
    }
    SUBCASE("minimum one entry") {
        Tensor g(1, 1, 3, 0.0);
        const auto mask = top_fraction_mask(g, 0.01);
        size_t count = 0;
        for (auto b : mask) count += b;
        CHECK(count == 1);
    }
    SUBCASE("matches brute force on random tensors") {
        Rng rng(11);
        for (int rep = 0; rep < 50; ++rep) {
            Tensor g(1, 4, 4);
            for (size_t i = 0; i < g.size(); ++i)
                g[i] = std::fabs(rng.normal()) * (rng.uniform() < 0.3 ? 0.0 : 1.0);
            const auto mask = top_fraction_mask(g, 0.2);
            const size_t k = 3;  // round(0.2 * 16)
            std::vector<double> vals(g.data(), g.data() + g.size());
            const auto want = oracle::brute_force_top_k(vals, k);
            std::vector<size_t> got;
            for (size_t i = 0; i < mask.size(); ++i)
                if (mask[i]) got.push_back(i);
            CHECK(got == want);
        }
    }
}

TEST_CASE("gradient masking feature") {
    SUBCASE("constant-zero denoiser: masked mean of (eps - z_t)^2") {
        ConstantDenoiser f(Tensor(2, 2, 2, 0.0));
        ImageSample x = make_sample(12);
        ExtractionContext ctx = make_ctx(f);
        ctx.gm_timesteps = {300};
        const auto got = extract_gradient_masking(x, ctx);
        REQUIRE(got.size() == 1);

        // zero gradient everywhere: ties select the first two flat indices
        Rng rng = feature_rng(ctx, x, "gm:t300");
        Tensor eps = rng.normal_tensor(2, 2, 2);
        Tensor z_t = oracle::forward_noise_scalar(x.pixels, sched().alpha_bar(300), eps);
        const double want = 0.5 * ((eps[0] - z_t[0]) * (eps[0] - z_t[0]) +
                                   (eps[1] - z_t[1]) * (eps[1] - z_t[1]));
        CHECK(got[0] == doctest::Approx(want).epsilon(1e-12));
    }
    SUBCASE("full pipeline equals the scalar oracle on 2x2x2 input") {
        const double a = 0.8;
        oracle::ScalingDenoiser f(a);
        ImageSample x = make_sample(13);
        ExtractionContext ctx = make_ctx(f);
        ctx.gm_timesteps = {0, 100, 900};
        const auto got = extract_gradient_masking(x, ctx);
        REQUIRE(got.size() == 3);

        for (size_t ti = 0; ti < ctx.gm_timesteps.size(); ++ti) {
            const int t = ctx.gm_timesteps[ti];
            Rng rng = feature_rng(ctx, x, "gm:t" + std::to_string(t));
            Tensor eps = rng.normal_tensor(2, 2, 2);
            Tensor z_t = oracle::forward_noise_scalar(x.pixels, sched().alpha_bar(t), eps);
            // loss = mean((eps - a z)^2); |dL/dz| = |-2a(eps - a z)/n|
            const double n = 8.0;
            std::vector<double> absg(8);
            for (size_t i = 0; i < 8; ++i)
                absg[i] = std::fabs(-2.0 * a * (eps[i] - a * z_t[i]) / n);
            const auto top = oracle::brute_force_top_k(absg, 2);  // round(1.6)=2
            Tensor z_hat = z_t;
            for (size_t i : top) z_hat[i] = eps[i];
            double acc = 0.0;
            for (size_t i : top) {
                const double d = (eps[i] - z_t[i]) - a * z_hat[i];
                acc += d * d;
            }
            CHECK(got[ti] == doctest::Approx(acc / 2.0).epsilon(1e-6));
        }
    }
    SUBCASE("gray-box context raises an access violation") {
        oracle::ScalingDenoiser f(0.5);
        ImageSample x = make_sample(14);
        ExtractionContext ctx = make_ctx(f);
        ctx.access = AccessLevel::gray_box;
        CHECK_THROWS_AS(extract_gradient_masking(x, ctx), AccessViolation);
    }
    SUBCASE("denoiser without gradients raises an access violation") {
        oracle::GrayBoxDenoiser f;
        ImageSample x = make_sample(15);
        ExtractionContext ctx = make_ctx(f);
        CHECK_THROWS_AS(extract_gradient_masking(x, ctx), AccessViolation);
    }
}

TEST_CASE("multiple loss feature") {
    SUBCASE("playback oracle gives ten zeros") {
        ImageSample x = make_sample(16);
        ExtractionContext probe;
        probe.global_seed = 5;
        Rng rng = feature_rng(probe, x, "ml");
        struct Playback : Denoiser {
            std::vector<Tensor> draws;
            mutable size_t next = 0;
            Tensor predict(const Tensor&, int, std::optional<int>) const override {
                return draws.at(next++);
            }
        } playback;
        for (int i = 0; i < 10; ++i) playback.draws.push_back(rng.normal_tensor(2, 2, 2));
        ExtractionContext ctx = make_ctx(playback);
        const auto vals = extract_multiple_loss(x, ctx);
        REQUIRE(vals.size() == 10);
        for (double v : vals) CHECK(v == doctest::Approx(0.0));
    }
    SUBCASE("matches denoising_loss formula per timestep") {
        oracle::ScalingDenoiser f(0.4);
        ImageSample x = make_sample(17);
        ExtractionContext ctx = make_ctx(f);
        const auto vals = extract_multiple_loss(x, ctx);
        Rng rng = feature_rng(ctx, x, "ml");
        for (size_t i = 0; i < ctx.ml_timesteps.size(); ++i) {
            const int t = ctx.ml_timesteps[i];
            Tensor eps = rng.normal_tensor(2, 2, 2);
            Tensor z_t = oracle::forward_noise_scalar(x.pixels, sched().alpha_bar(t), eps);
            double acc = 0.0;
            for (size_t j = 0; j < 8; ++j) {
                const double d = eps[j] - 0.4 * z_t[j];
                acc += d * d;
            }
            CHECK(vals[i] == doctest::Approx(acc / 8.0).epsilon(1e-9));
        }
    }
}

TEST_CASE("noise optimization feature") {
    SUBCASE("oracle denoiser: objective already minimal at delta=0") {
        ImageSample x = make_sample(18);
        ExtractionContext probe;
        probe.global_seed = 5;
        Rng rng = feature_rng(probe, x, "no");
        Tensor eps = rng.normal_tensor(2, 2, 2);
        oracle::OracleDenoiser f(eps);
        ExtractionContext ctx = make_ctx(f);
        const auto [err, dsq] = extract_noise_optimization(x, ctx);
        CHECK(err == doctest::Approx(0.0));
        CHECK(dsq == doctest::Approx(0.0));
    }
    SUBCASE("error never exceeds the denoising loss at the same draw") {
        oracle::ScalingDenoiser f(0.6);
        ImageSample x = make_sample(19);
        ExtractionContext ctx = make_ctx(f);
        const auto [err, dsq] = extract_noise_optimization(x, ctx);
        Rng rng = feature_rng(ctx, x, "no");
        Tensor eps = rng.normal_tensor(2, 2, 2);
        const double baseline =
            denoising_loss(x.pixels, ctx.no_timestep, eps, f, sched());
        CHECK(err <= baseline + 1e-12);
        CHECK(dsq >= 0.0);
        CHECK(err < baseline);  // a linear model leaves room to optimize
    }
    SUBCASE("white-box required") {
        oracle::GrayBoxDenoiser f;
        ImageSample x = make_sample(20);
        ExtractionContext ctx = make_ctx(f);
        CHECK_THROWS_AS(extract_noise_optimization(x, ctx), AccessViolation);
    }
}

TEST_CASE("feature specs carry the documented access levels") {
    oracle::ScalingDenoiser f(0.5);
    ExtractionContext ctx = make_ctx(f);
    for (const auto& spec : default_feature_set(ctx)) {
        const bool needs_gradients =
            spec.name == "gradient_masking" || spec.name == "noise_optimization";
        CHECK(spec.access ==
              (needs_gradients ? AccessLevel::white_box : AccessLevel::gray_box));
        CHECK(spec.output_dim >= 1);
    }
    // and the composed dimensionalities
    int k = 0;
    for (const auto& spec : default_feature_set(ctx)) k += spec.output_dim;
    CHECK(k == 26);
    k = 0;
    for (const auto& spec : gray_box_feature_set(ctx)) k += spec.output_dim;
    CHECK(k == 14);
}

TEST_CASE("extract_all composition") {
    oracle::ScalingDenoiser f(0.5);
    ImageSample x = make_sample(21);
    ExtractionContext ctx = make_ctx(f);

    SUBCASE("default set is 26-dimensional in declared order") {
        const auto fv = extract_all(x, ctx, default_feature_set(ctx));
        CHECK(fv.values.size() == 26);
        CHECK(fv.names.size() == 26);
        CHECK(fv.names[0] == "denoising_loss");
        CHECK(fv.names[1] == "secmi_stat");
        CHECK(fv.names[2] == "pia");
        CHECK(fv.names[3] == "pian");
        CHECK(fv.names[4] == "gm_t0");
        CHECK(fv.names[13] == "gm_t900");
        CHECK(fv.names[14] == "ml_t0");
        CHECK(fv.names[23] == "ml_t900");
        CHECK(fv.names[24] == "no_error");
        CHECK(fv.names[25] == "no_delta_sq");
        for (double v : fv.values) CHECK(std::isfinite(v));
    }
    SUBCASE("gray-box set is 14-dimensional and runs under gray access") {
        ExtractionContext gray = ctx;
        gray.access = AccessLevel::gray_box;
        const auto fv = extract_all(x, gray, gray_box_feature_set(gray));
        CHECK(fv.values.size() == 14);
    }
    SUBCASE("white-box features rejected under gray access") {
        ExtractionContext gray = ctx;
        gray.access = AccessLevel::gray_box;
        CHECK_THROWS_AS(extract_all(x, gray, default_feature_set(gray)), AccessViolation);
    }
    SUBCASE("deterministic repetition, bitwise") {
        const auto a = extract_all(x, ctx, default_feature_set(ctx));
        const auto b = extract_all(x, ctx, default_feature_set(ctx));
        CHECK(a.values == b.values);
    }
    SUBCASE("subset extraction reproduces the full-set values") {
        const auto full = extract_all(x, ctx, default_feature_set(ctx));
        const auto sub = extract_all(x, ctx, feature_set_by_names(ctx, {"pia", "multiple_loss"}));
        CHECK(sub.values[0] == full.values[2]);
        for (int i = 0; i < 10; ++i) CHECK(sub.values[1 + i] == full.values[14 + i]);
    }
    SUBCASE("empty feature set rejected") {
        CHECK_THROWS_AS(extract_all(x, ctx, {}), std::invalid_argument);
    }
    SUBCASE("unknown feature name rejected") {
        CHECK_THROWS_AS(feature_set_by_names(ctx, {"nope"}), std::invalid_argument);
    }
}
