#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cdi/diffusion.hpp"
#include "cdi/rng.hpp"
#include "oracles.hpp"

using namespace cdi;

namespace {

const NoiseSchedule& sched() {
    static NoiseSchedule s = NoiseSchedule::linear_beta();
    return s;
}

Tensor rand_tensor(Rng& rng, int c = 2, int h = 2, int w = 2) {
    return rng.normal_tensor(c, h, w);
}

}  // namespace

TEST_CASE("schedule endpoints and monotonicity") {
    const auto& s = sched();
    CHECK(s.T() == 1000);
    CHECK(s.alpha_bar(0) == 1.0);
    CHECK(s.alpha_bar(1000) <= 1e-4);
    CHECK(s.alpha_bar(1000) > 0.0);
    for (int t = 1; t <= 1000; ++t) CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
    CHECK_THROWS_AS(s.alpha_bar(1001), std::out_of_range);
    CHECK_THROWS_AS(s.alpha_bar(-1), std::out_of_range);
}

TEST_CASE("schedule csv round trip") {
    const std::string csv = sched().to_csv();
    CHECK(csv.rfind("t,alpha_bar\n0,1\n", 0) == 0);
    // one row per timestep plus header
    size_t lines = 0;
    for (char ch : csv)
        if (ch == '\n') ++lines;
    CHECK(lines == 1002);
}

TEST_CASE("schedule invariant validation") {
    CHECK_THROWS(NoiseSchedule::from_alpha_bar({1.0, 0.5, 0.6, 0.00001}));
    CHECK_THROWS(NoiseSchedule::from_alpha_bar({0.9, 0.5, 0.00001}));
    CHECK_THROWS(NoiseSchedule::from_alpha_bar({1.0, 0.5, 0.01}));  // tail too large
    CHECK_NOTHROW(NoiseSchedule::from_alpha_bar({1.0, 0.5, 0.00001}));
}

TEST_CASE("forward_noise endpoints") {
    Rng rng(1);
    Tensor x = rand_tensor(rng);
    Tensor eps = rand_tensor(rng);
    // t=0: alpha_bar = 1 forces identity
    Tensor x0 = forward_noise(x, 0, eps, sched());
    for (size_t i = 0; i < x.size(); ++i) CHECK(x0[i] == doctest::Approx(x[i]).epsilon(1e-12));
    // t=T: nearly pure noise
    Tensor xT = forward_noise(x, sched().T(), eps, sched());
    double diff = 0.0, xnorm = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        diff += (xT[i] - eps[i]) * (xT[i] - eps[i]);
        xnorm += x[i] * x[i];
    }
    CHECK(std::sqrt(diff) <= 1e-2 * std::sqrt(xnorm) + 1e-9);
    // shape mismatch rejected
    CHECK_THROWS_AS(forward_noise(x, 10, Tensor(1, 2, 2), sched()), std::invalid_argument);
}

TEST_CASE("forward_noise variance Monte Carlo") {
    // Var(x_t) = alpha_bar * Var(x) + (1 - alpha_bar) with unit-variance x
    Rng rng(7);
    for (int t : {100, 500, 900}) {
        const double ab = sched().alpha_bar(t);
        const int draws = 10000;
        double sum = 0.0, sq = 0.0;
        for (int i = 0; i < draws; ++i) {
            const double x = rng.normal();
            const double e = rng.normal();
            const double xt = std::sqrt(ab) * x + std::sqrt(1.0 - ab) * e;
            sum += xt;
            sq += xt * xt;
        }
        const double var = sq / draws - (sum / draws) * (sum / draws);
        CHECK(var == doctest::Approx(ab * 1.0 + (1.0 - ab)).epsilon(0.05));
    }
}

TEST_CASE("forward_noise linear in (x, eps)") {
    Rng rng(3);
    Tensor x1 = rand_tensor(rng), x2 = rand_tensor(rng);
    Tensor e1 = rand_tensor(rng), e2 = rand_tensor(rng);
    const int t = 321;
    Tensor lhs = forward_noise(x1 + x2, t, e1 + e2, sched());
    Tensor rhs = forward_noise(x1, t, e1, sched()) + forward_noise(x2, t, e2, sched());
    CHECK(mean_sq_diff(lhs, rhs) < 1e-24);
}

TEST_CASE("forward_noise matches the scalar triple-loop oracle") {
    Rng rng(19);
    for (int t : {1, 137, 1000}) {
        Tensor x = rand_tensor(rng), eps = rand_tensor(rng);
        Tensor got = forward_noise(x, t, eps, sched());
        Tensor want = oracle::forward_noise_scalar(x, sched().alpha_bar(t), eps);
        for (size_t i = 0; i < got.size(); ++i)
            CHECK(std::fabs(got[i] - want[i]) < 1e-6);
    }
}

TEST_CASE("denoising_loss reference values") {
    Rng rng(11);
    Tensor x = rand_tensor(rng, 1, 4, 4);

    SUBCASE("oracle denoiser gives zero") {
        Tensor eps = rand_tensor(rng, 1, 4, 4);
        oracle::OracleDenoiser f(eps);
        CHECK(denoising_loss(x, 100, eps, f, sched()) == doctest::Approx(0.0));
    }
    SUBCASE("independent predictor gives 2") {
        oracle::IndependentNoiseDenoiser f(99);
        double acc = 0.0;
        const int draws = 10000;
        for (int i = 0; i < draws; ++i) {
            Tensor eps = rand_tensor(rng, 1, 4, 4);
            acc += denoising_loss(x, 100, eps, f, sched());
        }
        CHECK(acc / draws == doctest::Approx(2.0).epsilon(0.025));
    }
    SUBCASE("constant-zero predictor gives 1") {
        ConstantDenoiser f(Tensor(1, 4, 4, 0.0));
        double acc = 0.0;
        const int draws = 10000;
        for (int i = 0; i < draws; ++i) {
            Tensor eps = rand_tensor(rng, 1, 4, 4);
            acc += denoising_loss(x, 100, eps, f, sched());
        }
        CHECK(acc / draws == doctest::Approx(1.0).epsilon(0.05));
    }
    SUBCASE("non-finite output flagged as extraction failure") {
        ConstantDenoiser f(Tensor(1, 4, 4, std::numeric_limits<double>::quiet_NaN()));
        Tensor eps = rand_tensor(rng, 1, 4, 4);
        CHECK_THROWS_AS(denoising_loss(x, 100, eps, f, sched()), ExtractionFailure);
    }
}

TEST_CASE("x0_estimate formula") {
    Rng rng(5);
    Tensor z = rand_tensor(rng);

    SUBCASE("f == 0 collapses to z/sqrt(ab)") {
        ConstantDenoiser f(Tensor(2, 2, 2, 0.0));
        const int t = 250;
        Tensor est = x0_estimate(z, t, f, sched());
        for (size_t i = 0; i < z.size(); ++i)
            CHECK(est[i] == doctest::Approx(z[i] / std::sqrt(sched().alpha_bar(t))));
    }
    SUBCASE("inverts forward_noise under the oracle") {
        Tensor x = rand_tensor(rng);
        Tensor eps = rand_tensor(rng);
        oracle::OracleDenoiser f(eps);
        const int t = 600;
        Tensor z_t = forward_noise(x, t, eps, sched());
        Tensor est = x0_estimate(z_t, t, f, sched());
        CHECK(mean_sq_diff(est, x) < 1e-20);
    }
    SUBCASE("matches the scalar oracle on random inputs") {
        Rng frng(17);
        Tensor pred = rand_tensor(frng);
        ConstantDenoiser f(pred);
        const int t = 777;
        Tensor got = x0_estimate(z, t, f, sched());
        Tensor want = oracle::x0_estimate_scalar(z, sched().alpha_bar(t), pred);
        for (size_t i = 0; i < got.size(); ++i)
            CHECK(std::fabs(got[i] - want[i]) < 1e-6);
    }
    SUBCASE("alpha_bar zero guard") {
        std::vector<double> ab{1.0, 0.5, 0.0};
        auto tiny = NoiseSchedule::from_alpha_bar(ab);
        ConstantDenoiser f(Tensor(2, 2, 2, 0.0));
        CHECK_THROWS_AS(x0_estimate(z, 2, f, tiny), std::domain_error);
    }
}

TEST_CASE("ddim steps against the scalar oracle") {
    Rng rng(23);
    Tensor z = rand_tensor(rng);
    Tensor pred = rand_tensor(rng);
    ConstantDenoiser f(pred);

    for (int t : {1, 100, 999}) {
        Tensor down = ddim_denoise_step(z, t, f, sched());
        Tensor down_want = oracle::ddim_step_scalar(z, sched().alpha_bar(t),
                                                    sched().alpha_bar(t - 1), pred);
        for (size_t i = 0; i < z.size(); ++i)
            CHECK(std::fabs(down[i] - down_want[i]) < 1e-6);

        if (t <= sched().T() - 1) {
            Tensor up = ddim_inverse_step(z, t, f, sched());
            Tensor up_want = oracle::ddim_step_scalar(z, sched().alpha_bar(t),
                                                      sched().alpha_bar(t + 1), pred);
            for (size_t i = 0; i < z.size(); ++i)
                CHECK(std::fabs(up[i] - up_want[i]) < 1e-6);
        }
    }
    CHECK_THROWS_AS(ddim_denoise_step(z, 0, f, sched()), std::invalid_argument);
    CHECK_THROWS_AS(ddim_inverse_step(z, sched().T(), f, sched()), std::invalid_argument);
}

TEST_CASE("ddim f==0 closed forms") {
    Rng rng(29);
    Tensor z = rand_tensor(rng);
    ConstantDenoiser f(Tensor(2, 2, 2, 0.0));
    const int t = 400;
    Tensor down = ddim_denoise_step(z, t, f, sched());
    const double scale = std::sqrt(sched().alpha_bar(t - 1) / sched().alpha_bar(t));
    for (size_t i = 0; i < z.size(); ++i)
        CHECK(down[i] == doctest::Approx(scale * z[i]).epsilon(1e-10));
}

TEST_CASE("round-trip identity for constant denoisers") {
    // psi(phi(z_t, t), t+1) == z_t, the algebra behind SecMI's t-error
    Rng rng(31);
    for (int rep = 0; rep < 20; ++rep) {
        Tensor z = rand_tensor(rng);
        Tensor pred = rand_tensor(rng);
        ConstantDenoiser f(pred);
        const int t = rng.uniform_int(1, sched().T() - 1);
        Tensor up = ddim_inverse_step(z, t, f, sched());
        Tensor back = ddim_denoise_step(up, t + 1, f, sched());
        for (size_t i = 0; i < z.size(); ++i) CHECK(std::fabs(back[i] - z[i]) < 1e-5);
    }
}

TEST_CASE("deterministic_reverse") {
    Rng rng(37);
    Tensor z0 = rand_tensor(rng);

    SUBCASE("t_target 0 is the identity") {
        ConstantDenoiser f(Tensor(2, 2, 2, 0.3));
        Tensor z = deterministic_reverse(z0, 0, 10, f, sched());
        CHECK(mean_sq_diff(z, z0) == 0.0);
    }
    SUBCASE("stride must divide t_target") {
        ConstantDenoiser f(Tensor(2, 2, 2, 0.3));
        CHECK_THROWS_AS(deterministic_reverse(z0, 100, 7, f, sched()),
                        std::invalid_argument);
    }
    SUBCASE("closed-form composition for constant denoisers") {
        Tensor pred = rand_tensor(rng);
        ConstantDenoiser f(pred);
        for (int stride : {10, 20, 50}) {
            Tensor z = deterministic_reverse(z0, 100, stride, f, sched());
            double A, B;
            oracle::constant_reverse_coeffs(sched().alpha_bar_all(), 100, stride, A, B);
            for (size_t i = 0; i < z.size(); ++i)
                CHECK(std::fabs(z[i] - (A * z0[i] + B * pred[i])) < 1e-5);
        }
    }
    SUBCASE("single stride equals one coarse inverse step") {
        Tensor pred = rand_tensor(rng);
        ConstantDenoiser f(pred);
        Tensor one = deterministic_reverse(z0, 200, 200, f, sched());
        Tensor want = ddim_step_to(z0, 0, 200, f, sched());
        CHECK(mean_sq_diff(one, want) == 0.0);
    }
}

TEST_CASE("generate sanity") {
    ConstantDenoiser f(Tensor(1, 4, 4, 0.1));
    SUBCASE("shape and determinism") {
        ImageSample a = generate(f, sched(), std::nullopt, 99, 10, 1, 4, 4);
        ImageSample b = generate(f, sched(), std::nullopt, 99, 10, 1, 4, 4);
        CHECK(a.pixels.channels() == 1);
        CHECK(a.pixels.height() == 4);
        CHECK(a.pixels.width() == 4);
        CHECK(mean_sq_diff(a.pixels, b.pixels) == 0.0);
        ImageSample c = generate(f, sched(), std::nullopt, 100, 10, 1, 4, 4);
        CHECK(mean_sq_diff(a.pixels, c.pixels) > 0.0);
    }
    SUBCASE("steps must divide T") {
        CHECK_THROWS_AS(generate(f, sched(), std::nullopt, 1, 7, 1, 4, 4),
                        std::invalid_argument);
    }
}
