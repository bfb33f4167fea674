#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "cdi/mia_eval.hpp"
#include "cdi/rng.hpp"
#include "oracles.hpp"

using namespace cdi;

TEST_CASE("orientation is applied once at ingestion") {
    ScoredPopulation pop({1.0, 2.0}, {3.0, 4.0}, Orientation::lower_is_member);
    CHECK(pop.member_scores == std::vector<double>{-1.0, -2.0});
    CHECK(pop.nonmember_scores == std::vector<double>{-3.0, -4.0});
    CHECK_THROWS_AS(ScoredPopulation({}, {1.0}), std::invalid_argument);
}

TEST_CASE("roc_curve") {
    SUBCASE("perfect separation passes (0,1)") {
        ScoredPopulation pop({2.0, 3.0}, {0.0, 1.0});
        const auto curve = roc_curve(pop);
        bool has01 = false;
        for (const auto& pt : curve)
            if (pt.fpr == 0.0 && pt.tpr == 1.0) has01 = true;
        CHECK(has01);
        CHECK(curve.front().fpr == 0.0);
        CHECK(curve.front().tpr == 0.0);
        CHECK(curve.back().fpr == 1.0);
        CHECK(curve.back().tpr == 1.0);
    }
    SUBCASE("identical constant scores collapse to the endpoints") {
        ScoredPopulation pop({1.0, 1.0}, {1.0, 1.0});
        const auto curve = roc_curve(pop);
        REQUIRE(curve.size() == 2);
        CHECK(curve[0].fpr == 0.0);
        CHECK(curve[1].tpr == 1.0);
    }
    SUBCASE("10-point hand case against the exhaustive oracle") {
        const std::vector<double> m{0.9, 0.8, 0.8, 0.6, 0.3};
        const std::vector<double> n{0.85, 0.7, 0.5, 0.3, 0.1};
        ScoredPopulation pop(m, n);
        const auto curve = roc_curve(pop);
        // every curve point must be achievable by some strict threshold
        for (const auto& pt : curve) {
            bool found = false;
            std::vector<double> cands{-1e300, 1e300};
            cands.insert(cands.end(), m.begin(), m.end());
            cands.insert(cands.end(), n.begin(), n.end());
            for (double thr : cands) {
                int tp = 0, fp = 0;
                for (double s : m)
                    if (s > thr) ++tp;
                for (double s : n)
                    if (s > thr) ++fp;
                if (std::fabs(pt.tpr - tp / 5.0) < 1e-12 &&
                    std::fabs(pt.fpr - fp / 5.0) < 1e-12)
                    found = true;
            }
            CHECK(found);
        }
    }
}

TEST_CASE("auc") {
    SUBCASE("separated pair gives 1") {
        CHECK(auc(ScoredPopulation({1.0, 1.0}, {0.0, 0.0})) == doctest::Approx(1.0));
    }
    SUBCASE("identical distributions give 0.5") {
        Rng rng(1);
        std::vector<double> m(10000), n(10000);
        for (auto& x : m) x = rng.normal();
        for (auto& x : n) x = rng.normal();
        CHECK(auc(ScoredPopulation(m, n)) == doctest::Approx(0.5).epsilon(0.04));
    }
    SUBCASE("equals trapezoid integration of the roc curve") {
        Rng rng(2);
        for (int rep = 0; rep < 20; ++rep) {
            std::vector<double> m(40), n(50);
            for (auto& x : m) x = rng.normal() + 0.5;
            for (auto& x : n) x = rng.normal();
            // quantize to force ties
            for (auto& x : m) x = std::round(x * 4.0) / 4.0;
            for (auto& x : n) x = std::round(x * 4.0) / 4.0;
            ScoredPopulation pop(m, n);
            std::vector<std::pair<double, double>> pts;
            for (const auto& rp : roc_curve(pop)) pts.emplace_back(rp.fpr, rp.tpr);
            CHECK(auc(pop) == doctest::Approx(oracle::trapezoid_auc(pts)).epsilon(1e-9));
        }
    }
    SUBCASE("invariant under strictly increasing transforms") {
        Rng rng(3);
        std::vector<double> m(60), n(60);
        for (auto& x : m) x = rng.normal() + 0.4;
        for (auto& x : n) x = rng.normal();
        const double before = auc(ScoredPopulation(m, n));
        auto f = [](double x) { return std::exp(0.7 * x) + x; };
        for (auto& x : m) x = f(x);
        for (auto& x : n) x = f(x);
        CHECK(auc(ScoredPopulation(m, n)) == doctest::Approx(before).epsilon(1e-12));
    }
    SUBCASE("orientation negation maps auc to 1-auc") {
        Rng rng(4);
        std::vector<double> m(60), n(60);
        for (auto& x : m) x = rng.normal() + 0.4;
        for (auto& x : n) x = rng.normal();
        const double hi = auc(ScoredPopulation(m, n, Orientation::higher_is_member));
        const double lo = auc(ScoredPopulation(m, n, Orientation::lower_is_member));
        CHECK(hi + lo == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("tpr_at_fpr") {
    SUBCASE("null scorer calibrates to the budget") {
        Rng rng(5);
        std::vector<double> m(10000), n(10000);
        for (auto& x : m) x = rng.uniform();
        for (auto& x : n) x = rng.uniform();
        CHECK(tpr_at_fpr(ScoredPopulation(m, n), 0.01) ==
              doctest::Approx(0.01).epsilon(0.5));  // 0.01 +- 0.005
    }
    SUBCASE("20-element hand case equals the brute-force sweep") {
        Rng rng(6);
        for (int rep = 0; rep < 50; ++rep) {
            std::vector<double> m(20), n(20);
            for (auto& x : m) x = std::round((rng.normal() + 0.5) * 3.0) / 3.0;
            for (auto& x : n) x = std::round(rng.normal() * 3.0) / 3.0;
            for (double budget : {0.0, 0.05, 0.1, 0.25, 0.5}) {
                const double got = tpr_at_fpr(ScoredPopulation(m, n), budget);
                const double want = oracle::brute_force_tpr_at_fpr(m, n, budget);
                CHECK(got == doctest::Approx(want).epsilon(1e-12));
            }
        }
    }
    SUBCASE("monotone non-decreasing in fpr") {
        Rng rng(7);
        std::vector<double> m(300), n(300);
        for (auto& x : m) x = rng.normal() + 0.6;
        for (auto& x : n) x = rng.normal();
        ScoredPopulation pop(m, n);
        double prev = 0.0;
        for (double f : {0.0, 0.01, 0.05, 0.1, 0.3, 0.7, 1.0}) {
            const double v = tpr_at_fpr(pop, f);
            CHECK(v >= prev - 1e-12);
            prev = v;
        }
    }
}

TEST_CASE("best_threshold_accuracy") {
    SUBCASE("separated gives 1, identical gives 0.5") {
        CHECK(best_threshold_accuracy(ScoredPopulation({1.0, 2.0}, {-1.0, 0.0})) ==
              doctest::Approx(1.0));
        CHECK(best_threshold_accuracy(ScoredPopulation({1.0, 1.0}, {1.0, 1.0})) ==
              doctest::Approx(0.5));
    }
    SUBCASE("20-element hand cases equal the exhaustive sweep") {
        Rng rng(8);
        for (int rep = 0; rep < 50; ++rep) {
            std::vector<double> m(20), n(20);
            for (auto& x : m) x = std::round((rng.normal() + 0.4) * 2.0) / 2.0;
            for (auto& x : n) x = std::round(rng.normal() * 2.0) / 2.0;
            CHECK(best_threshold_accuracy(ScoredPopulation(m, n)) ==
                  doctest::Approx(oracle::brute_force_best_balanced_accuracy(m, n))
                      .epsilon(1e-12));
        }
    }
}

TEST_CASE("set_level_mia") {
    SUBCASE("deterministic oracle scorer reaches 1") {
        std::vector<double> m(200, 1.0), n(200, 0.0);
        CHECK(set_level_mia(m, n, 10, 500, 1) == doctest::Approx(1.0));
    }
    SUBCASE("null scorer stays at the fpr budget") {
        Rng rng(9);
        std::vector<double> m(5000), n(5000);
        for (auto& x : m) x = rng.uniform();
        for (auto& x : n) x = rng.uniform();
        const double tpr = set_level_mia(m, n, 8, 2000, 2);
        CHECK(tpr <= 0.03);
    }
    SUBCASE("set_size=1 reduces to single-sample tpr_at_fpr") {
        Rng rng(10);
        std::vector<double> m(10000), n(10000);
        for (auto& x : m) x = rng.normal() + 1.0;
        for (auto& x : n) x = rng.normal();
        const double via_sets = set_level_mia(m, n, 1, 10000, 3);
        const double direct = tpr_at_fpr(ScoredPopulation(m, n), 0.01);
        CHECK(std::fabs(via_sets - direct) <= 0.01);  // resampling noise only
    }
    SUBCASE("pool guards") {
        std::vector<double> s{1.0, 2.0};
        CHECK_THROWS_AS(set_level_mia(s, s, 3, 10, 0), std::invalid_argument);
        CHECK_THROWS_AS(set_level_mia(s, s, 0, 10, 0), std::invalid_argument);
    }
}
