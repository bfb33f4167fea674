#pragma once

#include <string>
#include <vector>

namespace cdi {

// Cumulative signal-retention sequence alpha_bar[0..T] for the forward
// noising process and the DDIM step algebra. alpha_bar[0] == 1 exactly,
// alpha_bar[T] <= 1e-4, strictly decreasing.
class NoiseSchedule {
public:
    // Linear-beta DDPM schedule: beta_t ramps from beta_min to beta_max over
    // t = 1..T, alpha_bar[t] = prod_{k<=t} (1 - beta_k).
    static NoiseSchedule linear_beta(int T = 1000, double beta_min = 1e-4,
                                     double beta_max = 2e-2);

    // From an explicit alpha_bar sequence (size T+1); validates invariants.
    static NoiseSchedule from_alpha_bar(std::vector<double> alpha_bar);

    int T() const { return static_cast<int>(alpha_bar_.size()) - 1; }

    double alpha_bar(int t) const;
    double sqrt_alpha_bar(int t) const;
    double sqrt_one_minus_alpha_bar(int t) const;

    const std::vector<double>& alpha_bar_all() const { return alpha_bar_; }

    // Audit export, one "t,alpha_bar" row per timestep.
    std::string to_csv() const;

private:
    explicit NoiseSchedule(std::vector<double> ab);
    void validate() const;

    std::vector<double> alpha_bar_;
};

}  // namespace cdi
