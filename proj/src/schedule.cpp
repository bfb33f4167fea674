#include "cdi/schedule.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace cdi {

NoiseSchedule::NoiseSchedule(std::vector<double> ab) : alpha_bar_(std::move(ab)) {
    validate();
}

NoiseSchedule NoiseSchedule::linear_beta(int T, double beta_min, double beta_max) {
    if (T < 1) throw std::invalid_argument("NoiseSchedule: T must be >= 1");
    if (!(beta_min > 0.0) || !(beta_max < 1.0) || beta_min > beta_max)
        throw std::invalid_argument("NoiseSchedule: need 0 < beta_min <= beta_max < 1");
    std::vector<double> ab(static_cast<size_t>(T) + 1);
    ab[0] = 1.0;
    double acc = 1.0;
    for (int t = 1; t <= T; ++t) {
        double beta = (T == 1) ? beta_min
                               : beta_min + (beta_max - beta_min) * (t - 1) / double(T - 1);
        acc *= 1.0 - beta;
        ab[t] = acc;
    }
    return NoiseSchedule(std::move(ab));
}

NoiseSchedule NoiseSchedule::from_alpha_bar(std::vector<double> alpha_bar) {
    return NoiseSchedule(std::move(alpha_bar));
}

void NoiseSchedule::validate() const {
    if (alpha_bar_.size() < 2)
        throw std::invalid_argument("NoiseSchedule: need at least T=1");
    if (alpha_bar_[0] != 1.0)
        throw std::invalid_argument("NoiseSchedule: alpha_bar[0] must be exactly 1");
    if (alpha_bar_.back() > 1e-4)
        throw std::invalid_argument("NoiseSchedule: alpha_bar[T] must be <= 1e-4");
    for (size_t t = 1; t < alpha_bar_.size(); ++t) {
        double v = alpha_bar_[t];
        if (!(v >= 0.0 && v <= 1.0) || !std::isfinite(v))
            throw std::invalid_argument("NoiseSchedule: alpha_bar out of [0,1]");
        if (!(v < alpha_bar_[t - 1]))
            throw std::invalid_argument("NoiseSchedule: alpha_bar must be strictly decreasing");
    }
}

double NoiseSchedule::alpha_bar(int t) const {
    if (t < 0 || t > T()) throw std::out_of_range("NoiseSchedule: t out of [0,T]");
    return alpha_bar_[static_cast<size_t>(t)];
}

double NoiseSchedule::sqrt_alpha_bar(int t) const { return std::sqrt(alpha_bar(t)); }

double NoiseSchedule::sqrt_one_minus_alpha_bar(int t) const {
    return std::sqrt(1.0 - alpha_bar(t));
}

std::string NoiseSchedule::to_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "t,alpha_bar\n";
    for (int t = 0; t <= T(); ++t) os << t << "," << alpha_bar_[static_cast<size_t>(t)] << "\n";
    return os.str();
}

}  // namespace cdi
