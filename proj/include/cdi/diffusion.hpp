#pragma once

#include <optional>

#include "cdi/denoiser.hpp"
#include "cdi/rng.hpp"
#include "cdi/sample.hpp"
#include "cdi/schedule.hpp"

namespace cdi {

// x_t = sqrt(alpha_bar_t) * x + sqrt(1 - alpha_bar_t) * eps
Tensor forward_noise(const Tensor& x, int t, const Tensor& eps,
                     const NoiseSchedule& sched);

// mean((eps - f(x_t, t))^2), per-element reduction.
double denoising_loss(const Tensor& x, int t, const Tensor& eps, const Denoiser& f,
                      const NoiseSchedule& sched,
                      std::optional<int> cond = std::nullopt);

// Implied clean-sample estimate:
// (z_t - sqrt(1 - alpha_bar_t) * f(z_t, t)) / sqrt(alpha_bar_t)
Tensor x0_estimate(const Tensor& z_t, int t, const Denoiser& f,
                   const NoiseSchedule& sched,
                   std::optional<int> cond = std::nullopt);

// Shared core of the deterministic DDIM maps: re-projects z_t onto the
// t_to noise level, sqrt(ab_to) * x0_estimate + sqrt(1-ab_to) * f(z_t,t).
Tensor ddim_step_to(const Tensor& z_t, int t_from, int t_to, const Denoiser& f,
                    const NoiseSchedule& sched,
                    std::optional<int> cond = std::nullopt);

// One-index denoise step (t -> t-1); rejects t = 0.
Tensor ddim_denoise_step(const Tensor& z_t, int t, const Denoiser& f,
                         const NoiseSchedule& sched,
                         std::optional<int> cond = std::nullopt);

// One-index inverse step (t -> t+1); rejects t = T.
Tensor ddim_inverse_step(const Tensor& z_t, int t, const Denoiser& f,
                         const NoiseSchedule& sched,
                         std::optional<int> cond = std::nullopt);

// Composition of inverse steps 0 -> stride -> 2*stride -> ... -> t_target.
// stride must divide t_target.
Tensor deterministic_reverse(const Tensor& z_0, int t_target, int stride,
                             const Denoiser& f, const NoiseSchedule& sched,
                             std::optional<int> cond = std::nullopt);

// Sampling sanity utility: z_T ~ N(0,I), denoise down a stride grid.
ImageSample generate(const Denoiser& f, const NoiseSchedule& sched,
                     std::optional<int> cond, uint64_t seed, int steps,
                     int channels, int height, int width);

}  // namespace cdi
