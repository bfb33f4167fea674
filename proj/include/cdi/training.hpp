#pragma once

#include <cstdint>
#include <vector>

#include "cdi/conv_denoiser.hpp"
#include "cdi/sample.hpp"
#include "cdi/schedule.hpp"

namespace cdi {

struct TrainConfig {
    int steps = 4000;
    int batch_size = 32;
    double lr = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    uint64_t seed = 0;
    int threads = 0;  // 0 = hardware concurrency
    bool use_labels = false;
    int log_every = 200;  // 0 silences progress output
};

struct TrainReport {
    std::vector<double> loss_curve;  // per-step batch loss
    double running_loss_first = 0.0;
    double running_loss_last = 0.0;
};

// Adam on the denoising objective with t ~ U{1..T} and fresh Gaussian noise
// per sample. Deterministic for a fixed (seed, dataset, config): all random
// draws happen up front each step and gradients are reduced in a fixed chunk
// order regardless of thread count. Throws TrainingDiverged on NaN loss.
TrainReport train(const std::vector<ImageSample>& dataset, ConvDenoiser& f,
                  const NoiseSchedule& sched, const TrainConfig& cfg);

// Mean denoising loss over a sample set at one timestep, fresh noise per
// sample from `seed`. The train/held-out gap this measures is the
// overfitting dial every experiment reports.
double mean_loss_at(const std::vector<ImageSample>& samples, const ConvDenoiser& f,
                    const NoiseSchedule& sched, int t, uint64_t seed,
                    bool use_labels, int threads = 0);

}  // namespace cdi
