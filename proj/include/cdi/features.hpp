#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cdi/denoiser.hpp"
#include "cdi/sample.hpp"
#include "cdi/schedule.hpp"

namespace cdi {

enum class AccessLevel { gray_box, white_box };

// One entry of the feature-extractor composition. `name` selects the
// extractor, `timesteps` the evaluation grid where applicable.
struct FeatureSpec {
    std::string name;
    AccessLevel access = AccessLevel::gray_box;
    std::vector<int> timesteps;
    int repeats = 1;
    int output_dim = 1;
};

struct FeatureVector {
    std::string sample_id;
    std::vector<double> values;
    std::vector<std::string> names;
};

// Everything an extractor needs besides the sample itself. Identical context
// + sample always reproduces the identical FeatureVector: every noise draw
// is derived from (global_seed, feature name, sample_id), so values are
// independent of batch order, worker count, and which other features run.
struct ExtractionContext {
    const Denoiser* denoiser = nullptr;
    const NoiseSchedule* schedule = nullptr;
    uint64_t global_seed = 0;
    bool use_labels = false;
    AccessLevel access = AccessLevel::white_box;

    int dl_timestep = 100;
    int dl_repeats = 5;

    int secmi_timestep = 100;
    int secmi_stride = 10;

    int pia_timestep = 200;
    double pia_p = 5.0;

    std::vector<int> gm_timesteps = {0, 100, 200, 300, 400, 500, 600, 700, 800, 900};
    double gm_top_frac = 0.2;
    bool gm_independent_fill = false;  // reuse the noising eps by default

    std::vector<int> ml_timesteps = {0, 100, 200, 300, 400, 500, 600, 700, 800, 900};

    int no_timestep = 100;
    int no_steps = 5;
};

// Canonical feature sets. The default (white-box) set is 26-dimensional:
// 1 denoising loss + 1 secmi + 1 pia + 1 pian + 10 gm + 10 ml + 2 no.
std::vector<FeatureSpec> default_feature_set(const ExtractionContext& ctx);
std::vector<FeatureSpec> gray_box_feature_set(const ExtractionContext& ctx);
std::vector<FeatureSpec> existing_mias_feature_set(const ExtractionContext& ctx);
// Filters the default set down to the named extractors, keeping order.
std::vector<FeatureSpec> feature_set_by_names(const ExtractionContext& ctx,
                                              const std::vector<std::string>& names);

// Mean denoising loss over dl_repeats independent noise draws at
// dl_timestep. Lower for members.
double extract_denoising_loss(const ImageSample& x, const ExtractionContext& ctx);

// SecMI t-error: reconstruction discrepancy after one inverse/denoise round
// trip at the deterministic-reverse point z~_t.
double extract_secmi_stat(const ImageSample& x, const ExtractionContext& ctx);

// Noise-prediction discrepancy between the clean sample and its model-seeded
// noised version, elementwise p-norm normalized by element count.
double extract_pia(const ImageSample& x, const ExtractionContext& ctx);

// PIA with the clean-sample prediction rescaled to L1 norm C*H*W*sqrt(pi/2).
double extract_pian(const ImageSample& x, const ExtractionContext& ctx);

// Masked reconstruction loss over the top-gradient region, one value per
// grid timestep. White-box.
std::vector<double> extract_gradient_masking(const ImageSample& x,
                                             const ExtractionContext& ctx);

// Denoising loss at each grid timestep, fresh noise per timestep.
std::vector<double> extract_multiple_loss(const ImageSample& x,
                                          const ExtractionContext& ctx);

// (final reconstruction error, mean delta^2) after a bounded L-BFGS search
// for an input perturbation minimizing the denoising loss. White-box.
std::pair<double, double> extract_noise_optimization(const ImageSample& x,
                                                     const ExtractionContext& ctx);

// Runs the composition in declared order. Throws AccessViolation when a
// white-box spec meets a gray-box context and ExtractionFailure on
// non-finite values; callers record such samples as invalid.
FeatureVector extract_all(const ImageSample& x, const ExtractionContext& ctx,
                          const std::vector<FeatureSpec>& feature_set);

// Binary top-k mask over |g|: k = max(1, round(frac * numel)), ties broken
// by ascending flat index. Exposed for audit; gradient masking uses it.
std::vector<uint8_t> top_fraction_mask(const Tensor& abs_grad, double frac);

// (mean |d_i|^p)^(1/p)
double pnorm_mean(const Tensor& d, double p);

}  // namespace cdi
