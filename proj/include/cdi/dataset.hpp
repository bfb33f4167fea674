#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cdi/sample.hpp"

namespace cdi {

struct DatasetSpec {
    std::string source = "synthetic";  // "synthetic" or "file"
    std::string path;                  // file source only
    int channels = 1;
    int height = 8;
    int width = 8;
    int num_classes = 0;
    uint64_t seed = 7;
};

// Procedural image source: per-sample random gratings plus a Gaussian blob,
// squashed to [-1,1]. Every index maps to one fixed image, so any contiguous
// slice of the stream is i.i.d. with any other slice - exactly what the
// member/non-member distribution-match guard needs.
std::vector<ImageSample> generate_synthetic(const DatasetSpec& spec, size_t count,
                                            size_t start_index = 0);

// Raw archive: magic, dims, optional labels, float64 pixel planes.
void save_dataset_file(const std::string& path, const std::vector<ImageSample>& data);
std::vector<ImageSample> load_dataset_file(const std::string& path);

// count samples from whichever source the spec names.
std::vector<ImageSample> load_dataset(const DatasetSpec& spec, size_t count);

struct SplitSizes {
    size_t n_train = 256;
    size_t p_pool = 256;      // suspect pool, drawn from train members
    size_t u_pool = 256;      // validation pool, drawn from held-out
    size_t contam_pool = 0;   // extra held-out non-members for contamination
    // |P| == |U| is enforced by default; the imbalance experiment
    // (|U| = ratio * |P|) opts out explicitly.
    bool allow_imbalance = false;
};

struct Splits {
    std::vector<ImageSample> train;
    std::vector<ImageSample> p;       // members (subset of train)
    std::vector<ImageSample> u;       // non-members
    std::vector<ImageSample> contam;  // non-members, disjoint from u
    double ks_pvalue = 1.0;           // P-vs-U pixel-mean distribution match
};

// Deterministic, disjoint splits over the dataset stream: train gets the
// first n_train samples, P is a seeded draw from train, U and the
// contamination pool are disjoint slices of held-out data. Warns when the
// distribution-match guard rejects at 5%.
Splits prepare_splits(const DatasetSpec& spec, const SplitSizes& sizes, uint64_t seed);

}  // namespace cdi
