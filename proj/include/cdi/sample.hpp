#pragma once

#include <optional>
#include <string>

#include "cdi/tensor.hpp"

namespace cdi {

// One image in [-1,1] pixel scale with a stable identifier. The identifier
// seeds every per-sample noise draw, so feature extraction is reproducible
// regardless of batch order or worker count.
struct ImageSample {
    Tensor pixels;
    std::optional<int> label;
    std::string sample_id;
};

}  // namespace cdi
