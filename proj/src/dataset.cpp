#include "cdi/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "cdi/rng.hpp"
#include "cdi/stats.hpp"

namespace cdi {

namespace {

constexpr char kMagic[8] = {'C', 'D', 'I', 'D', 'S', 'E', 'T', '1'};

std::string sample_name(size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "syn-%06zu", index);
    return buf;
}

}  // namespace

std::vector<ImageSample> generate_synthetic(const DatasetSpec& spec, size_t count,
                                            size_t start_index) {
    std::vector<ImageSample> out;
    out.reserve(count);
    const int C = spec.channels, H = spec.height, W = spec.width;
    for (size_t i = 0; i < count; ++i) {
        const size_t index = start_index + i;
        Rng rng = derive_rng(spec.seed, "synthetic", index);
        ImageSample s;
        s.sample_id = sample_name(index);
        if (spec.num_classes > 0)
            s.label = static_cast<int>(index % static_cast<size_t>(spec.num_classes));
        s.pixels = Tensor(C, H, W);

        // shared blob across channels, gratings per channel
        const double bx = rng.uniform(0.15, 0.85);
        const double by = rng.uniform(0.15, 0.85);
        const double bsig = rng.uniform(0.10, 0.25);
        const double bamp = rng.uniform(-1.2, 1.2);
        const double class_freq =
            s.label ? 0.4 * static_cast<double>(*s.label) : 0.0;

        for (int c = 0; c < C; ++c) {
            struct Grating {
                double amp, fx, fy, phase;
            };
            Grating g[4];
            for (auto& gr : g) {
                gr.amp = rng.uniform(0.4, 1.0);
                gr.fx = rng.uniform(-3.0, 3.0) + class_freq;
                gr.fy = rng.uniform(-3.0, 3.0);
                gr.phase = rng.uniform(0.0, 2.0 * M_PI);
            }
            for (int y = 0; y < H; ++y) {
                for (int x = 0; x < W; ++x) {
                    const double u = static_cast<double>(x) / W;
                    const double v = static_cast<double>(y) / H;
                    double field = 0.0;
                    for (const auto& gr : g)
                        field += gr.amp *
                                 std::sin(2.0 * M_PI * (gr.fx * u + gr.fy * v) + gr.phase);
                    const double dx = u - bx, dy = v - by;
                    field += bamp * std::exp(-(dx * dx + dy * dy) / (2.0 * bsig * bsig));
                    s.pixels(c, y, x) = std::tanh(0.7 * field);
                }
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

void save_dataset_file(const std::string& path, const std::vector<ImageSample>& data) {
    if (data.empty()) throw std::invalid_argument("save_dataset_file: empty dataset");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_dataset_file: cannot open " + path);
    os.write(kMagic, sizeof(kMagic));
    const auto& first = data.front().pixels;
    uint32_t n = static_cast<uint32_t>(data.size());
    uint32_t c = static_cast<uint32_t>(first.channels());
    uint32_t h = static_cast<uint32_t>(first.height());
    uint32_t w = static_cast<uint32_t>(first.width());
    uint8_t has_labels = data.front().label.has_value() ? 1 : 0;
    os.write(reinterpret_cast<const char*>(&n), 4);
    os.write(reinterpret_cast<const char*>(&c), 4);
    os.write(reinterpret_cast<const char*>(&h), 4);
    os.write(reinterpret_cast<const char*>(&w), 4);
    os.write(reinterpret_cast<const char*>(&has_labels), 1);
    for (const auto& s : data) {
        if (!s.pixels.same_shape(first))
            throw std::invalid_argument("save_dataset_file: mixed shapes");
        os.write(reinterpret_cast<const char*>(s.pixels.data()),
                 static_cast<std::streamsize>(s.pixels.size() * sizeof(double)));
        if (has_labels) {
            int32_t label = s.label.value_or(0);
            os.write(reinterpret_cast<const char*>(&label), 4);
        }
    }
    if (!os) throw std::runtime_error("save_dataset_file: write failed for " + path);
}

std::vector<ImageSample> load_dataset_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_dataset_file: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("load_dataset_file: bad magic in " + path);
    uint32_t n = 0, c = 0, h = 0, w = 0;
    uint8_t has_labels = 0;
    is.read(reinterpret_cast<char*>(&n), 4);
    is.read(reinterpret_cast<char*>(&c), 4);
    is.read(reinterpret_cast<char*>(&h), 4);
    is.read(reinterpret_cast<char*>(&w), 4);
    is.read(reinterpret_cast<char*>(&has_labels), 1);
    if (!is || n == 0 || c == 0 || h == 0 || w == 0)
        throw std::runtime_error("load_dataset_file: corrupt header in " + path);
    std::vector<ImageSample> out;
    out.reserve(n);
    for (uint32_t i = 0; i < n; ++i) {
        ImageSample s;
        s.pixels = Tensor(static_cast<int>(c), static_cast<int>(h), static_cast<int>(w));
        is.read(reinterpret_cast<char*>(s.pixels.data()),
                static_cast<std::streamsize>(s.pixels.size() * sizeof(double)));
        if (has_labels) {
            int32_t label = 0;
            is.read(reinterpret_cast<char*>(&label), 4);
            s.label = label;
        }
        char buf[32];
        std::snprintf(buf, sizeof(buf), "file-%06u", i);
        s.sample_id = buf;
        if (!is) throw std::runtime_error("load_dataset_file: truncated " + path);
        if (!s.pixels.all_finite())
            throw std::runtime_error("load_dataset_file: non-finite pixels in " + path);
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<ImageSample> load_dataset(const DatasetSpec& spec, size_t count) {
    if (spec.source == "synthetic") return generate_synthetic(spec, count);
    if (spec.source == "file") {
        auto all = load_dataset_file(spec.path);
        if (all.size() < count)
            throw std::runtime_error("load_dataset: file has " +
                                     std::to_string(all.size()) + " samples, need " +
                                     std::to_string(count));
        all.resize(count);
        return all;
    }
    throw std::invalid_argument("load_dataset: unknown source '" + spec.source + "'");
}

Splits prepare_splits(const DatasetSpec& spec, const SplitSizes& sizes, uint64_t seed) {
    if (sizes.p_pool > sizes.n_train)
        throw std::invalid_argument("prepare_splits: |P| cannot exceed the train size");
    if (!sizes.allow_imbalance && sizes.p_pool != sizes.u_pool)
        throw std::invalid_argument(
            "prepare_splits: |P| != |U| (" + std::to_string(sizes.p_pool) + " vs " +
            std::to_string(sizes.u_pool) +
            "); set splits.allow_imbalance for the imbalance experiment");
    const size_t heldout_needed = sizes.u_pool + sizes.contam_pool;
    const size_t total = sizes.n_train + heldout_needed;
    std::vector<ImageSample> all = load_dataset(spec, total);

    Splits sp;
    sp.train.assign(all.begin(), all.begin() + static_cast<long>(sizes.n_train));

    // P: seeded draw from the train members
    std::vector<size_t> idx(sizes.n_train);
    std::iota(idx.begin(), idx.end(), size_t{0});
    Rng rng = derive_rng(seed, "split_p");
    rng.shuffle(idx);
    sp.p.reserve(sizes.p_pool);
    for (size_t i = 0; i < sizes.p_pool; ++i) sp.p.push_back(sp.train[idx[i]]);

    // U and contamination pool: disjoint held-out slices, same source stream
    auto held_begin = all.begin() + static_cast<long>(sizes.n_train);
    sp.u.assign(held_begin, held_begin + static_cast<long>(sizes.u_pool));
    sp.contam.assign(held_begin + static_cast<long>(sizes.u_pool),
                     held_begin + static_cast<long>(heldout_needed));

    // Distribution-match guard over per-sample pixel means.
    std::vector<double> pm, um;
    pm.reserve(sp.p.size());
    um.reserve(sp.u.size());
    for (const auto& s : sp.p) pm.push_back(s.pixels.mean());
    for (const auto& s : sp.u) um.push_back(s.pixels.mean());
    sp.ks_pvalue = ks_two_sample_pvalue(pm, um);
    if (sp.ks_pvalue < 0.05)
        std::fprintf(stderr,
                     "prepare_splits: warning, P/U pixel-mean KS test rejects at 5%% "
                     "(p=%.4f); member and non-member sets may be distinguishable by "
                     "distribution alone\n",
                     sp.ks_pvalue);
    return sp;
}

}  // namespace cdi
