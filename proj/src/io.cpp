#include "cdi/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "cdi/rng.hpp"

namespace cdi {

using nlohmann::json;

namespace {

constexpr char kCkptMagic[8] = {'C', 'D', 'I', 'M', 'O', 'D', 'L', '1'};

std::string fmt_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

}  // namespace

std::unique_ptr<ConvDenoiser> Checkpoint::build_model() const {
    auto model = std::make_unique<ConvDenoiser>(model_config);
    if (params.size() != model->param_count())
        throw std::runtime_error("checkpoint: parameter count mismatch");
    model->params() = params;
    return model;
}

NoiseSchedule Checkpoint::build_schedule() const {
    return NoiseSchedule::linear_beta(schedule_T, beta_min, beta_max);
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    json header;
    header["model"] = {{"channels", ckpt.model_config.channels},
                       {"height", ckpt.model_config.height},
                       {"width", ckpt.model_config.width},
                       {"hidden", ckpt.model_config.hidden},
                       {"blocks", ckpt.model_config.blocks},
                       {"time_embed_dim", ckpt.model_config.time_embed_dim},
                       {"num_classes", ckpt.model_config.num_classes},
                       {"init_seed", ckpt.model_config.init_seed}};
    header["schedule"] = {{"T", ckpt.schedule_T},
                          {"beta_min", ckpt.beta_min},
                          {"beta_max", ckpt.beta_max}};
    header["train_seed"] = ckpt.train_seed;
    header["train_steps"] = ckpt.train_steps;
    header["param_count"] = ckpt.params.size();
    const std::string header_str = header.dump();

    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
    os.write(kCkptMagic, sizeof(kCkptMagic));
    const uint64_t hlen = header_str.size();
    os.write(reinterpret_cast<const char*>(&hlen), 8);
    os.write(header_str.data(), static_cast<std::streamsize>(hlen));
    os.write(reinterpret_cast<const char*>(ckpt.params.data()),
             static_cast<std::streamsize>(ckpt.params.size() * sizeof(double)));
    if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kCkptMagic, 8) != 0)
        throw std::runtime_error("load_checkpoint: bad magic in " + path);
    uint64_t hlen = 0;
    is.read(reinterpret_cast<char*>(&hlen), 8);
    if (!is || hlen == 0 || hlen > (1u << 20))
        throw std::runtime_error("load_checkpoint: corrupt header in " + path);
    std::string header_str(hlen, '\0');
    is.read(header_str.data(), static_cast<std::streamsize>(hlen));
    const json header = json::parse(header_str);

    Checkpoint ckpt;
    const auto& m = header.at("model");
    ckpt.model_config.channels = m.at("channels").get<int>();
    ckpt.model_config.height = m.at("height").get<int>();
    ckpt.model_config.width = m.at("width").get<int>();
    ckpt.model_config.hidden = m.at("hidden").get<int>();
    ckpt.model_config.blocks = m.at("blocks").get<int>();
    ckpt.model_config.time_embed_dim = m.at("time_embed_dim").get<int>();
    ckpt.model_config.num_classes = m.at("num_classes").get<int>();
    ckpt.model_config.init_seed = m.at("init_seed").get<uint64_t>();
    const auto& s = header.at("schedule");
    ckpt.schedule_T = s.at("T").get<int>();
    ckpt.beta_min = s.at("beta_min").get<double>();
    ckpt.beta_max = s.at("beta_max").get<double>();
    ckpt.train_seed = header.at("train_seed").get<uint64_t>();
    ckpt.train_steps = header.at("train_steps").get<int>();
    const size_t count = header.at("param_count").get<size_t>();
    ckpt.params.resize(count);
    is.read(reinterpret_cast<char*>(ckpt.params.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (!is) throw std::runtime_error("load_checkpoint: truncated " + path);
    return ckpt;
}

std::vector<std::vector<double>> FeatureCache::rows_for(const std::string& split) const {
    std::vector<std::vector<double>> out;
    for (const auto& r : rows)
        if (r.split == split) out.push_back(r.values);
    return out;
}

std::vector<std::string> FeatureCache::ids_for(const std::string& split) const {
    std::vector<std::string> out;
    for (const auto& r : rows)
        if (r.split == split) out.push_back(r.sample_id);
    return out;
}

void write_feature_cache(const std::string& csv_path, const FeatureCache& cache) {
    std::vector<const FeatureCacheRow*> sorted;
    sorted.reserve(cache.rows.size());
    for (const auto& r : cache.rows) sorted.push_back(&r);
    std::sort(sorted.begin(), sorted.end(),
              [](const FeatureCacheRow* a, const FeatureCacheRow* b) {
                  return a->sample_id < b->sample_id;
              });

    std::ofstream os(csv_path);
    if (!os) throw std::runtime_error("write_feature_cache: cannot open " + csv_path);
    os << "sample_id,split,is_member";
    for (const auto& n : cache.feature_names) os << "," << n;
    os << "\n";
    for (const FeatureCacheRow* r : sorted) {
        if (r->values.size() != cache.feature_names.size())
            throw std::runtime_error("write_feature_cache: row width mismatch for " +
                                     r->sample_id);
        os << r->sample_id << "," << r->split << "," << (r->is_member ? 1 : 0);
        for (double v : r->values) os << "," << fmt_double(v);
        os << "\n";
    }
    if (!os) throw std::runtime_error("write_feature_cache: write failed");
}

FeatureCache read_feature_cache(const std::string& csv_path) {
    std::ifstream is(csv_path);
    if (!is) throw std::runtime_error("read_feature_cache: cannot open " + csv_path);
    FeatureCache cache;
    std::string line;
    if (!std::getline(is, line))
        throw std::runtime_error("read_feature_cache: empty file " + csv_path);
    {
        std::istringstream hs(line);
        std::string col;
        int i = 0;
        while (std::getline(hs, col, ',')) {
            if (i >= 3) cache.feature_names.push_back(col);
            ++i;
        }
        if (i < 3) throw std::runtime_error("read_feature_cache: bad header");
    }
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        FeatureCacheRow row;
        std::string field;
        std::getline(ls, row.sample_id, ',');
        std::getline(ls, row.split, ',');
        std::getline(ls, field, ',');
        row.is_member = (field == "1");
        while (std::getline(ls, field, ',')) row.values.push_back(std::stod(field));
        if (row.values.size() != cache.feature_names.size())
            throw std::runtime_error("read_feature_cache: row width mismatch for " +
                                     row.sample_id);
        cache.rows.push_back(std::move(row));
    }
    return cache;
}

void write_feature_sidecar(const std::string& json_path,
                           const std::vector<FeatureSpec>& specs, uint64_t seed,
                           uint64_t checkpoint_hash, uint64_t manifest_hash,
                           const std::vector<std::string>& excluded_samples) {
    json j;
    j["seed"] = seed;
    j["checkpoint_hash"] = checkpoint_hash;
    j["manifest_hash"] = manifest_hash;
    j["excluded_samples"] = excluded_samples;
    j["excluded_count"] = excluded_samples.size();
    j["features"] = json::array();
    for (const auto& s : specs) {
        j["features"].push_back(
            {{"name", s.name},
             {"access", s.access == AccessLevel::white_box ? "white_box" : "gray_box"},
             {"timesteps", s.timesteps},
             {"repeats", s.repeats},
             {"output_dim", s.output_dim}});
    }
    write_text_file(json_path, j.dump(2) + "\n");
}

void write_score_dump(const std::string& csv_path, const std::vector<ScoreRow>& rows) {
    std::ofstream os(csv_path);
    if (!os) throw std::runtime_error("write_score_dump: cannot open " + csv_path);
    os << "sample_id,is_member,fold,score\n";
    for (const auto& r : rows)
        os << r.sample_id << "," << (r.is_member ? 1 : 0) << "," << r.fold << ","
           << fmt_double(r.score) << "\n";
}

void write_scoring_models_json(const std::string& path,
                               const std::vector<ScoringModel>& models,
                               uint64_t manifest_hash) {
    json j;
    j["manifest_hash"] = manifest_hash;
    j["folds"] = json::array();
    for (const auto& m : models) {
        json fm;
        fm["weights"] = m.weights;
        fm["bias"] = m.bias;
        fm["retained_columns"] = m.retained;
        fm["dropped_features"] = m.dropped_features;
        fm["feature_names"] = m.feature_names;
        fm["standardization"] = {{"mean", m.feat_mean}, {"std", m.feat_std}};
        fm["converged"] = m.converged;
        fm["iterations"] = m.iterations;
        j["folds"].push_back(std::move(fm));
    }
    write_text_file(path, j.dump(2) + "\n");
}

void write_verdict_json(const std::string& path, const VerificationVerdict& v,
                        uint64_t manifest_hash) {
    json j;
    j["mean_p"] = v.mean_p;
    j["ci95"] = {v.ci_lo, v.ci_hi};
    j["hmean_p_diagnostic"] = v.hmean_p;
    j["trials"] = v.trials;
    j["n_per_trial"] = v.n_per_trial;
    j["alpha"] = v.alpha;
    j["reject"] = v.reject;
    j["seed"] = v.seed;
    j["manifest_hash"] = manifest_hash;
    write_text_file(path, j.dump(2) + "\n");
}

void write_mia_metrics_json(const std::string& path,
                            const std::vector<MiaMetrics>& metrics,
                            uint64_t manifest_hash) {
    json j;
    j["manifest_hash"] = manifest_hash;
    j["metrics"] = json::array();
    for (const auto& m : metrics)
        j["metrics"].push_back({{"feature", m.feature},
                                {"auc", m.auc},
                                {"tpr_at_1pct_fpr", m.tpr_at_1pct_fpr},
                                {"accuracy", m.accuracy},
                                {"roc_points_csv_path", m.roc_points_csv_path}});
    write_text_file(path, j.dump(2) + "\n");
}

void write_roc_csv(const std::string& path,
                   const std::vector<std::pair<double, double>>& points) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_roc_csv: cannot open " + path);
    os << "fpr,tpr\n";
    for (const auto& [fpr, tpr] : points) os << fmt_double(fpr) << "," << fmt_double(tpr) << "\n";
}

namespace {

// log-scale y mapping for p-values; clamps below to keep zeros plottable
double plot_y(double p, double ymin_log, double height) {
    const double lp = std::log10(std::max(p, 1e-12));
    return height * (lp / ymin_log);  // ymin_log negative; 1.0 -> 0, 1e-12 -> height
}

}  // namespace

void write_pvalue_plot_svg(const std::string& path, const std::string& title,
                           const std::vector<PlotSeries>& series, double alpha) {
    const double W = 640, H = 420, ml = 70, mr = 20, mt = 40, mb = 50;
    const double pw = W - ml - mr, ph = H - mt - mb;

    double xmin = 1e300, xmax = -1e300;
    for (const auto& s : series)
        for (double x : s.x) {
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
        }
    if (!(xmax > xmin)) {
        xmin = xmin - 1.0;
        xmax = xmax + 1.0;
    }
    const double ymin_log = -12.0;
    auto X = [&](double x) { return ml + pw * (x - xmin) / (xmax - xmin); };
    auto Y = [&](double p) { return mt + plot_y(p, ymin_log, ph); };

    std::ostringstream os;
    os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H
       << "' viewBox='0 0 " << W << " " << H << "'>\n";
    os << "<rect width='" << W << "' height='" << H << "' fill='white'/>\n";
    os << "<text x='" << W / 2 << "' y='24' text-anchor='middle' font-size='15' "
          "font-family='sans-serif'>"
       << title << "</text>\n";

    // axes
    os << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << mt + ph
       << "' stroke='black'/>\n";
    os << "<line x1='" << ml << "' y1='" << mt + ph << "' x2='" << ml + pw << "' y2='"
       << mt + ph << "' stroke='black'/>\n";
    for (int e = 0; e >= -12; e -= 3) {
        const double y = Y(std::pow(10.0, e));
        os << "<line x1='" << ml - 4 << "' y1='" << y << "' x2='" << ml << "' y2='" << y
           << "' stroke='black'/>\n";
        os << "<text x='" << ml - 8 << "' y='" << y + 4
           << "' text-anchor='end' font-size='11' font-family='sans-serif'>1e" << e
           << "</text>\n";
    }
    const int xticks = 5;
    for (int i = 0; i <= xticks; ++i) {
        const double x = xmin + (xmax - xmin) * i / xticks;
        os << "<line x1='" << X(x) << "' y1='" << mt + ph << "' x2='" << X(x) << "' y2='"
           << mt + ph + 4 << "' stroke='black'/>\n";
        os << "<text x='" << X(x) << "' y='" << mt + ph + 18
           << "' text-anchor='middle' font-size='11' font-family='sans-serif'>"
           << static_cast<long long>(std::llround(x)) << "</text>\n";
    }
    os << "<text x='" << ml + pw / 2 << "' y='" << H - 12
       << "' text-anchor='middle' font-size='12' font-family='sans-serif'>|P|</text>\n";
    os << "<text x='16' y='" << mt + ph / 2
       << "' text-anchor='middle' font-size='12' font-family='sans-serif' "
          "transform='rotate(-90 16 "
       << mt + ph / 2 << ")'>aggregated p-value</text>\n";

    // alpha line
    os << "<line x1='" << ml << "' y1='" << Y(alpha) << "' x2='" << ml + pw << "' y2='"
       << Y(alpha) << "' stroke='red' stroke-dasharray='5,4'/>\n";
    os << "<text x='" << ml + pw - 4 << "' y='" << Y(alpha) - 4
       << "' text-anchor='end' font-size='11' fill='red' "
          "font-family='sans-serif'>alpha</text>\n";

    const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                            "#8c564b"};
    for (size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        const char* color = colors[si % 6];
        if (!s.lo.empty() && s.lo.size() == s.x.size() && s.hi.size() == s.x.size()) {
            os << "<polygon points='";
            for (size_t i = 0; i < s.x.size(); ++i)
                os << X(s.x[i]) << "," << Y(s.hi[i]) << " ";
            for (size_t i = s.x.size(); i-- > 0;)
                os << X(s.x[i]) << "," << Y(s.lo[i]) << " ";
            os << "' fill='" << color << "' opacity='0.18' stroke='none'/>\n";
        }
        os << "<polyline fill='none' stroke='" << color << "' stroke-width='1.8' points='";
        for (size_t i = 0; i < s.x.size(); ++i) os << X(s.x[i]) << "," << Y(s.y[i]) << " ";
        os << "'/>\n";
        for (size_t i = 0; i < s.x.size(); ++i)
            os << "<circle cx='" << X(s.x[i]) << "' cy='" << Y(s.y[i])
               << "' r='2.5' fill='" << color << "'/>\n";
        os << "<text x='" << ml + 10 << "' y='" << mt + 14 + 16 * static_cast<double>(si)
           << "' font-size='12' fill='" << color << "' font-family='sans-serif'>"
           << s.label << "</text>\n";
    }
    os << "</svg>\n";
    write_text_file(path, os.str());
}

uint64_t hash_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("hash_file: cannot open " + path);
    uint64_t h = 0xcbf29ce484222325ULL;
    char buf[4096];
    while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
        const std::streamsize got = is.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
        if (!is) break;
    }
    return h;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_text_file: cannot open " + path);
    os << content;
    if (!os) throw std::runtime_error("write_text_file: write failed for " + path);
}

std::string read_text_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("read_text_file: cannot open " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return buf.str();
}

}  // namespace cdi
