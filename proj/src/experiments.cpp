#include "cdi/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <map>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "cdi/errors.hpp"
#include "cdi/mia_eval.hpp"
#include "cdi/rng.hpp"

namespace cdi {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> out;
    std::istringstream is(text);
    std::string tok;
    while (std::getline(is, tok, ',')) {
        if (!tok.empty()) out.push_back(std::stoi(tok));
    }
    return out;
}

std::string join_ints(const std::vector<int>& v) {
    std::ostringstream os;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) os << ",";
        os << v[i];
    }
    return os.str();
}

std::string now_string() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

std::vector<std::string> split_names(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream is(text);
    std::string tok;
    while (std::getline(is, tok, ',')) {
        const auto b = tok.find_first_not_of(" \t");
        const auto e = tok.find_last_not_of(" \t");
        if (b != std::string::npos) out.push_back(tok.substr(b, e - b + 1));
    }
    return out;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_config(const ConfigMap& cm) {
    ExperimentConfig c;
    c.dataset.source = cm.get_string("dataset.source", c.dataset.source);
    c.dataset.path = cm.get_string("dataset.path", c.dataset.path);
    c.dataset.channels = cm.get_int("dataset.channels", c.dataset.channels);
    c.dataset.height = cm.get_int("dataset.height", c.dataset.height);
    c.dataset.width = cm.get_int("dataset.width", c.dataset.width);
    c.dataset.num_classes = cm.get_int("dataset.classes", c.dataset.num_classes);
    c.dataset.seed = cm.get_u64("dataset.seed", c.dataset.seed);

    c.splits.n_train = static_cast<size_t>(cm.get_int("splits.n_train", static_cast<int>(c.splits.n_train)));
    c.splits.p_pool = static_cast<size_t>(cm.get_int("splits.p_pool", static_cast<int>(c.splits.p_pool)));
    c.splits.u_pool = static_cast<size_t>(cm.get_int("splits.u_pool", static_cast<int>(c.splits.u_pool)));
    c.splits.contam_pool = static_cast<size_t>(cm.get_int("splits.contam_pool", static_cast<int>(c.splits.contam_pool)));
    c.splits.allow_imbalance = cm.get_bool("splits.allow_imbalance", c.splits.allow_imbalance);

    c.model_hidden = cm.get_int("model.hidden", c.model_hidden);
    c.model_blocks = cm.get_int("model.blocks", c.model_blocks);
    c.model_time_embed_dim = cm.get_int("model.time_embed_dim", c.model_time_embed_dim);
    c.model_init_seed = cm.get_u64("model.init_seed", c.model_init_seed);

    c.schedule_T = cm.get_int("schedule.T", c.schedule_T);
    c.beta_min = cm.get_double("schedule.beta_min", c.beta_min);
    c.beta_max = cm.get_double("schedule.beta_max", c.beta_max);

    c.train_steps = cm.get_int("train.steps", c.train_steps);
    c.train_batch = cm.get_int("train.batch_size", c.train_batch);
    c.train_lr = cm.get_double("train.lr", c.train_lr);
    c.use_labels = cm.get_bool("train.use_labels", c.use_labels);
    c.log_every = cm.get_int("train.log_every", c.log_every);

    c.feature_set = cm.get_string("features.set", c.feature_set);
    auto& fp = c.feature_params;
    fp.dl_timestep = cm.get_int("features.dl_timestep", fp.dl_timestep);
    fp.dl_repeats = cm.get_int("features.dl_repeats", fp.dl_repeats);
    fp.secmi_timestep = cm.get_int("features.secmi_timestep", fp.secmi_timestep);
    fp.secmi_stride = cm.get_int("features.secmi_stride", fp.secmi_stride);
    fp.pia_timestep = cm.get_int("features.pia_timestep", fp.pia_timestep);
    fp.pia_p = cm.get_double("features.pia_p", fp.pia_p);
    fp.gm_top_frac = cm.get_double("features.gm_top_frac", fp.gm_top_frac);
    fp.gm_independent_fill =
        cm.get_bool("features.gm_independent_fill", fp.gm_independent_fill);
    if (cm.has("features.gm_timesteps"))
        fp.gm_timesteps = parse_int_list(cm.get_string("features.gm_timesteps", ""));
    if (cm.has("features.ml_timesteps"))
        fp.ml_timesteps = parse_int_list(cm.get_string("features.ml_timesteps", ""));
    fp.no_timestep = cm.get_int("features.no_timestep", fp.no_timestep);
    fp.no_steps = cm.get_int("features.no_steps", fp.no_steps);

    c.k_folds = cm.get_int("scoring.k_folds", c.k_folds);
    c.reg_strength = cm.get_double("scoring.reg_strength", c.reg_strength);

    c.trials = cm.get_int("stats.trials", c.trials);
    c.alpha = cm.get_double("stats.alpha", c.alpha);
    c.eval_size = cm.get_int("stats.eval_size", c.eval_size);

    c.out_dir = cm.get_string("run.out_dir", c.out_dir);
    c.seed = cm.get_u64("run.seed", c.seed);
    c.threads = cm.get_int("run.threads", c.threads);
    return c;
}

ConfigMap ExperimentConfig::to_config() const {
    ConfigMap cm;
    cm.set("dataset.source", dataset.source);
    cm.set("dataset.path", dataset.path);
    cm.set("dataset.channels", std::to_string(dataset.channels));
    cm.set("dataset.height", std::to_string(dataset.height));
    cm.set("dataset.width", std::to_string(dataset.width));
    cm.set("dataset.classes", std::to_string(dataset.num_classes));
    cm.set("dataset.seed", std::to_string(dataset.seed));
    cm.set("splits.n_train", std::to_string(splits.n_train));
    cm.set("splits.p_pool", std::to_string(splits.p_pool));
    cm.set("splits.u_pool", std::to_string(splits.u_pool));
    cm.set("splits.contam_pool", std::to_string(splits.contam_pool));
    cm.set("splits.allow_imbalance", splits.allow_imbalance ? "true" : "false");
    cm.set("model.hidden", std::to_string(model_hidden));
    cm.set("model.blocks", std::to_string(model_blocks));
    cm.set("model.time_embed_dim", std::to_string(model_time_embed_dim));
    cm.set("model.init_seed", std::to_string(model_init_seed));
    cm.set("schedule.T", std::to_string(schedule_T));
    cm.set("schedule.beta_min", std::to_string(beta_min));
    cm.set("schedule.beta_max", std::to_string(beta_max));
    cm.set("train.steps", std::to_string(train_steps));
    cm.set("train.batch_size", std::to_string(train_batch));
    cm.set("train.lr", std::to_string(train_lr));
    cm.set("train.use_labels", use_labels ? "true" : "false");
    cm.set("train.log_every", std::to_string(log_every));
    cm.set("features.set", feature_set);
    cm.set("features.dl_timestep", std::to_string(feature_params.dl_timestep));
    cm.set("features.dl_repeats", std::to_string(feature_params.dl_repeats));
    cm.set("features.secmi_timestep", std::to_string(feature_params.secmi_timestep));
    cm.set("features.secmi_stride", std::to_string(feature_params.secmi_stride));
    cm.set("features.pia_timestep", std::to_string(feature_params.pia_timestep));
    cm.set("features.pia_p", std::to_string(feature_params.pia_p));
    cm.set("features.gm_top_frac", std::to_string(feature_params.gm_top_frac));
    cm.set("features.gm_independent_fill",
           feature_params.gm_independent_fill ? "true" : "false");
    cm.set("features.gm_timesteps", join_ints(feature_params.gm_timesteps));
    cm.set("features.ml_timesteps", join_ints(feature_params.ml_timesteps));
    cm.set("features.no_timestep", std::to_string(feature_params.no_timestep));
    cm.set("features.no_steps", std::to_string(feature_params.no_steps));
    cm.set("scoring.k_folds", std::to_string(k_folds));
    cm.set("scoring.reg_strength", std::to_string(reg_strength));
    cm.set("stats.trials", std::to_string(trials));
    cm.set("stats.alpha", std::to_string(alpha));
    cm.set("stats.eval_size", std::to_string(eval_size));
    cm.set("run.out_dir", out_dir);
    cm.set("run.seed", std::to_string(seed));
    cm.set("run.threads", std::to_string(threads));
    return cm;
}

uint64_t ExperimentConfig::config_hash() const {
    // out_dir and threads do not affect results; keep them out of the hash
    ConfigMap cm = to_config();
    cm.set("run.out_dir", "");
    cm.set("run.threads", "0");
    return fnv1a(cm.to_string());
}

std::vector<FeatureSpec> ExperimentConfig::resolve_feature_set(
    const ExtractionContext& ctx) const {
    if (feature_set == "all") return default_feature_set(ctx);
    if (feature_set == "gray_box") return gray_box_feature_set(ctx);
    if (feature_set == "existing_mias") return existing_mias_feature_set(ctx);
    return feature_set_by_names(ctx, split_names(feature_set));
}

uint64_t RunManifest::manifest_hash() const {
    uint64_t h = config_hash;
    h = hash_combine(h, checkpoint_hash);
    h = hash_combine(h, feature_cache_hash);
    return h;
}

void RunManifest::write(const std::string& path) const {
    json j;
    j["config_hash"] = config_hash;
    j["checkpoint_hash"] = checkpoint_hash;
    j["feature_cache_hash"] = feature_cache_hash;
    j["manifest_hash"] = manifest_hash();
    j["resolved_config"] = resolved_config;
    j["created_at"] = created_at;
    j["overfit_dial"] = {{"train_loss_t100", train_loss_t100},
                         {"heldout_loss_t100", heldout_loss_t100},
                         {"gap", heldout_loss_t100 - train_loss_t100}};
    j["split_ks_pvalue"] = split_ks_pvalue;
    write_text_file(path, j.dump(2) + "\n");
}

ExtractionContext Pipeline::context() const {
    ExtractionContext ctx = cfg.feature_params;
    ctx.denoiser = model.get();
    ctx.schedule = &*schedule;
    ctx.global_seed = cfg.seed;
    ctx.use_labels = cfg.use_labels;
    ctx.access = AccessLevel::white_box;
    return ctx;
}

FeatureCache extract_features(const std::vector<ImageSample>& p_samples,
                              const std::vector<ImageSample>& u_samples,
                              const std::vector<ImageSample>& contam_samples,
                              const ExtractionContext& ctx,
                              const std::vector<FeatureSpec>& specs, int threads,
                              std::vector<std::string>& excluded) {
    struct Job {
        const ImageSample* sample;
        const char* split;
        bool is_member;
    };
    std::vector<Job> jobs;
    jobs.reserve(p_samples.size() + u_samples.size() + contam_samples.size());
    for (const auto& s : p_samples) jobs.push_back({&s, "P", true});
    for (const auto& s : u_samples) jobs.push_back({&s, "U", false});
    for (const auto& s : contam_samples) jobs.push_back({&s, "Ux", false});

    const int n_threads = threads > 0
                              ? threads
                              : std::max(1u, std::thread::hardware_concurrency());
    std::vector<std::optional<FeatureVector>> results(jobs.size());
    std::vector<std::string> errors(jobs.size());

    auto worker = [&](int wi) {
        for (size_t i = static_cast<size_t>(wi); i < jobs.size();
             i += static_cast<size_t>(n_threads)) {
            try {
                results[i] = extract_all(*jobs[i].sample, ctx, specs);
            } catch (const ExtractionFailure& e) {
                errors[i] = e.what();
            }
        }
    };
    if (n_threads == 1) {
        worker(0);
    } else {
        std::vector<std::thread> pool;
        for (int wi = 0; wi < n_threads; ++wi) pool.emplace_back(worker, wi);
        for (auto& th : pool) th.join();
    }

    FeatureCache cache;
    for (size_t i = 0; i < jobs.size(); ++i) {
        if (!results[i]) {
            excluded.push_back(jobs[i].sample->sample_id + ": " + errors[i]);
            continue;
        }
        if (cache.feature_names.empty()) cache.feature_names = results[i]->names;
        FeatureCacheRow row;
        row.sample_id = results[i]->sample_id;
        row.split = jobs[i].split;
        row.is_member = jobs[i].is_member;
        row.values = results[i]->values;
        cache.rows.push_back(std::move(row));
    }
    // Canonical row order matches the CSV contract, so a freshly extracted
    // cache and a reloaded one feed identical matrices downstream.
    std::sort(cache.rows.begin(), cache.rows.end(),
              [](const FeatureCacheRow& a, const FeatureCacheRow& b) {
                  return a.sample_id < b.sample_id;
              });
    if (!excluded.empty())
        std::fprintf(stderr, "extract_features: excluded %zu failed sample(s)\n",
                     excluded.size());
    return cache;
}

Pipeline build_pipeline(const ExperimentConfig& cfg, bool features_needed) {
    if (cfg.splits.p_pool == 0 || cfg.splits.u_pool == 0)
        throw std::invalid_argument("build_pipeline: p_pool and u_pool must be positive");
    Pipeline pipe;
    pipe.cfg = cfg;
    fs::create_directories(cfg.out_dir);

    pipe.splits = prepare_splits(cfg.dataset, cfg.splits, cfg.seed);
    pipe.schedule.emplace(NoiseSchedule::linear_beta(cfg.schedule_T, cfg.beta_min,
                                                     cfg.beta_max));

    ConvDenoiserConfig mc;
    mc.channels = cfg.dataset.channels;
    mc.height = cfg.dataset.height;
    mc.width = cfg.dataset.width;
    mc.hidden = cfg.model_hidden;
    mc.blocks = cfg.model_blocks;
    mc.time_embed_dim = cfg.model_time_embed_dim;
    mc.num_classes = cfg.use_labels ? cfg.dataset.num_classes : 0;
    mc.init_seed = cfg.model_init_seed;

    const std::string ckpt_path = cfg.checkpoint_path();
    if (fs::exists(ckpt_path)) {
        Checkpoint ckpt = load_checkpoint(ckpt_path);
        if (!(ckpt.model_config == mc) || ckpt.schedule_T != cfg.schedule_T)
            throw std::runtime_error(
                "build_pipeline: existing checkpoint does not match the requested "
                "config; remove " + ckpt_path + " to retrain");
        pipe.model = ckpt.build_model();
        std::fprintf(stderr, "build_pipeline: loaded checkpoint %s\n", ckpt_path.c_str());
    } else {
        pipe.model = std::make_unique<ConvDenoiser>(mc);
        TrainConfig tc;
        tc.steps = cfg.train_steps;
        tc.batch_size = cfg.train_batch;
        tc.lr = cfg.train_lr;
        tc.seed = cfg.seed;
        tc.threads = cfg.threads;
        tc.use_labels = cfg.use_labels;
        tc.log_every = cfg.log_every;
        TrainReport rep = train(pipe.splits.train, *pipe.model, *pipe.schedule, tc);
        Checkpoint ckpt;
        ckpt.model_config = mc;
        ckpt.params = pipe.model->params();
        ckpt.schedule_T = cfg.schedule_T;
        ckpt.beta_min = cfg.beta_min;
        ckpt.beta_max = cfg.beta_max;
        ckpt.train_seed = cfg.seed;
        ckpt.train_steps = cfg.train_steps;
        save_checkpoint(ckpt_path, ckpt);
        write_text_file(cfg.schedule_csv_path(), pipe.schedule->to_csv());
        std::fprintf(stderr,
                     "build_pipeline: trained %d steps (running loss %.4f -> %.4f), "
                     "checkpoint %s\n",
                     cfg.train_steps, rep.running_loss_first, rep.running_loss_last,
                     ckpt_path.c_str());
    }

    pipe.manifest.config_hash = cfg.config_hash();
    pipe.manifest.checkpoint_hash = hash_file(ckpt_path);
    pipe.manifest.created_at = now_string();
    pipe.manifest.resolved_config = cfg.to_config().to_string();
    pipe.manifest.split_ks_pvalue = pipe.splits.ks_pvalue;

    // The overfit dial, always measured and reported.
    pipe.manifest.train_loss_t100 = mean_loss_at(pipe.splits.train, *pipe.model,
                                                 *pipe.schedule, 100,
                                                 hash_combine(cfg.seed, 100),
                                                 cfg.use_labels, cfg.threads);
    pipe.manifest.heldout_loss_t100 = mean_loss_at(pipe.splits.u, *pipe.model,
                                                   *pipe.schedule, 100,
                                                   hash_combine(cfg.seed, 101),
                                                   cfg.use_labels, cfg.threads);

    if (features_needed) {
        const ExtractionContext ctx = pipe.context();
        const auto specs = pipe.cfg.resolve_feature_set(ctx);
        const std::string cache_path = cfg.feature_cache_path();
        bool loaded = false;
        if (fs::exists(cache_path)) {
            FeatureCache cache = read_feature_cache(cache_path);
            const auto want = extract_all(pipe.splits.p.front(), ctx, specs).names;
            // the cache must describe exactly the current splits, not a stale run
            auto ids_match = [&cache](const std::vector<ImageSample>& samples,
                                      const char* split) {
                auto have = cache.ids_for(split);
                std::vector<std::string> need;
                need.reserve(samples.size());
                for (const auto& s : samples) need.push_back(s.sample_id);
                std::sort(need.begin(), need.end());
                return have == need;
            };
            if (cache.feature_names == want && ids_match(pipe.splits.p, "P") &&
                ids_match(pipe.splits.u, "U") && ids_match(pipe.splits.contam, "Ux")) {
                pipe.cache = std::move(cache);
                loaded = true;
                std::fprintf(stderr, "build_pipeline: loaded feature cache %s\n",
                             cache_path.c_str());
            } else {
                std::fprintf(stderr,
                             "build_pipeline: feature cache %s does not match this "
                             "config, re-extracting\n",
                             cache_path.c_str());
            }
        }
        if (!loaded) {
            pipe.cache = extract_features(pipe.splits.p, pipe.splits.u,
                                          pipe.splits.contam, ctx, specs, cfg.threads,
                                          pipe.excluded_samples);
            write_feature_cache(cache_path, pipe.cache);
        }
        pipe.manifest.feature_cache_hash = hash_file(cache_path);
        write_feature_sidecar(cfg.feature_sidecar_path(), specs, cfg.seed,
                              pipe.manifest.checkpoint_hash,
                              pipe.manifest.manifest_hash(), pipe.excluded_samples);
    }

    pipe.manifest.write(cfg.manifest_path());
    return pipe;
}

namespace {

KfoldScores kfold_from_cache(const Pipeline& pipe,
                             const std::vector<std::vector<double>>& p_rows,
                             const std::vector<std::vector<double>>& u_rows) {
    return kfold_scores(p_rows, u_rows, pipe.cfg.k_folds, pipe.cfg.seed,
                        pipe.cfg.reg_strength, pipe.cache.feature_names);
}

void write_scores_csv(const KfoldScores& ks, const std::vector<std::string>& p_ids,
                      const std::vector<std::string>& u_ids,
                      const std::string& path) {
    std::vector<ScoreRow> rows;
    rows.reserve(p_ids.size() + u_ids.size());
    for (size_t i = 0; i < p_ids.size(); ++i)
        rows.push_back({p_ids[i], true, ks.fold_P[i], ks.scores_P[i]});
    for (size_t i = 0; i < u_ids.size(); ++i)
        rows.push_back({u_ids[i], false, ks.fold_U[i], ks.scores_U[i]});
    write_score_dump(path, rows);
}

}  // namespace

CdiRunResult run_cdi(Pipeline& pipe) {
    const auto p_rows = pipe.cache.rows_for("P");
    const auto u_rows = pipe.cache.rows_for("U");
    CdiRunResult res;
    res.scores = kfold_from_cache(pipe, p_rows, u_rows);
    write_scores_csv(res.scores, pipe.cache.ids_for("P"), pipe.cache.ids_for("U"),
                     pipe.cfg.out_dir + "/scores.csv");
    write_scoring_models_json(pipe.cfg.out_dir + "/scoring_models.json",
                              res.scores.fold_models, pipe.manifest.manifest_hash());

    const int n = std::min<int>(pipe.cfg.resolved_eval_size(),
                                static_cast<int>(std::min(res.scores.scores_P.size(),
                                                          res.scores.scores_U.size())));
    res.verdict = cdi_verdict(res.scores.scores_P, res.scores.scores_U, n,
                              pipe.cfg.trials, pipe.cfg.alpha, pipe.cfg.seed);
    res.cohens_d_value = cohens_d(res.scores.scores_P, res.scores.scores_U);
    res.power_at_alpha =
        power_at_alpha(res.cohens_d_value, n, n, pipe.cfg.alpha).power;
    write_verdict_json(pipe.cfg.out_dir + "/verdict.json", res.verdict,
                       pipe.manifest.manifest_hash());
    return res;
}

std::vector<SweepPoint> sweep_sample_size(Pipeline& pipe,
                                          const std::vector<int>& sizes) {
    const auto p_rows = pipe.cache.rows_for("P");
    const auto u_rows = pipe.cache.rows_for("U");
    const KfoldScores ks = kfold_from_cache(pipe, p_rows, u_rows);
    std::vector<SweepPoint> out;
    for (int size : sizes) {
        SweepPoint pt;
        pt.size = size;
        pt.verdict = cdi_verdict(ks.scores_P, ks.scores_U, size, pipe.cfg.trials,
                                 pipe.cfg.alpha, hash_combine(pipe.cfg.seed, size));
        out.push_back(std::move(pt));
    }
    emit_sweep_report(pipe.cfg, out, pipe.manifest.manifest_hash());
    return out;
}

std::vector<ContaminationPoint> contamination_run(Pipeline& pipe,
                                                  const std::vector<double>& ratios,
                                                  const std::vector<int>& sizes) {
    const auto p_rows = pipe.cache.rows_for("P");
    const auto u_rows = pipe.cache.rows_for("U");
    const auto contam_rows = pipe.cache.rows_for("Ux");
    std::vector<ContaminationPoint> out;
    for (double ratio : ratios) {
        if (ratio < 0.0 || ratio > 1.0)
            throw std::invalid_argument("contamination_run: ratio out of [0,1]");
        const size_t n_pool = p_rows.size();
        const size_t n_contam =
            static_cast<size_t>(std::llround(ratio * static_cast<double>(n_pool)));
        if (n_contam > contam_rows.size())
            throw std::invalid_argument(
                "contamination_run: contamination pool too small (need " +
                std::to_string(n_contam) + ", have " +
                std::to_string(contam_rows.size()) + "); raise splits.contam_pool");
        // Mixed suspect pool: the verifier does not know which entries are
        // genuine members.
        std::vector<std::vector<double>> mixed;
        mixed.reserve(n_pool);
        for (size_t i = 0; i < n_pool - n_contam; ++i) mixed.push_back(p_rows[i]);
        for (size_t i = 0; i < n_contam; ++i) mixed.push_back(contam_rows[i]);
        const KfoldScores ks = kfold_from_cache(pipe, mixed, u_rows);
        for (int size : sizes) {
            ContaminationPoint pt;
            pt.ratio = ratio;
            pt.size = size;
            pt.verdict = cdi_verdict(ks.scores_P, ks.scores_U, size, pipe.cfg.trials,
                                     pipe.cfg.alpha,
                                     hash_combine(pipe.cfg.seed,
                                                  fnv1a(std::to_string(ratio)) ^
                                                      static_cast<uint64_t>(size)));
            out.push_back(std::move(pt));
        }
    }
    emit_contamination_report(pipe.cfg, out, pipe.manifest.manifest_hash());
    return out;
}

NullRunResult false_positive_run(Pipeline& pipe, int trials) {
    if (trials < 1) throw std::invalid_argument("false_positive_run: trials >= 1");
    // Held-out reservoir: the validation pool plus the extra non-member pool.
    std::vector<std::vector<double>> reservoir = pipe.cache.rows_for("U");
    {
        auto extra = pipe.cache.rows_for("Ux");
        reservoir.insert(reservoir.end(), extra.begin(), extra.end());
    }
    const int n = std::min<int>(pipe.cfg.resolved_eval_size(),
                                static_cast<int>(reservoir.size() / 4));
    if (n < 2)
        throw std::invalid_argument(
            "false_positive_run: held-out reservoir too small; need at least 8 "
            "samples across splits.u_pool + splits.contam_pool");

    NullRunResult res;
    res.trials = trials;
    res.n_per_trial = n;
    res.trial_p.reserve(static_cast<size_t>(trials));

    std::vector<std::string> names = pipe.cache.feature_names;
    std::vector<size_t> order(reservoir.size());
    for (int trial = 0; trial < trials; ++trial) {
        Rng rng = derive_rng(hash_combine(pipe.cfg.seed, 0xFA15E), "null_trial",
                             static_cast<uint64_t>(trial));
        std::iota(order.begin(), order.end(), size_t{0});
        rng.shuffle(order);
        // fresh single-owner verification: disjoint ctrl and test splits,
        // both sides non-members by construction
        std::vector<std::string> ids;
        std::vector<std::vector<double>> rows;
        std::vector<uint8_t> labels;
        for (int i = 0; i < 2 * n; ++i) {
            ids.push_back("c" + std::to_string(i));
            rows.push_back(reservoir[order[static_cast<size_t>(i)]]);
            labels.push_back(i < n ? 1 : 0);
        }
        ScoringModel model = fit_scorer(
            LabeledFeatures::make(std::move(ids), std::move(rows), std::move(labels),
                                  names),
            pipe.cfg.reg_strength, pipe.cfg.seed);
        std::vector<double> sp, su;
        sp.reserve(static_cast<size_t>(n));
        su.reserve(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i)
            sp.push_back(model.score(reservoir[order[static_cast<size_t>(2 * n + i)]]));
        for (int i = 0; i < n; ++i)
            su.push_back(model.score(reservoir[order[static_cast<size_t>(3 * n + i)]]));
        res.trial_p.push_back(welch_ttest_one_tailed(sp, su).p_value);
    }
    res.mean_p = mean_of(res.trial_p);
    int rejections = 0;
    for (double p : res.trial_p)
        if (p < pipe.cfg.alpha) ++rejections;
    res.rejection_rate =
        static_cast<double>(rejections) / static_cast<double>(res.trial_p.size());

    // Frozen k-fold diagnostic: the cross-fitted aggregate the large-scale
    // tables report (its mean drifts off 0.5 through score dependence).
    const auto null_p = pipe.cache.rows_for("Ux");
    const auto u_rows = pipe.cache.rows_for("U");
    if (null_p.size() >= 2 * static_cast<size_t>(pipe.cfg.k_folds)) {
        const KfoldScores ks = kfold_from_cache(pipe, null_p, u_rows);
        const int nk = std::min<int>(
            n, static_cast<int>(std::min(ks.scores_P.size(), ks.scores_U.size())));
        res.kfold_null_mean_p =
            cdi_verdict(ks.scores_P, ks.scores_U, std::max(2, nk), trials,
                        pipe.cfg.alpha, hash_combine(pipe.cfg.seed, 0xFA15F))
                .mean_p;
    }

    json j;
    j["mean_p"] = res.mean_p;
    j["rejection_rate"] = res.rejection_rate;
    j["kfold_null_mean_p"] = res.kfold_null_mean_p;
    j["trials"] = trials;
    j["n_per_trial"] = res.n_per_trial;
    j["alpha"] = pipe.cfg.alpha;
    j["ground_truth"] = "all non-members";
    j["manifest_hash"] = pipe.manifest.manifest_hash();
    write_text_file(pipe.cfg.out_dir + "/null_check.json", j.dump(2) + "\n");
    return res;
}

std::vector<int> feature_columns_for(const std::vector<std::string>& extractor_names,
                                     const std::vector<std::string>& cache_columns) {
    auto matches = [](const std::string& extractor, const std::string& column) {
        if (extractor == "denoising_loss") return column == "denoising_loss";
        if (extractor == "secmi_stat") return column == "secmi_stat";
        if (extractor == "pia") return column == "pia";
        if (extractor == "pian") return column == "pian";
        if (extractor == "gradient_masking") return column.rfind("gm_t", 0) == 0;
        if (extractor == "multiple_loss") return column.rfind("ml_t", 0) == 0;
        if (extractor == "noise_optimization") return column.rfind("no_", 0) == 0;
        return extractor == column;  // allow addressing single columns directly
    };
    std::vector<int> cols;
    for (const auto& ex : extractor_names) {
        bool any = false;
        for (size_t j = 0; j < cache_columns.size(); ++j) {
            if (matches(ex, cache_columns[j])) {
                cols.push_back(static_cast<int>(j));
                any = true;
            }
        }
        if (!any)
            throw std::invalid_argument("feature_columns_for: no cache column matches '" +
                                        ex + "'");
    }
    return cols;
}

namespace {

std::vector<std::vector<double>> select_columns(
    const std::vector<std::vector<double>>& rows, const std::vector<int>& cols) {
    std::vector<std::vector<double>> out;
    out.reserve(rows.size());
    for (const auto& r : rows) {
        std::vector<double> v;
        v.reserve(cols.size());
        for (int c : cols) v.push_back(r[static_cast<size_t>(c)]);
        out.push_back(std::move(v));
    }
    return out;
}

}  // namespace

std::vector<AblationResult> ablate_features(
    Pipeline& pipe, const std::vector<std::vector<std::string>>& subsets) {
    if (subsets.empty())
        throw std::invalid_argument("ablate_features: empty subset list");
    const auto p_rows = pipe.cache.rows_for("P");
    const auto u_rows = pipe.cache.rows_for("U");
    const int pool = static_cast<int>(std::min(p_rows.size(), u_rows.size()));
    constexpr int kResolution = 10;

    std::vector<AblationResult> out;
    for (const auto& subset : subsets) {
        if (subset.empty())
            throw std::invalid_argument("ablate_features: empty feature subset");
        AblationResult res;
        res.features = subset;
        for (size_t i = 0; i < subset.size(); ++i)
            res.subset_name += (i ? "+" : "") + subset[i];

        const auto cols = feature_columns_for(subset, pipe.cache.feature_names);
        const KfoldScores ks = kfold_from_cache(pipe, select_columns(p_rows, cols),
                                                select_columns(u_rows, cols));

        auto mean_p_at = [&](int n) {
            return cdi_verdict(ks.scores_P, ks.scores_U, n, pipe.cfg.trials,
                               pipe.cfg.alpha,
                               hash_combine(pipe.cfg.seed, fnv1a(res.subset_name) ^
                                                               static_cast<uint64_t>(n)))
                .mean_p;
        };

        // doubling grid from 10 up to the pool, then bisection to resolution 10
        int hi = 0;
        int prev = 0;
        for (int n = kResolution; n <= pool; n *= 2) {
            if (mean_p_at(n) < pipe.cfg.alpha) {
                hi = n;
                break;
            }
            prev = n;
        }
        if (hi == 0 && prev < pool && mean_p_at(pool) < pipe.cfg.alpha) {
            hi = pool;
        }
        if (hi == 0) {
            res.min_p_to_reject = 0;  // never rejects within the pool
        } else {
            int lo = prev;  // largest size known to fail (0 if first size worked)
            while (hi - lo > kResolution) {
                const int mid = (lo + hi) / 2;
                if (mean_p_at(mid) < pipe.cfg.alpha)
                    hi = mid;
                else
                    lo = mid;
            }
            res.min_p_to_reject = hi;
        }
        out.push_back(std::move(res));
    }
    emit_ablation_report(pipe.cfg, out, pipe.manifest.manifest_hash());
    return out;
}

MiaEvalResult mia_eval_run(Pipeline& pipe, int set_size, int n_sets) {
    const auto p_rows = pipe.cache.rows_for("P");
    const auto u_rows = pipe.cache.rows_for("U");
    MiaEvalResult res;
    fs::create_directories(pipe.cfg.out_dir + "/roc");

    // every raw feature is oriented lower-is-member
    for (size_t j = 0; j < pipe.cache.feature_names.size(); ++j) {
        std::vector<double> ms, ns;
        for (const auto& r : p_rows) ms.push_back(r[j]);
        for (const auto& r : u_rows) ns.push_back(r[j]);
        ScoredPopulation pop(ms, ns, Orientation::lower_is_member);
        MiaMetrics m;
        m.feature = pipe.cache.feature_names[j];
        m.auc = auc(pop);
        m.tpr_at_1pct_fpr = tpr_at_fpr(pop, 0.01);
        m.accuracy = best_threshold_accuracy(pop);
        m.roc_points_csv_path = pipe.cfg.out_dir + "/roc/" + m.feature + ".csv";
        std::vector<std::pair<double, double>> pts;
        for (const auto& rp : roc_curve(pop)) pts.emplace_back(rp.fpr, rp.tpr);
        write_roc_csv(m.roc_points_csv_path, pts);
        res.per_feature.push_back(std::move(m));
    }

    // aggregated scoring-model attack plus the set-level comparison
    const KfoldScores ks = kfold_from_cache(pipe, p_rows, u_rows);
    {
        ScoredPopulation pop(ks.scores_P, ks.scores_U, Orientation::higher_is_member);
        MiaMetrics m;
        m.feature = "cdi_scores";
        m.auc = auc(pop);
        m.tpr_at_1pct_fpr = tpr_at_fpr(pop, 0.01);
        m.accuracy = best_threshold_accuracy(pop);
        m.roc_points_csv_path = pipe.cfg.out_dir + "/roc/cdi_scores.csv";
        std::vector<std::pair<double, double>> pts;
        for (const auto& rp : roc_curve(pop)) pts.emplace_back(rp.fpr, rp.tpr);
        write_roc_csv(m.roc_points_csv_path, pts);
        res.per_feature.push_back(std::move(m));
    }

    res.set_size = set_size > 0 ? set_size
                                : std::min(64, static_cast<int>(ks.scores_P.size()));
    res.set_level_tpr = set_level_mia(ks.scores_P, ks.scores_U, res.set_size, n_sets,
                                      hash_combine(pipe.cfg.seed, 0x5E7));
    const double d = cohens_d(ks.scores_P, ks.scores_U);
    res.cdi_power = power_at_alpha(d, res.set_size, res.set_size, pipe.cfg.alpha).power;

    write_mia_metrics_json(pipe.cfg.out_dir + "/mia_metrics.json", res.per_feature,
                           pipe.manifest.manifest_hash());
    json j;
    j["set_size"] = res.set_size;
    j["n_sets"] = n_sets;
    j["set_level_mia_tpr_at_1pct"] = res.set_level_tpr;
    j["cdi_power_at_alpha"] = res.cdi_power;
    j["cohens_d"] = d;
    j["manifest_hash"] = pipe.manifest.manifest_hash();
    write_text_file(pipe.cfg.out_dir + "/set_level_mia.json", j.dump(2) + "\n");
    return res;
}

void emit_sweep_report(const ExperimentConfig& cfg,
                       const std::vector<SweepPoint>& points, uint64_t manifest_hash,
                       const std::string& stem) {
    json j;
    j["manifest_hash"] = manifest_hash;
    // trend recorded, not enforced: mean_p non-increasing in |P| up to CI overlap
    bool monotone = true;
    for (size_t i = 1; i < points.size(); ++i) {
        const auto& prev = points[i - 1].verdict;
        const auto& cur = points[i].verdict;
        const bool decreasing = cur.mean_p <= prev.mean_p;
        const bool ci_overlap = cur.ci_hi >= prev.ci_lo && prev.ci_hi >= cur.ci_lo;
        if (!decreasing && !ci_overlap) monotone = false;
    }
    j["mean_p_non_increasing_up_to_ci"] = monotone;
    j["points"] = json::array();
    std::ostringstream csv;
    csv << "size,mean_p,ci_lo,ci_hi,reject\n";
    PlotSeries series;
    series.label = "CDI (" + cfg.feature_set + ")";
    for (const auto& pt : points) {
        j["points"].push_back({{"size", pt.size},
                               {"mean_p", pt.verdict.mean_p},
                               {"ci95", {pt.verdict.ci_lo, pt.verdict.ci_hi}},
                               {"reject", pt.verdict.reject}});
        csv << pt.size << "," << pt.verdict.mean_p << "," << pt.verdict.ci_lo << ","
            << pt.verdict.ci_hi << "," << (pt.verdict.reject ? 1 : 0) << "\n";
        series.x.push_back(pt.size);
        series.y.push_back(pt.verdict.mean_p);
        series.lo.push_back(pt.verdict.ci_lo);
        series.hi.push_back(pt.verdict.ci_hi);
    }
    write_text_file(cfg.out_dir + "/" + stem + ".json", j.dump(2) + "\n");
    write_text_file(cfg.out_dir + "/" + stem + ".csv", csv.str());
    write_pvalue_plot_svg(cfg.out_dir + "/" + stem + ".svg",
                          "aggregated p-value vs |P|", {series}, cfg.alpha);
}

void emit_contamination_report(const ExperimentConfig& cfg,
                               const std::vector<ContaminationPoint>& points,
                               uint64_t manifest_hash) {
    json j;
    j["manifest_hash"] = manifest_hash;
    j["points"] = json::array();
    std::ostringstream csv;
    csv << "ratio,size,mean_p,ci_lo,ci_hi,reject\n";
    std::map<double, PlotSeries> by_ratio;
    for (const auto& pt : points) {
        j["points"].push_back({{"ratio", pt.ratio},
                               {"size", pt.size},
                               {"mean_p", pt.verdict.mean_p},
                               {"ci95", {pt.verdict.ci_lo, pt.verdict.ci_hi}},
                               {"reject", pt.verdict.reject}});
        csv << pt.ratio << "," << pt.size << "," << pt.verdict.mean_p << ","
            << pt.verdict.ci_lo << "," << pt.verdict.ci_hi << ","
            << (pt.verdict.reject ? 1 : 0) << "\n";
        auto& series = by_ratio[pt.ratio];
        series.label = "ratio " + std::to_string(pt.ratio).substr(0, 4);
        series.x.push_back(pt.size);
        series.y.push_back(pt.verdict.mean_p);
        series.lo.push_back(pt.verdict.ci_lo);
        series.hi.push_back(pt.verdict.ci_hi);
    }
    std::vector<PlotSeries> series;
    for (auto& [r, s] : by_ratio) series.push_back(std::move(s));
    write_text_file(cfg.out_dir + "/contamination.json", j.dump(2) + "\n");
    write_text_file(cfg.out_dir + "/contamination.csv", csv.str());
    write_pvalue_plot_svg(cfg.out_dir + "/contamination.svg",
                          "p-value vs |P| per non-member ratio", series, cfg.alpha);
}

void emit_ablation_report(const ExperimentConfig& cfg,
                          const std::vector<AblationResult>& results,
                          uint64_t manifest_hash) {
    json j;
    j["manifest_hash"] = manifest_hash;
    j["results"] = json::array();
    std::ostringstream csv;
    csv << "subset,min_p_to_reject\n";
    for (const auto& r : results) {
        j["results"].push_back({{"subset", r.subset_name},
                                {"features", r.features},
                                {"min_p_to_reject", r.min_p_to_reject}});
        csv << r.subset_name << "," << r.min_p_to_reject << "\n";
    }
    write_text_file(cfg.out_dir + "/ablation.json", j.dump(2) + "\n");
    write_text_file(cfg.out_dir + "/ablation.csv", csv.str());
}

}  // namespace cdi
