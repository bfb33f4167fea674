// cdi: train a toy diffusion model, extract membership features, and decide
// whether a suspect data collection was in the training set.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cdi/experiments.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> defines;
    std::string out_dir;
    std::string feature_set;
    int64_t seed = -1;
    int threads = -1;
    int eval_size = -1;
    int trials = -1;
    double alpha = -1.0;
};

void add_common(CLI::App* sub, CommonArgs& args) {
    sub->add_option("-c,--config", args.config_path, "config file (key = value, [section] headers)");
    sub->add_option("-D,--define", args.defines,
                    "override a config key, e.g. -D dataset.height=16");
    sub->add_option("--out-dir", args.out_dir, "artifact directory");
    sub->add_option("--feature-set", args.feature_set,
                    "all | gray_box | existing_mias | comma-separated names");
    sub->add_option("--seed", args.seed, "global experiment seed");
    sub->add_option("--threads", args.threads, "worker threads (0 = auto)");
    sub->add_option("--eval-size", args.eval_size, "suspect-set size per trial");
    sub->add_option("--trials", args.trials, "randomized t-test trials");
    sub->add_option("--alpha", args.alpha, "significance level");
}

cdi::ExperimentConfig resolve_config(const CommonArgs& args) {
    cdi::ConfigMap cm;
    if (!args.config_path.empty()) cm = cdi::ConfigMap::parse_file(args.config_path);
    for (const auto& def : args.defines) {
        const auto eq = def.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("--define expects key=value, got: " + def);
        cm.set(def.substr(0, eq), def.substr(eq + 1));
    }
    if (!args.out_dir.empty()) cm.set("run.out_dir", args.out_dir);
    if (!args.feature_set.empty()) cm.set("features.set", args.feature_set);
    if (args.seed >= 0) cm.set("run.seed", std::to_string(args.seed));
    if (args.threads >= 0) cm.set("run.threads", std::to_string(args.threads));
    if (args.eval_size >= 0) cm.set("stats.eval_size", std::to_string(args.eval_size));
    if (args.trials >= 0) cm.set("stats.trials", std::to_string(args.trials));
    if (args.alpha >= 0) cm.set("stats.alpha", std::to_string(args.alpha));
    return cdi::ExperimentConfig::from_config(cm);
}

std::vector<int> parse_sizes(const std::string& text) {
    std::vector<int> out;
    std::istringstream is(text);
    std::string tok;
    while (std::getline(is, tok, ',')) out.push_back(std::stoi(tok));
    return out;
}

std::vector<double> parse_ratios(const std::string& text) {
    std::vector<double> out;
    std::istringstream is(text);
    std::string tok;
    while (std::getline(is, tok, ',')) out.push_back(std::stod(tok));
    return out;
}

void print_verdict(const cdi::VerificationVerdict& v) {
    std::printf("mean_p        %.6g\n", v.mean_p);
    std::printf("ci95          [%.6g, %.6g]\n", v.ci_lo, v.ci_hi);
    std::printf("trials        %d (n_per_trial %d)\n", v.trials, v.n_per_trial);
    std::printf("alpha         %g\n", v.alpha);
    std::printf("decision      %s\n",
                v.reject ? "REJECT H0 (suspect set was trained on)"
                         : "inconclusive (cannot reject H0)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dataset inference for diffusion models"};
    app.require_subcommand(1);

    CommonArgs args;
    std::string sizes_text, ratios_text, subsets_text;
    int null_trials = 1000, set_size = 0, n_sets = 1000;

    auto* c_train = app.add_subcommand("train", "train the toy diffusion model");
    auto* c_extract = app.add_subcommand("extract", "extract membership features");
    auto* c_verify = app.add_subcommand("verify", "run the full CDI decision");
    auto* c_sweep = app.add_subcommand("sweep", "p-value vs suspect-set size");
    auto* c_contam = app.add_subcommand("contaminate", "verdicts under non-member contamination");
    auto* c_null = app.add_subcommand("null-check", "false-positive run with non-member P");
    auto* c_ablate = app.add_subcommand("ablate", "minimum |P| per feature subset");
    auto* c_mia = app.add_subcommand("mia-eval", "per-feature MIA metrics and set-level MIA");
    auto* c_report = app.add_subcommand("report", "re-emit summary artifacts from out-dir");
    for (auto* sub : {c_train, c_extract, c_verify, c_sweep, c_contam, c_null, c_ablate,
                      c_mia, c_report})
        add_common(sub, args);

    c_sweep->add_option("--sizes", sizes_text, "comma-separated |P| values")->required();
    c_contam->add_option("--ratios", ratios_text, "comma-separated non-member ratios")
        ->required();
    c_contam->add_option("--sizes", sizes_text, "comma-separated |P| values");
    c_null->add_option("--null-trials", null_trials, "trials for the null run");
    c_ablate->add_option("--subsets", subsets_text,
                         "semicolon-separated subsets, each a comma list of features");
    c_mia->add_option("--set-size", set_size, "subset size for set-level MIA");
    c_mia->add_option("--n-sets", n_sets, "number of subsets per side");

    CLI11_PARSE(app, argc, argv);

    try {
        cdi::ExperimentConfig cfg = resolve_config(args);

        if (c_train->parsed()) {
            cdi::Pipeline pipe = cdi::build_pipeline(cfg, /*features_needed=*/false);
            std::printf("checkpoint     %s\n", cfg.checkpoint_path().c_str());
            std::printf("train loss     %.4f (t=100)\n", pipe.manifest.train_loss_t100);
            std::printf("held-out loss  %.4f (t=100)\n", pipe.manifest.heldout_loss_t100);
            std::printf("overfit gap    %.4f\n", pipe.manifest.heldout_loss_t100 -
                                                     pipe.manifest.train_loss_t100);
        } else if (c_extract->parsed()) {
            cdi::Pipeline pipe = cdi::build_pipeline(cfg);
            std::printf("feature cache  %s (%zu rows, %zu columns)\n",
                        cfg.feature_cache_path().c_str(), pipe.cache.rows.size(),
                        pipe.cache.feature_names.size());
            if (!pipe.excluded_samples.empty())
                std::printf("excluded       %zu samples (see %s)\n",
                            pipe.excluded_samples.size(),
                            cfg.feature_sidecar_path().c_str());
        } else if (c_verify->parsed()) {
            cdi::Pipeline pipe = cdi::build_pipeline(cfg);
            cdi::CdiRunResult res = cdi::run_cdi(pipe);
            print_verdict(res.verdict);
            std::printf("cohens_d      %.4f  (power at alpha: %.4f)\n",
                        res.cohens_d_value, res.power_at_alpha);
            std::printf("verdict file  %s/verdict.json\n", cfg.out_dir.c_str());
        } else if (c_sweep->parsed()) {
            cdi::Pipeline pipe = cdi::build_pipeline(cfg);
            auto points = cdi::sweep_sample_size(pipe, parse_sizes(sizes_text));
            for (const auto& pt : points)
                std::printf("|P|=%-6d mean_p=%-12.6g ci=[%.4g, %.4g] %s\n", pt.size,
                            pt.verdict.mean_p, pt.verdict.ci_lo, pt.verdict.ci_hi,
                            pt.verdict.reject ? "REJECT" : "-");
        } else if (c_contam->parsed()) {
            cdi::Pipeline pipe = cdi::build_pipeline(cfg);
            std::vector<int> sizes = sizes_text.empty()
                                         ? std::vector<int>{cfg.resolved_eval_size()}
                                         : parse_sizes(sizes_text);
            auto points = cdi::contamination_run(pipe, parse_ratios(ratios_text), sizes);
            for (const auto& pt : points)
                std::printf("ratio=%-5.2f |P|=%-6d mean_p=%-12.6g %s\n", pt.ratio,
                            pt.size, pt.verdict.mean_p,
                            pt.verdict.reject ? "REJECT" : "-");
        } else if (c_null->parsed()) {
            cdi::Pipeline pipe = cdi::build_pipeline(cfg);
            cdi::NullRunResult res = cdi::false_positive_run(pipe, null_trials);
            std::printf("null mean_p        %.4f (per-trial protocol)\n", res.mean_p);
            std::printf("rejection rate     %.4f at alpha=%g\n", res.rejection_rate,
                        cfg.alpha);
            std::printf("kfold null mean_p  %.4f (frozen-fold diagnostic)\n",
                        res.kfold_null_mean_p);
            std::printf("ground truth       all non-members by construction\n");
        } else if (c_ablate->parsed()) {
            cdi::Pipeline pipe = cdi::build_pipeline(cfg);
            std::vector<std::vector<std::string>> subsets;
            if (subsets_text.empty()) {
                subsets = {{"denoising_loss", "secmi_stat", "pia", "pian",
                            "gradient_masking", "multiple_loss", "noise_optimization"},
                           {"denoising_loss", "secmi_stat", "pia", "pian"},
                           {"denoising_loss", "secmi_stat", "pia", "pian",
                            "multiple_loss"}};
            } else {
                std::istringstream is(subsets_text);
                std::string group;
                while (std::getline(is, group, ';')) {
                    std::vector<std::string> names;
                    std::istringstream gs(group);
                    std::string name;
                    while (std::getline(gs, name, ',')) names.push_back(name);
                    subsets.push_back(names);
                }
            }
            auto results = cdi::ablate_features(pipe, subsets);
            for (const auto& r : results) {
                if (r.min_p_to_reject > 0)
                    std::printf("%-60s min|P|=%d\n", r.subset_name.c_str(),
                                r.min_p_to_reject);
                else
                    std::printf("%-60s no rejection up to the pool size\n",
                                r.subset_name.c_str());
            }
        } else if (c_mia->parsed()) {
            cdi::Pipeline pipe = cdi::build_pipeline(cfg);
            cdi::MiaEvalResult res = cdi::mia_eval_run(pipe, set_size, n_sets);
            std::printf("%-16s %8s %14s %10s\n", "feature", "auc", "tpr@1%fpr", "acc");
            for (const auto& m : res.per_feature)
                std::printf("%-16s %8.4f %14.4f %10.4f\n", m.feature.c_str(), m.auc,
                            m.tpr_at_1pct_fpr, m.accuracy);
            std::printf("set-level MIA tpr@1%%fpr = %.4f vs CDI power = %.4f (set size %d)\n",
                        res.set_level_tpr, res.cdi_power, res.set_size);
        } else if (c_report->parsed()) {
            // Collect whatever artifacts exist into one summary; missing
            // pieces are fine (an empty report is still a valid report).
            std::error_code ec;
            fs::create_directories(cfg.out_dir, ec);
            if (ec) throw std::runtime_error("report: cannot create " + cfg.out_dir);
            json summary;
            summary["out_dir"] = cfg.out_dir;
            for (const char* name :
                 {"manifest.json", "verdict.json", "sweep.json", "contamination.json",
                  "ablation.json", "null_check.json", "set_level_mia.json",
                  "mia_metrics.json"}) {
                const std::string path = cfg.out_dir + "/" + name;
                if (fs::exists(path))
                    summary[name] = json::parse(cdi::read_text_file(path));
            }
            if (fs::exists(cfg.checkpoint_path())) {
                cdi::Checkpoint ckpt = cdi::load_checkpoint(cfg.checkpoint_path());
                cdi::write_text_file(cfg.schedule_csv_path(),
                                     ckpt.build_schedule().to_csv());
                summary["schedule_csv"] = cfg.schedule_csv_path();
            }
            cdi::write_text_file(cfg.out_dir + "/report.json", summary.dump(2) + "\n");
            std::printf("report         %s/report.json\n", cfg.out_dir.c_str());
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
