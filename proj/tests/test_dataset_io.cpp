#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <set>

#include "cdi/config.hpp"
#include "cdi/dataset.hpp"
#include "cdi/io.hpp"
#include "cdi/rng.hpp"

using namespace cdi;
namespace fs = std::filesystem;

namespace {

std::string tmp_path(const std::string& name) {
    static const fs::path dir = [] {
        fs::path p = fs::temp_directory_path() / "cdi-io-tests";
        fs::create_directories(p);
        return p;
    }();
    return (dir / name).string();
}

}  // namespace

TEST_CASE("synthetic dataset") {
    DatasetSpec spec;
    spec.height = 6;
    spec.width = 6;

    SUBCASE("deterministic per index, distinct across indices") {
        auto a = generate_synthetic(spec, 4);
        auto b = generate_synthetic(spec, 4);
        REQUIRE(a.size() == 4);
        for (size_t i = 0; i < 4; ++i) {
            CHECK(a[i].sample_id == b[i].sample_id);
            CHECK(mean_sq_diff(a[i].pixels, b[i].pixels) == 0.0);
        }
        CHECK(mean_sq_diff(a[0].pixels, a[1].pixels) > 0.0);
        // slicing the stream matches generating from an offset
        auto tail = generate_synthetic(spec, 2, 2);
        CHECK(tail[0].sample_id == a[2].sample_id);
        CHECK(mean_sq_diff(tail[0].pixels, a[2].pixels) == 0.0);
    }
    SUBCASE("pixels bounded and finite") {
        auto data = generate_synthetic(spec, 32);
        for (const auto& s : data) {
            CHECK(s.pixels.all_finite());
            CHECK(s.pixels.max_abs() <= 1.0);
        }
    }
    SUBCASE("labels cycle through the class count") {
        spec.num_classes = 3;
        auto data = generate_synthetic(spec, 6);
        for (size_t i = 0; i < 6; ++i) CHECK(*data[i].label == static_cast<int>(i % 3));
    }
}

TEST_CASE("dataset file round trip") {
    DatasetSpec spec;
    spec.height = 5;
    spec.width = 4;
    spec.channels = 2;
    spec.num_classes = 2;
    auto data = generate_synthetic(spec, 7);
    const std::string path = tmp_path("roundtrip.cdt");
    save_dataset_file(path, data);
    auto loaded = load_dataset_file(path);
    REQUIRE(loaded.size() == 7);
    for (size_t i = 0; i < 7; ++i) {
        CHECK(mean_sq_diff(loaded[i].pixels, data[i].pixels) == 0.0);
        CHECK(loaded[i].label == data[i].label);
    }
    CHECK_THROWS(load_dataset_file(tmp_path("missing.cdt")));

    // loading via the generic entry point honors the count
    DatasetSpec file_spec;
    file_spec.source = "file";
    file_spec.path = path;
    CHECK(load_dataset(file_spec, 3).size() == 3);
    CHECK_THROWS(load_dataset(file_spec, 100));
}

TEST_CASE("prepare_splits") {
    DatasetSpec spec;
    spec.height = 6;
    spec.width = 6;
    SplitSizes sizes;
    sizes.n_train = 64;
    sizes.p_pool = 32;
    sizes.u_pool = 40;
    sizes.contam_pool = 24;
    sizes.allow_imbalance = true;  // exercised below; equality is the default rule

    SUBCASE("sizes, disjointness, reproducibility") {
        Splits a = prepare_splits(spec, sizes, 5);
        Splits b = prepare_splits(spec, sizes, 5);
        CHECK(a.train.size() == 64);
        CHECK(a.p.size() == 32);
        CHECK(a.u.size() == 40);
        CHECK(a.contam.size() == 24);

        std::set<std::string> train_ids, p_ids, u_ids, contam_ids;
        for (const auto& s : a.train) train_ids.insert(s.sample_id);
        for (const auto& s : a.p) p_ids.insert(s.sample_id);
        for (const auto& s : a.u) u_ids.insert(s.sample_id);
        for (const auto& s : a.contam) contam_ids.insert(s.sample_id);
        CHECK(p_ids.size() == 32);
        for (const auto& id : p_ids) CHECK(train_ids.count(id) == 1);  // P within train
        for (const auto& id : u_ids) {
            CHECK(train_ids.count(id) == 0);
            CHECK(contam_ids.count(id) == 0);
        }
        // same seed, same P draw
        for (size_t i = 0; i < a.p.size(); ++i) CHECK(a.p[i].sample_id == b.p[i].sample_id);
        Splits c = prepare_splits(spec, sizes, 6);
        bool same = true;
        for (size_t i = 0; i < a.p.size(); ++i)
            same &= (a.p[i].sample_id == c.p[i].sample_id);
        CHECK_FALSE(same);
    }
    SUBCASE("distribution-match guard passes for an honest stream") {
        Splits sp = prepare_splits(spec, sizes, 5);
        CHECK(sp.ks_pvalue > 0.05);
    }
    SUBCASE("p cannot exceed train size") {
        SplitSizes bad = sizes;
        bad.p_pool = 65;
        CHECK_THROWS_AS(prepare_splits(spec, bad, 5), std::invalid_argument);
    }
    SUBCASE("|P| == |U| enforced unless the imbalance experiment opts out") {
        SplitSizes uneven = sizes;
        uneven.allow_imbalance = false;
        CHECK_THROWS_WITH_AS(prepare_splits(spec, uneven, 5),
                             doctest::Contains("allow_imbalance"),
                             std::invalid_argument);
        uneven.u_pool = uneven.p_pool;
        CHECK_NOTHROW(prepare_splits(spec, uneven, 5));
    }
}

TEST_CASE("config parsing") {
    const std::string text =
        "# comment\n"
        "[dataset]\n"
        "height = 16\n"
        "source = synthetic  # trailing comment\n"
        "\n"
        "[train]\n"
        "lr = 0.002\n"
        "use_labels = true\n"
        "top.level = ok\n";
    // keys inside a section get the section prefix; dotted keys still work
    ConfigMap cm = ConfigMap::parse_string(text);
    CHECK(cm.get_int("dataset.height", 0) == 16);
    CHECK(cm.get_string("dataset.source", "") == "synthetic");
    CHECK(cm.get_double("train.lr", 0.0) == doctest::Approx(0.002));
    CHECK(cm.get_bool("train.use_labels", false));
    CHECK(cm.get_string("train.top.level", "") == "ok");
    CHECK(cm.get_int("absent", 7) == 7);

    CHECK_THROWS(ConfigMap::parse_string("novalue\n"));
    CHECK_THROWS(ConfigMap::parse_string("[unclosed\n"));
    CHECK_THROWS(cm.get_int("dataset.source", 0));

    ConfigMap over;
    over.set("dataset.height", "32");
    cm.merge_from(over);
    CHECK(cm.get_int("dataset.height", 0) == 32);
}

TEST_CASE("checkpoint round trip") {
    ConvDenoiserConfig mc;
    mc.channels = 1;
    mc.height = 4;
    mc.width = 4;
    mc.hidden = 5;
    mc.blocks = 2;
    mc.time_embed_dim = 8;
    mc.init_seed = 11;
    ConvDenoiser model(mc);

    Checkpoint ckpt;
    ckpt.model_config = mc;
    ckpt.params = model.params();
    ckpt.schedule_T = 1000;
    ckpt.train_seed = 77;
    ckpt.train_steps = 123;
    const std::string path = tmp_path("model.ckpt");
    save_checkpoint(path, ckpt);

    Checkpoint loaded = load_checkpoint(path);
    CHECK(loaded.model_config == mc);
    CHECK(loaded.params == model.params());
    CHECK(loaded.train_seed == 77);
    CHECK(loaded.train_steps == 123);

    auto rebuilt = loaded.build_model();
    Rng rng(1);
    Tensor x = rng.normal_tensor(1, 4, 4);
    CHECK(mean_sq_diff(rebuilt->predict(x, 100), model.predict(x, 100)) == 0.0);
    CHECK(loaded.build_schedule().T() == 1000);

    CHECK(hash_file(path) == hash_file(path));
}

TEST_CASE("feature cache round trip with deterministic order") {
    FeatureCache cache;
    cache.feature_names = {"denoising_loss", "pia"};
    cache.rows.push_back({"syn-000002", "U", false, {0.5, 1.25}});
    cache.rows.push_back({"syn-000001", "P", true, {0.125, -3.0}});
    const std::string path = tmp_path("features.csv");
    write_feature_cache(path, cache);

    const std::string text = read_text_file(path);
    CHECK(text.rfind("sample_id,split,is_member,denoising_loss,pia\n", 0) == 0);
    // rows sorted by sample_id regardless of insertion order
    CHECK(text.find("syn-000001") < text.find("syn-000002"));

    FeatureCache loaded = read_feature_cache(path);
    REQUIRE(loaded.rows.size() == 2);
    CHECK(loaded.feature_names == cache.feature_names);
    CHECK(loaded.rows[0].sample_id == "syn-000001");
    CHECK(loaded.rows[0].is_member);
    CHECK(loaded.rows[0].values == std::vector<double>{0.125, -3.0});
    CHECK(loaded.rows_for("U").size() == 1);
    CHECK(loaded.ids_for("P") == std::vector<std::string>{"syn-000001"});

    // lossless float round trip
    cache.rows[0].values[0] = 0.1 + 0.2;  // not exactly representable
    write_feature_cache(path, cache);
    FeatureCache again = read_feature_cache(path);
    CHECK(again.rows_for("U")[0][0] == 0.1 + 0.2);
}

TEST_CASE("verdict and score artifacts") {
    VerificationVerdict v;
    v.mean_p = 0.0025;
    v.ci_lo = 0.001;
    v.ci_hi = 0.004;
    v.trials = 100;
    v.n_per_trial = 32;
    v.alpha = 0.01;
    v.reject = true;
    const std::string path = tmp_path("verdict.json");
    write_verdict_json(path, v, 0xabcdef);
    const std::string text = read_text_file(path);
    CHECK(text.find("\"mean_p\": 0.0025") != std::string::npos);
    CHECK(text.find("\"reject\": true") != std::string::npos);
    CHECK(text.find("manifest_hash") != std::string::npos);

    write_score_dump(tmp_path("scores.csv"),
                     {{"a", true, 0, 0.75}, {"b", false, 1, 0.25}});
    const std::string scores = read_text_file(tmp_path("scores.csv"));
    CHECK(scores.rfind("sample_id,is_member,fold,score\n", 0) == 0);
    CHECK(scores.find("a,1,0,0.75") != std::string::npos);
}

TEST_CASE("svg plot emission") {
    PlotSeries s;
    s.label = "demo";
    s.x = {32, 64, 128};
    s.y = {0.2, 0.01, 1e-5};
    s.lo = {0.1, 0.005, 1e-6};
    s.hi = {0.3, 0.02, 1e-4};
    const std::string path = tmp_path("plot.svg");
    write_pvalue_plot_svg(path, "demo plot", {s}, 0.01);
    const std::string text = read_text_file(path);
    CHECK(text.rfind("<svg", 0) == 0);
    CHECK(text.find("polyline") != std::string::npos);
    CHECK(text.find("polygon") != std::string::npos);  // the CI band
    CHECK(text.find("alpha") != std::string::npos);
    // idempotence
    write_pvalue_plot_svg(path, "demo plot", {s}, 0.01);
    CHECK(read_text_file(path) == text);
}
