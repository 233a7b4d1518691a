#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "lmpforge/cli.hpp"
#include "lmpforge/errors.hpp"
#include "lmpforge/textio.hpp"

#include "json.hpp"

using namespace lmpforge;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / "lmpforge_cli_test";
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

struct QuietLog {
    std::string prev;
    bool had = false;
    QuietLog() {
        if (const char* p = std::getenv("LMPFORGE_LOG")) {
            prev = p;
            had = true;
        }
        setenv("LMPFORGE_LOG", "quiet", 1);
    }
    ~QuietLog() {
        if (had)
            setenv("LMPFORGE_LOG", prev.c_str(), 1);
        else
            unsetenv("LMPFORGE_LOG");
    }
};

std::string tiny_run_config(const std::string& prices, const std::string& grid,
                            const std::string& split) {
    json j;
    j["data"]["prices"] = prices;
    j["data"]["grid"] = grid;
    j["data"]["split"] = split;
    j["model"]["case"] = "case1";
    j["model"]["rows"] = 3;
    j["model"]["cols"] = 3;
    j["model"]["history_n"] = 4;
    j["model"]["g_maps"] = {4, 6, 8, 6, 4};
    j["model"]["d_maps"] = {4, 6, 8, 6, 4};
    j["train"]["minibatch"] = 4;
    j["train"]["max_iterations"] = 12;
    j["train"]["checkpoint_every"] = 5;
    j["seed"] = 21;
    return j.dump(2);
}

std::string make_dataset(const TempDir& tmp, int days, uint64_t seed) {
    SynthSpec spec;
    spec.days = days;
    spec.seed = seed;
    FeatureSet features = synth_generate(spec);
    fs::create_directories(tmp.path / "data");
    save_price_csv(tmp.file("data/prices.csv"), features);
    features.rtlmp.grid.save(tmp.file("data/grid.json"));
    return tmp.file("data");
}

}  // namespace

TEST_CASE("run config defaults from an empty document") {
    RunConfig cfg = RunConfig::from_json_text("{}", "test");
    CHECK(cfg.model.tag == CaseTag::case1);
    CHECK(cfg.grid_rows == 3);
    CHECK(cfg.grid_cols == 3);
    CHECK(cfg.model.rows == 3);
    CHECK(cfg.model.history_n == 4);
    CHECK(cfg.model.g_maps == std::vector<int>{64, 256, 1024, 512, 64});
    CHECK(cfg.train.rho_d == 0.0005);
    CHECK(cfg.train.max_iterations == 20000);
    CHECK(cfg.train.seed == 0);
    CHECK(cfg.forecast.mode == "hourly");
    CHECK(cfg.forecast.window == 4);
    CHECK(cfg.eval.near_zero == 1.0);
    CHECK(cfg.seed == 0);
}

TEST_CASE("run config section overrides land, case2 dims derive from the grid") {
    const std::string text = R"({
      "data": {"prices": "p.csv", "grid": "g.json", "split": "2017-04-01T00:00:00"},
      "model": {"case": "case2", "rows": 3, "cols": 3, "history_n": 4},
      "train": {"rho_d": 1e-4, "rho_g": 2e-4, "lambda_adv": 0.5, "p": 1,
                "minibatch": 8, "max_iterations": 100},
      "forecast": {"mode": "daily", "window": 6},
      "eval": {"near_zero": 0.5},
      "seed": 99
    })";
    RunConfig cfg = RunConfig::from_json_text(text, "test");
    CHECK(cfg.model.tag == CaseTag::case2);
    CHECK(cfg.grid_rows == 3);
    CHECK(cfg.model.rows == 12);
    CHECK(cfg.model.cols == 18);
    CHECK(cfg.model.g_in_channels == 16);
    CHECK(cfg.model.kernel_h == 12);
    CHECK(cfg.model.kernel_w == 18);
    CHECK(cfg.train.tag == CaseTag::case2);
    CHECK(cfg.train.rho_d == 1e-4);
    CHECK(cfg.train.rho_g == 2e-4);
    CHECK(cfg.train.weights.lambda_adv == 0.5);
    CHECK(cfg.train.weights.p == 1);
    CHECK(cfg.train.minibatch == 8);
    CHECK(cfg.train.seed == 99);
    CHECK(cfg.forecast.mode == "daily");
    CHECK(cfg.forecast.window == 6);
    CHECK(cfg.eval.near_zero == 0.5);
    CHECK(cfg.data.split == "2017-04-01T00:00:00");
}

TEST_CASE("run config rejects unknown keys with their path") {
    CHECK_THROWS_WITH_AS(RunConfig::from_json_text(R"({"sead": 1})", "test"),
                         doctest::Contains("sead"), ConfigError);
    CHECK_THROWS_WITH_AS(RunConfig::from_json_text(R"({"train": {"rho": 0.1}})", "test"),
                         doctest::Contains("test.train"), ConfigError);
    CHECK_THROWS_WITH_AS(
        RunConfig::from_json_text(R"({"model": {"rows": 3, "cells": 3}})", "test"),
        doctest::Contains("cells"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json_text("[1,2]", "test"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json_text("not json", "test"), ConfigError);
}

TEST_CASE("run config validation errors") {
    CHECK_THROWS_AS(RunConfig::from_json_text(R"({"model": {"rows": 0}})", "t"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json_text(R"({"model": {"history_n": 0}})", "t"),
                    ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json_text(R"({"forecast": {"mode": "monthly"}})", "t"),
                    ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json_text(R"({"forecast": {"window": 0}})", "t"),
                    ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json_text(R"({"eval": {"near_zero": -1}})", "t"),
                    ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json_text(R"({"data": {"split": "noon"}})", "t"),
                    ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json_text(R"({"train": {"minibatch": "four"}})", "t"),
                    ConfigError);
}

TEST_CASE("resolved config text re-parses to the same document") {
    const std::string text = R"({
      "model": {"case": "case2", "rows": 3, "cols": 3},
      "train": {"max_iterations": 50},
      "seed": 7
    })";
    RunConfig cfg = RunConfig::from_json_text(text, "test");
    const std::string resolved = cfg.to_json_text();
    RunConfig back = RunConfig::from_json_text(resolved, "resolved");
    CHECK(back.to_json_text() == resolved);
    CHECK(back.model.rows == 12);
    CHECK(back.train.max_iterations == 50);
    CHECK(back.seed == 7);
}

TEST_CASE("synth spec parse, defaults and key-named rejections") {
    TempDir tmp;
    spit(tmp.file("spec.json"), R"({"days": 14, "seed": 3})");
    SynthSpec spec = synth_spec_from_file(tmp.file("spec.json"));
    CHECK(spec.days == 14);
    CHECK(spec.seed == 3);
    CHECK(spec.rows == 3);
    CHECK(spec.base == 25.0);

    spit(tmp.file("bad1.json"), R"({"spike_prob": 1.5})");
    CHECK_THROWS_WITH_AS(synth_spec_from_file(tmp.file("bad1.json")),
                         doctest::Contains("spike_prob"), ConfigError);
    spit(tmp.file("bad2.json"), R"({"daze": 14})");
    CHECK_THROWS_WITH_AS(synth_spec_from_file(tmp.file("bad2.json")),
                         doctest::Contains("daze"), ConfigError);
    CHECK_THROWS_AS(synth_spec_from_file(tmp.file("missing.json")), IngestError);

    const std::string round = synth_spec_to_json_text(spec);
    spit(tmp.file("round.json"), round);
    SynthSpec back = synth_spec_from_file(tmp.file("round.json"));
    CHECK(synth_spec_to_json_text(back) == round);
}

TEST_CASE("cmd_synth writes the expected row count and reruns byte-identically") {
    QuietLog quiet;
    TempDir tmp;
    spit(tmp.file("spec.json"), R"({"days": 60, "seed": 12})");
    REQUIRE(cmd_synth(tmp.file("spec.json"), tmp.file("out1"), std::nullopt) == kExitOk);

    const std::string csv = slurp(tmp.file("out1/prices.csv"));
    int rtlmp_rows = 0;
    std::istringstream in(csv);
    std::string line;
    while (std::getline(in, line))
        if (line.find(",RTLMP,") != std::string::npos) ++rtlmp_rows;
    CHECK(rtlmp_rows == 9 * 1440);

    REQUIRE(cmd_synth(tmp.file("spec.json"), tmp.file("out2"), std::nullopt) == kExitOk);
    CHECK(slurp(tmp.file("out2/prices.csv")) == csv);
    CHECK(slurp(tmp.file("out2/grid.json")) == slurp(tmp.file("out1/grid.json")));

    REQUIRE(cmd_synth(tmp.file("spec.json"), tmp.file("out3"), uint64_t{13}) == kExitOk);
    CHECK(slurp(tmp.file("out3/prices.csv")) != csv);
    CHECK(json::parse(slurp(tmp.file("out3/spec.resolved.json")))["seed"] == 13);

    spit(tmp.file("bad.json"), R"({"spike_prob": 1.5})");
    CHECK(cmd_synth(tmp.file("bad.json"), tmp.file("out4"), std::nullopt) == kExitBadInput);
}

TEST_CASE("price csv round trip and time slicing") {
    TempDir tmp;
    SynthSpec spec;
    spec.days = 3;
    spec.seed = 9;
    FeatureSet features = synth_generate(spec);
    save_price_csv(tmp.file("p.csv"), features);
    features.rtlmp.grid.save(tmp.file("g.json"));

    FeatureSet back = load_feature_set(tmp.file("p.csv"), tmp.file("g.json"));
    for (int f = 0; f < 4; ++f) {
        const PriceTensor& a = features.by_index(f);
        const PriceTensor& b = back.by_index(f);
        REQUIRE(a.values.shape() == b.values.shape());
        CHECK(std::memcmp(a.values.data(), b.values.data(),
                          size_t(a.values.size()) * sizeof(double)) == 0);
        CHECK(a.time_index == b.time_index);
    }

    const PriceTensor& t = features.rtlmp;
    const int64_t t0 = t.time_index.front();
    PriceTensor cut = slice_time(t, t0 + 24 * 3600, t0 + 48 * 3600);
    CHECK(cut.steps() == 24);
    CHECK(cut.time_index.front() == t0 + 24 * 3600);
    CHECK(cut.time_index.back() == t0 + 47 * 3600);
    CHECK(cut.at(0, 1, 2) == t.at(24, 1, 2));
    CHECK(cut.grid.nodes == t.grid.nodes);
    CHECK_THROWS_AS(slice_time(t, t0 + 100 * 86400, t0 + 101 * 86400), IngestError);
    CHECK_THROWS_AS(slice_time(t, t0 + 48 * 3600, t0), UsageError);
}

TEST_CASE("cmd_train writes artifacts and reruns byte-identically") {
    QuietLog quiet;
    TempDir tmp;
    make_dataset(tmp, 8, 31);
    spit(tmp.file("run.json"),
         tiny_run_config(tmp.file("data/prices.csv"), tmp.file("data/grid.json"),
                         "2017-01-07T00:00:00"));

    REQUIRE(cmd_train(tmp.file("run.json"), tmp.file("run1"), std::nullopt) == kExitOk);
    for (const char* name : {"model.ckpt", "model.ckpt.json", "model.ckpt.norm.json",
                             "train_log.csv", "config.resolved.json"})
        CHECK(fs::exists(tmp.path / "run1" / name));

    const json sidecar = json::parse(slurp(tmp.file("run1/model.ckpt.json")));
    CHECK(sidecar["iterations"] == 12);
    CHECK(sidecar["case"] == "case1");

    RunConfig resolved = RunConfig::from_json_file(tmp.file("run1/config.resolved.json"));
    CHECK(resolved.train.max_iterations == 12);
    CHECK(resolved.seed == 21);

    REQUIRE(cmd_train(tmp.file("run.json"), tmp.file("run2"), std::nullopt) == kExitOk);
    CHECK(slurp(tmp.file("run2/model.ckpt")) == slurp(tmp.file("run1/model.ckpt")));
    CHECK(slurp(tmp.file("run2/model.ckpt.norm.json")) ==
          slurp(tmp.file("run1/model.ckpt.norm.json")));

    REQUIRE(cmd_train(tmp.file("run.json"), tmp.file("run3"), uint64_t{22}) == kExitOk);
    CHECK(slurp(tmp.file("run3/model.ckpt")) != slurp(tmp.file("run1/model.ckpt")));
    CHECK(RunConfig::from_json_file(tmp.file("run3/config.resolved.json")).seed == 22);
}

TEST_CASE("cmd_train surfaces missing inputs as exit 1") {
    QuietLog quiet;
    TempDir tmp;
    CHECK(cmd_train(tmp.file("nope.json"), tmp.file("out"), std::nullopt) == kExitBadInput);
    spit(tmp.file("bad.json"), R"({"data": {"prices": "missing.csv", "grid": "missing.json"}})");
    CHECK(cmd_train(tmp.file("bad.json"), tmp.file("out"), std::nullopt) == kExitBadInput);
    spit(tmp.file("unknown.json"), R"({"trian": {}})");
    CHECK(cmd_train(tmp.file("unknown.json"), tmp.file("out"), std::nullopt) == kExitBadInput);
}

TEST_CASE("cmd_forecast rolls the checkpoint and leaves the trailing truth empty") {
    QuietLog quiet;
    TempDir tmp;
    make_dataset(tmp, 8, 31);
    spit(tmp.file("run.json"),
         tiny_run_config(tmp.file("data/prices.csv"), tmp.file("data/grid.json"),
                         "2017-01-07T00:00:00"));
    REQUIRE(cmd_train(tmp.file("run.json"), tmp.file("run"), std::nullopt) == kExitOk);

    REQUIRE(cmd_forecast(tmp.file("run.json"), tmp.file("run/model.ckpt"),
                         tmp.file("data/prices.csv"), "", tmp.file("fc.csv")) == kExitOk);
    auto rows = read_forecast_csv(tmp.file("fc.csv"));
    // 48 test hours, history 4: records for steps 4..48 across 9 nodes.
    CHECK(rows.size() == 45u * 9u);
    CHECK(fs::exists(tmp.file("fc.csv.config.json")));

    int64_t last_ts = rows.back().timestamp;
    int with_truth = 0, without = 0;
    for (const auto& r : rows) {
        if (r.timestamp == last_ts) {
            CHECK_FALSE(r.has_truth);
            ++without;
        } else if (r.has_truth) {
            ++with_truth;
        }
    }
    CHECK(without == 9);
    CHECK(with_truth == 44 * 9);

    REQUIRE(cmd_forecast(tmp.file("run.json"), tmp.file("run/model.ckpt"),
                         tmp.file("data/prices.csv"), "", tmp.file("fc2.csv")) == kExitOk);
    CHECK(slurp(tmp.file("fc2.csv")) == slurp(tmp.file("fc.csv")));

    CHECK(cmd_forecast(tmp.file("run.json"), tmp.file("run/model.ckpt"),
                       tmp.file("data/prices.csv"), "daily",
                       tmp.file("fc3.csv")) == kExitBadInput);
    CHECK(cmd_forecast(tmp.file("run.json"), tmp.file("missing.ckpt"),
                       tmp.file("data/prices.csv"), "", tmp.file("fc4.csv")) != kExitOk);
}

TEST_CASE("cmd_evaluate scores a perfect fixture at zero") {
    QuietLog quiet;
    TempDir tmp;
    std::ostringstream csv;
    csv << "timestamp,node_id,ground_truth,forecast_raw,forecast_calibrated,calibrated_flag\n";
    for (int t = 0; t < 30; ++t)
        for (const char* node : {"A", "B"}) {
            const double v = 40.0 + t + (node[0] - 'A') * 3;
            csv << format_timestamp(1490000400 + t * 3600) << ',' << node << ','
                << fmt_double(v) << ',' << fmt_double(v) << ',' << fmt_double(v) << ",1\n";
        }
    spit(tmp.file("fc.csv"), csv.str());

    REQUIRE(cmd_evaluate("", tmp.file("fc.csv"), tmp.file("eval"), "hourly") == kExitOk);
    for (const char* name : {"report.json", "report.txt", "plot.csv", "config.resolved.json"})
        CHECK(fs::exists(tmp.path / "eval" / name));

    const json report = json::parse(slurp(tmp.file("eval/report.json")));
    CHECK(report["pooled"]["raw"]["aggregate"]["mape"] == 0.0);
    CHECK(report["pooled"]["calibrated"]["aggregate"]["mape"] == 0.0);
    CHECK(report["pooled"]["baseline"].contains("aggregate"));
    CHECK(report["pooled"]["baseline"]["aggregate"]["mape"].get<double>() > 0.0);
    CHECK(report["windows"].size() == 1);
    CHECK(report["windows"][0]["raw"]["A"]["mape"] == 0.0);

    const std::string text = slurp(tmp.file("eval/report.txt"));
    CHECK(text.find("baseline") != std::string::npos);
    CHECK(text.find("aggregate") != std::string::npos);

    CHECK(cmd_evaluate("", tmp.file("missing.csv"), tmp.file("eval2"), "hourly") ==
          kExitBadInput);
    spit(tmp.file("junk.csv"), "not,a,forecast\n1,2,3\n");
    CHECK(cmd_evaluate("", tmp.file("junk.csv"), tmp.file("eval3"), "hourly") == kExitBadInput);
    CHECK(cmd_evaluate("", tmp.file("fc.csv"), tmp.file("eval4"), "yearly") == kExitBadInput);
}

TEST_CASE("evaluate baseline derives from the truth column at the mode lag") {
    QuietLog quiet;
    TempDir tmp;
    // Truth walks upward by 2 each hour; a raw forecast pinned to truth+1
    // gives a nonzero raw MAPE while persistence trails truth by exactly 2.
    std::ostringstream csv;
    csv << "timestamp,node_id,ground_truth,forecast_raw,forecast_calibrated,calibrated_flag\n";
    for (int t = 0; t < 10; ++t) {
        const double truth = 100.0 + 2 * t;
        csv << format_timestamp(1490000400 + t * 3600) << ",A," << fmt_double(truth) << ','
            << fmt_double(truth + 1) << ',' << fmt_double(truth + 1) << ",0\n";
    }
    spit(tmp.file("fc.csv"), csv.str());
    REQUIRE(cmd_evaluate("", tmp.file("fc.csv"), tmp.file("eval"), "hourly") == kExitOk);

    const json report = json::parse(slurp(tmp.file("eval/report.json")));
    // Baseline at step t is truth(t-1) = truth(t) - 2, over the 9 covered steps.
    double expect = 0.0;
    for (int t = 1; t < 10; ++t) expect += 2.0 / (100.0 + 2 * t);
    expect *= 100.0 / 9;
    CHECK(report["pooled"]["baseline"]["aggregate"]["mape"].get<double>() ==
          doctest::Approx(expect).epsilon(1e-9));
    CHECK(report["pooled"]["baseline"]["aggregate"]["included"] == 9);
    // No flagged rows, so the calibrated column scores nothing.
    CHECK(report["pooled"]["calibrated"]["aggregate"]["included"] == 0);
}
