#include "lmpforge/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>

#include "lmpforge/errors.hpp"
#include "lmpforge/textio.hpp"

#include "json.hpp"

namespace lmpforge {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

int log_level() {
    static const int level = [] {
        const char* env = std::getenv("LMPFORGE_LOG");
        if (!env) return 1;
        const std::string v(env);
        if (v == "quiet") return 0;
        if (v == "debug") return 2;
        return 1;
    }();
    return level;
}

void check_keys(const json& j, const std::string& where,
                std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* a : allowed)
            if (key == a) ok = true;
        if (!ok) throw ConfigError("unknown key \"" + key + "\" in " + where);
    }
}

template <typename T>
void read_into(const json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(where + "." + key + ": " + e.what());
    }
}

json parse_json_text(const std::string& text, const std::string& origin) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(origin + " is not valid JSON: " + e.what());
    }
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestError("cannot open " + path);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IngestError("cannot write " + path);
    out << content;
    if (!out) throw IngestError("write failed for " + path);
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IngestError("cannot create directory " + dir + ": " + ec.message());
}

/// Maps library errors onto the exit-code contract.
int run_guarded(const std::function<void()>& body) {
    try {
        body();
        return kExitOk;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBadInput;
    } catch (const IngestError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBadInput;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBadInput;
    } catch (const DimensionError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBadInput;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

}  // namespace

void log_info(const std::string& msg) {
    if (log_level() >= 1) std::cerr << "[lmpforge] " << msg << "\n";
}

void log_debug(const std::string& msg) {
    if (log_level() >= 2) std::cerr << "[lmpforge] " << msg << "\n";
}

RunConfig RunConfig::from_json_file(const std::string& path) {
    return from_json_text(read_text_file(path), path);
}

RunConfig RunConfig::from_json_text(const std::string& text, const std::string& origin) {
    const json j = parse_json_text(text, origin);
    check_keys(j, origin, {"data", "model", "train", "forecast", "eval", "seed"});

    RunConfig cfg;
    read_into(j, "seed", cfg.seed, origin);

    if (j.contains("data")) {
        const json& d = j.at("data");
        check_keys(d, origin + ".data", {"prices", "grid", "split"});
        read_into(d, "prices", cfg.data.prices, origin + ".data");
        read_into(d, "grid", cfg.data.grid, origin + ".data");
        read_into(d, "split", cfg.data.split, origin + ".data");
    }

    CaseTag tag = CaseTag::case1;
    int history_n = 4;
    if (j.contains("model")) {
        const json& m = j.at("model");
        check_keys(m, origin + ".model",
                   {"case", "rows", "cols", "history_n", "kernel_h", "kernel_w", "g_maps",
                    "d_maps", "leaky_slope", "dropout_rate", "bn_eps", "bn_momentum",
                    "init_range"});
        std::string case_key = "case1";
        read_into(m, "case", case_key, origin + ".model");
        tag = case_from_name(case_key);
        read_into(m, "rows", cfg.grid_rows, origin + ".model");
        read_into(m, "cols", cfg.grid_cols, origin + ".model");
        read_into(m, "history_n", history_n, origin + ".model");
    }
    if (cfg.grid_rows < 1 || cfg.grid_cols < 1)
        throw ConfigError(origin + ".model: grid dims must be positive");
    if (history_n < 1) throw ConfigError(origin + ".model: history_n must be positive");
    cfg.model = tag == CaseTag::case1
                    ? ModelConfig::make(CaseTag::case1, cfg.grid_rows, cfg.grid_cols, history_n)
                    : ModelConfig::make(CaseTag::case2, 4 * cfg.grid_rows, 6 * cfg.grid_cols,
                                        history_n);
    if (j.contains("model")) {
        const json& m = j.at("model");
        read_into(m, "kernel_h", cfg.model.kernel_h, origin + ".model");
        read_into(m, "kernel_w", cfg.model.kernel_w, origin + ".model");
        read_into(m, "g_maps", cfg.model.g_maps, origin + ".model");
        read_into(m, "d_maps", cfg.model.d_maps, origin + ".model");
        read_into(m, "leaky_slope", cfg.model.leaky_slope, origin + ".model");
        read_into(m, "dropout_rate", cfg.model.dropout_rate, origin + ".model");
        read_into(m, "bn_eps", cfg.model.bn_eps, origin + ".model");
        read_into(m, "bn_momentum", cfg.model.bn_momentum, origin + ".model");
        read_into(m, "init_range", cfg.model.init_range, origin + ".model");
    }
    cfg.model.validate();

    cfg.train = TrainConfig::defaults(tag);
    cfg.train.history_n = history_n;
    if (j.contains("train")) {
        const json& t = j.at("train");
        check_keys(t, origin + ".train",
                   {"rho_d", "rho_g", "lambda_adv", "lambda_lp", "lambda_gdl", "p", "minibatch",
                    "max_iterations", "checkpoint_every", "convergence_window",
                    "convergence_threshold"});
        read_into(t, "rho_d", cfg.train.rho_d, origin + ".train");
        read_into(t, "rho_g", cfg.train.rho_g, origin + ".train");
        read_into(t, "lambda_adv", cfg.train.weights.lambda_adv, origin + ".train");
        read_into(t, "lambda_lp", cfg.train.weights.lambda_lp, origin + ".train");
        read_into(t, "lambda_gdl", cfg.train.weights.lambda_gdl, origin + ".train");
        read_into(t, "p", cfg.train.weights.p, origin + ".train");
        read_into(t, "minibatch", cfg.train.minibatch, origin + ".train");
        read_into(t, "max_iterations", cfg.train.max_iterations, origin + ".train");
        read_into(t, "checkpoint_every", cfg.train.checkpoint_every, origin + ".train");
        read_into(t, "convergence_window", cfg.train.convergence_window, origin + ".train");
        read_into(t, "convergence_threshold", cfg.train.convergence_threshold,
                  origin + ".train");
    }
    cfg.train.seed = cfg.seed;
    cfg.train.validate();

    if (j.contains("forecast")) {
        const json& f = j.at("forecast");
        check_keys(f, origin + ".forecast", {"mode", "window"});
        read_into(f, "mode", cfg.forecast.mode, origin + ".forecast");
        read_into(f, "window", cfg.forecast.window, origin + ".forecast");
    }
    if (j.contains("eval")) {
        const json& e = j.at("eval");
        check_keys(e, origin + ".eval", {"near_zero"});
        read_into(e, "near_zero", cfg.eval.near_zero, origin + ".eval");
    }
    cfg.validate();
    return cfg;
}

void RunConfig::validate() const {
    forecast_mode_from_name(forecast.mode);
    if (forecast.window < 1) throw ConfigError("forecast.window must be at least 1");
    if (!(eval.near_zero >= 0.0)) throw ConfigError("eval.near_zero must be non-negative");
    if (!data.split.empty()) {
        try {
            parse_timestamp(data.split);
        } catch (const Error& e) {
            throw ConfigError("data.split: " + std::string(e.what()));
        }
    }
    if (model.tag == CaseTag::case2 &&
        (model.rows != 4 * grid_rows || model.cols != 6 * grid_cols))
        throw ConfigError("daily-block model dims do not match the grid");
}

std::string RunConfig::to_json_text() const {
    json j;
    j["data"]["prices"] = data.prices;
    j["data"]["grid"] = data.grid;
    j["data"]["split"] = data.split;
    j["model"]["case"] = case_name(model.tag);
    j["model"]["rows"] = grid_rows;
    j["model"]["cols"] = grid_cols;
    j["model"]["history_n"] = model.history_n;
    j["model"]["kernel_h"] = model.kernel_h;
    j["model"]["kernel_w"] = model.kernel_w;
    j["model"]["g_maps"] = model.g_maps;
    j["model"]["d_maps"] = model.d_maps;
    j["model"]["leaky_slope"] = model.leaky_slope;
    j["model"]["dropout_rate"] = model.dropout_rate;
    j["model"]["bn_eps"] = model.bn_eps;
    j["model"]["bn_momentum"] = model.bn_momentum;
    j["model"]["init_range"] = model.init_range;
    j["train"]["rho_d"] = train.rho_d;
    j["train"]["rho_g"] = train.rho_g;
    j["train"]["lambda_adv"] = train.weights.lambda_adv;
    j["train"]["lambda_lp"] = train.weights.lambda_lp;
    j["train"]["lambda_gdl"] = train.weights.lambda_gdl;
    j["train"]["p"] = train.weights.p;
    j["train"]["minibatch"] = train.minibatch;
    j["train"]["max_iterations"] = train.max_iterations;
    j["train"]["checkpoint_every"] = train.checkpoint_every;
    j["train"]["convergence_window"] = train.convergence_window;
    j["train"]["convergence_threshold"] = train.convergence_threshold;
    j["forecast"]["mode"] = forecast.mode;
    j["forecast"]["window"] = forecast.window;
    j["eval"]["near_zero"] = eval.near_zero;
    j["seed"] = seed;
    return j.dump(2) + "\n";
}

SynthSpec synth_spec_from_file(const std::string& path) {
    const json j = parse_json_text(read_text_file(path), path);
    check_keys(j, path,
               {"rows", "cols", "days", "base", "daily_amp", "weekly_amp", "node_amp_step",
                "spatial_row", "spatial_col", "noise_std", "spike_prob", "spike_mag", "seed",
                "start"});
    SynthSpec spec;
    read_into(j, "rows", spec.rows, path);
    read_into(j, "cols", spec.cols, path);
    read_into(j, "days", spec.days, path);
    read_into(j, "base", spec.base, path);
    read_into(j, "daily_amp", spec.daily_amp, path);
    read_into(j, "weekly_amp", spec.weekly_amp, path);
    read_into(j, "node_amp_step", spec.node_amp_step, path);
    read_into(j, "spatial_row", spec.spatial_row, path);
    read_into(j, "spatial_col", spec.spatial_col, path);
    read_into(j, "noise_std", spec.noise_std, path);
    read_into(j, "spike_prob", spec.spike_prob, path);
    read_into(j, "spike_mag", spec.spike_mag, path);
    read_into(j, "seed", spec.seed, path);
    read_into(j, "start", spec.start, path);
    spec.validate();
    return spec;
}

std::string synth_spec_to_json_text(const SynthSpec& spec) {
    json j;
    j["rows"] = spec.rows;
    j["cols"] = spec.cols;
    j["days"] = spec.days;
    j["base"] = spec.base;
    j["daily_amp"] = spec.daily_amp;
    j["weekly_amp"] = spec.weekly_amp;
    j["node_amp_step"] = spec.node_amp_step;
    j["spatial_row"] = spec.spatial_row;
    j["spatial_col"] = spec.spatial_col;
    j["noise_std"] = spec.noise_std;
    j["spike_prob"] = spec.spike_prob;
    j["spike_mag"] = spec.spike_mag;
    j["seed"] = spec.seed;
    j["start"] = spec.start;
    return j.dump(2) + "\n";
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir,
              std::optional<uint64_t> seed) {
    return run_guarded([&] {
        SynthSpec spec = synth_spec_from_file(spec_path);
        if (seed) spec.seed = *seed;
        FeatureSet features = synth_generate(spec);
        ensure_dir(out_dir);
        const fs::path out(out_dir);
        save_price_csv((out / "prices.csv").string(), features);
        features.rtlmp.grid.save((out / "grid.json").string());
        write_text_file((out / "spec.resolved.json").string(), synth_spec_to_json_text(spec));
        log_info("synth: wrote " + std::to_string(features.rtlmp.steps()) + " hours x " +
                 std::to_string(features.rtlmp.rows() * features.rtlmp.cols()) +
                 " nodes x 4 features to " + out_dir);
    });
}

namespace {

std::string tensor_summary(const PriceTensor& t, const std::string& name) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo, mean = 0.0;
    for (int64_t i = 0; i < t.values.size(); ++i) {
        const double v = t.values.data()[i];
        lo = std::min(lo, v);
        hi = std::max(hi, v);
        mean += v;
    }
    mean /= double(t.values.size());
    return name + ": min " + fmt_fixed(lo, 2) + ", max " + fmt_fixed(hi, 2) + ", mean " +
           fmt_fixed(mean, 2);
}

}  // namespace

int cmd_ingest(const std::string& data_csv, const std::string& grid_json,
               const std::string& case_name_str) {
    return run_guarded([&] {
        std::vector<std::string> warnings;
        const ForecastMode mode = forecast_mode_from_name(case_name_str);
        if (mode == ForecastMode::hour_ahead) {
            PriceTensor t = load_price_csv(data_csv, grid_json, "RTLMP", &warnings);
            log_info("ingest: " + std::to_string(t.steps()) + " hourly steps, " +
                     format_timestamp(t.time_index.front()) + " .. " +
                     format_timestamp(t.time_index.back()) + ", " +
                     std::to_string(t.grid.nodes.size()) + " nodes");
            log_info(tensor_summary(t, "RTLMP"));
        } else {
            FeatureSet fsx = load_feature_set(data_csv, grid_json, &warnings);
            log_info("ingest: " + std::to_string(fsx.rtlmp.steps()) + " hourly steps, " +
                     std::to_string(fsx.rtlmp.grid.nodes.size()) + " nodes, 4 features");
            for (int f = 0; f < 4; ++f)
                log_info(tensor_summary(fsx.by_index(f), feature_names()[size_t(f)]));
        }
        for (const std::string& w : warnings) log_info("warning: " + w);
        log_info("ingest: ok");
    });
}

namespace {

void check_grid_dims(const GridMap& grid, const RunConfig& cfg) {
    if (grid.rows != cfg.grid_rows || grid.cols != cfg.grid_cols)
        throw ConfigError("grid map is " + std::to_string(grid.rows) + "x" +
                          std::to_string(grid.cols) + " but the config expects " +
                          std::to_string(cfg.grid_rows) + "x" + std::to_string(cfg.grid_cols));
}

PriceTensor train_slice(const PriceTensor& t, const std::string& split) {
    if (split.empty()) return t;
    return slice_time(t, std::numeric_limits<int64_t>::min(), parse_timestamp(split));
}

PriceTensor test_slice(const PriceTensor& t, const std::string& split) {
    if (split.empty()) return t;
    return slice_time(t, parse_timestamp(split), std::numeric_limits<int64_t>::max());
}

/// Training tensor in network units plus the normalization that got it there.
struct PreparedData {
    std::vector<TrainSample> samples;
    NormalizationParams norm;
};

PreparedData prepare_training_data(const RunConfig& cfg, std::vector<std::string>* warnings) {
    PreparedData out;
    if (cfg.model.tag == CaseTag::case1) {
        PriceTensor hourly = load_price_csv(cfg.data.prices, cfg.data.grid, "RTLMP", warnings);
        check_grid_dims(hourly.grid, cfg);
        PriceTensor train = train_slice(hourly, cfg.data.split);
        out.norm = fit_normalization(train.values);
        out.samples =
            make_case1_samples(normalize_prices(train, out.norm, warnings), cfg.model.history_n);
    } else {
        FeatureSet features = load_feature_set(cfg.data.prices, cfg.data.grid, warnings);
        check_grid_dims(features.rtlmp.grid, cfg);
        FeatureSet daily;
        for (int f = 0; f < 4; ++f)
            daily.by_index(f) =
                build_daily_tensor(train_slice(features.by_index(f), cfg.data.split));
        PriceTensor merged = merge_feature_tensors(daily);
        out.norm = fit_normalization(merged.values);
        out.samples =
            make_case2_samples(normalize_prices(merged, out.norm, warnings), cfg.model.history_n);
    }
    return out;
}

}  // namespace

int cmd_train(const std::string& config_path, const std::string& out_dir,
              std::optional<uint64_t> seed) {
    return run_guarded([&] {
        RunConfig cfg = RunConfig::from_json_file(config_path);
        if (seed) {
            cfg.seed = *seed;
            cfg.train.seed = *seed;
        }
        ensure_dir(out_dir);
        const fs::path out(out_dir);
        cfg.train.checkpoint_path = (out / "model.ckpt").string();
        cfg.train.log_path = (out / "train_log.csv").string();

        std::vector<std::string> warnings;
        PreparedData data = prepare_training_data(cfg, &warnings);
        for (const std::string& w : warnings) log_debug("warning: " + w);
        log_info("train: " + std::to_string(data.samples.size()) + " samples, " +
                 case_name(cfg.model.tag) + ", seed " + std::to_string(cfg.seed));

        Trainer trainer(cfg.train, cfg.model);
        TrainResult res = trainer.run(data.samples);

        data.norm.save(cfg.train.checkpoint_path + ".norm.json");
        write_text_file((out / "config.resolved.json").string(), cfg.to_json_text());
        std::string tail;
        if (!trainer.log().records.empty()) {
            const TrainRecord& last = trainer.log().records.back();
            tail = ", final d_loss " + fmt_fixed(last.d_loss, 4) + ", g_total " +
                   fmt_fixed(last.g_total, 4);
        }
        log_info("train: " + std::to_string(res.iterations) + " iterations" +
                 (res.converged ? " (converged)" : "") + tail);
        log_info("train: checkpoint " + cfg.train.checkpoint_path);
    });
}

int cmd_forecast(const std::string& config_path, const std::string& checkpoint_path,
                 const std::string& data_csv, const std::string& mode,
                 const std::string& out_csv) {
    return run_guarded([&] {
        RunConfig cfg = RunConfig::from_json_file(config_path);
        const std::string mode_name = mode.empty() ? cfg.forecast.mode : mode;
        const ForecastMode fmode = forecast_mode_from_name(mode_name);

        Checkpoint ck = load_checkpoint(checkpoint_path);
        NormalizationParams norm = NormalizationParams::load(checkpoint_path + ".norm.json");
        if (ck.cfg.tag != cfg.model.tag)
            log_debug("checkpoint case " + case_name(ck.cfg.tag) + " overrides config case " +
                      case_name(cfg.model.tag));

        std::vector<std::string> warnings;
        PriceTensor tensor;
        if (fmode == ForecastMode::hour_ahead) {
            tensor = test_slice(load_price_csv(data_csv, cfg.data.grid, "RTLMP", &warnings),
                                cfg.data.split);
        } else {
            FeatureSet features = load_feature_set(data_csv, cfg.data.grid, &warnings);
            FeatureSet daily;
            for (int f = 0; f < 4; ++f)
                daily.by_index(f) =
                    build_daily_tensor(test_slice(features.by_index(f), cfg.data.split));
            tensor = merge_feature_tensors(daily);
        }
        for (const std::string& w : warnings) log_debug("warning: " + w);

        ForecastSeries series =
            rolling_forecast(ck.g, tensor, norm, fmode, cfg.forecast.window, &warnings);
        write_forecast_csv(out_csv, series);
        write_text_file(out_csv + ".config.json", cfg.to_json_text());
        log_info("forecast: " + std::to_string(series.records.size()) + " records (" +
                 mode_name + ") to " + out_csv);
    });
}

int cmd_evaluate(const std::string& config_path, const std::string& forecast_csv,
                 const std::string& out_dir, const std::string& case_name_str) {
    return run_guarded([&] {
        RunConfig cfg;
        if (!config_path.empty()) cfg = RunConfig::from_json_file(config_path);
        const std::string mode_name = case_name_str.empty() ? cfg.forecast.mode : case_name_str;
        const ForecastMode mode = forecast_mode_from_name(mode_name);
        const int64_t lag =
            mode == ForecastMode::hour_ahead ? kSecondsPerHour : kSecondsPerDay;

        auto rows = read_forecast_csv(forecast_csv);
        auto points = eval_points(rows, lag);
        EvalReport report = evaluate(points, cfg.eval.near_zero);

        ensure_dir(out_dir);
        const fs::path out(out_dir);
        write_text_file((out / "report.json").string(), report_json(report));
        write_text_file((out / "report.txt").string(), report_text(report));
        write_plot_csv((out / "plot.csv").string(), points);
        write_text_file((out / "config.resolved.json").string(), cfg.to_json_text());

        const MapeCell& agg = report.pooled.calibrated.at("aggregate");
        const MapeCell& raw = report.pooled.raw.at("aggregate");
        const MapeCell& base = report.pooled.baseline.at("aggregate");
        auto show = [](const MapeCell& c) {
            return std::isfinite(c.value) ? fmt_fixed(c.value, 3) + "%" : std::string("n/a");
        };
        log_info("evaluate: raw " + show(raw) + ", calibrated " + show(agg) + ", baseline " +
                 show(base) + " (" + mode_name + ")");
        log_info("evaluate: report in " + out_dir);
    });
}

}  // namespace lmpforge
