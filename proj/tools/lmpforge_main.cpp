#include <iostream>
#include <optional>
#include <string>

#include "lmpforge/cli.hpp"

#include "CLI11.hpp"

using namespace lmpforge;

namespace {

std::optional<uint64_t> parse_seed(const std::string& s) {
    if (s.empty()) return std::nullopt;
    try {
        size_t used = 0;
        const uint64_t v = std::stoull(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw CLI::ValidationError("--seed", "not an unsigned integer: " + s);
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"GAN-based locational marginal price forecasting"};
    app.require_subcommand(1);

    std::string spec_path, out_dir, seed_str;
    std::string data_csv, grid_json;
    std::string ingest_case = "hourly";
    std::string eval_case;  // empty falls back to the config's forecast mode
    std::string config_path, checkpoint_path, mode, out_csv, forecast_csv;

    CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic price dataset");
    synth->add_option("--spec", spec_path, "SynthSpec JSON")->required();
    synth->add_option("--out", out_dir, "output directory")->required();
    synth->add_option("--seed", seed_str, "override the spec seed");

    CLI::App* ingest = app.add_subcommand("ingest", "Validate and summarize a price CSV");
    ingest->add_option("--data", data_csv, "price CSV")->required();
    ingest->add_option("--grid", grid_json, "grid map JSON")->required();
    ingest->add_option("--case", ingest_case, "hourly or daily")->capture_default_str();

    CLI::App* train = app.add_subcommand("train", "Train a model from a run config");
    train->add_option("--config", config_path, "run config JSON")->required();
    train->add_option("--out", out_dir, "output directory")->required();
    train->add_option("--seed", seed_str, "override the config seed");

    CLI::App* forecast = app.add_subcommand("forecast", "Roll a checkpoint over test data");
    forecast->add_option("--config", config_path, "run config JSON")->required();
    forecast->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
    forecast->add_option("--data", data_csv, "price CSV")->required();
    forecast->add_option("--mode", mode, "hour or day (default: config)");
    forecast->add_option("--out", out_csv, "forecast CSV path")->required();

    CLI::App* evaluate = app.add_subcommand("evaluate", "Score a forecast CSV");
    evaluate->add_option("--forecast", forecast_csv, "forecast CSV")->required();
    evaluate->add_option("--out", out_dir, "report directory")->required();
    evaluate->add_option("--config", config_path, "run config JSON");
    evaluate->add_option("--case", eval_case, "hourly or daily (default: config)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitBadInput;
    }

    try {
        if (*synth) return cmd_synth(spec_path, out_dir, parse_seed(seed_str));
        if (*ingest) return cmd_ingest(data_csv, grid_json, ingest_case);
        if (*train) return cmd_train(config_path, out_dir, parse_seed(seed_str));
        if (*forecast)
            return cmd_forecast(config_path, checkpoint_path, data_csv, mode, out_csv);
        if (*evaluate) return cmd_evaluate(config_path, forecast_csv, out_dir, eval_case);
    } catch (const CLI::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBadInput;
    }
    return kExitBadInput;
}
