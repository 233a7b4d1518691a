#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "lmpforge/eval_bench.hpp"
#include "lmpforge/forecast.hpp"
#include "lmpforge/gan_models.hpp"
#include "lmpforge/trainer.hpp"

namespace lmpforge {

/// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitBadInput = 1;
inline constexpr int kExitRuntime = 2;

struct DataConfig {
    std::string prices;
    std::string grid;
    std::string split;  // ISO timestamp; train takes steps before it, empty = all
};

struct ForecastConfig {
    std::string mode = "hourly";
    int window = 4;
};

struct EvalConfig {
    double near_zero = 1.0;
};

/// One JSON document driving a whole run. Every key has a default, unknown
/// keys are rejected with their path, and the fully resolved form is written
/// next to each command's outputs.
struct RunConfig {
    DataConfig data;
    int grid_rows = 3;  // hourly grid; the daily-block model works on 4x/6x
    int grid_cols = 3;
    ModelConfig model = ModelConfig::make(CaseTag::case1, 3, 3, 4);
    TrainConfig train = TrainConfig::defaults(CaseTag::case1);
    ForecastConfig forecast;
    EvalConfig eval;
    uint64_t seed = 0;

    static RunConfig from_json_file(const std::string& path);
    static RunConfig from_json_text(const std::string& text, const std::string& origin);
    std::string to_json_text() const;
    void validate() const;
};

/// Parses a SynthSpec JSON document, rejecting unknown keys.
SynthSpec synth_spec_from_file(const std::string& path);
std::string synth_spec_to_json_text(const SynthSpec& spec);

/// LMPFORGE_LOG = quiet | info | debug (default info).
void log_info(const std::string& msg);
void log_debug(const std::string& msg);

/// Subcommand bodies; the binary maps argv onto these. Each returns an exit
/// code and reports failures on stderr instead of throwing.
int cmd_synth(const std::string& spec_path, const std::string& out_dir,
              std::optional<uint64_t> seed);
int cmd_ingest(const std::string& data_csv, const std::string& grid_json,
               const std::string& case_name);
int cmd_train(const std::string& config_path, const std::string& out_dir,
              std::optional<uint64_t> seed);
int cmd_forecast(const std::string& config_path, const std::string& checkpoint_path,
                 const std::string& data_csv, const std::string& mode,
                 const std::string& out_csv);
int cmd_evaluate(const std::string& config_path, const std::string& forecast_csv,
                 const std::string& out_dir, const std::string& case_name);

}  // namespace lmpforge
