#pragma once

#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "lmpforge/data_pipeline.hpp"
#include "lmpforge/gan_models.hpp"
#include "lmpforge/tensor.hpp"

namespace lmpforge {

/// One rolled-forward step. Matrices are on the hourly grid in $/MWh;
/// `truth` is empty for steps past the end of the available data, and
/// `calibrated` equals `raw` until enough completed errors exist.
struct ForecastRecord {
    int64_t timestamp = 0;
    Tensor truth;
    Tensor raw;
    Tensor calibrated;
    bool calibrated_flag = false;

    bool has_truth() const { return !truth.empty(); }
};

struct ForecastSeries {
    std::vector<ForecastRecord> records;
    GridMap grid;
    int64_t step_seconds = kSecondsPerHour;
};

/// One $/MWh step ahead from the last `in_channels` ground-truth matrices,
/// stacked (rows, cols, channels): normalize, run the generator, denormalize.
Tensor forecast_next(Generator& g, const Tensor& history, const NormalizationParams& norm,
                     std::vector<std::string>* warnings = nullptr);

/// Moving-average bias corrector. Each completed step contributes the error
/// matrix raw - truth; `apply` subtracts the mean of the last `window` errors
/// and reports through `calibrated` whether enough history existed yet.
class Calibrator {
  public:
    explicit Calibrator(int window = 4);

    Tensor apply(const Tensor& raw, bool* calibrated = nullptr) const;
    void observe(const Tensor& raw, const Tensor& truth);

    int window() const { return window_; }
    int completed() const { return int(errors_.size()); }

  private:
    int window_;
    std::deque<Tensor> errors_;
};

enum class ForecastMode { hour_ahead, day_ahead };

ForecastMode forecast_mode_from_name(const std::string& name);
const char* forecast_mode_name(ForecastMode m);

/// Maps the normalized history stack for one position to the normalized
/// next-step matrix. The production predictor wraps the generator; tests
/// substitute oracles.
using PredictFn = std::function<Tensor(const Tensor& history)>;

/// Walks the test tensor chronologically, forecasting each step from the
/// `history_n` most recent ground-truth steps (never from prior forecasts)
/// and calibrating against realized errors. Emits one trailing record past
/// the end of the data whose truth column stays empty. In day-ahead mode
/// `test` is the merged feature tensor, `history_n` counts days, calibration
/// averages the past `window` daily error blocks, and every forecast day is
/// unpacked into 24 hourly records.
ForecastSeries rolling_forecast_with(const PredictFn& predict, const PriceTensor& test,
                                     const NormalizationParams& norm, ForecastMode mode,
                                     int history_n, int window = 4,
                                     std::vector<std::string>* warnings = nullptr);

ForecastSeries rolling_forecast(Generator& g, const PriceTensor& test,
                                const NormalizationParams& norm, ForecastMode mode,
                                int window = 4, std::vector<std::string>* warnings = nullptr);

/// Flat per-node view of a written forecast, one row per (timestamp, node).
struct ForecastRow {
    int64_t timestamp = 0;
    std::string node_id;
    bool has_truth = false;
    double truth = 0.0;
    double raw = 0.0;
    double calibrated = 0.0;
    bool calibrated_flag = false;
};

/// CSV columns: timestamp,node_id,ground_truth,forecast_raw,
/// forecast_calibrated,calibrated_flag. Nodes are emitted in row-major grid
/// order; an empty ground_truth field marks steps beyond the data.
void write_forecast_csv(const std::string& path, const ForecastSeries& series);
std::vector<ForecastRow> read_forecast_csv(const std::string& path);

}  // namespace lmpforge
