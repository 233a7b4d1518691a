#include "lmpforge/forecast.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "lmpforge/errors.hpp"
#include "lmpforge/textio.hpp"

namespace lmpforge {

Tensor forecast_next(Generator& g, const Tensor& history, const NormalizationParams& norm,
                     std::vector<std::string>* warnings) {
    if (history.empty()) throw UsageError("forecast_next: history is empty");
    require(history.rank() == 3, "forecast_next: history must be (rows, cols, channels)");
    const ModelConfig& cfg = g.cfg;
    require(history.dim(0) == cfg.rows && history.dim(1) == cfg.cols,
            "forecast_next: history grid " + std::to_string(history.dim(0)) + "x" +
                std::to_string(history.dim(1)) + " does not match the model grid");
    require(history.dim(2) == cfg.g_in_channels,
            "forecast_next: expected " + std::to_string(cfg.g_in_channels) +
                " history channels, got " + std::to_string(history.dim(2)));
    return denormalize(generator_forward(g, normalize(history, norm, warnings)), norm);
}

Calibrator::Calibrator(int window) : window_(window) {
    if (window < 1) throw ConfigError("calibration window must be at least 1");
}

Tensor Calibrator::apply(const Tensor& raw, bool* calibrated) const {
    if (int(errors_.size()) < window_) {
        if (calibrated) *calibrated = false;
        return raw;
    }
    if (calibrated) *calibrated = true;
    Tensor out = raw;
    for (const Tensor& e : errors_) {
        require(e.shape() == raw.shape(), "calibrate: error matrix shape changed mid-stream");
        for (int64_t i = 0; i < out.size(); ++i)
            out.data()[i] -= e.data()[i] / double(window_);
    }
    return out;
}

void Calibrator::observe(const Tensor& raw, const Tensor& truth) {
    require(raw.shape() == truth.shape(), "calibrate: raw and truth shapes differ");
    Tensor err(raw.shape());
    for (int64_t i = 0; i < err.size(); ++i) err.data()[i] = raw.data()[i] - truth.data()[i];
    errors_.push_back(std::move(err));
    while (int(errors_.size()) > window_) errors_.pop_front();
}

ForecastMode forecast_mode_from_name(const std::string& name) {
    if (name == "hourly" || name == "hour") return ForecastMode::hour_ahead;
    if (name == "daily" || name == "day") return ForecastMode::day_ahead;
    throw ConfigError("unknown forecast mode '" + name + "' (expected hourly or daily)");
}

const char* forecast_mode_name(ForecastMode m) {
    return m == ForecastMode::hour_ahead ? "hourly" : "daily";
}

namespace {

void check_uniform_stride(const PriceTensor& t, int64_t stride, const char* what) {
    for (size_t i = 1; i < t.time_index.size(); ++i)
        if (t.time_index[i] - t.time_index[i - 1] != stride)
            throw IngestError(std::string("rolling_forecast: ") + what +
                              " window is not contiguous at " +
                              format_timestamp(t.time_index[i]));
}

// Channel layouts match the training-sample builders exactly.
Tensor stack_hourly_history(const PriceTensor& t, int first, int n) {
    const int h = t.rows(), w = t.cols();
    Tensor x({h, w, n});
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            for (int i = 0; i < n; ++i)
                x.data()[(int64_t(r) * w + c) * n + i] = t.at(first + i, r, c);
    return x;
}

Tensor stack_merged_history(const PriceTensor& merged, int first_day, int n) {
    const int h = merged.rows(), w = merged.cols();
    Tensor x({h, w, 4 * n});
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            for (int i = 0; i < n; ++i)
                for (int f = 0; f < 4; ++f)
                    x.data()[(int64_t(r) * w + c) * 4 * n + 4 * i + f] =
                        merged.at(4 * (first_day + i) + f, r, c);
    return x;
}

Tensor untile_hour(const Tensor& block, int h, int m, int n) {
    Tensor out({m, n});
    const int br = h / 6, bc = h % 6;
    for (int r = 0; r < m; ++r)
        for (int c = 0; c < n; ++c)
            out.data()[int64_t(r) * n + c] =
                block.data()[int64_t(br * m + r) * block.dim(1) + (bc * n + c)];
    return out;
}

Tensor predict_step(const PredictFn& predict, const Tensor& x, int rows, int cols,
                    const NormalizationParams& norm) {
    Tensor raw_norm = predict(x);
    require(raw_norm.rank() == 2 && raw_norm.dim(0) == rows && raw_norm.dim(1) == cols,
            "rolling_forecast: predictor returned shape " + raw_norm.shape_str() +
                ", expected (" + std::to_string(rows) + ", " + std::to_string(cols) + ")");
    return denormalize(raw_norm, norm);
}

}  // namespace

ForecastSeries rolling_forecast_with(const PredictFn& predict, const PriceTensor& test,
                                     const NormalizationParams& norm, ForecastMode mode,
                                     int history_n, int window,
                                     std::vector<std::string>* warnings) {
    if (history_n < 1) throw ConfigError("rolling_forecast: history_n must be at least 1");

    ForecastSeries series;
    series.grid = test.grid;
    series.step_seconds = kSecondsPerHour;

    PriceTensor normed = normalize_prices(test, norm, warnings);
    Calibrator cal(window);

    if (mode == ForecastMode::hour_ahead) {
        require(test.granularity == Granularity::hourly,
                "rolling_forecast: hourly mode needs an hourly tensor");
        check_uniform_stride(test, kSecondsPerHour, "hourly");
        const int t_end = test.steps();
        if (t_end < history_n)
            throw UsageError("rolling_forecast: need at least " + std::to_string(history_n) +
                             " ground-truth steps, have " + std::to_string(t_end));
        for (int t = history_n; t <= t_end; ++t) {
            ForecastRecord rec;
            rec.raw = predict_step(predict, stack_hourly_history(normed, t - history_n, history_n),
                                   test.rows(), test.cols(), norm);
            rec.calibrated = cal.apply(rec.raw, &rec.calibrated_flag);
            if (t < t_end) {
                rec.truth = test.step(t);
                rec.timestamp = test.time_index[size_t(t)];
                cal.observe(rec.raw, rec.truth);
            } else {
                rec.timestamp = test.time_index[size_t(t_end - 1)] + kSecondsPerHour;
            }
            series.records.push_back(std::move(rec));
        }
        return series;
    }

    require(test.granularity == Granularity::daily_block,
            "rolling_forecast: daily mode needs the merged daily tensor");
    require(test.steps() % 4 == 0, "rolling_forecast: merged tensor steps not a multiple of 4");
    check_uniform_stride(test, 6 * kSecondsPerHour, "daily");
    const int m = test.grid.rows, n = test.grid.cols;
    require(test.rows() == 4 * m && test.cols() == 6 * n,
            "rolling_forecast: merged tensor shape does not match 4x6 tiling of the grid");
    const int days = test.steps() / 4;
    if (days < history_n)
        throw UsageError("rolling_forecast: need at least " + std::to_string(history_n) +
                         " ground-truth days, have " + std::to_string(days));
    for (int d = history_n; d <= days; ++d) {
        Tensor raw_block = predict_step(
            predict, stack_merged_history(normed, d - history_n, history_n), test.rows(),
            test.cols(), norm);
        bool flag = false;
        Tensor cal_block = cal.apply(raw_block, &flag);
        Tensor truth_block;
        int64_t day_start;
        if (d < days) {
            truth_block = test.step(4 * d);
            day_start = test.time_index[size_t(4 * d)];
            cal.observe(raw_block, truth_block);
        } else {
            day_start = test.time_index[0] + int64_t(d) * kSecondsPerDay;
        }
        for (int h = 0; h < 24; ++h) {
            ForecastRecord rec;
            rec.timestamp = day_start + h * kSecondsPerHour;
            rec.raw = untile_hour(raw_block, h, m, n);
            rec.calibrated = untile_hour(cal_block, h, m, n);
            rec.calibrated_flag = flag;
            if (!truth_block.empty()) rec.truth = untile_hour(truth_block, h, m, n);
            series.records.push_back(std::move(rec));
        }
    }
    return series;
}

ForecastSeries rolling_forecast(Generator& g, const PriceTensor& test,
                                const NormalizationParams& norm, ForecastMode mode,
                                int window, std::vector<std::string>* warnings) {
    const ModelConfig& cfg = g.cfg;
    require(test.rows() == cfg.rows && test.cols() == cfg.cols,
            "rolling_forecast: test grid " + std::to_string(test.rows()) + "x" +
                std::to_string(test.cols()) + " does not match the model grid " +
                std::to_string(cfg.rows) + "x" + std::to_string(cfg.cols));
    const int expected = mode == ForecastMode::hour_ahead ? cfg.history_n : 4 * cfg.history_n;
    require(cfg.g_in_channels == expected,
            "rolling_forecast: model expects " + std::to_string(cfg.g_in_channels) +
                " input channels, mode provides " + std::to_string(expected));
    PredictFn predict = [&g](const Tensor& x) { return generator_forward(g, x); };
    return rolling_forecast_with(predict, test, norm, mode, cfg.history_n, window, warnings);
}

void write_forecast_csv(const std::string& path, const ForecastSeries& series) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IngestError("cannot write forecast csv: " + path);
    out << "timestamp,node_id,ground_truth,forecast_raw,forecast_calibrated,calibrated_flag\n";
    const GridMap& grid = series.grid;
    for (const ForecastRecord& rec : series.records) {
        for (int r = 0; r < grid.rows; ++r)
            for (int c = 0; c < grid.cols; ++c) {
                const int64_t i = int64_t(r) * grid.cols + c;
                out << format_timestamp(rec.timestamp) << ',' << grid.node_at(r, c) << ',';
                if (rec.has_truth()) out << fmt_double(rec.truth.data()[i]);
                out << ',' << fmt_double(rec.raw.data()[i]) << ','
                    << fmt_double(rec.calibrated.data()[i]) << ','
                    << (rec.calibrated_flag ? '1' : '0') << '\n';
            }
    }
    if (!out) throw IngestError("write failed for forecast csv: " + path);
}

std::vector<ForecastRow> read_forecast_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestError("cannot open forecast csv: " + path);
    std::string line;
    if (!std::getline(in, line)) throw IngestError("forecast csv is empty: " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "timestamp,node_id,ground_truth,forecast_raw,forecast_calibrated,calibrated_flag")
        throw IngestError("forecast csv header mismatch: " + line);

    std::vector<ForecastRow> rows;
    size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) f.push_back(field);
        if (!line.empty() && line.back() == ',') f.push_back("");
        if (f.size() != 6)
            throw IngestError("forecast csv line " + std::to_string(lineno) + ": expected 6 fields, got " +
                              std::to_string(f.size()));
        ForecastRow row;
        row.timestamp = parse_timestamp(f[0]);
        row.node_id = f[1];
        row.has_truth = !f[2].empty();
        if (row.has_truth) row.truth = parse_double(f[2], "forecast csv ground_truth");
        row.raw = parse_double(f[3], "forecast csv forecast_raw");
        row.calibrated = parse_double(f[4], "forecast csv forecast_calibrated");
        if (f[5] == "1")
            row.calibrated_flag = true;
        else if (f[5] == "0")
            row.calibrated_flag = false;
        else
            throw IngestError("forecast csv line " + std::to_string(lineno) +
                              ": calibrated_flag must be 0 or 1");
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace lmpforge
