#pragma once

#include <map>
#include <string>
#include <vector>

#include "lmpforge/tensor.hpp"
#include "lmpforge/timeutil.hpp"

namespace lmpforge {

/// Placement of price nodes on the m x n grid, loaded from a JSON map.
struct GridMap {
    int rows = 0;
    int cols = 0;
    std::map<std::string, std::pair<int, int>> nodes;

    static GridMap load(const std::string& path);
    void save(const std::string& path) const;
    void validate() const;
    const std::pair<int, int>& at(const std::string& node_id) const;
    /// Node id occupying (row, col); grid cells are bijective with nodes.
    const std::string& node_at(int row, int col) const;
};

enum class Granularity { hourly, daily_block };

/// One feature's prices on the grid over time. values is (T, rows, cols);
/// time_index holds each step's epoch seconds.
struct PriceTensor {
    Tensor values;
    std::vector<int64_t> time_index;
    GridMap grid;
    Granularity granularity = Granularity::hourly;

    int steps() const { return values.empty() ? 0 : values.dim(0); }
    int rows() const { return values.dim(1); }
    int cols() const { return values.dim(2); }
    double at(int t, int r, int c) const {
        return values.data()[(int64_t(t) * rows() + r) * cols() + c];
    }
    double& at(int t, int r, int c) {
        return values.data()[(int64_t(t) * rows() + r) * cols() + c];
    }
    Tensor step(int t) const;
    void set_step(int t, const Tensor& m);
};

inline const std::vector<std::string>& feature_names() {
    static const std::vector<std::string> names = {"RTLMP", "DALMP", "DEMAND", "GENMIX"};
    return names;
}

/// Loads one feature's hourly series from a `timestamp,node_id,feature,value`
/// CSV. Gaps of up to 3 consecutive steps are linearly interpolated with a
/// note appended to `warnings`; anything worse is an IngestError.
PriceTensor load_price_csv(const std::string& csv_path, const std::string& grid_path,
                           const std::string& feature,
                           std::vector<std::string>* warnings = nullptr);

/// All four Case-2 features from one CSV, single pass.
struct FeatureSet {
    PriceTensor rtlmp, dalmp, demand, genmix;
    const PriceTensor& by_index(int i) const;
    PriceTensor& by_index(int i);
};
FeatureSet load_feature_set(const std::string& csv_path, const std::string& grid_path,
                            std::vector<std::string>* warnings = nullptr);

/// Writes the `timestamp,node_id,feature,value` CSV that the loaders consume;
/// values survive the round trip bit-exactly.
void save_price_csv(const std::string& path, const FeatureSet& features);

/// Steps with from_inclusive <= time < to_exclusive, preserving order.
PriceTensor slice_time(const PriceTensor& t, int64_t from_inclusive, int64_t to_exclusive);

/// Tiles each day's 24 hourly m x n matrices into a 4m x 6n block matrix;
/// hour h lands at block row h/6, block column h%6.
PriceTensor build_daily_tensor(const PriceTensor& hourly);
PriceTensor unbuild_daily_tensor(const PriceTensor& daily);

/// Interleaves four daily-block tensors per day in the order RTLMP, DALMP,
/// DEMAND, GENMIX: slice 4d+f is feature f of day d. The synthetic time
/// index advances 6 hours per slice so four slices span one day.
PriceTensor merge_feature_tensors(const FeatureSet& daily_features);
FeatureSet unmerge_feature_tensors(const PriceTensor& merged);

/// Log-range normalization parameters, fit on training data only.
struct NormalizationParams {
    double data_min = 0.0;
    double shifted_max = 1.0;

    void save(const std::string& path) const;
    static NormalizationParams load(const std::string& path);
};

NormalizationParams fit_normalization(const Tensor& values);

/// x_norm = (ln(x - data_min + 1) - ln(S)/2) / (ln(S)/2), S = shifted_max.
/// The training minimum maps to exactly -1 and the maximum to exactly +1.
/// Values at or below (data_min - 1) clamp the shifted value to 1e-6 and
/// append a note to `warnings`.
Tensor normalize(const Tensor& x, const NormalizationParams& p,
                 std::vector<std::string>* warnings = nullptr);
Tensor denormalize(const Tensor& x_norm, const NormalizationParams& p);
double normalize_value(double x, const NormalizationParams& p, bool* clamped = nullptr);
double denormalize_value(double x_norm, const NormalizationParams& p);

PriceTensor normalize_prices(const PriceTensor& t, const NormalizationParams& p,
                             std::vector<std::string>* warnings = nullptr);

/// Chronological overlapping (history window, next step) pairs.
struct WindowSample {
    Tensor x;  // (rows, cols, history_n), channel i is step t+i
    Tensor y;  // (rows, cols), step t+history_n
    int64_t y_time = 0;
};
std::vector<WindowSample> window_samples(const PriceTensor& t, int history_n);

/// One training sample as the networks consume it.
struct TrainSample {
    Tensor x_g;  // generator input channels
    Tensor x_d;  // discriminator history channels (RTLMP only)
    Tensor y;    // target next-step matrix
    int64_t y_time = 0;
};

/// Case 1: x_g == x_d == history_n hourly RTLMP channels.
std::vector<TrainSample> make_case1_samples(const PriceTensor& normalized_hourly, int history_n);

/// Case 2: on the merged daily tensor, x_g is history_n days x 4 features
/// (16 channels), x_d the history_n RTLMP channels, y the next day's RTLMP.
std::vector<TrainSample> make_case2_samples(const PriceTensor& merged, int history_n);

}  // namespace lmpforge
