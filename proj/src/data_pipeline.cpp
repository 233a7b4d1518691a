#include "lmpforge/data_pipeline.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>

#include "json.hpp"
#include "lmpforge/errors.hpp"
#include "lmpforge/textio.hpp"

namespace lmpforge {

using nlohmann::json;

GridMap GridMap::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IngestError("cannot open grid map: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw IngestError("grid map " + path + " is not valid JSON: " + e.what());
    }
    GridMap g;
    try {
        g.rows = j.at("rows").get<int>();
        g.cols = j.at("cols").get<int>();
        for (const auto& [id, pos] : j.at("nodes").items())
            g.nodes[id] = {pos.at(0).get<int>(), pos.at(1).get<int>()};
    } catch (const json::exception& e) {
        throw IngestError("grid map " + path + " has unexpected structure: " + e.what());
    }
    g.validate();
    return g;
}

void GridMap::save(const std::string& path) const {
    json nodes_j = json::object();
    for (const auto& [id, pos] : nodes) nodes_j[id] = {pos.first, pos.second};
    json j{{"rows", rows}, {"cols", cols}, {"nodes", nodes_j}};
    std::ofstream out(path);
    if (!out) throw IngestError("cannot write grid map: " + path);
    out << j.dump(2) << "\n";
}

void GridMap::validate() const {
    require(rows > 0 && cols > 0, "grid map: rows and cols must be positive");
    require(int(nodes.size()) == rows * cols,
            "grid map: " + std::to_string(nodes.size()) + " nodes != " + std::to_string(rows) +
                "x" + std::to_string(cols));
    std::vector<int> seen(size_t(rows) * cols, 0);
    for (const auto& [id, pos] : nodes) {
        require(pos.first >= 0 && pos.first < rows && pos.second >= 0 && pos.second < cols,
                "grid map: node " + id + " is outside the grid");
        int& cell = seen[size_t(pos.first) * cols + pos.second];
        require(cell == 0, "grid map: duplicate placement at (" + std::to_string(pos.first) +
                               "," + std::to_string(pos.second) + ")");
        cell = 1;
    }
}

const std::pair<int, int>& GridMap::at(const std::string& node_id) const {
    auto it = nodes.find(node_id);
    if (it == nodes.end()) throw IngestError("unknown node_id: " + node_id);
    return it->second;
}

const std::string& GridMap::node_at(int row, int col) const {
    for (const auto& [id, pos] : nodes)
        if (pos.first == row && pos.second == col) return id;
    throw IngestError("no node at (" + std::to_string(row) + "," + std::to_string(col) + ")");
}

Tensor PriceTensor::step(int t) const {
    require(t >= 0 && t < steps(), "step index " + std::to_string(t) + " out of range");
    const double* base = values.data() + int64_t(t) * rows() * cols();
    return Tensor::from({rows(), cols()}, std::vector<double>(base, base + rows() * cols()));
}

void PriceTensor::set_step(int t, const Tensor& m) {
    require(t >= 0 && t < steps(), "step index " + std::to_string(t) + " out of range");
    require(m.rank() == 2 && m.dim(0) == rows() && m.dim(1) == cols(),
            "step shape " + m.shape_str() + " does not match grid");
    std::copy(m.data(), m.data() + m.size(), values.data() + int64_t(t) * rows() * cols());
}

const PriceTensor& FeatureSet::by_index(int i) const {
    switch (i) {
        case 0: return rtlmp;
        case 1: return dalmp;
        case 2: return demand;
        default: return genmix;
    }
}

PriceTensor& FeatureSet::by_index(int i) {
    switch (i) {
        case 0: return rtlmp;
        case 1: return dalmp;
        case 2: return demand;
        default: return genmix;
    }
}

namespace {

struct CsvRow {
    int64_t ts;
    std::string node;
    double value;
};

struct ParsedCsv {
    // per feature name, rows in file order
    std::map<std::string, std::vector<CsvRow>> rows;
};

double parse_value(const std::string& field, int line_no) {
    double v = 0.0;
    const char* first = field.data();
    const char* last = field.data() + field.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last)
        throw IngestError("row " + std::to_string(line_no) + ": bad numeric value '" + field +
                          "'");
    if (!std::isfinite(v))
        throw IngestError("row " + std::to_string(line_no) + ": non-finite value");
    return v;
}

ParsedCsv parse_price_csv(const std::string& csv_path, const GridMap& grid) {
    std::ifstream in(csv_path);
    if (!in) throw IngestError("cannot open price CSV: " + csv_path);
    std::string line;
    int line_no = 0;
    if (!std::getline(in, line)) throw IngestError("empty price CSV: " + csv_path);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "timestamp,node_id,feature,value")
        throw IngestError("row 1: expected header 'timestamp,node_id,feature,value', got '" +
                          line + "'");

    ParsedCsv out;
    // last timestamp seen per (feature, node), for monotonicity
    std::map<std::string, std::map<std::string, int64_t>> last_ts;
    const auto& known = feature_names();
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::array<std::string, 4> fields;
        size_t start = 0;
        for (int f = 0; f < 4; ++f) {
            const size_t comma = line.find(',', start);
            if (f < 3) {
                if (comma == std::string::npos)
                    throw IngestError("row " + std::to_string(line_no) +
                                      ": expected 4 comma-separated fields");
                fields[f] = line.substr(start, comma - start);
                start = comma + 1;
            } else {
                if (comma != std::string::npos)
                    throw IngestError("row " + std::to_string(line_no) +
                                      ": expected 4 comma-separated fields");
                fields[f] = line.substr(start);
            }
        }
        int64_t ts;
        try {
            ts = parse_timestamp(fields[0]);
        } catch (const IngestError& e) {
            throw IngestError("row " + std::to_string(line_no) + ": " + e.what());
        }
        if (grid.nodes.find(fields[1]) == grid.nodes.end())
            throw IngestError("row " + std::to_string(line_no) + ": unknown node_id '" +
                              fields[1] + "'");
        if (std::find(known.begin(), known.end(), fields[2]) == known.end())
            throw IngestError("row " + std::to_string(line_no) + ": unknown feature '" +
                              fields[2] + "'");
        const double v = parse_value(fields[3], line_no);
        auto& prev = last_ts[fields[2]];
        auto it = prev.find(fields[1]);
        if (it != prev.end() && ts <= it->second)
            throw IngestError("row " + std::to_string(line_no) +
                              ": non-monotone timestamp for node " + fields[1]);
        prev[fields[1]] = ts;
        out.rows[fields[2]].push_back({ts, fields[1], v});
    }
    return out;
}

PriceTensor assemble_feature(const std::vector<CsvRow>& rows, const GridMap& grid,
                             const std::string& feature, std::vector<std::string>* warnings) {
    if (rows.empty()) throw IngestError("no rows for feature " + feature);
    int64_t t0 = rows[0].ts, t1 = rows[0].ts;
    for (const CsvRow& r : rows) {
        t0 = std::min(t0, r.ts);
        t1 = std::max(t1, r.ts);
    }
    for (const CsvRow& r : rows)
        if ((r.ts - t0) % kSecondsPerHour != 0)
            throw IngestError(feature + ": timestamp " + format_timestamp(r.ts) +
                              " is not on the hourly grid");
    const int64_t t_count = (t1 - t0) / kSecondsPerHour + 1;
    require(t_count <= std::numeric_limits<int>::max(), "time range too large");

    PriceTensor pt;
    pt.grid = grid;
    pt.granularity = Granularity::hourly;
    pt.values = Tensor({int(t_count), grid.rows, grid.cols});
    pt.values.fill(std::numeric_limits<double>::quiet_NaN());
    pt.time_index.resize(size_t(t_count));
    for (int64_t t = 0; t < t_count; ++t) pt.time_index[size_t(t)] = t0 + t * kSecondsPerHour;

    for (const CsvRow& r : rows) {
        const auto& [gr, gc] = grid.at(r.node);
        pt.at(int((r.ts - t0) / kSecondsPerHour), gr, gc) = r.value;
    }

    // Gap policy: runs of up to 3 missing steps between observed values are
    // linearly interpolated; anything longer, or missing edges, is an error.
    for (const auto& [node, pos] : grid.nodes) {
        const auto& [gr, gc] = pos;
        int t = 0;
        while (t < pt.steps()) {
            if (!std::isnan(pt.at(t, gr, gc))) {
                ++t;
                continue;
            }
            int end = t;
            while (end < pt.steps() && std::isnan(pt.at(end, gr, gc))) ++end;
            const int run = end - t;
            if (t == 0 || end == pt.steps() || run > 3)
                throw IngestError(feature + ": node " + node + " missing " +
                                  std::to_string(run) + " step(s) starting " +
                                  format_timestamp(pt.time_index[size_t(t)]) +
                                  " (fillable gaps are interior and at most 3 steps)");
            const double lo = pt.at(t - 1, gr, gc), hi = pt.at(end, gr, gc);
            for (int i = 0; i < run; ++i)
                pt.at(t + i, gr, gc) = lo + (hi - lo) * double(i + 1) / double(run + 1);
            if (warnings)
                warnings->push_back(feature + ": node " + node + ": interpolated " +
                                    std::to_string(run) + " step(s) at " +
                                    format_timestamp(pt.time_index[size_t(t)]));
            t = end;
        }
    }
    return pt;
}

}  // namespace

PriceTensor load_price_csv(const std::string& csv_path, const std::string& grid_path,
                           const std::string& feature, std::vector<std::string>* warnings) {
    GridMap grid = GridMap::load(grid_path);
    ParsedCsv parsed = parse_price_csv(csv_path, grid);
    auto it = parsed.rows.find(feature);
    if (it == parsed.rows.end())
        throw IngestError("no rows for feature " + feature + " in " + csv_path);
    return assemble_feature(it->second, grid, feature, warnings);
}

FeatureSet load_feature_set(const std::string& csv_path, const std::string& grid_path,
                            std::vector<std::string>* warnings) {
    GridMap grid = GridMap::load(grid_path);
    ParsedCsv parsed = parse_price_csv(csv_path, grid);
    FeatureSet fs;
    for (int f = 0; f < 4; ++f) {
        const std::string& name = feature_names()[size_t(f)];
        auto it = parsed.rows.find(name);
        if (it == parsed.rows.end())
            throw IngestError("no rows for feature " + name + " in " + csv_path);
        fs.by_index(f) = assemble_feature(it->second, grid, name, warnings);
    }
    for (int f = 1; f < 4; ++f)
        require(fs.by_index(f).time_index == fs.rtlmp.time_index,
                "feature " + feature_names()[size_t(f)] + " time range differs from RTLMP");
    return fs;
}

void save_price_csv(const std::string& path, const FeatureSet& features) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IngestError("cannot write price csv: " + path);
    out << "timestamp,node_id,feature,value\n";
    for (int f = 0; f < 4; ++f) {
        const PriceTensor& t = features.by_index(f);
        const std::string& name = feature_names()[size_t(f)];
        for (int s = 0; s < t.steps(); ++s) {
            const std::string stamp = format_timestamp(t.time_index[size_t(s)]);
            for (int r = 0; r < t.rows(); ++r)
                for (int c = 0; c < t.cols(); ++c)
                    out << stamp << ',' << t.grid.node_at(r, c) << ',' << name << ','
                        << fmt_double(t.at(s, r, c)) << '\n';
        }
    }
    if (!out) throw IngestError("write failed for price csv: " + path);
}

PriceTensor slice_time(const PriceTensor& t, int64_t from_inclusive, int64_t to_exclusive) {
    if (from_inclusive >= to_exclusive) throw UsageError("slice_time: empty time range");
    int first = t.steps(), last = 0;
    for (int s = 0; s < t.steps(); ++s) {
        const int64_t at = t.time_index[size_t(s)];
        if (at >= from_inclusive && at < to_exclusive) {
            first = std::min(first, s);
            last = std::max(last, s + 1);
        }
    }
    if (first >= last)
        throw IngestError("slice_time: no steps in [" + format_timestamp(from_inclusive) +
                          ", " + format_timestamp(to_exclusive) + ")");
    PriceTensor out;
    out.grid = t.grid;
    out.granularity = t.granularity;
    out.values = Tensor({last - first, t.rows(), t.cols()});
    out.time_index.assign(t.time_index.begin() + first, t.time_index.begin() + last);
    std::copy(t.values.data() + int64_t(first) * t.rows() * t.cols(),
              t.values.data() + int64_t(last) * t.rows() * t.cols(), out.values.data());
    return out;
}

PriceTensor build_daily_tensor(const PriceTensor& hourly) {
    require(hourly.granularity == Granularity::hourly, "build_daily_tensor needs hourly input");
    const int t = hourly.steps();
    require(t > 0 && t % 24 == 0,
            "hourly step count " + std::to_string(t) + " is not divisible by 24");
    const int days = t / 24, m = hourly.rows(), n = hourly.cols();
    PriceTensor daily;
    daily.grid = hourly.grid;
    daily.granularity = Granularity::daily_block;
    daily.values = Tensor({days, 4 * m, 6 * n});
    daily.time_index.resize(size_t(days));
    for (int d = 0; d < days; ++d) {
        daily.time_index[size_t(d)] = hourly.time_index[size_t(d) * 24];
        for (int h = 0; h < 24; ++h) {
            const int br = h / 6, bc = h % 6;
            for (int r = 0; r < m; ++r)
                for (int c = 0; c < n; ++c)
                    daily.at(d, br * m + r, bc * n + c) = hourly.at(d * 24 + h, r, c);
        }
    }
    return daily;
}

PriceTensor unbuild_daily_tensor(const PriceTensor& daily) {
    require(daily.granularity == Granularity::daily_block,
            "unbuild_daily_tensor needs a daily-block input");
    const int m = daily.grid.rows, n = daily.grid.cols;
    require(daily.rows() == 4 * m && daily.cols() == 6 * n,
            "daily tensor shape does not match 4x6 tiling of the grid");
    const int days = daily.steps();
    PriceTensor hourly;
    hourly.grid = daily.grid;
    hourly.granularity = Granularity::hourly;
    hourly.values = Tensor({days * 24, m, n});
    hourly.time_index.resize(size_t(days) * 24);
    for (int d = 0; d < days; ++d)
        for (int h = 0; h < 24; ++h) {
            hourly.time_index[size_t(d) * 24 + h] =
                daily.time_index[size_t(d)] + h * kSecondsPerHour;
            const int br = h / 6, bc = h % 6;
            for (int r = 0; r < m; ++r)
                for (int c = 0; c < n; ++c)
                    hourly.at(d * 24 + h, r, c) = daily.at(d, br * m + r, bc * n + c);
        }
    return hourly;
}

PriceTensor merge_feature_tensors(const FeatureSet& f) {
    for (int i = 0; i < 4; ++i) {
        const PriceTensor& t = f.by_index(i);
        require(t.granularity == Granularity::daily_block,
                "merge: feature " + feature_names()[size_t(i)] + " is not a daily-block tensor");
        require(t.values.shape() == f.rtlmp.values.shape(),
                "merge: feature " + feature_names()[size_t(i)] + " shape mismatch");
        require(t.time_index == f.rtlmp.time_index,
                "merge: feature " + feature_names()[size_t(i)] + " time index mismatch");
    }
    const int days = f.rtlmp.steps(), h = f.rtlmp.rows(), w = f.rtlmp.cols();
    PriceTensor merged;
    merged.grid = f.rtlmp.grid;
    merged.granularity = Granularity::daily_block;
    merged.values = Tensor({4 * days, h, w});
    merged.time_index.resize(size_t(days) * 4);
    const int64_t start = f.rtlmp.time_index.empty() ? 0 : f.rtlmp.time_index[0];
    for (int d = 0; d < days; ++d)
        for (int fi = 0; fi < 4; ++fi) {
            const int s = 4 * d + fi;
            merged.time_index[size_t(s)] = start + int64_t(s) * 6 * kSecondsPerHour;
            const double* src = f.by_index(fi).values.data() + int64_t(d) * h * w;
            std::copy(src, src + h * w, merged.values.data() + int64_t(s) * h * w);
        }
    return merged;
}

FeatureSet unmerge_feature_tensors(const PriceTensor& merged) {
    require(merged.steps() % 4 == 0,
            "unmerge: step count " + std::to_string(merged.steps()) + " is not a multiple of 4");
    const int days = merged.steps() / 4, h = merged.rows(), w = merged.cols();
    FeatureSet fs;
    for (int fi = 0; fi < 4; ++fi) {
        PriceTensor& t = fs.by_index(fi);
        t.grid = merged.grid;
        t.granularity = Granularity::daily_block;
        t.values = Tensor({days, h, w});
        t.time_index.resize(size_t(days));
        for (int d = 0; d < days; ++d) {
            t.time_index[size_t(d)] = merged.time_index[size_t(4 * d)];
            const double* src = merged.values.data() + int64_t(4 * d + fi) * h * w;
            std::copy(src, src + h * w, t.values.data() + int64_t(d) * h * w);
        }
    }
    return fs;
}

void NormalizationParams::save(const std::string& path) const {
    json j{{"data_min", data_min}, {"shifted_max", shifted_max}};
    std::ofstream out(path);
    if (!out) throw IngestError("cannot write normalization params: " + path);
    out << j.dump(2) << "\n";
}

NormalizationParams NormalizationParams::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IngestError("cannot open normalization params: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw IngestError("normalization params " + path + ": " + e.what());
    }
    NormalizationParams p;
    try {
        p.data_min = j.at("data_min").get<double>();
        p.shifted_max = j.at("shifted_max").get<double>();
    } catch (const json::exception& e) {
        throw IngestError("normalization params " + path + ": " + e.what());
    }
    require(p.shifted_max >= 1.0, "normalization params: shifted_max must be >= 1");
    return p;
}

NormalizationParams fit_normalization(const Tensor& values) {
    require(!values.empty(), "fit_normalization: empty tensor");
    require(values.all_finite(), "fit_normalization: non-finite values");
    NormalizationParams p;
    p.data_min = values.min();
    p.shifted_max = values.max() - p.data_min + 1.0;
    return p;
}

double normalize_value(double x, const NormalizationParams& p, bool* clamped) {
    const double half_log = 0.5 * std::log(p.shifted_max);
    double shifted = x - p.data_min + 1.0;
    if (shifted <= 0.0) {
        shifted = 1e-6;
        if (clamped) *clamped = true;
    }
    return (std::log(shifted) - half_log) / half_log;
}

double denormalize_value(double x_norm, const NormalizationParams& p) {
    const double half_log = 0.5 * std::log(p.shifted_max);
    return std::exp((x_norm + 1.0) * half_log) + p.data_min - 1.0;
}

Tensor normalize(const Tensor& x, const NormalizationParams& p,
                 std::vector<std::string>* warnings) {
    require(p.shifted_max > 1.0,
            "normalize: degenerate range (constant training data, shifted_max == 1)");
    Tensor out(x.shape());
    int64_t clamped_count = 0;
    for (int64_t i = 0; i < x.size(); ++i) {
        bool clamped = false;
        out.data()[i] = normalize_value(x.data()[i], p, &clamped);
        if (clamped) ++clamped_count;
    }
    if (clamped_count > 0 && warnings)
        warnings->push_back("normalize: clamped " + std::to_string(clamped_count) +
                            " value(s) at or below training minimum - 1");
    return out;
}

Tensor denormalize(const Tensor& x_norm, const NormalizationParams& p) {
    Tensor out(x_norm.shape());
    for (int64_t i = 0; i < x_norm.size(); ++i)
        out.data()[i] = denormalize_value(x_norm.data()[i], p);
    return out;
}

PriceTensor normalize_prices(const PriceTensor& t, const NormalizationParams& p,
                             std::vector<std::string>* warnings) {
    PriceTensor out = t;
    out.values = normalize(t.values, p, warnings);
    return out;
}

std::vector<WindowSample> window_samples(const PriceTensor& t, int history_n) {
    require(history_n >= 1, "window_samples: history_n must be >= 1");
    if (t.steps() <= history_n)
        throw IngestError("window_samples: need more than " + std::to_string(history_n) +
                          " steps, have " + std::to_string(t.steps()));
    const int h = t.rows(), w = t.cols();
    std::vector<WindowSample> out;
    out.reserve(size_t(t.steps() - history_n));
    for (int s = 0; s + history_n < t.steps(); ++s) {
        WindowSample ws;
        ws.x = Tensor({h, w, history_n});
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c)
                for (int i = 0; i < history_n; ++i)
                    ws.x.data()[(int64_t(r) * w + c) * history_n + i] = t.at(s + i, r, c);
        ws.y = t.step(s + history_n);
        ws.y_time = t.time_index[size_t(s + history_n)];
        out.push_back(std::move(ws));
    }
    return out;
}

std::vector<TrainSample> make_case1_samples(const PriceTensor& normalized_hourly,
                                            int history_n) {
    std::vector<TrainSample> out;
    for (WindowSample& ws : window_samples(normalized_hourly, history_n)) {
        TrainSample s;
        s.x_g = ws.x;
        s.x_d = ws.x;
        s.y = std::move(ws.y);
        s.y_time = ws.y_time;
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<TrainSample> make_case2_samples(const PriceTensor& merged, int history_n) {
    require(history_n >= 1, "make_case2_samples: history_n must be >= 1");
    require(merged.steps() % 4 == 0, "make_case2_samples: merged tensor steps not a multiple of 4");
    const int days = merged.steps() / 4;
    if (days <= history_n)
        throw IngestError("make_case2_samples: need more than " + std::to_string(history_n) +
                          " days, have " + std::to_string(days));
    const int h = merged.rows(), w = merged.cols();
    std::vector<TrainSample> out;
    out.reserve(size_t(days - history_n));
    for (int d = 0; d + history_n < days; ++d) {
        TrainSample s;
        s.x_g = Tensor({h, w, 4 * history_n});
        s.x_d = Tensor({h, w, history_n});
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) {
                for (int i = 0; i < history_n; ++i) {
                    for (int f = 0; f < 4; ++f)
                        s.x_g.data()[(int64_t(r) * w + c) * 4 * history_n + 4 * i + f] =
                            merged.at(4 * (d + i) + f, r, c);
                    s.x_d.data()[(int64_t(r) * w + c) * history_n + i] =
                        merged.at(4 * (d + i), r, c);
                }
            }
        const int target = 4 * (d + history_n);
        s.y = merged.step(target);
        s.y_time = merged.time_index[size_t(target)];
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace lmpforge
