#include "lmpforge/trainer.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "lmpforge/errors.hpp"
#include "lmpforge/textio.hpp"

#include "json.hpp"

namespace lmpforge {

using nlohmann::json;

TrainConfig TrainConfig::defaults(CaseTag tag) {
    TrainConfig cfg;
    cfg.tag = tag;
    if (tag == CaseTag::case1) {
        cfg.rho_d = 0.0005;
        cfg.rho_g = 0.0005;
    } else {
        cfg.rho_d = 0.00001;
        cfg.rho_g = 0.000005;
    }
    return cfg;
}

void TrainConfig::validate() const {
    auto bad = [](const std::string& msg) { throw ConfigError("train config: " + msg); };
    if (!(rho_d > 0.0) || !(rho_g > 0.0)) bad("learning rates must be positive");
    if (minibatch < 1) bad("minibatch size must be at least 1");
    if (history_n < 1) bad("history window must be at least 1");
    if (max_iterations < 0) bad("max_iterations must be non-negative");
    if (checkpoint_every < 0) bad("checkpoint_every must be non-negative");
    if (convergence_window < 1) bad("convergence window must be at least 1");
    if (!(convergence_threshold > 0.0)) bad("convergence threshold must be positive");
    check_weights(weights);
}

const char* TrainLog::csv_header() {
    return "iteration,d_loss,g_total,g_adv,g_lp,g_gdl,d_real_mean,d_fake_mean,seconds";
}

std::string train_record_csv(const TrainRecord& r) {
    std::string line = std::to_string(r.iteration);
    for (double v : {r.d_loss, r.g_total, r.g_adv, r.g_lp, r.g_gdl, r.d_real_mean,
                     r.d_fake_mean, r.seconds}) {
        line += ',';
        line += fmt_double(v);
    }
    return line;
}

std::vector<int> sample_minibatch(size_t dataset_size, int m, Rng& rng) {
    if (dataset_size == 0) throw TrainError("sample_minibatch: empty dataset");
    require(m >= 1, "sample_minibatch: batch size must be at least 1");
    std::vector<int> idx(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) idx[size_t(i)] = int(rng.index(dataset_size));
    return idx;
}

namespace {

// Dropout stream tags: one per discriminator forward within an iteration.
constexpr uint64_t kDropRealPhase = 0;
constexpr uint64_t kDropFakePhase = 1;
constexpr uint64_t kDropGenPhase = 2;

Tensor stack_generator_input(const std::vector<TrainSample>& data, const std::vector<int>& idx) {
    const Tensor& first = data[size_t(idx[0])].x_g;
    Tensor out({int(idx.size()), first.dim(0), first.dim(1), first.dim(2)});
    const int64_t per = first.size();
    for (size_t i = 0; i < idx.size(); ++i)
        std::memcpy(out.data() + int64_t(i) * per, data[size_t(idx[i])].x_g.data(),
                    size_t(per) * sizeof(double));
    return out;
}

Tensor stack_targets(const std::vector<TrainSample>& data, const std::vector<int>& idx) {
    const Tensor& first = data[size_t(idx[0])].y;
    Tensor out({int(idx.size()), first.dim(0), first.dim(1)});
    const int64_t per = first.size();
    for (size_t i = 0; i < idx.size(); ++i)
        std::memcpy(out.data() + int64_t(i) * per, data[size_t(idx[i])].y.data(),
                    size_t(per) * sizeof(double));
    return out;
}

Tensor stack_history(const std::vector<TrainSample>& data, const std::vector<int>& idx) {
    const Tensor& first = data[size_t(idx[0])].x_d;
    Tensor out({int(idx.size()), first.dim(0), first.dim(1), first.dim(2)});
    const int64_t per = first.size();
    for (size_t i = 0; i < idx.size(); ++i)
        std::memcpy(out.data() + int64_t(i) * per, data[size_t(idx[i])].x_d.data(),
                    size_t(per) * sizeof(double));
    return out;
}

/// Interleaves each sample's history channels with one candidate channel.
/// candidates is (M,H,W,1) generator output, or null to use the true targets.
Tensor stack_pairs(const std::vector<TrainSample>& data, const std::vector<int>& idx,
                   const Tensor* candidates) {
    const Tensor& h0 = data[size_t(idx[0])].x_d;
    const int rows = h0.dim(0), cols = h0.dim(1), ch = h0.dim(2);
    Tensor out({int(idx.size()), rows, cols, ch + 1});
    for (size_t i = 0; i < idx.size(); ++i) {
        const TrainSample& s = data[size_t(idx[i])];
        const double* cand = candidates ? candidates->data() + int64_t(i) * rows * cols
                                        : s.y.data();
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) {
                const int64_t cell = int64_t(r) * cols + c;
                double* dst = out.data() + ((int64_t(i) * rows + r) * cols + c) * (ch + 1);
                const double* src = s.x_d.data() + cell * ch;
                for (int k = 0; k < ch; ++k) dst[k] = src[k];
                dst[ch] = cand[cell];
            }
    }
    return out;
}

double mean_of(const Tensor& t) {
    double acc = 0.0;
    for (int64_t i = 0; i < t.size(); ++i) acc += t.data()[i];
    return acc / double(t.size());
}

VarId sum_nodes(Graph& g, const std::vector<VarId>& nodes) {
    VarId acc = nodes[0];
    for (size_t i = 1; i < nodes.size(); ++i) acc = g.add(acc, nodes[i]);
    return acc;
}

}  // namespace

Trainer::Trainer(TrainConfig cfg, ModelConfig mcfg)
    : cfg_(std::move(cfg)), mcfg_(std::move(mcfg)) {
    mcfg_.validate();
    require(cfg_.tag == mcfg_.tag, "trainer: case tag mismatch between train and model configs");
    require(cfg_.history_n == mcfg_.history_n,
            "trainer: history window mismatch between train and model configs");
    Rng g_rng(mix64(cfg_.seed, 1));
    Rng d_rng(mix64(cfg_.seed, 2));
    gen_ = build_generator(mcfg_, g_rng);
    dis_ = build_discriminator(mcfg_, d_rng);
    draw_rng_ = Rng(mix64(cfg_.seed, 3));
    start_ = std::chrono::steady_clock::now();
}

void Trainer::check_samples(const std::vector<TrainSample>& data) const {
    if (data.empty()) throw TrainError("trainer: empty dataset");
    const TrainSample& s = data.front();
    require(s.x_g.rank() == 3 && s.x_g.dim(0) == mcfg_.rows && s.x_g.dim(1) == mcfg_.cols &&
                s.x_g.dim(2) == mcfg_.g_in_channels,
            "trainer: generator input " + s.x_g.shape_str() + " does not match model config");
    require(s.x_d.rank() == 3 && s.x_d.dim(0) == mcfg_.rows && s.x_d.dim(1) == mcfg_.cols &&
                s.x_d.dim(2) == mcfg_.d_hist_channels,
            "trainer: history input " + s.x_d.shape_str() + " does not match model config");
    require(s.y.rank() == 2 && s.y.dim(0) == mcfg_.rows && s.y.dim(1) == mcfg_.cols,
            "trainer: target " + s.y.shape_str() + " does not match model config");
}

void Trainer::build_d_phase(Phase& ph, const std::vector<TrainSample>& data,
                            const std::vector<int>& idx, int iter) {
    // The generator is frozen in this phase: run it on its own tape and feed
    // the fakes in as constants so no gradient work is spent on G.
    Tensor fakes;
    {
        Graph fg;
        VarId f = gen_.forward(fg, fg.input(stack_generator_input(data, idx)), true, false);
        fakes = fg.val(f);
    }
    Tensor real_pairs = stack_pairs(data, idx, nullptr);
    Tensor fake_pairs = stack_pairs(data, idx, &fakes);

    DropoutCtx drop_real{true, mix64(cfg_.seed, uint64_t(iter), kDropRealPhase), 0, 0};
    VarId p_real = dis_.forward(ph.graph, ph.graph.input(std::move(real_pairs)), true, true,
                                &drop_real);
    DropoutCtx drop_fake{true, mix64(cfg_.seed, uint64_t(iter), kDropFakePhase), 0, 0};
    VarId p_fake = dis_.forward(ph.graph, ph.graph.input(std::move(fake_pairs)), true, true,
                                &drop_fake);

    ph.d_real_mean = mean_of(ph.graph.val(p_real));
    ph.d_fake_mean = mean_of(ph.graph.val(p_fake));

    ph.sample_loss.reserve(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) {
        VarId li = ph.graph.add(bce_node(ph.graph, ph.graph.slice_sample(p_real, int(i)), 1),
                                bce_node(ph.graph, ph.graph.slice_sample(p_fake, int(i)), 0));
        ph.sample_loss.push_back(li);
    }
    ph.total = sum_nodes(ph.graph, ph.sample_loss);
}

void Trainer::build_g_phase(Phase& ph, const std::vector<TrainSample>& data,
                            const std::vector<int>& idx, int iter) {
    Graph& g = ph.graph;
    VarId xg = g.input(stack_generator_input(data, idx));
    VarId fake = gen_.forward(g, xg, true, true);  // (M,H,W,1)

    // Discriminator applied to {history, fake} with D frozen: its parameters
    // receive gradients (needed to reach G) but no update is applied to them.
    VarId pair = g.concat_channels(g.input(stack_history(data, idx)), fake);
    DropoutCtx drop{true, mix64(cfg_.seed, uint64_t(iter), kDropGenPhase), 0, 0};
    VarId p_fake = dis_.forward(g, pair, true, false, &drop);

    VarId fake_maps = g.squeeze_last(fake);  // (M,H,W)
    VarId targets = g.input(stack_targets(data, idx));

    ph.sample_loss.reserve(idx.size());
    ph.adv = ph.lp = ph.gdl = 0.0;
    for (size_t i = 0; i < idx.size(); ++i) {
        VarId adv_i = g_adv_node(g, g.slice_sample(p_fake, int(i)));
        VarId f_i = g.slice_sample(fake_maps, int(i));
        VarId y_i = g.slice_sample(targets, int(i));
        VarId lp_i = lp_node(g, f_i, y_i, cfg_.weights.p);
        VarId gdl_i = gdl_node(g, f_i, y_i);
        ph.adv += g.val(adv_i).data()[0];
        ph.lp += g.val(lp_i).data()[0];
        ph.gdl += g.val(gdl_i).data()[0];
        ph.sample_loss.push_back(g_total_node(g, adv_i, lp_i, gdl_i, cfg_.weights));
    }
    ph.total = sum_nodes(g, ph.sample_loss);
}

Trainer::StepInfo Trainer::step(const std::vector<TrainSample>& data) {
    check_samples(data);
    StepInfo info;
    info.record.iteration = iteration_ + 1;

    auto abort_nan = [&](const char* phase, double loss, const std::string& detail) {
        info.record.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        log_.records.push_back(info.record);
        std::string msg = std::string("training aborted: non-finite ") + phase + " loss " +
                          fmt_double(loss) + " at iteration " +
                          std::to_string(info.record.iteration);
        if (!detail.empty()) msg += " (" + detail + ")";
        throw TrainError(msg);
    };

    // Graph ops validate their inputs eagerly, so a NaN that reaches e.g. the
    // bce log can surface as a build-time Error rather than a NaN loss value.
    // Fold that into the same diagnostic abort; shape and usage errors are the
    // caller's bug and propagate untouched.
    auto build_guarded = [&](const char* phase, double& loss_field, auto&& build) {
        try {
            build();
        } catch (const DimensionError&) {
            throw;
        } catch (const ConfigError&) {
            throw;
        } catch (const UsageError&) {
            throw;
        } catch (const TrainError&) {
            throw;
        } catch (const Error& e) {
            loss_field = std::numeric_limits<double>::quiet_NaN();
            abort_nan(phase, loss_field, e.what());
        }
    };

    info.d_draw = sample_minibatch(data.size(), cfg_.minibatch, draw_rng_);
    {
        Phase ph;
        build_guarded("discriminator", info.record.d_loss,
                      [&] { build_d_phase(ph, data, info.d_draw, iteration_); });
        const double d_loss = ph.graph.val(ph.total).data()[0];
        info.record.d_loss = d_loss;
        info.record.d_real_mean = ph.d_real_mean;
        info.record.d_fake_mean = ph.d_fake_mean;
        if (!std::isfinite(d_loss)) abort_nan("discriminator", d_loss, "");
        for (Param* p : dis_.params()) p->zero_grad();
        ph.graph.backward(ph.total);
        sgd_step(dis_.params(), cfg_.rho_d);
    }

    info.g_draw = sample_minibatch(data.size(), cfg_.minibatch, draw_rng_);
    {
        Phase ph;
        build_guarded("generator", info.record.g_total,
                      [&] { build_g_phase(ph, data, info.g_draw, iteration_); });
        const double g_total = ph.graph.val(ph.total).data()[0];
        info.record.g_total = g_total;
        info.record.g_adv = ph.adv;
        info.record.g_lp = ph.lp;
        info.record.g_gdl = ph.gdl;
        if (!std::isfinite(g_total)) abort_nan("generator", g_total, "");
        for (Param* p : gen_.params()) p->zero_grad();
        for (Param* p : dis_.params()) p->zero_grad();
        ph.graph.backward(ph.total);
        sgd_step(gen_.params(), cfg_.rho_g);
    }

    ++iteration_;
    info.record.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    log_.records.push_back(info.record);
    return info;
}

bool Trainer::converged() const {
    const int w = cfg_.convergence_window;
    const int n = int(log_.records.size());
    if (n < 2 * w) return false;
    auto window_mean = [&](int begin) {
        double acc = 0.0;
        for (int i = begin; i < begin + w; ++i) acc += log_.records[size_t(i)].g_total;
        return acc / double(w);
    };
    const double prev = window_mean(n - 2 * w);
    const double recent = window_mean(n - w);
    if (prev == 0.0) return recent == 0.0;
    return std::fabs(recent - prev) < cfg_.convergence_threshold * std::fabs(prev);
}

void Trainer::write_sidecar(const TrainResult& res) const {
    json j;
    j["case"] = case_name(cfg_.tag);
    j["seed"] = cfg_.seed;
    j["iterations"] = res.iterations;
    j["converged"] = res.converged;
    json tc;
    tc["rho_d"] = cfg_.rho_d;
    tc["rho_g"] = cfg_.rho_g;
    tc["lambda_adv"] = cfg_.weights.lambda_adv;
    tc["lambda_lp"] = cfg_.weights.lambda_lp;
    tc["lambda_gdl"] = cfg_.weights.lambda_gdl;
    tc["p"] = cfg_.weights.p;
    tc["minibatch"] = cfg_.minibatch;
    tc["history_n"] = cfg_.history_n;
    tc["max_iterations"] = cfg_.max_iterations;
    tc["checkpoint_every"] = cfg_.checkpoint_every;
    tc["convergence_window"] = cfg_.convergence_window;
    tc["convergence_threshold"] = cfg_.convergence_threshold;
    j["train_config"] = tc;
    std::ofstream os(cfg_.checkpoint_path + ".json", std::ios::trunc);
    if (!os) throw IngestError("cannot write sidecar " + cfg_.checkpoint_path + ".json");
    os << j.dump(2) << "\n";
}

TrainResult Trainer::run(const std::vector<TrainSample>& data) {
    cfg_.validate();
    check_samples(data);
    if (int(data.size()) < cfg_.minibatch)
        throw TrainError("trainer: dataset has " + std::to_string(data.size()) +
                         " windows, need at least the minibatch size " +
                         std::to_string(cfg_.minibatch));

    std::ofstream csv;
    if (!cfg_.log_path.empty()) {
        csv.open(cfg_.log_path, std::ios::trunc);
        if (!csv) throw IngestError("cannot write train log " + cfg_.log_path);
        csv << TrainLog::csv_header() << "\n";
    }
    size_t streamed = 0;
    auto flush_records = [&] {
        if (!csv.is_open()) return;
        for (; streamed < log_.records.size(); ++streamed)
            csv << train_record_csv(log_.records[streamed]) << "\n";
        csv.flush();
    };

    TrainResult res;
    try {
        while (iteration_ < cfg_.max_iterations) {
            step(data);
            flush_records();
            res.iterations = iteration_;
            if (!cfg_.checkpoint_path.empty() && cfg_.checkpoint_every > 0 &&
                iteration_ % cfg_.checkpoint_every == 0)
                save_checkpoint(cfg_.checkpoint_path, gen_, dis_);
            if (converged()) {
                res.converged = true;
                break;
            }
        }
    } catch (...) {
        // Keep the last good checkpoint on disk; the diagnostic record is
        // already appended, so flush it before propagating.
        flush_records();
        throw;
    }
    if (!cfg_.checkpoint_path.empty()) {
        save_checkpoint(cfg_.checkpoint_path, gen_, dis_);
        write_sidecar(res);
    }
    return res;
}

}  // namespace lmpforge
