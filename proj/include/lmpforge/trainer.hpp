#pragma once

#include <chrono>
#include <string>
#include <vector>

#include "lmpforge/data_pipeline.hpp"
#include "lmpforge/gan_models.hpp"
#include "lmpforge/losses.hpp"

namespace lmpforge {

struct TrainConfig {
    CaseTag tag = CaseTag::case1;
    double rho_d = 0.0005;
    double rho_g = 0.0005;
    LossWeights weights;
    int minibatch = 4;
    int history_n = 4;
    int max_iterations = 20000;
    int checkpoint_every = 500;
    int convergence_window = 200;
    double convergence_threshold = 0.005;
    uint64_t seed = 0;
    std::string checkpoint_path;  // empty disables checkpointing
    std::string log_path;         // empty disables the CSV stream

    static TrainConfig defaults(CaseTag tag);
    void validate() const;
};

struct TrainRecord {
    int iteration = 0;
    double d_loss = 0, g_total = 0, g_adv = 0, g_lp = 0, g_gdl = 0;
    double d_real_mean = 0, d_fake_mean = 0;
    double seconds = 0;
};

struct TrainLog {
    std::vector<TrainRecord> records;
    static const char* csv_header();
};

std::string train_record_csv(const TrainRecord& r);

/// Uniform draw of m indices with replacement; consecutive calls advance the
/// stream so every phase gets a fresh, independent batch.
std::vector<int> sample_minibatch(size_t dataset_size, int m, Rng& rng);

struct TrainResult {
    int iterations = 0;
    bool converged = false;
};

/// Alternating-update loop: each iteration applies one discriminator step on
/// a drawn batch (generator frozen) and then one generator step on a fresh
/// batch (discriminator frozen).
class Trainer {
  public:
    Trainer(TrainConfig cfg, ModelConfig mcfg);

    /// One phase's tape. The per-sample loss nodes partition the total (the
    /// total node is their left-to-right sum), so a test can replay the exact
    /// update sample by sample with separate backward() calls.
    struct Phase {
        Graph graph;
        std::vector<VarId> sample_loss;
        VarId total = -1;
        double d_real_mean = 0, d_fake_mean = 0;  // discriminator phase
        double adv = 0, lp = 0, gdl = 0;          // generator phase components
    };

    void build_d_phase(Phase& ph, const std::vector<TrainSample>& data,
                       const std::vector<int>& idx, int iter);
    void build_g_phase(Phase& ph, const std::vector<TrainSample>& data,
                       const std::vector<int>& idx, int iter);

    struct StepInfo {
        TrainRecord record;
        std::vector<int> d_draw, g_draw;
    };

    /// Draws, builds, backprops and applies both phases; appends the record.
    /// Non-finite losses abort with TrainError after logging a diagnostic
    /// record, leaving parameters as of the last completed phase.
    StepInfo step(const std::vector<TrainSample>& data);

    /// Full loop with CSV streaming, periodic checkpoints, the moving-average
    /// convergence rule, and a final checkpoint + config sidecar.
    TrainResult run(const std::vector<TrainSample>& data);

    Generator& generator() { return gen_; }
    Discriminator& discriminator() { return dis_; }
    const ModelConfig& model_config() const { return mcfg_; }
    const TrainConfig& config() const { return cfg_; }
    const TrainLog& log() const { return log_; }
    int iteration() const { return iteration_; }

  private:
    TrainConfig cfg_;
    ModelConfig mcfg_;
    Generator gen_;
    Discriminator dis_;
    Rng draw_rng_;
    TrainLog log_;
    int iteration_ = 0;
    std::chrono::steady_clock::time_point start_;

    void check_samples(const std::vector<TrainSample>& data) const;
    bool converged() const;
    void write_sidecar(const TrainResult& res) const;
};

}  // namespace lmpforge
