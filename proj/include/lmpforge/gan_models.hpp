#pragma once

#include <string>
#include <vector>

#include "lmpforge/autodiff.hpp"

namespace lmpforge {

enum class CaseTag { case1, case2 };

std::string case_name(CaseTag tag);
CaseTag case_from_name(const std::string& name);

/// Architecture hyperparameters. The feature-map ladders are
/// g_maps = {first conv_t, concat projection, conv_t, conv_t, conv_t} and
/// d_maps = {conv, concat projection, dense, dense, dense}; both networks
/// end in a fixed 1-channel / scalar projection.
struct ModelConfig {
    CaseTag tag = CaseTag::case1;
    int history_n = 4;
    int rows = 3, cols = 3;
    int g_in_channels = 4;
    int d_hist_channels = 4;  // history channels D sees (RTLMP only in case 2)
    int kernel_h = 3, kernel_w = 3;
    int stride = 1;
    std::vector<int> g_maps = {64, 256, 1024, 512, 64};
    std::vector<int> d_maps = {64, 320, 1024, 512, 256};
    double leaky_slope = 0.2;
    double dropout_rate = 0.3;
    double bn_eps = 1e-5;
    double bn_momentum = 0.9;
    double init_range = 0.05;

    int d_in_channels() const { return d_hist_channels + 1; }
    static ModelConfig make(CaseTag tag, int rows, int cols, int history_n = 4);
    void validate() const;
};

/// Architecture descriptor row, the checkpoint header unit.
struct LayerSpec {
    std::string kind;  // conv2d | conv2d_transpose | dense | batch_norm | relu |
                       // leaky_relu | dropout | concat | tanh | sigmoid
    int kernel_h = 0, kernel_w = 0;
    int stride_h = 0, stride_w = 0;
    std::string padding;  // same | valid, convolutional kinds only
    int feature_maps = 0;
    double rate = 0.0;
    double slope = 0.0;
};

std::vector<LayerSpec> generator_layer_specs(const ModelConfig& cfg);
std::vector<LayerSpec> discriminator_layer_specs(const ModelConfig& cfg);

/// Per-sample dropout mask streams. Masks are drawn from an rng keyed by
/// (seed, layer call index, sample index) so a later single-sample pass can
/// replay exactly the masks a batched pass used.
struct DropoutCtx {
    bool active = false;
    uint64_t seed = 0;
    int sample_base = 0;  // global index of batch row 0
    int call = 0;         // running per-forward layer counter
};

struct ConvTStack {
    Param kernel;  // (kH, kW, out_ch, in_ch)
    Param gamma, beta;
    BnState bn;
};

struct ConvStack {
    Param kernel;  // (kH, kW, in_ch, out_ch)
    Param gamma, beta;
    BnState bn;
};

struct DenseStack {
    Param w;
    Param gamma, beta;
    BnState bn;
};

struct Projection {
    Param w;
    Param b;
};

struct Generator {
    ModelConfig cfg;
    ConvTStack l1;
    Projection skip;  // 1x1 conv joining layer-1 maps with the raw input
    ConvTStack l2, l3, l4;
    Projection out;  // 1x1 conv to the single output channel

    /// x is (H,W,Cin) or (M,H,W,Cin); result has a trailing channel of 1.
    VarId forward(Graph& g, VarId x, bool training, bool update_running);
    std::vector<Param*> params();
    std::vector<const Param*> params() const;
    std::vector<BnState*> bn_states();
    std::vector<const BnState*> bn_states() const;
};

struct Discriminator {
    ModelConfig cfg;
    ConvStack l1;
    Projection proj;  // dense projection of [conv maps, raw input]
    DenseStack d1, d2, d3;
    Projection out;

    /// x is the concatenated {history, candidate} tensor (H,W,C) or
    /// (M,H,W,C); result is (1) or (M,1) in [0,1].
    VarId forward(Graph& g, VarId x, bool training, bool update_running,
                  DropoutCtx* drop);
    std::vector<Param*> params();
    std::vector<const Param*> params() const;
    std::vector<BnState*> bn_states();
    std::vector<const BnState*> bn_states() const;
};

Generator build_generator(const ModelConfig& cfg, Rng& rng);
Discriminator build_discriminator(const ModelConfig& cfg, Rng& rng);

/// Inference-mode helpers over plain tensors.
Tensor generator_forward(Generator& g, const Tensor& x);  // -> (H,W)
double discriminator_forward(Discriminator& d, const Tensor& x_hist,
                             const Tensor& candidate);

/// Checkpoint: versioned binary with a JSON architecture header followed by
/// raw parameter and batch-norm running arrays in declaration order.
/// Round-trips bit-exactly.
void save_checkpoint(const std::string& path, const Generator& g, const Discriminator& d);
struct Checkpoint {
    ModelConfig cfg;
    Generator g;
    Discriminator d;
};
Checkpoint load_checkpoint(const std::string& path);

}  // namespace lmpforge
