#pragma once

#include "lmpforge/autodiff.hpp"
#include "lmpforge/tensor.hpp"

namespace lmpforge {

/// Weights of the generator multi-loss; p is the entry-wise norm order.
struct LossWeights {
    double lambda_adv = 0.2;
    double lambda_lp = 1.0;
    double lambda_gdl = 1.0;
    int p = 2;
};

/// Probabilities are clamped to [eps, 1-eps] before any logarithm.
inline constexpr double kProbClampEps = 1e-7;

/// Throws DimensionError on negative weights, an all-zero weight triple, or
/// a norm order below 1.
void check_weights(const LossWeights& w);

// Scalar value forms. Used for logging, oracles, and reporting; the graph
// forms below are what training differentiates through.
double bce(double prob, int label);
double d_loss(double d_real, double d_fake);
double g_adv_loss(double d_fake);
double lp_loss(const Tensor& y_hat, const Tensor& y, int p);
double gdl_loss(const Tensor& y_hat, const Tensor& y);
double g_total_loss(double d_fake, const Tensor& y_hat, const Tensor& y, const LossWeights& w);

// Graph forms. `probs` may hold one probability per sample; the result node
// is the SUM of the per-element BCE terms (minibatch losses are summed, not
// averaged). y_hat/y are (H,W) or batched (M,H,W).
VarId bce_node(Graph& g, VarId probs, int label);
VarId d_loss_node(Graph& g, VarId d_real, VarId d_fake);
VarId g_adv_node(Graph& g, VarId d_fake);
VarId lp_node(Graph& g, VarId y_hat, VarId y, int p);
VarId gdl_node(Graph& g, VarId y_hat, VarId y);
VarId g_total_node(Graph& g, VarId adv, VarId lp, VarId gdl, const LossWeights& w);

}  // namespace lmpforge
