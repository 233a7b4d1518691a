#include "lmpforge/losses.hpp"

#include <algorithm>
#include <cmath>

namespace lmpforge {

namespace {

double clamp_prob(double p) {
    return std::min(std::max(p, kProbClampEps), 1.0 - kProbClampEps);
}

void check_pair(const Tensor& y_hat, const Tensor& y, const char* who) {
    require(y_hat.shape() == y.shape(), std::string(who) + ": shape mismatch " +
                                            y_hat.shape_str() + " vs " + y.shape_str());
}

}  // namespace

void check_weights(const LossWeights& w) {
    require(w.lambda_adv >= 0.0 && w.lambda_lp >= 0.0 && w.lambda_gdl >= 0.0,
            "loss weights must be non-negative");
    require(w.lambda_adv + w.lambda_lp + w.lambda_gdl > 0.0,
            "at least one loss weight must be positive");
    require(w.p >= 1, "norm order p must be >= 1");
}

double bce(double prob, int label) {
    require(label == 0 || label == 1, "bce: label must be 0 or 1");
    const double p = clamp_prob(prob);
    return label == 1 ? -std::log(p) : -std::log(1.0 - p);
}

double d_loss(double d_real, double d_fake) { return bce(d_real, 1) + bce(d_fake, 0); }

double g_adv_loss(double d_fake) { return bce(d_fake, 1); }

double lp_loss(const Tensor& y_hat, const Tensor& y, int p) {
    check_pair(y_hat, y, "lp_loss");
    require(p >= 1, "lp_loss: p must be >= 1");
    double acc = 0.0;
    for (int64_t i = 0; i < y.size(); ++i) {
        const double d = std::fabs(y_hat.data()[i] - y.data()[i]);
        double term = d;
        for (int q = 1; q < p; ++q) term *= d;
        acc += term;
    }
    return acc;
}

double gdl_loss(const Tensor& y_hat, const Tensor& y) {
    check_pair(y_hat, y, "gdl_loss");
    require(y.rank() == 2 || y.rank() == 3,
            "gdl_loss: need (H,W) or (M,H,W), got " + y.shape_str());
    const bool batched = y.rank() == 3;
    const int m = batched ? y.dim(0) : 1;
    const int h = y.dim(batched ? 1 : 0), w = y.dim(batched ? 2 : 1);
    require(h >= 2 && w >= 2, "gdl_loss: matrices must be at least 2x2, got " + y.shape_str());
    auto at = [&](const Tensor& t, int s, int i, int j) {
        return t.data()[(int64_t(s) * h + i) * w + j];
    };
    double acc = 0.0;
    for (int s = 0; s < m; ++s) {
        for (int i = 1; i < h; ++i)
            for (int j = 0; j < w; ++j)
                acc += std::fabs(std::fabs(at(y, s, i, j) - at(y, s, i - 1, j)) -
                                 std::fabs(at(y_hat, s, i, j) - at(y_hat, s, i - 1, j)));
        for (int i = 0; i < h; ++i)
            for (int j = 1; j < w; ++j)
                acc += std::fabs(std::fabs(at(y, s, i, j - 1) - at(y, s, i, j)) -
                                 std::fabs(at(y_hat, s, i, j - 1) - at(y_hat, s, i, j)));
    }
    return acc;
}

double g_total_loss(double d_fake, const Tensor& y_hat, const Tensor& y, const LossWeights& w) {
    check_weights(w);
    return w.lambda_adv * g_adv_loss(d_fake) + w.lambda_lp * lp_loss(y_hat, y, w.p) +
           w.lambda_gdl * gdl_loss(y_hat, y);
}

VarId bce_node(Graph& g, VarId probs, int label) {
    require(label == 0 || label == 1, "bce: label must be 0 or 1");
    VarId c = g.clamp(probs, kProbClampEps, 1.0 - kProbClampEps);
    VarId inner = label == 1 ? c : g.rsub_scalar(1.0, c);
    return g.sum(g.neg(g.log_op(inner)));
}

VarId d_loss_node(Graph& g, VarId d_real, VarId d_fake) {
    return g.add(bce_node(g, d_real, 1), bce_node(g, d_fake, 0));
}

VarId g_adv_node(Graph& g, VarId d_fake) { return bce_node(g, d_fake, 1); }

VarId lp_node(Graph& g, VarId y_hat, VarId y, int p) {
    require(p >= 1, "lp_loss: p must be >= 1");
    return g.sum(g.powi(g.abs_op(g.sub(y_hat, y)), p));
}

VarId gdl_node(Graph& g, VarId y_hat, VarId y) {
    VarId vert = g.sum(g.abs_op(g.sub(g.abs_op(g.row_diff(y)), g.abs_op(g.row_diff(y_hat)))));
    VarId horiz = g.sum(g.abs_op(g.sub(g.abs_op(g.col_diff(y)), g.abs_op(g.col_diff(y_hat)))));
    return g.add(vert, horiz);
}

VarId g_total_node(Graph& g, VarId adv, VarId lp, VarId gdl, const LossWeights& w) {
    check_weights(w);
    return g.add(g.add(g.mul_scalar(adv, w.lambda_adv), g.mul_scalar(lp, w.lambda_lp)),
                 g.mul_scalar(gdl, w.lambda_gdl));
}

}  // namespace lmpforge
