#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lmpforge/kernels.hpp"
#include "lmpforge/rng.hpp"
#include "lmpforge/tensor.hpp"

namespace lmpforge {

using VarId = int32_t;

/// Trainable parameter: value plus gradient accumulator of the same shape.
struct Param {
    std::string name;
    Tensor value;
    Tensor grad;

    Param() = default;
    Param(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
        grad = Tensor(value.shape());
    }
    void zero_grad() { grad.fill(0.0); }
};

/// Plain SGD: p -= lr * p.grad for every parameter. No momentum, no decay.
void sgd_step(const std::vector<Param*>& params, double lr);

/// Running statistics for one batch-norm layer, updated by EMA during
/// training and consumed verbatim in inference mode.
struct BnState {
    Tensor running_mean;
    Tensor running_var;
    double eps = 1e-5;
    double momentum = 0.9;

    BnState() = default;
    explicit BnState(int channels, double eps_ = 1e-5, double momentum_ = 0.9)
        : running_mean({channels}), running_var({channels}), eps(eps_), momentum(momentum_) {
        running_var.fill(1.0);
    }
    int channels() const { return running_mean.empty() ? 0 : running_mean.dim(0); }
};

/// Tape of operations. Ops append nodes with cached activations; backward()
/// walks the tape in reverse insertion order (which is reverse topological
/// order, every op only consumes earlier nodes) and accumulates parameter
/// gradients into Param::grad. Multiple backward() calls on one graph are
/// allowed; each starts from freshly zeroed node adjoints.
class Graph {
  public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    VarId input(Tensor v, bool requires_grad = false);
    VarId param(Param& p);

    const Tensor& val(VarId id) const;
    /// Adjoint of a node after backward(); empty tensor if the node never
    /// received gradient.
    const Tensor& grad(VarId id) const;

    // Layer operations. Spatial tensors are (H,W,C) or (M,H,W,C) row-major,
    // kernels (kH,kW,Cin,Cout), dense activations (F) or (M,F).
    VarId conv2d(VarId x, VarId k, int stride_h, int stride_w, kernels::Pad pad);
    VarId conv2d_transpose(VarId x, VarId k, int stride_h, int stride_w, kernels::Pad pad);
    VarId dense(VarId x, VarId w);
    VarId dense(VarId x, VarId w, VarId b) { return channel_bias(dense(x, w), b); }
    VarId channel_bias(VarId x, VarId b);
    VarId batch_norm(VarId x, VarId gamma, VarId beta, BnState& bn, bool training,
                     bool update_running);
    VarId relu(VarId x);
    VarId leaky_relu(VarId x, double slope);
    VarId tanh_op(VarId x);
    VarId sigmoid(VarId x);
    /// Training mode draws one uniform per element from rng (element order);
    /// inference mode is the identity and returns x itself.
    VarId dropout(VarId x, double rate, bool training, Rng& rng);
    /// Dropout with a caller-supplied mask of kept-scale factors (0 or
    /// 1/(1-rate)); lets callers keep per-sample mask streams replayable.
    VarId dropout_masked(VarId x, Tensor mask);
    VarId concat_channels(VarId a, VarId b);
    VarId flatten(VarId x);  // (M,...)->(M,F); (...)->(F)
    VarId reshape(VarId x, std::vector<int> shape);
    VarId slice_sample(VarId x, int index);  // drop leading batch axis
    VarId squeeze_last(VarId x);             // drop trailing axis of size 1

    // Arithmetic.
    VarId add(VarId a, VarId b);
    VarId sub(VarId a, VarId b);
    VarId mul_scalar(VarId x, double c);
    VarId add_scalar(VarId x, double c);
    VarId rsub_scalar(double c, VarId x);  // c - x
    VarId neg(VarId x) { return mul_scalar(x, -1.0); }
    VarId abs_op(VarId x);
    VarId powi(VarId x, int p);  // p >= 1
    VarId log_op(VarId x);
    VarId clamp(VarId x, double lo, double hi);
    VarId sum(VarId x);  // -> shape {1}
    /// out(i,j) = x(i+1,j) - x(i,j); rank 2 (H,W)->(H-1,W) or rank 3 with
    /// leading batch axis. Differences only where both neighbors exist.
    VarId row_diff(VarId x);
    /// out(i,j) = x(i,j+1) - x(i,j); (H,W)->(H,W-1), batch axis as row_diff.
    VarId col_diff(VarId x);

    void backward(VarId root);
    int size() const { return int(nodes_.size()); }

  private:
    struct Node {
        Tensor value;  // empty for param leaves, which alias Param::value
        Param* par = nullptr;
        Tensor grad;
        bool needs_grad = false;
        std::function<void(Graph&)> back;
    };

    std::vector<Node> nodes_;

    VarId make(Tensor value, std::initializer_list<VarId> parents);
    bool wants(VarId id) const { return nodes_[id].needs_grad; }
    Tensor& gbuf(VarId id);
    void check_id(VarId id) const;
};

}  // namespace lmpforge
