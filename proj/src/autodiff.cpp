#include "lmpforge/autodiff.hpp"

#include <cmath>
#include <memory>

namespace lmpforge {

namespace {

void add_into(Tensor& dst, const Tensor& src) {
    require(dst.size() == src.size(), "gradient accumulation shape mismatch");
    double* d = dst.data();
    const double* s = src.data();
    for (int64_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

}  // namespace

void sgd_step(const std::vector<Param*>& params, double lr) {
    for (Param* p : params) {
        require(p->grad.shape() == p->value.shape(),
                "sgd_step: gradient shape mismatch for " + p->name + " (" + p->grad.shape_str() +
                    " vs " + p->value.shape_str() + ")");
        double* v = p->value.data();
        const double* g = p->grad.data();
        for (int64_t i = 0; i < p->value.size(); ++i) v[i] -= lr * g[i];
    }
}

VarId Graph::make(Tensor value, std::initializer_list<VarId> parents) {
    bool ng = false;
    for (VarId p : parents) {
        check_id(p);
        ng = ng || nodes_[p].needs_grad;
    }
    Node n;
    n.value = std::move(value);
    n.needs_grad = ng;
    nodes_.push_back(std::move(n));
    return VarId(nodes_.size() - 1);
}

void Graph::check_id(VarId id) const {
    if (id < 0 || id >= VarId(nodes_.size()))
        throw UsageError("graph node " + std::to_string(id) + " does not exist");
}

const Tensor& Graph::val(VarId id) const {
    check_id(id);
    const Node& n = nodes_[id];
    return n.par ? n.par->value : n.value;
}

const Tensor& Graph::grad(VarId id) const {
    check_id(id);
    return nodes_[id].grad;
}

Tensor& Graph::gbuf(VarId id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor(val(id).shape());
    return n.grad;
}

VarId Graph::input(Tensor v, bool requires_grad) {
    require(!v.empty(), "input tensor is empty");
    VarId id = make(std::move(v), {});
    nodes_[id].needs_grad = requires_grad;
    return id;
}

VarId Graph::param(Param& p) {
    require(!p.value.empty(), "param " + p.name + " has no value");
    Node n;
    n.par = &p;
    n.needs_grad = true;
    nodes_.push_back(std::move(n));
    return VarId(nodes_.size() - 1);
}

void Graph::backward(VarId root) {
    if (nodes_.empty()) throw UsageError("backward called before any forward pass");
    check_id(root);
    if (val(root).size() != 1)
        throw UsageError("backward root must be scalar, got shape " + val(root).shape_str());
    for (Node& n : nodes_) n.grad = Tensor();
    gbuf(root).data()[0] = 1.0;
    for (int i = int(nodes_.size()) - 1; i >= 0; --i) {
        Node& n = nodes_[i];
        if (n.grad.empty()) continue;
        if (n.par) {
            add_into(n.par->grad, n.grad);
        } else if (n.back) {
            n.back(*this);
        }
    }
}

VarId Graph::conv2d(VarId xi, VarId ki, int stride_h, int stride_w, kernels::Pad pad) {
    const Tensor& x = val(xi);
    const Tensor& k = val(ki);
    require(k.rank() == 4, "conv2d: kernel must be rank 4 (kH,kW,Cin,Cout), got " + k.shape_str());
    require(x.rank() == 3 || x.rank() == 4,
            "conv2d: input must be rank 3 (H,W,C) or 4 (M,H,W,C), got " + x.shape_str());
    const bool batched = x.rank() == 4;
    const int m = batched ? x.dim(0) : 1;
    const int h = x.dim(batched ? 1 : 0), w = x.dim(batched ? 2 : 1), c = x.dim(batched ? 3 : 2);
    require(k.dim(2) == c, "conv2d: input channel axis (" + std::to_string(c) +
                               ") != kernel axis 2 (" + std::to_string(k.dim(2)) + ")");
    auto geom = kernels::conv_geometry(m, h, w, c, k.dim(0), k.dim(1), k.dim(3), stride_h,
                                       stride_w, pad);
    Tensor out(batched ? std::vector<int>{m, geom.out_h, geom.out_w, geom.out_c}
                       : std::vector<int>{geom.out_h, geom.out_w, geom.out_c});
    kernels::conv2d_forward(geom, x.data(), k.data(), out.data());
    VarId self = make(std::move(out), {xi, ki});
    if (nodes_[self].needs_grad)
        nodes_[self].back = [self, xi, ki, geom](Graph& gr) {
            const Tensor& gy = gr.nodes_[self].grad;
            if (gr.wants(xi))
                kernels::conv2d_adjoint(geom, gy.data(), gr.val(ki).data(), gr.gbuf(xi).data());
            if (gr.wants(ki))
                kernels::conv2d_kernel_grad(geom, gr.val(xi).data(), gy.data(),
                                            gr.gbuf(ki).data());
        };
    return self;
}

VarId Graph::conv2d_transpose(VarId xi, VarId ki, int stride_h, int stride_w, kernels::Pad pad) {
    const Tensor& x = val(xi);
    const Tensor& k = val(ki);
    require(k.rank() == 4,
            "conv2d_transpose: kernel must be rank 4 (kH,kW,Cout,Cin), got " + k.shape_str());
    require(x.rank() == 3 || x.rank() == 4,
            "conv2d_transpose: input must be rank 3 or 4, got " + x.shape_str());
    const bool batched = x.rank() == 4;
    const int m = batched ? x.dim(0) : 1;
    const int h = x.dim(batched ? 1 : 0), w = x.dim(batched ? 2 : 1), c = x.dim(batched ? 3 : 2);
    require(k.dim(3) == c, "conv2d_transpose: input channel axis (" + std::to_string(c) +
                               ") != kernel axis 3 (" + std::to_string(k.dim(3)) + ")");
    auto geom = kernels::conv_transpose_geometry(m, h, w, c, k.dim(0), k.dim(1), k.dim(2),
                                                 stride_h, stride_w, pad);
    Tensor out(batched ? std::vector<int>{m, geom.in_h, geom.in_w, geom.in_c}
                       : std::vector<int>{geom.in_h, geom.in_w, geom.in_c});
    kernels::conv2d_adjoint(geom, x.data(), k.data(), out.data());
    VarId self = make(std::move(out), {xi, ki});
    if (nodes_[self].needs_grad)
        nodes_[self].back = [self, xi, ki, geom](Graph& gr) {
            const Tensor& gy = gr.nodes_[self].grad;
            if (gr.wants(xi))
                kernels::conv2d_forward(geom, gy.data(), gr.val(ki).data(), gr.gbuf(xi).data());
            if (gr.wants(ki))
                kernels::conv2d_kernel_grad(geom, gy.data(), gr.val(xi).data(),
                                            gr.gbuf(ki).data());
        };
    return self;
}

VarId Graph::dense(VarId xi, VarId wi) {
    const Tensor& x = val(xi);
    const Tensor& w = val(wi);
    require(w.rank() == 2, "dense: weights must be rank 2 (Fin,Fout), got " + w.shape_str());
    require(x.rank() == 1 || x.rank() == 2,
            "dense: input must be rank 1 (F) or 2 (M,F), got " + x.shape_str());
    const bool batched = x.rank() == 2;
    const int m = batched ? x.dim(0) : 1;
    const int fin = x.dim(batched ? 1 : 0), fout = w.dim(1);
    require(w.dim(0) == fin, "dense: input feature axis (" + std::to_string(fin) +
                                 ") != weight axis 0 (" + std::to_string(w.dim(0)) + ")");
    Tensor out(batched ? std::vector<int>{m, fout} : std::vector<int>{fout});
    kernels::dense_forward(m, fin, fout, x.data(), w.data(), out.data());
    VarId self = make(std::move(out), {xi, wi});
    if (nodes_[self].needs_grad)
        nodes_[self].back = [self, xi, wi, m, fin, fout](Graph& gr) {
            const Tensor& gy = gr.nodes_[self].grad;
            if (gr.wants(xi))
                kernels::dense_input_grad(m, fin, fout, gy.data(), gr.val(wi).data(),
                                          gr.gbuf(xi).data());
            if (gr.wants(wi))
                kernels::dense_weight_grad(m, fin, fout, gr.val(xi).data(), gy.data(),
                                           gr.gbuf(wi).data());
        };
    return self;
}

VarId Graph::channel_bias(VarId xi, VarId bi) {
    const Tensor& x = val(xi);
    const Tensor& b = val(bi);
    require(b.rank() == 1, "channel_bias: bias must be rank 1, got " + b.shape_str());
    const int c = x.dim(x.rank() - 1);
    require(b.dim(0) == c, "channel_bias: channel axis (" + std::to_string(c) +
                               ") != bias length (" + std::to_string(b.dim(0)) + ")");
    Tensor out(x.shape());
    const int64_t rows = x.size() / c;
    for (int64_t r = 0; r < rows; ++r)
        for (int j = 0; j < c; ++j) out.data()[r * c + j] = x.data()[r * c + j] + b.data()[j];
    VarId self = make(std::move(out), {xi, bi});
    if (nodes_[self].needs_grad)
        nodes_[self].back = [self, xi, bi, rows, c](Graph& gr) {
            const Tensor& gy = gr.nodes_[self].grad;
            if (gr.wants(xi)) add_into(gr.gbuf(xi), gy);
            if (gr.wants(bi)) {
                double* gb = gr.gbuf(bi).data();
                for (int64_t r = 0; r < rows; ++r)
                    for (int j = 0; j < c; ++j) gb[j] += gy.data()[r * c + j];
            }
        };
    return self;
}

VarId Graph::batch_norm(VarId xi, VarId gi, VarId bi, BnState& bn, bool training,
                        bool update_running) {
    const Tensor& x = val(xi);
    const Tensor& gamma = val(gi);
    const Tensor& beta = val(bi);
    const int c = x.rank() == 1 ? 1 : x.dim(x.rank() - 1);
    const int64_t n = x.size() / c;
    require(gamma.rank() == 1 && gamma.dim(0) == c,
            "batch_norm: gamma length != channel count " + std::to_string(c));
    require(beta.rank() == 1 && beta.dim(0) == c,
            "batch_norm: beta length != channel count " + std::to_string(c));
    require(bn.channels() == c, "batch_norm: running stats sized for " +
                                    std::to_string(bn.channels()) + " channels, input has " +
                                    std::to_string(c));
    require(!training || n >= 1, "batch_norm: empty batch");

    auto xhat = std::make_shared<Tensor>(x.shape());
    auto istd = std::make_shared<std::vector<double>>(size_t(c));
    const double* xd = x.data();
    double* xh = xhat->data();
    if (training) {
        for (int j = 0; j < c; ++j) {
            double mean = 0.0;
            for (int64_t r = 0; r < n; ++r) mean += xd[r * c + j];
            mean /= double(n);
            double var = 0.0;
            for (int64_t r = 0; r < n; ++r) {
                const double d = xd[r * c + j] - mean;
                var += d * d;
            }
            var /= double(n);
            const double is = 1.0 / std::sqrt(var + bn.eps);
            (*istd)[j] = is;
            for (int64_t r = 0; r < n; ++r) xh[r * c + j] = (xd[r * c + j] - mean) * is;
            if (update_running) {
                bn.running_mean.data()[j] = bn.momentum * bn.running_mean.data()[j] +
                                            (1.0 - bn.momentum) * mean;
                bn.running_var.data()[j] = bn.momentum * bn.running_var.data()[j] +
                                           (1.0 - bn.momentum) * var;
            }
        }
    } else {
        for (int j = 0; j < c; ++j) {
            const double mean = bn.running_mean.data()[j];
            const double is = 1.0 / std::sqrt(bn.running_var.data()[j] + bn.eps);
            (*istd)[j] = is;
            for (int64_t r = 0; r < n; ++r) xh[r * c + j] = (xd[r * c + j] - mean) * is;
        }
    }
    Tensor out(x.shape());
    for (int64_t r = 0; r < n; ++r)
        for (int j = 0; j < c; ++j)
            out.data()[r * c + j] = gamma.data()[j] * xh[r * c + j] + beta.data()[j];

    VarId self = make(std::move(out), {xi, gi, bi});
    if (nodes_[self].needs_grad)
        nodes_[self].back = [self, xi, gi, bi, xhat, istd, n, c, training](Graph& gr) {
            const Tensor& gy = gr.nodes_[self].grad;
            const double* gyd = gy.data();
            const double* xh2 = xhat->data();
            std::vector<double> sum_gy(size_t(c), 0.0), sum_gy_xhat(size_t(c), 0.0);
            for (int64_t r = 0; r < n; ++r)
                for (int j = 0; j < c; ++j) {
                    sum_gy[j] += gyd[r * c + j];
                    sum_gy_xhat[j] += gyd[r * c + j] * xh2[r * c + j];
                }
            if (gr.wants(gi)) {
                double* gg = gr.gbuf(gi).data();
                for (int j = 0; j < c; ++j) gg[j] += sum_gy_xhat[j];
            }
            if (gr.wants(bi)) {
                double* gb = gr.gbuf(bi).data();
                for (int j = 0; j < c; ++j) gb[j] += sum_gy[j];
            }
            if (gr.wants(xi)) {
                double* gx = gr.gbuf(xi).data();
                const double* gm = gr.val(gi).data();
                if (training) {
                    for (int64_t r = 0; r < n; ++r)
                        for (int j = 0; j < c; ++j)
                            gx[r * c + j] += (*istd)[j] * gm[j] *
                                             (gyd[r * c + j] -
                                              (sum_gy[j] + xh2[r * c + j] * sum_gy_xhat[j]) /
                                                  double(n));
                } else {
                    for (int64_t r = 0; r < n; ++r)
                        for (int j = 0; j < c; ++j)
                            gx[r * c + j] += gyd[r * c + j] * gm[j] * (*istd)[j];
                }
            }
        };
    return self;
}

VarId Graph::relu(VarId xi) {
    const Tensor& x = val(xi);
    Tensor out(x.shape());
    for (int64_t i = 0; i < x.size(); ++i) out.data()[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
    VarId self = make(std::move(out), {xi});
    if (nodes_[self].needs_grad)
        nodes_[self].back = [self, xi](Graph& gr) {
            if (!gr.wants(xi)) return;
            const Tensor& gy = gr.nodes_[self].grad;
            const Tensor& x2 = gr.val(xi);
            double* gx = gr.gbuf(xi).data();
            for (int64_t i = 0; i < gy.size(); ++i)
                if (x2.data()[i] > 0.0) gx[i] += gy.data()[i];
        };
    return self;
}

VarId Graph::leaky_relu(VarId xi, double slope) {
    require(slope > 0.0 && slope < 1.0, "leaky_relu: slope must be in (0,1)");
    const Tensor& x = val(xi);
    Tensor out(x.shape());
    for (int64_t i = 0; i < x.size(); ++i) {
        const double v = x.data()[i];
        out.data()[i] = v > 0.0 ? v : slope * v;
    }
    VarId self = make(std::move(out), {xi});
    if (nodes_[self].needs_grad)
        nodes_[self].back = [self, xi, slope](Graph& gr) {
            if (!gr.wants(xi)) return;
            const Tensor& gy = gr.nodes_[self].grad;
            const Tensor& x2 = gr.val(xi);
            double* gx = gr.gbuf(xi).data();
            for (int64_t i = 0; i < gy.size(); ++i)
                gx[i] += gy.data()[i] * (x2.data()[i] > 0.0 ? 1.0 : slope);
        };
    return self;
}

VarId Graph::tanh_op(VarId xi) {
    const Tensor& x = val(xi);
    Tensor out(x.shape());
    for (int64_t i = 0; i < x.size(); ++i) out.data()[i] = std::tanh(x.data()[i]);
    VarId self = make(std::move(out), {xi});
    if (nodes_[self].needs_grad)
        nodes_[self].back = [self, xi](Graph& gr) {
            if (!gr.wants(xi)) return;
            const Tensor& gy = gr.nodes_[self].grad;
            const Tensor& y = gr.nodes_[self].value;
            double* gx = gr.gbuf(xi).data();
            for (int64_t i = 0; i < gy.size(); ++i)
                gx[i] += gy.data()[i] * (1.0 - y.data()[i] * y.data()[i]);
        };
    return self;
}

VarId Graph::sigmoid(VarId xi) {
    const Tensor& x = val(xi);
    Tensor out(x.shape());
    for (int64_t i = 0; i < x.size(); ++i) out.data()[i] = 1.0 / (1.0 + std::exp(-x.data()[i]));
    VarId self = make(std::move(out), {xi});
    if (nodes_[self].needs_grad)
        nodes_[self].back = [self, xi](Graph& gr) {
            if (!gr.wants(xi)) return;
            const Tensor& gy = gr.nodes_[self].grad;
            const Tensor& y = gr.nodes_[self].value;
            double* gx = gr.gbuf(xi).data();
            for (int64_t i = 0; i < gy.size(); ++i)
                gx[i] += gy.data()[i] * y.data()[i] * (1.0 - y.data()[i]);
        };
    return self;
}

VarId Graph::dropout(VarId xi, double rate, bool training, Rng& rng) {
    require(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0,1)");
    if (!training || rate == 0.0) return xi;
    const Tensor& x = val(xi);
    Tensor mask(x.shape());
    const double keep_scale = 1.0 / (1.0 - rate);
    for (int64_t i = 0; i < mask.size(); ++i)
        mask.data()[i] = rng.uniform() < rate ? 0.0 : keep_scale;
    return dropout_masked(xi, std::move(mask));
}

VarId Graph::dropout_masked(VarId xi, Tensor mask) {
    const Tensor& x = val(xi);
    require(mask.shape() == x.shape(), "dropout mask shape " + mask.shape_str() +
                                           " != input shape " + x.shape_str());
    auto m = std::make_shared<Tensor>(std::move(mask));
    Tensor out(x.shape());
    for (int64_t i = 0; i < x.size(); ++i) out.data()[i] = x.data()[i] * m->data()[i];
    VarId self = make(std::move(out), {xi});
    if (nodes_[self].needs_grad)
        nodes_[self].back = [self, xi, m](Graph& gr) {
            if (!gr.wants(xi)) return;
            const Tensor& gy = gr.nodes_[self].grad;
            double* gx = gr.gbuf(xi).data();
            for (int64_t i = 0; i < gy.size(); ++i) gx[i] += gy.data()[i] * m->data()[i];
        };
    return self;
}

VarId Graph::concat_channels(VarId ai, VarId bi) {
    const Tensor& a = val(ai);
    const Tensor& b = val(bi);
    require(a.rank() == b.rank() && a.rank() >= 1,
            "concat: rank mismatch " + a.shape_str() + " vs " + b.shape_str());
    for (int d = 0; d + 1 < a.rank(); ++d)
        require(a.dim(d) == b.dim(d), "concat: non-channel axis " + std::to_string(d) +
                                          " mismatch " + a.shape_str() + " vs " + b.shape_str());
    const int ca = a.dim(a.rank() - 1), cb = b.dim(b.rank() - 1);
    std::vector<int> shape = a.shape();
    shape.back() = ca + cb;
    Tensor out(shape);
    const int64_t rows = a.size() / ca;
    for (int64_t r = 0; r < rows; ++r) {
        double* o = out.data() + r * (ca + cb);
        const double* pa = a.data() + r * ca;
        const double* pb = b.data() + r * cb;
        for (int j = 0; j < ca; ++j) o[j] = pa[j];
        for (int j = 0; j < cb; ++j) o[ca + j] = pb[j];
    }
    VarId self = make(std::move(out), {ai, bi});
    if (nodes_[self].needs_grad)
        nodes_[self].back = [self, ai, bi, rows, ca, cb](Graph& gr) {
            const Tensor& gy = gr.nodes_[self].grad;
            if (gr.wants(ai)) {
                double* ga = gr.gbuf(ai).data();
                for (int64_t r = 0; r < rows; ++r)
                    for (int j = 0; j < ca; ++j) ga[r * ca + j] += gy.data()[r * (ca + cb) + j];
            }
            if (gr.wants(bi)) {
                double* gb = gr.gbuf(bi).data();
                for (int64_t r = 0; r < rows; ++r)
                    for (int j = 0; j < cb; ++j)
                        gb[r * cb + j] += gy.data()[r * (ca + cb) + ca + j];
            }
        };
    return self;
}

VarId Graph::reshape(VarId xi, std::vector<int> shape) {
    const Tensor& x = val(xi);
    Tensor out = Tensor::from(shape, std::vector<double>(x.data(), x.data() + x.size()));
    VarId self = make(std::move(out), {xi});
    if (nodes_[self].needs_grad)
        nodes_[self].back = [self, xi](Graph& gr) {
            if (!gr.wants(xi)) return;
            const Tensor& gy = gr.nodes_[self].grad;
            double* gx = gr.gbuf(xi).data();
            for (int64_t i = 0; i < gy.size(); ++i) gx[i] += gy.data()[i];
        };
    return self;
}

VarId Graph::flatten(VarId xi) {
    const Tensor& x = val(xi);
    switch (x.rank()) {
        case 1:
        case 2:
            return reshape(xi, x.shape());
        case 3:
            return reshape(xi, {int(x.size())});
        case 4:
            return reshape(xi, {x.dim(0), int(x.size() / x.dim(0))});
        default:
            throw DimensionError("flatten: unsupported rank for " + x.shape_str());
    }
}

VarId Graph::slice_sample(VarId xi, int index) {
    const Tensor& x = val(xi);
    require(x.rank() >= 2, "slice_sample: need a leading batch axis, got " + x.shape_str());
    require(index >= 0 && index < x.dim(0),
            "slice_sample: index " + std::to_string(index) + " out of batch " +
                std::to_string(x.dim(0)));
    const int64_t stride = x.size() / x.dim(0);
    std::vector<int> shape(x.shape().begin() + 1, x.shape().end());
    Tensor out = Tensor::from(shape, std::vector<double>(x.data() + index * stride,
                                                         x.data() + (index + 1) * stride));
    VarId self = make(std::move(out), {xi});
    if (nodes_[self].needs_grad)
        nodes_[self].back = [self, xi, index, stride](Graph& gr) {
            if (!gr.wants(xi)) return;
            const Tensor& gy = gr.nodes_[self].grad;
            double* gx = gr.gbuf(xi).data() + index * stride;
            for (int64_t i = 0; i < stride; ++i) gx[i] += gy.data()[i];
        };
    return self;
}

VarId Graph::squeeze_last(VarId xi) {
    const Tensor& x = val(xi);
    require(x.rank() >= 2 && x.dim(x.rank() - 1) == 1,
            "squeeze_last: trailing axis must be 1, got " + x.shape_str());
    std::vector<int> shape(x.shape().begin(), x.shape().end() - 1);
    return reshape(xi, shape);
}

VarId Graph::add(VarId ai, VarId bi) {
    const Tensor& a = val(ai);
    const Tensor& b = val(bi);
    require(a.shape() == b.shape(),
            "add: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    Tensor out(a.shape());
    for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
    VarId self = make(std::move(out), {ai, bi});
    if (nodes_[self].needs_grad)
        nodes_[self].back = [self, ai, bi](Graph& gr) {
            const Tensor& gy = gr.nodes_[self].grad;
            if (gr.wants(ai)) add_into(gr.gbuf(ai), gy);
            if (gr.wants(bi)) add_into(gr.gbuf(bi), gy);
        };
    return self;
}

VarId Graph::sub(VarId ai, VarId bi) {
    const Tensor& a = val(ai);
    const Tensor& b = val(bi);
    require(a.shape() == b.shape(),
            "sub: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    Tensor out(a.shape());
    for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
    VarId self = make(std::move(out), {ai, bi});
    if (nodes_[self].needs_grad)
        nodes_[self].back = [self, ai, bi](Graph& gr) {
            const Tensor& gy = gr.nodes_[self].grad;
            if (gr.wants(ai)) add_into(gr.gbuf(ai), gy);
            if (gr.wants(bi)) {
                double* gb = gr.gbuf(bi).data();
                for (int64_t i = 0; i < gy.size(); ++i) gb[i] -= gy.data()[i];
            }
        };
    return self;
}

VarId Graph::mul_scalar(VarId xi, double cv) {
    const Tensor& x = val(xi);
    Tensor out(x.shape());
    for (int64_t i = 0; i < x.size(); ++i) out.data()[i] = x.data()[i] * cv;
    VarId self = make(std::move(out), {xi});
    if (nodes_[self].needs_grad)
        nodes_[self].back = [self, xi, cv](Graph& gr) {
            if (!gr.wants(xi)) return;
            const Tensor& gy = gr.nodes_[self].grad;
            double* gx = gr.gbuf(xi).data();
            for (int64_t i = 0; i < gy.size(); ++i) gx[i] += gy.data()[i] * cv;
        };
    return self;
}

VarId Graph::add_scalar(VarId xi, double cv) {
    const Tensor& x = val(xi);
    Tensor out(x.shape());
    for (int64_t i = 0; i < x.size(); ++i) out.data()[i] = x.data()[i] + cv;
    VarId self = make(std::move(out), {xi});
    if (nodes_[self].needs_grad)
        nodes_[self].back = [self, xi](Graph& gr) {
            if (gr.wants(xi)) add_into(gr.gbuf(xi), gr.nodes_[self].grad);
        };
    return self;
}

VarId Graph::rsub_scalar(double cv, VarId xi) {
    const Tensor& x = val(xi);
    Tensor out(x.shape());
    for (int64_t i = 0; i < x.size(); ++i) out.data()[i] = cv - x.data()[i];
    VarId self = make(std::move(out), {xi});
    if (nodes_[self].needs_grad)
        nodes_[self].back = [self, xi](Graph& gr) {
            if (!gr.wants(xi)) return;
            const Tensor& gy = gr.nodes_[self].grad;
            double* gx = gr.gbuf(xi).data();
            for (int64_t i = 0; i < gy.size(); ++i) gx[i] -= gy.data()[i];
        };
    return self;
}

VarId Graph::abs_op(VarId xi) {
    const Tensor& x = val(xi);
    Tensor out(x.shape());
    for (int64_t i = 0; i < x.size(); ++i) out.data()[i] = std::fabs(x.data()[i]);
    VarId self = make(std::move(out), {xi});
    if (nodes_[self].needs_grad)
        nodes_[self].back = [self, xi](Graph& gr) {
            if (!gr.wants(xi)) return;
            const Tensor& gy = gr.nodes_[self].grad;
            const Tensor& x2 = gr.val(xi);
            double* gx = gr.gbuf(xi).data();
            for (int64_t i = 0; i < gy.size(); ++i) {
                const double v = x2.data()[i];
                if (v > 0.0)
                    gx[i] += gy.data()[i];
                else if (v < 0.0)
                    gx[i] -= gy.data()[i];
            }
        };
    return self;
}

VarId Graph::powi(VarId xi, int p) {
    require(p >= 1, "powi: exponent must be >= 1");
    const Tensor& x = val(xi);
    if (p == 1) return reshape(xi, x.shape());
    Tensor out(x.shape());
    for (int64_t i = 0; i < x.size(); ++i) {
        double v = x.data()[i];
        double acc = v;
        for (int q = 1; q < p; ++q) acc *= v;
        out.data()[i] = acc;
    }
    VarId self = make(std::move(out), {xi});
    if (nodes_[self].needs_grad)
        nodes_[self].back = [self, xi, p](Graph& gr) {
            if (!gr.wants(xi)) return;
            const Tensor& gy = gr.nodes_[self].grad;
            const Tensor& x2 = gr.val(xi);
            double* gx = gr.gbuf(xi).data();
            for (int64_t i = 0; i < gy.size(); ++i) {
                double v = x2.data()[i];
                double acc = 1.0;
                for (int q = 1; q < p; ++q) acc *= v;
                gx[i] += gy.data()[i] * double(p) * acc;
            }
        };
    return self;
}

VarId Graph::log_op(VarId xi) {
    const Tensor& x = val(xi);
    Tensor out(x.shape());
    for (int64_t i = 0; i < x.size(); ++i) {
        if (!(x.data()[i] > 0.0)) throw Error("log: non-positive input " +
                                              std::to_string(x.data()[i]));
        out.data()[i] = std::log(x.data()[i]);
    }
    VarId self = make(std::move(out), {xi});
    if (nodes_[self].needs_grad)
        nodes_[self].back = [self, xi](Graph& gr) {
            if (!gr.wants(xi)) return;
            const Tensor& gy = gr.nodes_[self].grad;
            const Tensor& x2 = gr.val(xi);
            double* gx = gr.gbuf(xi).data();
            for (int64_t i = 0; i < gy.size(); ++i) gx[i] += gy.data()[i] / x2.data()[i];
        };
    return self;
}

VarId Graph::clamp(VarId xi, double lo, double hi) {
    require(lo < hi, "clamp: lo must be < hi");
    const Tensor& x = val(xi);
    Tensor out(x.shape());
    for (int64_t i = 0; i < x.size(); ++i)
        out.data()[i] = std::min(std::max(x.data()[i], lo), hi);
    VarId self = make(std::move(out), {xi});
    if (nodes_[self].needs_grad)
        nodes_[self].back = [self, xi, lo, hi](Graph& gr) {
            if (!gr.wants(xi)) return;
            const Tensor& gy = gr.nodes_[self].grad;
            const Tensor& x2 = gr.val(xi);
            double* gx = gr.gbuf(xi).data();
            for (int64_t i = 0; i < gy.size(); ++i) {
                const double v = x2.data()[i];
                if (v >= lo && v <= hi) gx[i] += gy.data()[i];
            }
        };
    return self;
}

VarId Graph::sum(VarId xi) {
    const Tensor& x = val(xi);
    double acc = 0.0;
    for (int64_t i = 0; i < x.size(); ++i) acc += x.data()[i];
    VarId self = make(Tensor::scalar(acc), {xi});
    if (nodes_[self].needs_grad)
        nodes_[self].back = [self, xi](Graph& gr) {
            if (!gr.wants(xi)) return;
            const double g0 = gr.nodes_[self].grad.data()[0];
            Tensor& gx = gr.gbuf(xi);
            for (int64_t i = 0; i < gx.size(); ++i) gx.data()[i] += g0;
        };
    return self;
}

VarId Graph::row_diff(VarId xi) {
    const Tensor& x = val(xi);
    require(x.rank() == 2 || x.rank() == 3,
            "row_diff: need (H,W) or (M,H,W), got " + x.shape_str());
    const bool batched = x.rank() == 3;
    const int m = batched ? x.dim(0) : 1;
    const int h = x.dim(batched ? 1 : 0), w = x.dim(batched ? 2 : 1);
    require(h >= 2, "row_diff: need at least 2 rows, got " + x.shape_str());
    Tensor out(batched ? std::vector<int>{m, h - 1, w} : std::vector<int>{h - 1, w});
    for (int s = 0; s < m; ++s)
        for (int i = 0; i + 1 < h; ++i)
            for (int j = 0; j < w; ++j)
                out.data()[(int64_t(s) * (h - 1) + i) * w + j] =
                    x.data()[(int64_t(s) * h + i + 1) * w + j] -
                    x.data()[(int64_t(s) * h + i) * w + j];
    VarId self = make(std::move(out), {xi});
    if (nodes_[self].needs_grad)
        nodes_[self].back = [self, xi, m, h, w](Graph& gr) {
            if (!gr.wants(xi)) return;
            const Tensor& gy = gr.nodes_[self].grad;
            double* gx = gr.gbuf(xi).data();
            for (int s = 0; s < m; ++s)
                for (int i = 0; i + 1 < h; ++i)
                    for (int j = 0; j < w; ++j) {
                        const double g = gy.data()[(int64_t(s) * (h - 1) + i) * w + j];
                        gx[(int64_t(s) * h + i + 1) * w + j] += g;
                        gx[(int64_t(s) * h + i) * w + j] -= g;
                    }
        };
    return self;
}

VarId Graph::col_diff(VarId xi) {
    const Tensor& x = val(xi);
    require(x.rank() == 2 || x.rank() == 3,
            "col_diff: need (H,W) or (M,H,W), got " + x.shape_str());
    const bool batched = x.rank() == 3;
    const int m = batched ? x.dim(0) : 1;
    const int h = x.dim(batched ? 1 : 0), w = x.dim(batched ? 2 : 1);
    require(w >= 2, "col_diff: need at least 2 columns, got " + x.shape_str());
    Tensor out(batched ? std::vector<int>{m, h, w - 1} : std::vector<int>{h, w - 1});
    for (int s = 0; s < m; ++s)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j + 1 < w; ++j)
                out.data()[(int64_t(s) * h + i) * (w - 1) + j] =
                    x.data()[(int64_t(s) * h + i) * w + j + 1] -
                    x.data()[(int64_t(s) * h + i) * w + j];
    VarId self = make(std::move(out), {xi});
    if (nodes_[self].needs_grad)
        nodes_[self].back = [self, xi, m, h, w](Graph& gr) {
            if (!gr.wants(xi)) return;
            const Tensor& gy = gr.nodes_[self].grad;
            double* gx = gr.gbuf(xi).data();
            for (int s = 0; s < m; ++s)
                for (int i = 0; i < h; ++i)
                    for (int j = 0; j + 1 < w; ++j) {
                        const double g = gy.data()[(int64_t(s) * h + i) * (w - 1) + j];
                        gx[(int64_t(s) * h + i) * w + j + 1] += g;
                        gx[(int64_t(s) * h + i) * w + j] -= g;
                    }
        };
    return self;
}

}  // namespace lmpforge
