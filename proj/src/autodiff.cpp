#include "pkinet/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace pkinet {

void Tape::check_id(ValueId id) const {
    if (id < 0 || id >= static_cast<ValueId>(nodes_.size())) {
        throw std::invalid_argument("tape: value id " + std::to_string(id) +
                                    " is not on this tape");
    }
}

const Tape::Node& Tape::node(ValueId id) const {
    check_id(id);
    return nodes_[static_cast<std::size_t>(id)];
}

ValueId Tape::push(Node n) {
    for (int i = 0; i < n.n_in; ++i) {
        check_id(n.in[static_cast<std::size_t>(i)]);
        n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(
                                                 n.in[static_cast<std::size_t>(i)])]
                                                 .requires_grad;
    }
    nodes_.push_back(std::move(n));
    return static_cast<ValueId>(nodes_.size() - 1);
}

ValueId Tape::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.kind = OpKind::Leaf;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return static_cast<ValueId>(nodes_.size() - 1);
}

const Tensor& Tape::value(ValueId id) const { return node(id).value; }

bool Tape::requires_grad(ValueId id) const { return node(id).requires_grad; }

ValueId Tape::add(ValueId a, ValueId b) {
    Node n;
    n.kind = OpKind::Add;
    n.in = {a, b, -1};
    n.n_in = 2;
    n.value = elementwise_add(value(a), value(b));
    return push(std::move(n));
}

ValueId Tape::mul(ValueId a, ValueId b) {
    Node n;
    n.kind = OpKind::Mul;
    n.in = {a, b, -1};
    n.n_in = 2;
    n.value = elementwise_mul(value(a), value(b));
    return push(std::move(n));
}

ValueId Tape::sigmoid(ValueId a) {
    Node n;
    n.kind = OpKind::Sigmoid;
    n.in = {a, -1, -1};
    n.n_in = 1;
    n.value = ::pkinet::sigmoid(value(a));
    return push(std::move(n));
}

ValueId Tape::silu(ValueId a) {
    Node n;
    n.kind = OpKind::SiLU;
    n.in = {a, -1, -1};
    n.n_in = 1;
    n.value = ::pkinet::silu(value(a));
    return push(std::move(n));
}

ValueId Tape::conv2d(ValueId input, ValueId weights, std::optional<ValueId> bias,
                     const ConvGeom& geom) {
    Node n;
    n.kind = OpKind::Conv2d;
    n.in = {input, weights, bias ? *bias : -1};
    n.n_in = bias ? 3 : 2;
    n.geom = geom;
    n.value = conv2d_raw(value(input), value(weights),
                         bias ? &value(*bias) : nullptr, geom);
    return push(std::move(n));
}

ValueId Tape::avg_pool(ValueId a, int k, int stride, int pad) {
    Node n;
    n.kind = OpKind::AvgPool;
    n.in = {a, -1, -1};
    n.n_in = 1;
    n.pool_k = k;
    n.pool_stride = stride;
    n.pool_pad = pad;
    n.value = avg_pool2d(value(a), k, stride, pad);
    return push(std::move(n));
}

ValueId Tape::global_avg_pool(ValueId a) {
    Node n;
    n.kind = OpKind::GlobalAvgPool;
    n.in = {a, -1, -1};
    n.n_in = 1;
    n.value = ::pkinet::global_avg_pool(value(a));
    return push(std::move(n));
}

ValueId Tape::batch_norm(ValueId x, ValueId gamma, ValueId beta, double eps) {
    const Tensor& xv = value(x);
    const Tensor& gv = value(gamma);
    const Tensor& bv = value(beta);
    const Shape s = xv.shape();
    const Shape want{1, s.c, 1, 1};
    if (!(gv.shape() == want) || !(bv.shape() == want)) {
        throw std::invalid_argument("batch_norm: gamma/beta must be " + want.str());
    }

    Node n;
    n.kind = OpKind::BatchNorm;
    n.in = {x, gamma, beta};
    n.n_in = 3;
    n.bn_eps = eps;

    Tensor mean(want, xv.dtype());
    Tensor inv_std(want, xv.dtype());
    Tensor out(s, xv.dtype());
    const std::int64_t nper = s.b * s.h * s.w;
    const std::int64_t hw = s.h * s.w;
    for (std::int64_t c = 0; c < s.c; ++c) {
        double m = 0.0;
        for (std::int64_t b = 0; b < s.b; ++b)
            for (std::int64_t i = 0; i < hw; ++i)
                m += xv.get_flat((b * s.c + c) * hw + i);
        m /= static_cast<double>(nper);
        double var = 0.0;
        for (std::int64_t b = 0; b < s.b; ++b)
            for (std::int64_t i = 0; i < hw; ++i) {
                const double d = xv.get_flat((b * s.c + c) * hw + i) - m;
                var += d * d;
            }
        var /= static_cast<double>(nper);
        const double istd = 1.0 / std::sqrt(var + eps);
        mean.set_flat(c, m);
        inv_std.set_flat(c, istd);
        const double ga = gv.get_flat(c);
        const double be = bv.get_flat(c);
        for (std::int64_t b = 0; b < s.b; ++b)
            for (std::int64_t i = 0; i < hw; ++i) {
                const std::int64_t idx = (b * s.c + c) * hw + i;
                out.set_flat(idx, ga * (xv.get_flat(idx) - m) * istd + be);
            }
    }
    n.value = std::move(out);
    n.aux_a = std::move(mean);
    n.aux_b = std::move(inv_std);
    return push(std::move(n));
}

std::pair<ValueId, ValueId> Tape::channel_split(ValueId a, std::int64_t at) {
    auto [lo, hi] = ::pkinet::channel_split(value(a), at);
    Node nlo;
    nlo.kind = OpKind::SplitLo;
    nlo.in = {a, -1, -1};
    nlo.n_in = 1;
    nlo.split_at = at;
    nlo.value = std::move(lo);
    const ValueId lo_id = push(std::move(nlo));
    Node nhi;
    nhi.kind = OpKind::SplitHi;
    nhi.in = {a, -1, -1};
    nhi.n_in = 1;
    nhi.split_at = at;
    nhi.value = std::move(hi);
    const ValueId hi_id = push(std::move(nhi));
    return {lo_id, hi_id};
}

ValueId Tape::channel_concat(ValueId a, ValueId b) {
    Node n;
    n.kind = OpKind::Concat;
    n.in = {a, b, -1};
    n.n_in = 2;
    n.split_at = value(a).shape().c;
    n.value = ::pkinet::channel_concat(value(a), value(b));
    return push(std::move(n));
}

ValueId Tape::sum(ValueId a) {
    const Tensor& av = value(a);
    Tensor out(Shape{1, 1, 1, 1}, av.dtype());
    double acc = 0.0;
    for (std::int64_t i = 0; i < av.numel(); ++i) acc += av.get_flat(i);
    out.set_flat(0, acc);
    Node n;
    n.kind = OpKind::Sum;
    n.in = {a, -1, -1};
    n.n_in = 1;
    n.value = std::move(out);
    return push(std::move(n));
}

ValueId Tape::softmax_cross_entropy(ValueId logits, std::vector<int> labels) {
    const Tensor& lv = value(logits);
    const Shape s = lv.shape();
    if (s.h != 1 || s.w != 1) {
        throw std::invalid_argument("softmax_cross_entropy: logits must be (B,K,1,1)");
    }
    if (static_cast<std::int64_t>(labels.size()) != s.b) {
        throw std::invalid_argument("softmax_cross_entropy: got " +
                                    std::to_string(labels.size()) + " labels for batch " +
                                    std::to_string(s.b));
    }
    Tensor probs(s, lv.dtype());
    double loss = 0.0;
    for (std::int64_t b = 0; b < s.b; ++b) {
        const int label = labels[static_cast<std::size_t>(b)];
        if (label < 0 || static_cast<std::int64_t>(label) >= s.c) {
            throw std::invalid_argument("softmax_cross_entropy: label " +
                                        std::to_string(label) + " out of range");
        }
        double mx = lv.get_flat(b * s.c);
        for (std::int64_t k = 1; k < s.c; ++k) mx = std::max(mx, lv.get_flat(b * s.c + k));
        double denom = 0.0;
        for (std::int64_t k = 0; k < s.c; ++k) denom += std::exp(lv.get_flat(b * s.c + k) - mx);
        const double logz = std::log(denom) + mx;
        for (std::int64_t k = 0; k < s.c; ++k) {
            probs.set_flat(b * s.c + k, std::exp(lv.get_flat(b * s.c + k) - logz));
        }
        loss += logz - lv.get_flat(b * s.c + label);
    }
    loss /= static_cast<double>(s.b);

    Node n;
    n.kind = OpKind::SoftmaxCE;
    n.in = {logits, -1, -1};
    n.n_in = 1;
    n.labels = std::move(labels);
    n.aux_a = std::move(probs);
    Tensor out(Shape{1, 1, 1, 1}, lv.dtype());
    out.set_flat(0, loss);
    n.value = std::move(out);
    return push(std::move(n));
}

// ---- backward ----

bool Tape::GradMap::has(ValueId id) const {
    return id >= 0 && id < static_cast<ValueId>(present_.size()) &&
           present_[static_cast<std::size_t>(id)] != 0;
}

const Tensor& Tape::GradMap::at(ValueId id) const {
    if (!has(id)) {
        throw std::invalid_argument("gradients: no gradient recorded for value " +
                                    std::to_string(id));
    }
    return grads_[static_cast<std::size_t>(id)];
}

namespace {

struct GradStore {
    std::vector<Tensor> grads;
    std::vector<char> present;

    void init(std::size_t n) {
        grads.resize(n);
        present.assign(n, 0);
    }
    void accumulate(ValueId id, const Shape& shape, const std::function<void(double*)>& adder) {
        auto& t = grads[static_cast<std::size_t>(id)];
        if (!present[static_cast<std::size_t>(id)]) {
            t = Tensor::zeros(shape, DType::F64);
            present[static_cast<std::size_t>(id)] = 1;
        }
        adder(t.data<double>());
    }
    bool has(ValueId id) const { return present[static_cast<std::size_t>(id)] != 0; }
    const Tensor& at(ValueId id) const { return grads[static_cast<std::size_t>(id)]; }
};

// d_input and d_weights for a conv node, same tap enumeration as the forward.
void conv_backward(const Tensor& input, const Tensor& weights, const ConvGeom& g,
                   const Tensor& gout, Tensor* d_input, Tensor* d_weights,
                   Tensor* d_bias) {
    const Shape si = input.shape();
    const Shape so = gout.shape();
    const Shape ws = weights.shape();
    const double* in = input.data<double>();
    const double* w = weights.data<double>();
    const double* go = gout.data<double>();
    double* di = d_input ? d_input->data<double>() : nullptr;
    double* dw = d_weights ? d_weights->data<double>() : nullptr;
    double* db = d_bias ? d_bias->data<double>() : nullptr;

    const std::int64_t cpg = ws.c;
    const std::int64_t opg = ws.b / g.groups;
    const std::int64_t khw = ws.h * ws.w;

    for (std::int64_t b = 0; b < so.b; ++b) {
        for (std::int64_t oc = 0; oc < so.c; ++oc) {
            const std::int64_t grp = oc / opg;
            const double* wbase = w + oc * cpg * khw;
            double* dwbase = dw ? dw + oc * cpg * khw : nullptr;
            const double* gbase = go + (b * so.c + oc) * so.h * so.w;
            for (std::int64_t oy = 0; oy < so.h; ++oy) {
                for (std::int64_t ox = 0; ox < so.w; ++ox) {
                    const double gv = gbase[oy * so.w + ox];
                    if (db) db[oc] += gv;
                    for (std::int64_t c = 0; c < cpg; ++c) {
                        const std::int64_t ic = grp * cpg + c;
                        const double* ibase = in + (b * si.c + ic) * si.h * si.w;
                        double* dibase = di ? di + (b * si.c + ic) * si.h * si.w : nullptr;
                        for (std::int64_t i = 0; i < ws.h; ++i) {
                            const std::int64_t y = oy * g.stride - g.pad_h + i * g.dilation;
                            if (y < 0 || y >= si.h) continue;
                            for (std::int64_t j = 0; j < ws.w; ++j) {
                                const std::int64_t x = ox * g.stride - g.pad_w + j * g.dilation;
                                if (x < 0 || x >= si.w) continue;
                                if (dw) dwbase[c * khw + i * ws.w + j] += gv * ibase[y * si.w + x];
                                if (di) dibase[y * si.w + x] += gv * wbase[c * khw + i * ws.w + j];
                            }
                        }
                    }
                }
            }
        }
    }
}

} // namespace

Tape::GradMap Tape::backward(ValueId loss) const {
    check_id(loss);
    const Node& ln = node(loss);
    if (ln.value.numel() != 1) {
        throw std::invalid_argument("backward: loss must be a 1-element tensor, got shape " +
                                    ln.value.shape().str());
    }
    if (ln.value.dtype() != DType::F64) {
        throw std::invalid_argument("backward: loss must be f64");
    }

    GradStore store;
    store.init(nodes_.size());
    store.accumulate(loss, Shape{1, 1, 1, 1}, [](double* d) { d[0] += 1.0; });

    for (ValueId id = loss; id >= 0; --id) {
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!store.has(id) || !n.requires_grad || n.kind == OpKind::Leaf) continue;
        const Tensor& g = store.at(id);
        const double* gp = g.data<double>();

        auto in_val = [&](int i) -> const Tensor& {
            return nodes_[static_cast<std::size_t>(n.in[static_cast<std::size_t>(i)])].value;
        };
        auto needs = [&](int i) {
            return nodes_[static_cast<std::size_t>(n.in[static_cast<std::size_t>(i)])]
                .requires_grad;
        };

        switch (n.kind) {
        case OpKind::Add: {
            for (int s = 0; s < 2; ++s) {
                if (!needs(s)) continue;
                store.accumulate(n.in[static_cast<std::size_t>(s)], g.shape(), [&](double* d) {
                    for (std::int64_t i = 0; i < g.numel(); ++i) d[i] += gp[i];
                });
            }
            break;
        }
        case OpKind::Mul: {
            for (int s = 0; s < 2; ++s) {
                if (!needs(s)) continue;
                const Tensor& other = in_val(1 - s);
                const double* op = other.data<double>();
                store.accumulate(n.in[static_cast<std::size_t>(s)], g.shape(), [&](double* d) {
                    for (std::int64_t i = 0; i < g.numel(); ++i) d[i] += gp[i] * op[i];
                });
            }
            break;
        }
        case OpKind::Sigmoid: {
            const double* y = n.value.data<double>();
            store.accumulate(n.in[0], g.shape(), [&](double* d) {
                for (std::int64_t i = 0; i < g.numel(); ++i)
                    d[i] += gp[i] * y[i] * (1.0 - y[i]);
            });
            break;
        }
        case OpKind::SiLU: {
            const double* x = in_val(0).data<double>();
            store.accumulate(n.in[0], g.shape(), [&](double* d) {
                for (std::int64_t i = 0; i < g.numel(); ++i) {
                    const double s = 1.0 / (1.0 + std::exp(-x[i]));
                    d[i] += gp[i] * s * (1.0 + x[i] * (1.0 - s));
                }
            });
            break;
        }
        case OpKind::Conv2d: {
            const Tensor& input = in_val(0);
            const Tensor& weights = in_val(1);
            Tensor d_in, d_w, d_b;
            const bool want_in = needs(0);
            const bool want_w = needs(1);
            const bool want_b = n.n_in == 3 && needs(2);
            if (want_in) d_in = Tensor::zeros(input.shape(), DType::F64);
            if (want_w) d_w = Tensor::zeros(weights.shape(), DType::F64);
            if (want_b) d_b = Tensor::zeros(in_val(2).shape(), DType::F64);
            conv_backward(input, weights, n.geom, g, want_in ? &d_in : nullptr,
                          want_w ? &d_w : nullptr, want_b ? &d_b : nullptr);
            if (want_in) {
                const double* sp = d_in.data<double>();
                store.accumulate(n.in[0], input.shape(), [&](double* d) {
                    for (std::int64_t i = 0; i < input.numel(); ++i) d[i] += sp[i];
                });
            }
            if (want_w) {
                const double* sp = d_w.data<double>();
                store.accumulate(n.in[1], weights.shape(), [&](double* d) {
                    for (std::int64_t i = 0; i < weights.numel(); ++i) d[i] += sp[i];
                });
            }
            if (want_b) {
                const double* sp = d_b.data<double>();
                store.accumulate(n.in[2], in_val(2).shape(), [&](double* d) {
                    for (std::int64_t i = 0; i < in_val(2).numel(); ++i) d[i] += sp[i];
                });
            }
            break;
        }
        case OpKind::AvgPool: {
            const Shape si = in_val(0).shape();
            const Shape so = n.value.shape();
            const double inv = 1.0 / (static_cast<double>(n.pool_k) * n.pool_k);
            store.accumulate(n.in[0], si, [&](double* d) {
                for (std::int64_t b = 0; b < si.b; ++b)
                    for (std::int64_t c = 0; c < si.c; ++c) {
                        const double* gb = gp + (b * so.c + c) * so.h * so.w;
                        double* db = d + (b * si.c + c) * si.h * si.w;
                        for (std::int64_t oy = 0; oy < so.h; ++oy)
                            for (std::int64_t ox = 0; ox < so.w; ++ox) {
                                const double gv = gb[oy * so.w + ox] * inv;
                                for (int i = 0; i < n.pool_k; ++i) {
                                    const std::int64_t y = oy * n.pool_stride - n.pool_pad + i;
                                    if (y < 0 || y >= si.h) continue;
                                    for (int j = 0; j < n.pool_k; ++j) {
                                        const std::int64_t x =
                                            ox * n.pool_stride - n.pool_pad + j;
                                        if (x < 0 || x >= si.w) continue;
                                        db[y * si.w + x] += gv;
                                    }
                                }
                            }
                    }
            });
            break;
        }
        case OpKind::GlobalAvgPool: {
            const Shape si = in_val(0).shape();
            const double inv = 1.0 / static_cast<double>(si.h * si.w);
            store.accumulate(n.in[0], si, [&](double* d) {
                for (std::int64_t b = 0; b < si.b; ++b)
                    for (std::int64_t c = 0; c < si.c; ++c) {
                        const double gv = gp[b * si.c + c] * inv;
                        double* db = d + (b * si.c + c) * si.h * si.w;
                        for (std::int64_t i = 0; i < si.h * si.w; ++i) db[i] += gv;
                    }
            });
            break;
        }
        case OpKind::BatchNorm: {
            const Tensor& x = in_val(0);
            const Tensor& gamma = in_val(1);
            const Shape s = x.shape();
            const std::int64_t hw = s.h * s.w;
            const std::int64_t nper = s.b * hw;
            const double* xp = x.data<double>();
            const double* gam = gamma.data<double>();
            const double* mean = n.aux_a.data<double>();
            const double* istd = n.aux_b.data<double>();

            if (needs(1)) {
                store.accumulate(n.in[1], gamma.shape(), [&](double* d) {
                    for (std::int64_t c = 0; c < s.c; ++c) {
                        double acc = 0.0;
                        for (std::int64_t b = 0; b < s.b; ++b)
                            for (std::int64_t i = 0; i < hw; ++i) {
                                const std::int64_t idx = (b * s.c + c) * hw + i;
                                acc += gp[idx] * (xp[idx] - mean[c]) * istd[c];
                            }
                        d[c] += acc;
                    }
                });
            }
            if (needs(2)) {
                store.accumulate(n.in[2], gamma.shape(), [&](double* d) {
                    for (std::int64_t c = 0; c < s.c; ++c) {
                        double acc = 0.0;
                        for (std::int64_t b = 0; b < s.b; ++b)
                            for (std::int64_t i = 0; i < hw; ++i)
                                acc += gp[(b * s.c + c) * hw + i];
                        d[c] += acc;
                    }
                });
            }
            if (needs(0)) {
                store.accumulate(n.in[0], s, [&](double* d) {
                    for (std::int64_t c = 0; c < s.c; ++c) {
                        double sum_g = 0.0, sum_gx = 0.0;
                        for (std::int64_t b = 0; b < s.b; ++b)
                            for (std::int64_t i = 0; i < hw; ++i) {
                                const std::int64_t idx = (b * s.c + c) * hw + i;
                                const double xh = (xp[idx] - mean[c]) * istd[c];
                                sum_g += gp[idx];
                                sum_gx += gp[idx] * xh;
                            }
                        const double mg = sum_g / static_cast<double>(nper);
                        const double mgx = sum_gx / static_cast<double>(nper);
                        const double k = gam[c] * istd[c];
                        for (std::int64_t b = 0; b < s.b; ++b)
                            for (std::int64_t i = 0; i < hw; ++i) {
                                const std::int64_t idx = (b * s.c + c) * hw + i;
                                const double xh = (xp[idx] - mean[c]) * istd[c];
                                d[idx] += k * (gp[idx] - mg - xh * mgx);
                            }
                    }
                });
            }
            break;
        }
        case OpKind::SplitLo:
        case OpKind::SplitHi: {
            const Shape si = in_val(0).shape();
            const Shape sg = g.shape();
            const std::int64_t c0 = n.kind == OpKind::SplitLo ? 0 : n.split_at;
            const std::int64_t hw = si.h * si.w;
            store.accumulate(n.in[0], si, [&](double* d) {
                for (std::int64_t b = 0; b < sg.b; ++b)
                    for (std::int64_t c = 0; c < sg.c; ++c) {
                        const double* gb = gp + (b * sg.c + c) * hw;
                        double* db = d + (b * si.c + c0 + c) * hw;
                        for (std::int64_t i = 0; i < hw; ++i) db[i] += gb[i];
                    }
            });
            break;
        }
        case OpKind::Concat: {
            const Shape sg = g.shape();
            const std::int64_t hw = sg.h * sg.w;
            for (int s = 0; s < 2; ++s) {
                if (!needs(s)) continue;
                const Shape si = in_val(s).shape();
                const std::int64_t c0 = s == 0 ? 0 : n.split_at;
                store.accumulate(n.in[static_cast<std::size_t>(s)], si, [&](double* d) {
                    for (std::int64_t b = 0; b < si.b; ++b)
                        for (std::int64_t c = 0; c < si.c; ++c) {
                            const double* gb = gp + (b * sg.c + c0 + c) * hw;
                            double* db = d + (b * si.c + c) * hw;
                            for (std::int64_t i = 0; i < hw; ++i) db[i] += gb[i];
                        }
                });
            }
            break;
        }
        case OpKind::Sum: {
            const Shape si = in_val(0).shape();
            const double gv = gp[0];
            store.accumulate(n.in[0], si, [&](double* d) {
                for (std::int64_t i = 0; i < si.numel(); ++i) d[i] += gv;
            });
            break;
        }
        case OpKind::SoftmaxCE: {
            const Shape si = in_val(0).shape();
            const double gv = gp[0] / static_cast<double>(si.b);
            const double* probs = n.aux_a.data<double>();
            store.accumulate(n.in[0], si, [&](double* d) {
                for (std::int64_t b = 0; b < si.b; ++b)
                    for (std::int64_t k = 0; k < si.c; ++k) {
                        const std::int64_t idx = b * si.c + k;
                        const double onehot =
                            k == n.labels[static_cast<std::size_t>(b)] ? 1.0 : 0.0;
                        d[idx] += gv * (probs[idx] - onehot);
                    }
            });
            break;
        }
        case OpKind::Leaf:
            break;
        }
    }

    GradMap out;
    out.grads_ = std::move(store.grads);
    out.present_ = std::move(store.present);
    // only expose gradients for requires_grad nodes
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (!nodes_[i].requires_grad) out.present_[i] = 0;
    }
    return out;
}

// ---- gradcheck ----

double gradcheck(const PipelineFn& fn, const Tensor& input, double h,
                 std::int64_t max_coords, std::uint64_t sample_seed) {
    if (input.dtype() != DType::F64) {
        throw std::invalid_argument("gradcheck: input must be f64");
    }

    Tape tape;
    const ValueId x = tape.leaf(input, /*requires_grad=*/true);
    const ValueId loss = fn(tape, x);
    const double f0 = tape.value(loss).get_flat(0);
    if (!std::isfinite(f0)) {
        throw std::runtime_error("gradcheck: non-finite loss value");
    }
    const auto grads = tape.backward(loss);
    const Tensor& analytic = grads.at(x);

    std::vector<std::int64_t> coords(static_cast<std::size_t>(input.numel()));
    std::iota(coords.begin(), coords.end(), 0);
    if (max_coords > 0 && max_coords < input.numel()) {
        Rng rng(sample_seed);
        for (std::int64_t i = 0; i < max_coords; ++i) {
            const std::int64_t j = i + rng.uniform_int(input.numel() - i);
            std::swap(coords[static_cast<std::size_t>(i)], coords[static_cast<std::size_t>(j)]);
        }
        coords.resize(static_cast<std::size_t>(max_coords));
    }

    auto eval = [&](const Tensor& probe) {
        Tape t;
        const ValueId id = t.leaf(probe, false);
        const ValueId l = fn(t, id);
        return t.value(l).get_flat(0);
    };

    double max_err = 0.0;
    Tensor probe = input;
    for (const std::int64_t i : coords) {
        const double orig = probe.get_flat(i);
        probe.set_flat(i, orig + h);
        const double fp = eval(probe);
        probe.set_flat(i, orig - h);
        const double fm = eval(probe);
        probe.set_flat(i, orig);
        const double fd = (fp - fm) / (2.0 * h);
        const double an = analytic.get_flat(i);
        if (!std::isfinite(fd) || !std::isfinite(an)) {
            throw std::runtime_error("gradcheck: non-finite derivative at coordinate " +
                                     std::to_string(i));
        }
        const double err = std::fabs(an - fd) / std::max(1.0, std::fabs(an));
        max_err = std::max(max_err, err);
    }
    return max_err;
}

// ---- AdamW ----

void adamw_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
                AdamWState& st) {
    if (params.size() != grads.size()) {
        throw std::invalid_argument("adamw_step: " + std::to_string(params.size()) +
                                    " params vs " + std::to_string(grads.size()) + " grads");
    }
    if (st.lr <= 0) throw std::invalid_argument("adamw_step: lr must be > 0");
    if (st.m.empty()) {
        for (const Tensor* p : params) {
            st.m.push_back(Tensor::zeros(p->shape(), DType::F64));
            st.v.push_back(Tensor::zeros(p->shape(), DType::F64));
        }
    }
    if (st.m.size() != params.size()) {
        throw std::invalid_argument("adamw_step: state tracks " + std::to_string(st.m.size()) +
                                    " params, got " + std::to_string(params.size()));
    }

    st.step += 1;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));

    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = *params[pi];
        const Tensor& g = *grads[pi];
        if (!(p.shape() == g.shape()) || !(p.shape() == st.m[pi].shape())) {
            throw std::invalid_argument("adamw_step: shape mismatch at parameter " +
                                        std::to_string(pi) + ": param " + p.shape().str() +
                                        " vs grad " + g.shape().str());
        }
        double* pp = p.data<double>();
        const double* gp = g.data<double>();
        double* mp = st.m[pi].data<double>();
        double* vp = st.v[pi].data<double>();
        for (std::int64_t i = 0; i < p.numel(); ++i) {
            mp[i] = st.beta1 * mp[i] + (1.0 - st.beta1) * gp[i];
            vp[i] = st.beta2 * vp[i] + (1.0 - st.beta2) * gp[i] * gp[i];
            const double m_hat = mp[i] / bc1;
            const double v_hat = vp[i] / bc2;
            pp[i] -= st.lr * (m_hat / (std::sqrt(v_hat) + st.eps) + st.weight_decay * pp[i]);
        }
    }
}

} // namespace pkinet
