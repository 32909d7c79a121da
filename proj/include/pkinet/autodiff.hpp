#pragma once

#include <array>
#include <functional>
#include <optional>
#include <vector>

#include "pkinet/conv.hpp"
#include "pkinet/tensor.hpp"

namespace pkinet {

using ValueId = std::int32_t;

enum class OpKind {
    Leaf,
    Add,
    Mul,
    Sigmoid,
    SiLU,
    Conv2d,
    AvgPool,
    GlobalAvgPool,
    BatchNorm,
    SplitLo,
    SplitHi,
    Concat,
    Sum,
    SoftmaxCE,
};

// Reverse-mode record. Nodes are appended in execution order, so ids are a
// topological order by construction; every node's value is kept alive for
// the backward sweep. Backward requires f64 tensors.
class Tape {
public:
    ValueId leaf(Tensor value, bool requires_grad = false);

    ValueId add(ValueId a, ValueId b);
    ValueId mul(ValueId a, ValueId b);
    ValueId sigmoid(ValueId a);
    ValueId silu(ValueId a);
    ValueId conv2d(ValueId input, ValueId weights, std::optional<ValueId> bias,
                   const ConvGeom& geom);
    ValueId avg_pool(ValueId a, int k, int stride, int pad);
    ValueId global_avg_pool(ValueId a);
    // gamma/beta are (1,C,1,1); normalizes per channel over (B,H,W) with the
    // batch statistics of the current input.
    ValueId batch_norm(ValueId x, ValueId gamma, ValueId beta, double eps = 1e-5);
    std::pair<ValueId, ValueId> channel_split(ValueId a, std::int64_t at);
    ValueId channel_concat(ValueId a, ValueId b);
    ValueId sum(ValueId a); // scalar (1,1,1,1)
    // logits (B,K,1,1) + one label per batch item; mean cross entropy.
    ValueId softmax_cross_entropy(ValueId logits, std::vector<int> labels);

    const Tensor& value(ValueId id) const;
    bool requires_grad(ValueId id) const;
    std::int64_t size() const { return static_cast<std::int64_t>(nodes_.size()); }

    class GradMap {
    public:
        bool has(ValueId id) const;
        const Tensor& at(ValueId id) const;

    private:
        friend class Tape;
        std::vector<Tensor> grads_;
        std::vector<char> present_;
    };

    // Chain-rule sweep from a scalar loss node; returns gradients for every
    // requires_grad node that the loss depends on.
    GradMap backward(ValueId loss) const;

private:
    struct Node {
        OpKind kind = OpKind::Leaf;
        std::array<ValueId, 3> in{-1, -1, -1};
        int n_in = 0;
        bool requires_grad = false;
        Tensor value;
        // op-specific extras
        ConvGeom geom{};
        int pool_k = 0, pool_stride = 0, pool_pad = 0;
        std::int64_t split_at = 0;
        double bn_eps = 0.0;
        Tensor aux_a, aux_b; // BatchNorm: mean, inv_std; SoftmaxCE: probs
        std::vector<int> labels;
    };

    ValueId push(Node n);
    const Node& node(ValueId id) const;
    void check_id(ValueId id) const;

    std::vector<Node> nodes_;
};

// Max over input coordinates of |analytic - central_difference| /
// max(1, |analytic|) for a scalar pipeline. `fn` receives a fresh tape and
// the input leaf id and must return the id of a 1-element loss node.
// Non-finite losses or gradients fail the check (throws). max_coords > 0
// limits the sweep to that many deterministically sampled coordinates.
using PipelineFn = std::function<ValueId(Tape&, ValueId)>;
double gradcheck(const PipelineFn& fn, const Tensor& input, double h = 1e-5,
                 std::int64_t max_coords = -1, std::uint64_t sample_seed = 0);

// AdamW: bias-corrected Adam moments plus decoupled weight decay
//   p <- p - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * p
struct AdamWState {
    std::int64_t step = 0;
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 0.05;
    double eps = 1e-8;
    std::vector<Tensor> m, v; // sized on first step

    void reset() { step = 0; m.clear(); v.clear(); }
};

void adamw_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
                AdamWState& state);

} // namespace pkinet
