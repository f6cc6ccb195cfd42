// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "dartslab/rng.hpp"
#include "dartslab/tape.hpp"
#include "dartslab/tensor.hpp"

namespace dartslab {

/// Candidate operations on an edge, NAS-Bench-201 pool at toy scale.
/// The conv analogs are dense feature-mixing maps; avgpool is a fixed
/// moving mean over the feature axis.
enum class OpKind { Zero, Skip, Linear1, Linear3, AvgPool };

inline const char* canonical_name(OpKind k) {
    switch (k) {
        case OpKind::Zero: return "none";
        case OpKind::Skip: return "skip_connect";
        case OpKind::Linear1: return "nor_conv_1x1";
        case OpKind::Linear3: return "nor_conv_3x3";
        case OpKind::AvgPool: return "avg_pool_3x3";
    }
    return "?";
}

inline OpKind op_kind_from_name(const std::string& name) {
    if (name == "none") return OpKind::Zero;
    if (name == "skip_connect") return OpKind::Skip;
    if (name == "nor_conv_1x1") return OpKind::Linear1;
    if (name == "nor_conv_3x3") return OpKind::Linear3;
    if (name == "avg_pool_3x3") return OpKind::AvgPool;
    throw std::invalid_argument("unknown op name: " + name);
}

inline bool is_learnable(OpKind k) { return k == OpKind::Linear1 || k == OpKind::Linear3; }

inline constexpr int kPoolWindow = 3;
/// Hidden width multiplier for the two-layer conv3x3 analog.
inline constexpr int kLinear3Expansion = 2;

/// One candidate op instance. `weights` is empty exactly for non-learnable
/// kinds: Linear1 holds {W (w,w)}, Linear3 holds {W1 (w,h), W2 (h,w)}.
struct CandidateOp {
    OpKind kind = OpKind::Zero;
    int width = 0;
    std::vector<Tensor> weights;

    bool learnable() const { return is_learnable(kind); }
};

/// Uniform init on [-sqrt(3/fan_in), +sqrt(3/fan_in)] (variance 1/fan_in, so
/// a fresh map preserves unit input variance in expectation).
inline Tensor init_linear(int rows, int cols, Rng& rng) {
    double bound = std::sqrt(3.0 / rows);
    Tensor t = Tensor::zeros({rows, cols});
    for (auto& x : t.v) x = rng.uniform(-bound, bound);
    return t;
}

inline CandidateOp make_op(OpKind kind, int width) {
    CandidateOp op;
    op.kind = kind;
    op.width = width;
    return op;
}

/// Draws fresh weights for a learnable op; deterministic given seed.
inline void init_weights(CandidateOp& op, std::uint64_t seed) {
    if (!op.learnable()) {
        throw std::invalid_argument(std::string("init_weights: ") + canonical_name(op.kind) +
                                    " has no trainable weights");
    }
    Rng rng(seed);
    op.weights.clear();
    if (op.kind == OpKind::Linear1) {
        op.weights.push_back(init_linear(op.width, op.width, rng));
    } else {
        int hidden = op.width * kLinear3Expansion;
        op.weights.push_back(init_linear(op.width, hidden, rng));
        op.weights.push_back(init_linear(hidden, op.width, rng));
    }
}

/// Applies the raw op to x (rows = batch, cols = feature width). Gradients
/// flow to `weight_vars` iff the op is learnable; `weight_vars` must hold the
/// tape params for op.weights in order. Batch standardization of learnable
/// outputs happens at the mixed-edge level, not here.
inline Tape::Var apply_op(Tape& tape, const CandidateOp& op, Tape::Var x,
                          std::span<const Tape::Var> weight_vars) {
    const Tensor& xv = tape.value(x);
    if (xv.cols() != op.width) {
        throw std::invalid_argument(std::string("apply_op: input width ") +
                                    std::to_string(xv.cols()) + " != edge width " +
                                    std::to_string(op.width));
    }
    switch (op.kind) {
        case OpKind::Zero:
            return tape.constant(Tensor::zeros(xv.shape));
        case OpKind::Skip:
            return x;
        case OpKind::AvgPool:
            return tape.mean_window(x, kPoolWindow);
        case OpKind::Linear1:
            return tape.matmul(x, weight_vars[0]);
        case OpKind::Linear3: {
            Tape::Var h = tape.relu(tape.matmul(x, weight_vars[0]));
            return tape.matmul(h, weight_vars[1]);
        }
    }
    throw std::logic_error("apply_op: unhandled kind");
}

/// Convenience for tests and the oracle: applies an op standalone, lifting
/// its weights onto the given tape.
inline Tape::Var apply_op_standalone(Tape& tape, const CandidateOp& op, Tape::Var x) {
    std::vector<Tape::Var> wvars;
    for (const Tensor& w : op.weights) wvars.push_back(tape.param(w));
    return apply_op(tape, op, x, wvars);
}

}  // namespace dartslab
