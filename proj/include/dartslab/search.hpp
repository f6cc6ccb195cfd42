// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dartslab/data.hpp"
#include "dartslab/diagnostics.hpp"
#include "dartslab/optim.hpp"
#include "dartslab/space.hpp"

namespace dartslab {

enum class Regime { Bilevel, SingleLevel, SameSubsetDiffBatch };

inline const char* regime_name(Regime r) {
    switch (r) {
        case Regime::Bilevel: return "bilevel";
        case Regime::SingleLevel: return "single_level";
        case Regime::SameSubsetDiffBatch: return "same_subset_diff_batch";
    }
    return "?";
}
inline Regime regime_from_name(const std::string& s) {
    if (s == "bilevel") return Regime::Bilevel;
    if (s == "single_level") return Regime::SingleLevel;
    if (s == "same_subset_diff_batch") return Regime::SameSubsetDiffBatch;
    throw std::invalid_argument("unknown regime: " + s);
}

enum class LrSchedule { Cosine, Constant };

inline SupernetConfig space_from_name(const std::string& s) {
    if (s == "nas201-desk") return SupernetConfig::nas201_desk();
    if (s == "micro") return SupernetConfig::micro();
    throw std::invalid_argument("unknown space: " + s + " (expected nas201-desk or micro)");
}

struct SearchConfig {
    Regime regime = Regime::SingleLevel;
    int epochs = 50;
    int batch_size = 64;
    OptimizerConfig w_opt = OptimizerConfig::sgd(0.005, 0.9, 3e-4);
    OptimizerConfig alpha_opt = OptimizerConfig::adam(3e-4, 0.5, 0.999, 0.0);
    LrSchedule lr_schedule = LrSchedule::Cosine;
    Activation activation = Activation::Softmax;
    std::uint64_t seed = 0;
    bool alpha_first = true;  // bi-level update order within a step
    std::string space = "nas201-desk";  // or "micro"
    int width_override = 0;   // 0 = the space's default feature width
    int cells_override = 0;   // 0 = the space's default cell count
};

inline SupernetConfig resolve_space(const SearchConfig& cfg) {
    SupernetConfig s = space_from_name(cfg.space);
    if (cfg.width_override > 0) s.width = cfg.width_override;
    if (cfg.cells_override > 0) s.num_cells = cfg.cells_override;
    return s;
}

struct SearchResult {
    AlphaSet final_alphas;
    Architecture architecture;
    std::vector<TraceRecord> trace;
    double final_val_accuracy = 0.0;
    CellSpec spec;
};

/// Classification accuracy of the mixed supernet on one split (single batch;
/// standardization uses that batch's statistics).
inline double supernet_accuracy(Supernet& net, const Split& split) {
    Tape tape;
    std::vector<ParamBinding> wb, ab;
    Tape::Var logits = net.forward(tape, split.x, wb, ab);
    const Tensor& L = tape.value(logits);
    int correct = 0;
    for (int r = 0; r < L.rows(); ++r) {
        int best = 0;
        for (int c = 1; c < L.cols(); ++c)
            if (L.at(r, c) > L.at(r, best)) best = c;
        correct += best == split.labels[r] ? 1 : 0;
    }
    return static_cast<double>(correct) / L.rows();
}

/// Drives one search run: owns the supernet, both optimizers, the step
/// counter and the trace. The step methods implement the three regimes; the
/// gradient identities relating dL/dalpha to dL/dp are asserted on every
/// measured step.
class Searcher {
  public:
    Searcher(SearchConfig cfg, std::uint64_t net_seed)
        : cfg_(std::move(cfg)),
          net_(resolve_space(cfg_), cfg_.activation, net_seed),
          wopt_(cfg_.w_opt),
          aopt_(cfg_.alpha_opt) {}

    Supernet& net() { return net_; }
    const std::vector<TraceRecord>& trace() const { return trace_; }
    std::vector<TraceRecord>& trace() { return trace_; }
    long step_count() const { return step_; }

    /// Alpha from one batch, w from the other, alternately (alpha first by
    /// default). First-order: the alpha update uses the current w.
    void bilevel_step(const Tensor& train_x, const Tensor& train_y, const Tensor& val_x,
                      const Tensor& val_y, double w_lr, int epoch) {
        if (cfg_.alpha_first) {
            double lv = alpha_half(val_x, val_y, epoch, "val", /*record=*/true);
            double lt = w_half(train_x, train_y, w_lr);
            patch_loss_train(lt);
            (void)lv;
        } else {
            double lt = w_half(train_x, train_y, w_lr);
            alpha_half(val_x, val_y, epoch, "val", /*record=*/true);
            patch_loss_train(lt);
        }
        finish_step();
    }

    /// Both gradients from one tape pass on one batch, then both updates.
    void single_level_step(const Tensor& x, const Tensor& y, double w_lr, int epoch) {
        Tape tape;
        std::vector<ParamBinding> wb, ab;
        ForwardHooks hooks;
        Tape::Var loss = net_.loss(tape, x, y, wb, ab, &hooks);
        tape.backward(loss);
        record(tape, hooks, epoch, tape.value(loss)[0],
               std::numeric_limits<double>::quiet_NaN(), "train");
        aopt_.step(tape, ab, -1.0, step_);
        wopt_.step(tape, wb, w_lr, step_);
        finish_step();
    }

    /// Alpha on batch a, w on batch b, both from the same subset.
    void same_subset_diff_batch_step(const Tensor& ax, const Tensor& ay, const Tensor& bx,
                                     const Tensor& by, double w_lr, int epoch) {
        alpha_half(ax, ay, epoch, "train", /*record=*/true);
        double lt = w_half(bx, by, w_lr);
        patch_loss_train(lt);
        finish_step();
    }

    AlphaSet& alphas() { return net_.alphas; }

  private:
    /// One pass, alpha update only. Returns the loss value.
    double alpha_half(const Tensor& x, const Tensor& y, int epoch, const char* provenance,
                      bool record_trace) {
        Tape tape;
        std::vector<ParamBinding> wb, ab;
        ForwardHooks hooks;
        Tape::Var loss = net_.loss(tape, x, y, wb, ab, &hooks);
        tape.backward(loss);
        double lv = tape.value(loss)[0];
        if (record_trace) {
            double loss_train = std::numeric_limits<double>::quiet_NaN();
            double loss_val = std::string(provenance) == "val"
                                  ? lv
                                  : std::numeric_limits<double>::quiet_NaN();
            if (std::isnan(loss_val)) loss_train = lv;
            record(tape, hooks, epoch, loss_train, loss_val, provenance);
        }
        aopt_.step(tape, ab, -1.0, step_);
        return lv;
    }

    /// One pass, w update only (alpha gradients discarded).
    double w_half(const Tensor& x, const Tensor& y, double w_lr) {
        Tape tape;
        std::vector<ParamBinding> wb, ab;
        Tape::Var loss = net_.loss(tape, x, y, wb, ab);
        tape.backward(loss);
        wopt_.step(tape, wb, w_lr, step_);
        return tape.value(loss)[0];
    }

    /// Appends one TraceRecord per (cell, edge, op) from a completed pass,
    /// then asserts the activation's alpha/p gradient identity.
    void record(const Tape& tape, const ForwardHooks& hooks, int epoch, double loss_train,
                double loss_val, const char* provenance) {
        const CellSpec& spec = net_.cfg.cell;
        for (int e = 0; e < spec.num_edges(); ++e) {
            EdgeGradP gp = grad_p_from_hooks(tape, hooks, e);
            const Tensor& pvals = tape.value(hooks.edge_p[e]);
            const Tensor& ga = tape.grad(hooks.alpha_rows[e]);
            check_alpha_identity(e, pvals, gp.total, ga);
            for (int c = 0; c < net_.cfg.num_cells; ++c) {
                for (int k = 0; k < spec.num_ops(); ++k) {
                    TraceRecord r;
                    r.step = step_;
                    r.epoch = epoch;
                    r.cell = c;
                    r.edge = e;
                    r.op_name = canonical_name(spec.ops_per_edge[k]);
                    r.p = pvals[k];
                    r.grad_p = gp.per_cell[c][k];
                    r.grad_alpha = ga[k];
                    r.loss_train = loss_train;
                    r.loss_val = loss_val;
                    r.provenance = provenance;
                    trace_.push_back(std::move(r));
                }
            }
        }
    }

    /// dL/da_i = p_i (dL/dp_i - sum_k p_k dL/dp_k) under softmax;
    /// dL/da_i = p_i (1-p_i) dL/dp_i under sigmoid. Checked to 1e-10
    /// (relative to the row scale) on every measured step.
    void check_alpha_identity(int edge, const Tensor& p, const std::vector<double>& gp,
                              const Tensor& ga) const {
        double scale = 1e-30;
        for (int k = 0; k < ga.size(); ++k) scale = std::max(scale, std::fabs(ga[k]));
        double pg = 0.0;
        if (cfg_.activation == Activation::Softmax)
            for (int k = 0; k < p.size(); ++k) pg += p[k] * gp[k];
        for (int k = 0; k < p.size(); ++k) {
            double expect = cfg_.activation == Activation::Softmax
                                ? p[k] * (gp[k] - pg)
                                : p[k] * (1.0 - p[k]) * gp[k];
            if (std::fabs(expect - ga[k]) > 1e-10 * std::max(1.0, scale)) {
                throw std::runtime_error("alpha/p gradient identity violated at step " +
                                         std::to_string(step_) + " edge " + std::to_string(edge));
            }
        }
    }

    /// The w pass of a bi-level/same-subset step runs after the trace rows
    /// were appended; fill its loss into the rows of this step.
    void patch_loss_train(double loss_train) {
        for (auto it = trace_.rbegin(); it != trace_.rend() && it->step == step_; ++it)
            it->loss_train = loss_train;
    }

    void finish_step() {
        // softmax mixing probabilities must stay normalized after updates
        if (cfg_.activation == Activation::Softmax && !net_.alphas.hardened) {
            for (int e = 0; e < net_.alphas.num_edges(); ++e) {
                auto p = net_.alphas.probabilities(e);
                double s = 0.0;
                for (double x : p) s += x;
                if (std::fabs(s - 1.0) > 1e-9)
                    throw std::runtime_error("softmax probabilities drifted from 1 on edge " +
                                             std::to_string(e));
            }
        }
        ++step_;
    }

    SearchConfig cfg_;
    Supernet net_;
    Optimizer wopt_, aopt_;
    long step_ = 0;
    std::vector<TraceRecord> trace_;
};

namespace detail {

/// Deterministic epoch shuffling, one independent stream per (seed, tag).
inline std::vector<int> shuffled_indices(int n, std::uint64_t seed, std::uint64_t tag) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) idx[i] = i;
    Rng rng(derive_seed(seed, 0x5EED, tag));
    for (int i = n - 1; i > 0; --i)
        std::swap(idx[i], idx[rng.below(static_cast<std::uint64_t>(i + 1))]);
    return idx;
}

inline std::pair<Tensor, Tensor> gather_batch(const Split& sp, const std::vector<int>& idx,
                                              int begin, int count) {
    Tensor x = Tensor::zeros({count, sp.x.cols()});
    Tensor y = Tensor::zeros({count, sp.onehot.cols()});
    for (int i = 0; i < count; ++i) {
        int src = idx[begin + i];
        for (int j = 0; j < sp.x.cols(); ++j) x.at(i, j) = sp.x.at(src, j);
        for (int j = 0; j < sp.onehot.cols(); ++j) y.at(i, j) = sp.onehot.at(src, j);
    }
    return {std::move(x), std::move(y)};
}

}  // namespace detail

/// Executes the configured regime over the task. One epoch is one full pass
/// over the regime's (sub)set; bi-level zips one alpha batch and one w batch
/// per step from the two disjoint halves of the training split.
inline SearchResult run_search(const SearchConfig& cfg, const TaskData& task) {
    Searcher searcher(cfg, derive_seed(cfg.seed, 0x2E7));
    const int bs = cfg.batch_size;
    if (bs <= 0) throw std::invalid_argument("run_search: batch_size must be > 0");

    Split w_half, a_half;
    if (cfg.regime == Regime::Bilevel) {
        auto parts = split_for_bilevel(task.train, cfg.seed);
        w_half = std::move(parts.first);
        a_half = std::move(parts.second);
        if (w_half.size() < bs || a_half.size() < bs)
            throw std::invalid_argument("run_search: bilevel halves smaller than a batch");
    }

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double w_lr = cfg.lr_schedule == LrSchedule::Cosine
                          ? cosine_lr(cfg.w_opt.lr, epoch, cfg.epochs)
                          : cfg.w_opt.lr;
        std::uint64_t etag = static_cast<std::uint64_t>(epoch);
        switch (cfg.regime) {
            case Regime::Bilevel: {
                auto widx = detail::shuffled_indices(w_half.size(), cfg.seed, 2 * etag);
                auto aidx = detail::shuffled_indices(a_half.size(), cfg.seed, 2 * etag + 1);
                int steps = std::min(w_half.size(), a_half.size()) / bs;
                for (int s = 0; s < steps; ++s) {
                    auto [tx, ty] = detail::gather_batch(w_half, widx, s * bs, bs);
                    auto [vx, vy] = detail::gather_batch(a_half, aidx, s * bs, bs);
                    searcher.bilevel_step(tx, ty, vx, vy, w_lr, epoch);
                }
                break;
            }
            case Regime::SingleLevel: {
                auto idx = detail::shuffled_indices(task.train.size(), cfg.seed, etag);
                int steps = task.train.size() / bs;
                for (int s = 0; s < steps; ++s) {
                    auto [x, y] = detail::gather_batch(task.train, idx, s * bs, bs);
                    searcher.single_level_step(x, y, w_lr, epoch);
                }
                break;
            }
            case Regime::SameSubsetDiffBatch: {
                auto ia = detail::shuffled_indices(task.train.size(), cfg.seed, 2 * etag);
                auto ib = detail::shuffled_indices(task.train.size(), cfg.seed, 2 * etag + 1);
                int steps = task.train.size() / bs;
                for (int s = 0; s < steps; ++s) {
                    auto [ax, ay] = detail::gather_batch(task.train, ia, s * bs, bs);
                    auto [bx, by] = detail::gather_batch(task.train, ib, s * bs, bs);
                    searcher.same_subset_diff_batch_step(ax, ay, bx, by, w_lr, epoch);
                }
                break;
            }
        }
    }

    SearchResult res;
    res.final_alphas = searcher.net().alphas;
    res.spec = searcher.net().cfg.cell;
    res.architecture = discretize(res.final_alphas, res.spec);
    res.trace = searcher.trace();
    res.final_val_accuracy = supernet_accuracy(searcher.net(), task.val);
    return res;
}

}  // namespace dartslab
