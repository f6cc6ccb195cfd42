// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dartslab/space.hpp"
#include "dartslab/tape.hpp"

namespace dartslab {

enum class OptKind { Sgd, Adam };

struct OptimizerConfig {
    OptKind kind = OptKind::Sgd;
    double lr = 0.005;
    double momentum = 0.9;            // sgd
    double beta1 = 0.5, beta2 = 0.999;  // adam
    double weight_decay = 0.0;        // applied as an L2 gradient term
    double eps = 1e-8;

    static OptimizerConfig sgd(double lr, double momentum = 0.9, double weight_decay = 0.0) {
        OptimizerConfig c;
        c.kind = OptKind::Sgd;
        c.lr = lr;
        c.momentum = momentum;
        c.weight_decay = weight_decay;
        return c;
    }
    static OptimizerConfig adam(double lr, double beta1 = 0.5, double beta2 = 0.999,
                                double weight_decay = 0.0) {
        OptimizerConfig c;
        c.kind = OptKind::Adam;
        c.lr = lr;
        c.beta1 = beta1;
        c.beta2 = beta2;
        c.weight_decay = weight_decay;
        return c;
    }
};

/// SGD-with-momentum / Adam over parameter bindings. Moment buffers are keyed
/// by binding position, so the caller must present the same parameters in the
/// same order every step (both networks here do).
class Optimizer {
  public:
    explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {
        if (cfg.lr <= 0.0) throw std::invalid_argument("optimizer: lr must be > 0");
    }

    const OptimizerConfig& config() const { return cfg_; }

    /// Applies one update from the grads recorded on `tape`. `lr_override`
    /// (if >= 0) replaces the configured lr for this step (cosine schedule).
    /// `step_index` is only used to name the failing step on non-finite
    /// gradients.
    void step(const Tape& tape, std::span<const ParamBinding> binds, double lr_override = -1.0,
              long step_index = -1) {
        double lr = lr_override >= 0.0 ? lr_override : cfg_.lr;
        if (m1_.empty()) {
            for (const auto& b : binds) {
                m1_.emplace_back(static_cast<std::size_t>(b.size), 0.0);
                if (cfg_.kind == OptKind::Adam)
                    m2_.emplace_back(static_cast<std::size_t>(b.size), 0.0);
            }
        }
        if (m1_.size() != binds.size()) {
            throw std::invalid_argument("optimizer: parameter count changed between steps");
        }
        ++t_;
        for (std::size_t i = 0; i < binds.size(); ++i) {
            const ParamBinding& b = binds[i];
            const Tensor& g = tape.grad(b.var);
            if (g.size() != b.size || static_cast<std::size_t>(b.size) != m1_[i].size()) {
                throw std::invalid_argument("optimizer: moment buffer shape mismatch");
            }
            for (int j = 0; j < b.size; ++j) {
                double grad = g[j];
                if (!std::isfinite(grad)) {
                    throw std::runtime_error("optimizer: non-finite gradient at step " +
                                             std::to_string(step_index));
                }
                grad += cfg_.weight_decay * b.data[j];
                if (cfg_.kind == OptKind::Sgd) {
                    double& buf = m1_[i][j];
                    buf = cfg_.momentum * buf + grad;
                    b.data[j] -= lr * buf;
                } else {
                    double& m = m1_[i][j];
                    double& v = m2_[i][j];
                    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * grad;
                    v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * grad * grad;
                    double mhat = m / (1.0 - std::pow(cfg_.beta1, t_));
                    double vhat = v / (1.0 - std::pow(cfg_.beta2, t_));
                    b.data[j] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
                }
            }
        }
    }

  private:
    OptimizerConfig cfg_;
    std::vector<std::vector<double>> m1_, m2_;
    long t_ = 0;
};

/// Cosine decay from lr_max at epoch 0 to 0 at epoch `total`.
inline double cosine_lr(double lr_max, int epoch, int total) {
    if (total <= 0) return lr_max;
    return 0.5 * lr_max * (1.0 + std::cos(3.14159265358979323846 * epoch / total));
}

}  // namespace dartslab
