// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dartslab/rng.hpp"
#include "dartslab/space.hpp"
#include "dartslab/tape.hpp"
#include "dartslab/tensor.hpp"

namespace dartslab {

/// The simplified mixing model f(x)=x: n_ops logit vectors x_k mixed by
/// p = activation(alpha), loss = -y . ln softmax(sum_k p_k x_k).
struct SimplifiedInstance {
    int n_ops = 0;
    int class_dim = 0;
    std::vector<Tensor> x;  // n_ops vectors of length class_dim
    Tensor y;               // one-hot, length class_dim
    Tensor alpha;           // length n_ops
    Activation activation = Activation::Softmax;
    double eta = 0.1;
};

namespace simplified {

inline std::vector<double> softmax_of(const std::vector<double>& z) {
    double mx = *std::max_element(z.begin(), z.end());
    std::vector<double> p(z.size());
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        p[i] = std::exp(z[i] - mx);
        s += p[i];
    }
    for (auto& e : p) e /= s;
    return p;
}

inline std::vector<double> probabilities(const Tensor& alpha, Activation act) {
    std::vector<double> a(alpha.v.begin(), alpha.v.end());
    if (act == Activation::Softmax) return softmax_of(a);
    for (auto& e : a) e = 1.0 / (1.0 + std::exp(-e));
    return a;
}

inline Tensor mix(const std::vector<Tensor>& x, const std::vector<double>& p) {
    Tensor out = Tensor::zeros(x[0].shape);
    for (std::size_t k = 0; k < x.size(); ++k)
        for (int i = 0; i < out.size(); ++i) out[i] += p[k] * x[k][i];
    return out;
}

inline double loss_of_logits(const Tensor& z, const Tensor& y) {
    std::vector<double> zz(z.v.begin(), z.v.end());
    auto p = softmax_of(zz);
    double l = 0.0;
    for (int i = 0; i < z.size(); ++i)
        if (y[i] == 1.0) l -= std::log(p[i]);
    return l;
}

/// dL/dxbar = softmax(xbar) - y for the cross-entropy-after-identity model.
inline Tensor mixed_gradient(const Tensor& xbar, const Tensor& y) {
    std::vector<double> zz(xbar.v.begin(), xbar.v.end());
    auto p = softmax_of(zz);
    Tensor g = Tensor::zeros(xbar.shape);
    for (int i = 0; i < g.size(); ++i) g[i] = p[i] - y[i];
    return g;
}

/// Per-op scores s_k = dL/dxbar . x_k at the instance's initial point.
inline std::vector<double> scores(const SimplifiedInstance& inst) {
    auto p = probabilities(inst.alpha, inst.activation);
    Tensor xbar = mix(inst.x, p);
    Tensor g = mixed_gradient(xbar, inst.y);
    std::vector<double> s(static_cast<std::size_t>(inst.n_ops), 0.0);
    for (int k = 0; k < inst.n_ops; ++k) s[k] = dot(g, inst.x[k]);
    return s;
}

/// dL/dp_k for given per-op scores under the chosen activation.
inline std::vector<double> alpha_gradient(const std::vector<double>& s,
                                          const std::vector<double>& p, Activation act) {
    std::vector<double> g(s.size(), 0.0);
    if (act == Activation::Softmax) {
        double sbar = 0.0;
        for (std::size_t k = 0; k < s.size(); ++k) sbar += p[k] * s[k];
        for (std::size_t k = 0; k < s.size(); ++k) g[k] = p[k] * (s[k] - sbar);
    } else {
        for (std::size_t k = 0; k < s.size(); ++k) g[k] = p[k] * (1.0 - p[k]) * s[k];
    }
    return g;
}

}  // namespace simplified

inline SimplifiedInstance random_instance(int n_ops, int class_dim, std::uint64_t seed,
                                          Activation act = Activation::Softmax,
                                          double eta = 0.1) {
    Rng rng(seed);
    SimplifiedInstance inst;
    inst.n_ops = n_ops;
    inst.class_dim = class_dim;
    inst.activation = act;
    inst.eta = eta;
    for (int k = 0; k < n_ops; ++k) {
        Tensor t = Tensor::zeros({class_dim});
        for (auto& e : t.v) e = rng.normal();
        inst.x.push_back(std::move(t));
    }
    inst.y = Tensor::zeros({class_dim});
    inst.y[static_cast<int>(rng.below(static_cast<std::uint64_t>(class_dim)))] = 1.0;
    inst.alpha = Tensor::zeros({n_ops});
    for (auto& e : inst.alpha.v) e = rng.normal();
    return inst;
}

// ---- first theorem: loss ordering vs mixing-gradient ordering ----

struct OrderingCheckReport {
    double perturb_scale = 0.0;
    long pairs = 0;
    long violations_beyond_tol = 0;   // tol = 10 * scale * max|x|
    double max_raw_violation = 0.0;   // of the exact inequality, no tolerance
    double tol = 0.0;
};

/// Builds shift-invariant families x_k = base + c_k*1 + eps_k (KL of the
/// class distributions -> 0 as perturb_scale -> 0) and checks that a lower
/// per-op loss implies a lower (or nearly lower) mixing gradient.
inline OrderingCheckReport check_theorem_4_1(const Tensor& base, double perturb_scale,
                                             std::uint64_t seed, int trials = 1000,
                                             int n_ops = 5) {
    OrderingCheckReport rep;
    rep.perturb_scale = perturb_scale;
    Rng rng(derive_seed(seed, 0x41));
    int dim = base.size();
    for (int trial = 0; trial < trials; ++trial) {
        SimplifiedInstance inst;
        inst.n_ops = n_ops;
        inst.class_dim = dim;
        inst.activation = Activation::Softmax;
        double max_norm = 0.0;  // per-trial: tol = 10 * scale * max|x_k|
        for (int k = 0; k < n_ops; ++k) {
            Tensor xk = base;
            double shift = rng.uniform(-1.0, 1.0);
            for (auto& e : xk.v) e += shift + perturb_scale * rng.normal();
            double norm = std::sqrt(dot(xk, xk));
            max_norm = std::max(max_norm, norm);
            inst.x.push_back(std::move(xk));
        }
        inst.y = Tensor::zeros({dim});
        inst.y[static_cast<int>(rng.below(static_cast<std::uint64_t>(dim)))] = 1.0;
        inst.alpha = Tensor::zeros({n_ops});
        for (auto& e : inst.alpha.v) e = rng.normal();

        auto p = simplified::probabilities(inst.alpha, Activation::Softmax);
        Tensor xbar = simplified::mix(inst.x, p);
        Tensor g = simplified::mixed_gradient(xbar, inst.y);
        std::vector<double> loss(static_cast<std::size_t>(n_ops));
        std::vector<double> gp(static_cast<std::size_t>(n_ops));
        for (int k = 0; k < n_ops; ++k) {
            loss[k] = simplified::loss_of_logits(inst.x[k], inst.y);
            gp[k] = dot(g, inst.x[k]);
        }
        double tol = 10.0 * perturb_scale * max_norm;
        rep.tol = tol;
        for (int i = 0; i < n_ops; ++i) {
            for (int j = 0; j < n_ops; ++j) {
                if (i == j || loss[i] > loss[j]) continue;
                ++rep.pairs;
                double raw = gp[i] - gp[j];
                rep.max_raw_violation = std::max(rep.max_raw_violation, raw);
                if (raw > tol) ++rep.violations_beyond_tol;
            }
        }
    }
    return rep;
}

/// Log-log slope of max raw violation vs perturb_scale (least squares).
inline double violation_scaling_slope(const Tensor& base, const std::vector<double>& scales,
                                      std::uint64_t seed, int trials = 1000) {
    std::vector<double> lx, ly;
    for (double s : scales) {
        auto rep = check_theorem_4_1(base, s, seed, trials);
        double v = std::max(rep.max_raw_violation, 1e-300);
        lx.push_back(std::log(s));
        ly.push_back(std::log(v));
    }
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        mx += lx[i];
        my += ly[i];
    }
    mx /= lx.size();
    my /= ly.size();
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        num += (lx[i] - mx) * (ly[i] - my);
        den += (lx[i] - mx) * (lx[i] - mx);
    }
    return num / den;
}

// ---- second theorem: alpha-gradient ordering, exact form ----

struct GapCheckReport {
    long sampled = 0;            // instances drawn
    long premise_pairs = 0;      // (i, j=argmin score) pairs meeting both premises
    long violations = 0;         // conclusion failures (exact inequality)
    double worst_margin = 0.0;   // most negative (dL/da_i - dL/da_j) seen
};

/// Exact inequality: with j the strict score minimizer (margin > 0) and
/// alpha_j >= alpha_i, descent expands the gap: dL/da_j <= dL/da_i. The
/// score-extremal premise on j is what the telescoped proof uses; the
/// pairwise-only reading admits counterexamples for n >= 3.
inline GapCheckReport check_theorem_4_2(std::uint64_t seed, long want_pairs = 10000,
                                        double min_margin = 1e-3) {
    GapCheckReport rep;
    Rng rng(derive_seed(seed, 0x42));
    while (rep.premise_pairs < want_pairs) {
        ++rep.sampled;
        int n = 2 + static_cast<int>(rng.below(7));  // 2..8 ops
        int dim = 3 + static_cast<int>(rng.below(6));
        // arbitrary scalar function g: only its gradient enters
        Tensor g = Tensor::zeros({dim});
        for (auto& e : g.v) e = rng.normal();
        std::vector<double> s(static_cast<std::size_t>(n));
        Tensor alpha = Tensor::zeros({n});
        for (auto& e : alpha.v) e = rng.normal();
        for (int k = 0; k < n; ++k) {
            Tensor xk = Tensor::zeros({dim});
            for (auto& e : xk.v) e = rng.normal();
            s[k] = dot(g, xk);
        }
        int j = 0;
        for (int k = 1; k < n; ++k)
            if (s[k] < s[j]) j = k;
        double margin = 1e300;
        for (int k = 0; k < n; ++k)
            if (k != j) margin = std::min(margin, s[k] - s[j]);
        if (margin < min_margin) continue;  // strict-minimum premise fails
        auto p = simplified::softmax_of(std::vector<double>(alpha.v.begin(), alpha.v.end()));
        auto da = simplified::alpha_gradient(s, p, Activation::Softmax);
        for (int i = 0; i < n; ++i) {
            if (i == j || alpha[j] < alpha[i]) continue;
            ++rep.premise_pairs;
            double diff = da[i] - da[j];
            rep.worst_margin = std::min(rep.worst_margin, diff);
            if (da[j] > da[i] + 1e-12) ++rep.violations;
        }
    }
    return rep;
}

/// Direct evaluation of the gap conclusion on a fully specified pair
/// (used for hand-checkable instances).
inline std::pair<double, double> alpha_gradient_pair(const std::vector<double>& scores,
                                                     const std::vector<double>& alpha, int i,
                                                     int j) {
    auto p = simplified::softmax_of(alpha);
    auto da = simplified::alpha_gradient(scores, p, Activation::Softmax);
    return {da[i], da[j]};
}

// ---- third theorem: convergence-speed bound ----

/// Closed form n*ln((1-eps)n)/(eta*delta). Throws naming the violated
/// constraint; the (1-eps)n == 1 boundary returns 0 (degenerate).
inline double theorem_4_3_bound(int n, double eta, double delta, double eps) {
    if (n < 2) throw std::invalid_argument("theorem_4_3_bound: need n >= 2");
    if (eta <= 0.0) throw std::invalid_argument("theorem_4_3_bound: need eta > 0");
    if (delta <= 0.0) throw std::invalid_argument("theorem_4_3_bound: need delta > 0");
    if (eps <= 0.0 || eps >= 1.0) throw std::invalid_argument("theorem_4_3_bound: need 0 < eps < 1");
    double c = (1.0 - eps) * n;
    if (c < 1.0) throw std::invalid_argument("theorem_4_3_bound: need (1-eps)*n >= 1");
    return n * std::log(c) / (eta * delta);
}

struct SimulationOutcome {
    long steps_to_eps = -1;  // -1: max_steps exceeded
    std::vector<double> p_star;   // p_{i*} per step, index 0 = initial
    std::vector<std::vector<double>> p_final;  // final mixing probabilities
    int i_star = -1;
    double min_gap_growth = 0.0;  // most negative per-step gap change (softmax)
};

/// Plain gradient descent on alpha with FIXED per-op scores, stopping when
/// p_{i*} > 1-eps. i* is the strict score minimizer (descent convention).
/// Softmax invariants asserted per step: alpha_{i*}-alpha_i never shrinks,
/// p_{i*} >= 1/n while alpha_{i*} is maximal.
inline SimulationOutcome simulate_fixed_scores(const std::vector<double>& s,
                                               const std::vector<double>& alpha0, double eta,
                                               double eps, long max_steps,
                                               Activation act = Activation::Softmax) {
    int n = static_cast<int>(s.size());
    int istar = 0;
    for (int k = 1; k < n; ++k)
        if (s[k] < s[istar]) istar = k;
    double margin = 1e300;
    for (int k = 0; k < n; ++k)
        if (k != istar) margin = std::min(margin, s[k] - s[istar]);
    if (margin <= 0.0)
        throw std::invalid_argument("simulate: i* must be the strict score minimum");
    for (int k = 0; k < n; ++k) {
        if (alpha0[istar] < alpha0[k])
            throw std::invalid_argument("simulate: requires alpha_{i*} >= alpha_i initially");
    }

    SimulationOutcome out;
    out.i_star = istar;
    std::vector<double> a = alpha0;
    auto probs = [&]() {
        Tensor t = Tensor::vec(a);
        return simplified::probabilities(t, act);
    };
    auto p = probs();
    out.p_star.push_back(p[istar]);
    for (long t = 1; t <= max_steps; ++t) {
        auto da = simplified::alpha_gradient(s, p, act);
        std::vector<double> prev = a;
        for (int k = 0; k < n; ++k) a[k] -= eta * da[k];
        if (act == Activation::Softmax) {
            bool star_maximal = true;
            for (int k = 0; k < n; ++k) {
                if (k == istar) continue;
                double growth = (a[istar] - a[k]) - (prev[istar] - prev[k]);
                out.min_gap_growth = std::min(out.min_gap_growth, growth);
                if (growth < -1e-12)
                    throw std::runtime_error("simulate: gap to i* shrank at step " +
                                             std::to_string(t));
                if (a[istar] < a[k]) star_maximal = false;
            }
            p = probs();
            if (star_maximal && p[istar] < 1.0 / n - 1e-12)
                throw std::runtime_error("simulate: p_{i*} fell below 1/n while maximal");
        } else {
            p = probs();
        }
        out.p_star.push_back(p[istar]);
        if (p[istar] > 1.0 - eps) {
            out.steps_to_eps = t;
            break;
        }
    }
    out.p_final.push_back(p);
    return out;
}

/// Instance entry point: scores frozen at the instance's initial point.
inline SimulationOutcome simulate_dynamics(const SimplifiedInstance& inst, double eps,
                                           long max_steps) {
    auto s = simplified::scores(inst);
    std::vector<double> a(inst.alpha.v.begin(), inst.alpha.v.end());
    return simulate_fixed_scores(s, a, inst.eta, eps, max_steps, inst.activation);
}

// ---- suite driver ----

struct BoundTrialConfig {
    int n = 2;
    double eta = 0.1, delta = 1.0, eps = 0.1;
};

/// The canonical config -> instance mapping for bound trials: one op exactly
/// at margin delta, remaining margins delta + U[0,2], initial gaps
/// alpha_{i*} - alpha_i ~ U[0,1] (zero gap included), i* position random.
inline SimulationOutcome run_bound_trial(const BoundTrialConfig& cfg, std::uint64_t seed,
                                         long max_steps) {
    Rng rng(seed);
    int istar = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.n)));
    std::vector<double> s(static_cast<std::size_t>(cfg.n));
    int tight = -1;
    for (int k = 0; k < cfg.n; ++k) {
        if (k == istar) {
            s[k] = 0.0;
        } else if (tight < 0) {
            tight = k;
            s[k] = cfg.delta;
        } else {
            s[k] = cfg.delta + rng.uniform(0.0, 2.0);
        }
    }
    std::vector<double> a(static_cast<std::size_t>(cfg.n));
    double astar = rng.uniform(0.0, 1.0);
    for (int k = 0; k < cfg.n; ++k) a[k] = k == istar ? astar : astar - rng.uniform(0.0, 1.0);
    return simulate_fixed_scores(s, a, cfg.eta, cfg.eps, max_steps);
}

struct BoundStudy {
    long trials = 0;
    long within_bound = 0;
    double worst_ratio = 0.0;  // max over trials of steps/bound
    nlohmann::json table = nlohmann::json::array();
};

inline BoundStudy study_bound(std::uint64_t seed, int trials = 50) {
    BoundStudy st;
    Rng rng(derive_seed(seed, 0x43));
    while (st.trials < trials) {
        BoundTrialConfig cfg;
        cfg.n = 2 + static_cast<int>(rng.below(9));  // 2..10
        cfg.eta = rng.uniform(0.01, 0.5);
        cfg.delta = rng.uniform(0.1, 2.0);
        cfg.eps = rng.uniform(0.05, 0.3);
        if ((1.0 - cfg.eps) * cfg.n <= 1.0) continue;
        double bound = theorem_4_3_bound(cfg.n, cfg.eta, cfg.delta, cfg.eps);
        auto sim = run_bound_trial(cfg, rng.next_u64(), static_cast<long>(bound * 20) + 1000);
        ++st.trials;
        bool ok = sim.steps_to_eps >= 0 && sim.steps_to_eps <= bound;
        st.within_bound += ok ? 1 : 0;
        double ratio = sim.steps_to_eps < 0 ? 1e9 : sim.steps_to_eps / std::max(bound, 1e-300);
        st.worst_ratio = std::max(st.worst_ratio, ratio);
        st.table.push_back({{"n", cfg.n},
                            {"eta", cfg.eta},
                            {"delta", cfg.delta},
                            {"eps", cfg.eps},
                            {"bound", bound},
                            {"steps", sim.steps_to_eps},
                            {"within", ok}});
    }
    return st;
}

/// Bound monotonicity over a grid: nondecreasing in n, nonincreasing in eta
/// and delta.
inline bool bound_monotonicity_grid() {
    std::vector<int> ns{2, 3, 5, 8, 10};
    std::vector<double> etas{0.01, 0.05, 0.2, 0.5};
    std::vector<double> deltas{0.1, 0.5, 1.0, 2.0};
    double eps = 0.05;
    for (double eta : etas)
        for (double delta : deltas)
            for (std::size_t i = 0; i + 1 < ns.size(); ++i)
                if (theorem_4_3_bound(ns[i], eta, delta, eps) >
                    theorem_4_3_bound(ns[i + 1], eta, delta, eps))
                    return false;
    for (int n : ns)
        for (double delta : deltas)
            for (std::size_t i = 0; i + 1 < etas.size(); ++i)
                if (theorem_4_3_bound(n, etas[i], delta, eps) <
                    theorem_4_3_bound(n, etas[i + 1], delta, eps))
                    return false;
    for (int n : ns)
        for (double eta : etas)
            for (std::size_t i = 0; i + 1 < deltas.size(); ++i)
                if (theorem_4_3_bound(n, eta, deltas[i], eps) <
                    theorem_4_3_bound(n, eta, deltas[i + 1], eps))
                    return false;
    return true;
}

/// Full harness report (JSON): per-check pass/fail, violation statistics and
/// the bound-vs-simulation table.
inline nlohmann::json theorem_suite_report(std::uint64_t seed) {
    nlohmann::json j;

    Tensor base = Tensor::vec({0.3, -0.7, 1.1, 0.2});
    auto exact = check_theorem_4_1(base, 0.0, seed, 200);
    std::vector<double> scales{1e-1, 1e-2, 1e-3, 1e-4};
    double slope = violation_scaling_slope(base, scales, seed, 400);
    auto t41 = check_theorem_4_1(base, 1e-3, seed, 1000);
    j["ordering"] = {{"zero_scale_max_violation", exact.max_raw_violation},
                     {"zero_scale_pass", exact.max_raw_violation <= 1e-12},
                     {"scale_1e-3_violations_beyond_tol", t41.violations_beyond_tol},
                     {"scale_1e-3_pairs", t41.pairs},
                     {"loglog_slope", slope},
                     {"slope_pass", slope >= 0.9}};

    auto t42 = check_theorem_4_2(seed, 10000);
    j["gap_expansion"] = {{"sampled", t42.sampled},
                          {"premise_pairs", t42.premise_pairs},
                          {"violations", t42.violations},
                          {"pass", t42.violations == 0}};

    auto st = study_bound(seed, 50);
    bool mono = bound_monotonicity_grid();
    j["convergence_bound"] = {{"trials", st.trials},
                              {"within_bound", st.within_bound},
                              {"worst_ratio", st.worst_ratio},
                              {"all_within", st.within_bound == st.trials},
                              {"monotone_grid_pass", mono},
                              {"table", st.table}};
    return j;
}

}  // namespace dartslab
