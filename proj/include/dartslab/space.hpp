// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dartslab/ops.hpp"
#include "dartslab/rng.hpp"
#include "dartslab/tape.hpp"
#include "dartslab/tensor.hpp"

namespace dartslab {

enum class Activation { Softmax, Sigmoid };

inline const char* activation_name(Activation a) {
    return a == Activation::Softmax ? "softmax" : "sigmoid";
}
inline Activation activation_from_name(const std::string& s) {
    if (s == "softmax") return Activation::Softmax;
    if (s == "sigmoid") return Activation::Sigmoid;
    throw std::invalid_argument("unknown activation: " + s);
}

/// Default sigmoid alpha init: sigmoid(-ln 7) = 0.125.
inline constexpr double kSigmoidAlphaInit = -1.9459101090932196;  // -ln(7)

/// Architecture parameters, one row per edge, one column per candidate op.
/// Shared across all cells. `hardened` replaces the activation by an exact
/// one-hot at the argmax (used for discretization-equivalence runs).
struct AlphaSet {
    Tensor alpha;  // (edges, ops)
    Activation activation = Activation::Softmax;
    bool hardened = false;

    int num_edges() const { return alpha.rows(); }
    int num_ops() const { return alpha.cols(); }

    static AlphaSet uniform(int edges, int ops, Activation act) {
        AlphaSet a;
        a.alpha = Tensor::full({edges, ops}, act == Activation::Sigmoid ? kSigmoidAlphaInit : 0.0);
        a.activation = act;
        return a;
    }

    int argmax_op(int edge) const {
        int best = 0;
        for (int k = 1; k < num_ops(); ++k)
            if (alpha.at(edge, k) > alpha.at(edge, best)) best = k;  // ties: lowest index
        return best;
    }

    /// Mixing probabilities of one edge (plain values, no tape).
    std::vector<double> probabilities(int edge) const {
        std::vector<double> p(static_cast<std::size_t>(num_ops()), 0.0);
        if (hardened) {
            p[static_cast<std::size_t>(argmax_op(edge))] = 1.0;
            return p;
        }
        if (activation == Activation::Sigmoid) {
            for (int k = 0; k < num_ops(); ++k) p[k] = 1.0 / (1.0 + std::exp(-alpha.at(edge, k)));
            return p;
        }
        double mx = alpha.at(edge, 0);
        for (int k = 1; k < num_ops(); ++k) mx = std::max(mx, alpha.at(edge, k));
        double s = 0.0;
        for (int k = 0; k < num_ops(); ++k) {
            p[k] = std::exp(alpha.at(edge, k) - mx);
            s += p[k];
        }
        for (auto& x : p) x /= s;
        return p;
    }
};

/// Cell topology: a DAG on num_nodes nodes, every edge from lower to higher
/// index; node j sums the mixed outputs of all incoming edges.
struct CellSpec {
    int num_nodes = 0;
    std::vector<std::pair<int, int>> edges;
    std::vector<OpKind> ops_per_edge;

    int num_edges() const { return static_cast<int>(edges.size()); }
    int num_ops() const { return static_cast<int>(ops_per_edge.size()); }

    void validate() const {
        if (num_nodes < 2) throw std::invalid_argument("cell: need at least 2 nodes");
        for (auto [a, b] : edges) {
            if (!(0 <= a && a < b && b < num_nodes))
                throw std::invalid_argument("cell: edge (" + std::to_string(a) + "," +
                                            std::to_string(b) + ") is not DAG-ordered");
        }
        if (ops_per_edge.empty()) throw std::invalid_argument("cell: empty op pool");
    }

    /// 4 nodes, 6 edges, full NAS-Bench-201 op pool.
    static CellSpec nas201_desk() {
        CellSpec s;
        s.num_nodes = 4;
        s.edges = {{0, 1}, {0, 2}, {1, 2}, {0, 3}, {1, 3}, {2, 3}};
        s.ops_per_edge = {OpKind::Zero, OpKind::Skip, OpKind::Linear1, OpKind::Linear3,
                          OpKind::AvgPool};
        return s;
    }

    /// 3 nodes, 3 edges, 3 ops: enough for an exhaustive 27-entry oracle
    /// while keeping the learnable/non-learnable tension (conv3x3 is the
    /// only learnable op; zero and avgpool are the non-learnable
    /// attractors).
    static CellSpec micro() {
        CellSpec s;
        s.num_nodes = 3;
        s.edges = {{0, 1}, {0, 2}, {1, 2}};
        s.ops_per_edge = {OpKind::Zero, OpKind::AvgPool, OpKind::Linear3};
        return s;
    }
};

/// Discrete choice of one op per edge.
struct Architecture {
    std::vector<OpKind> choice;

    bool operator==(const Architecture&) const = default;

    std::vector<std::string> op_names() const {
        std::vector<std::string> out;
        for (OpKind k : choice) out.emplace_back(canonical_name(k));
        return out;
    }

    /// NAS-Bench-201-style string, e.g. |none~0|+|skip_connect~0|none~1|+...
    /// Valid when the spec's edges enumerate (i,j) grouped by target node in
    /// ascending order (both built-in specs do).
    std::string to_string(const CellSpec& spec) const {
        std::string out;
        int e = 0;
        for (int node = 1; node < spec.num_nodes; ++node) {
            if (node > 1) out += "+";
            for (int from = 0; from < node; ++from) {
                if (e >= spec.num_edges() || spec.edges[e] != std::make_pair(from, node)) continue;
                out += "|" + std::string(canonical_name(choice[e])) + "~" + std::to_string(from) +
                       "|";
                ++e;
            }
        }
        // collapse "||" separators produced edge-by-edge within a node
        std::string squeezed;
        for (std::size_t i = 0; i < out.size(); ++i) {
            if (out[i] == '|' && i + 1 < out.size() && out[i + 1] == '|') continue;
            squeezed += out[i];
        }
        return squeezed;
    }

    static Architecture from_names(const std::vector<std::string>& names) {
        Architecture a;
        for (const auto& n : names) a.choice.push_back(op_kind_from_name(n));
        return a;
    }
};

/// Argmax discretization; ties broken toward the lowest op index.
inline Architecture discretize(const AlphaSet& alphas, const CellSpec& spec) {
    if (!alphas.alpha.all_finite()) throw std::invalid_argument("discretize: non-finite alpha");
    Architecture arch;
    for (int e = 0; e < alphas.num_edges(); ++e)
        arch.choice.push_back(spec.ops_per_edge[static_cast<std::size_t>(alphas.argmax_op(e))]);
    return arch;
}

/// One parameter's appearance on a tape: the tracked var plus the backing
/// storage it was lifted from. Optimizers read grads through `var` and write
/// updates through `data`.
struct ParamBinding {
    Tape::Var var;
    double* data = nullptr;
    int size = 0;
};

struct EdgeHooks {
    Tape::Var input;                     // features entering the edge
    Tape::Var mixed;                     // mixed-edge output
    std::vector<Tape::Var> candidates;   // per-op outputs as mixed (post-standardization)
};

/// Tape handles captured during a supernet forward, for diagnostics.
struct ForwardHooks {
    std::vector<Tape::Var> edge_p;                 // per edge, shared across cells
    std::vector<Tape::Var> alpha_rows;             // per edge (invalid when hardened)
    std::vector<std::vector<EdgeHooks>> cells;     // [cell][edge]
};

struct SupernetConfig {
    int input_dim = 16;
    int width = 16;
    int classes = 4;
    int num_cells = 3;
    CellSpec cell = CellSpec::nas201_desk();

    static SupernetConfig nas201_desk() { return SupernetConfig{}; }
    static SupernetConfig micro() {
        SupernetConfig c;
        c.num_cells = 3;
        c.cell = CellSpec::micro();
        return c;
    }
};

namespace detail {
/// Seed streams: op weights depend only on (base seed, cell, edge, op slot),
/// never on which other ops exist.
inline std::uint64_t stem_seed(std::uint64_t s) { return derive_seed(s, 1); }
inline std::uint64_t head_seed(std::uint64_t s) { return derive_seed(s, 2); }
inline std::uint64_t op_seed(std::uint64_t s, int cell, int edge, int op) {
    return derive_seed(s, 100 + static_cast<std::uint64_t>(cell),
                       static_cast<std::uint64_t>(edge) + 1, static_cast<std::uint64_t>(op) + 1);
}
}  // namespace detail

/// Weight-sharing supernet: stem -> stacked cells of mixed edges -> linear
/// head. Weight banks are per cell; alphas are global.
class Supernet {
  public:
    SupernetConfig cfg;
    Tensor stem;    // (input_dim, width)
    Tensor head_w;  // (width, classes)
    Tensor head_b;  // (1, classes)
    std::vector<std::vector<std::vector<CandidateOp>>> bank;  // [cell][edge][op]
    AlphaSet alphas;

    Supernet(SupernetConfig config, Activation act, std::uint64_t seed) : cfg(std::move(config)) {
        cfg.cell.validate();
        Rng stem_rng(detail::stem_seed(seed));
        stem = init_linear(cfg.input_dim, cfg.width, stem_rng);
        Rng head_rng(detail::head_seed(seed));
        head_w = init_linear(cfg.width, cfg.classes, head_rng);
        head_b = Tensor::zeros({1, cfg.classes});
        bank.resize(static_cast<std::size_t>(cfg.num_cells));
        for (int c = 0; c < cfg.num_cells; ++c) {
            bank[c].resize(static_cast<std::size_t>(cfg.cell.num_edges()));
            for (int e = 0; e < cfg.cell.num_edges(); ++e) {
                for (int k = 0; k < cfg.cell.num_ops(); ++k) {
                    CandidateOp op = make_op(cfg.cell.ops_per_edge[k], cfg.width);
                    if (op.learnable()) init_weights(op, detail::op_seed(seed, c, e, k));
                    bank[c][e].push_back(std::move(op));
                }
            }
        }
        alphas = AlphaSet::uniform(cfg.cell.num_edges(), cfg.cell.num_ops(), act);
    }

    /// Forward pass on a batch (N, input_dim). Bindings for network weights
    /// and alpha rows are appended to the given vectors; `hooks` may be null.
    Tape::Var forward(Tape& tape, const Tensor& batch, std::vector<ParamBinding>& wbinds,
                      std::vector<ParamBinding>& abinds, ForwardHooks* hooks = nullptr) {
        if (batch.cols() != cfg.input_dim) {
            throw std::invalid_argument("supernet: batch feature dim " +
                                        std::to_string(batch.cols()) + " != stem input " +
                                        std::to_string(cfg.input_dim));
        }
        Tape::Var x = tape.constant(batch);
        Tape::Var stem_v = bind(tape, wbinds, stem);
        x = tape.matmul(x, stem_v);

        // Per-edge probabilities, shared by every cell.
        std::vector<Tape::Var> edge_p;
        std::vector<Tape::Var> alpha_rows;
        for (int e = 0; e < cfg.cell.num_edges(); ++e) {
            if (alphas.hardened) {
                auto p = alphas.probabilities(e);
                edge_p.push_back(tape.constant(Tensor::vec(p)));
                alpha_rows.push_back(Tape::Var{});
            } else {
                Tensor row({cfg.cell.num_ops()},
                           std::vector<double>(
                               alphas.alpha.v.begin() + static_cast<std::size_t>(e) * cfg.cell.num_ops(),
                               alphas.alpha.v.begin() + static_cast<std::size_t>(e + 1) * cfg.cell.num_ops()));
                Tape::Var av = tape.param(row);
                abinds.push_back(ParamBinding{av, &alphas.alpha.v[static_cast<std::size_t>(e) * cfg.cell.num_ops()],
                                              cfg.cell.num_ops()});
                alpha_rows.push_back(av);
                edge_p.push_back(alphas.activation == Activation::Softmax ? tape.softmax(av)
                                                                          : tape.sigmoid(av));
            }
        }
        if (hooks) {
            hooks->edge_p = edge_p;
            hooks->alpha_rows = alpha_rows;
            hooks->cells.assign(static_cast<std::size_t>(cfg.num_cells), {});
        }

        for (int c = 0; c < cfg.num_cells; ++c) {
            std::vector<Tape::Var> node(static_cast<std::size_t>(cfg.cell.num_nodes), Tape::Var{});
            node[0] = x;
            if (hooks) hooks->cells[c].resize(static_cast<std::size_t>(cfg.cell.num_edges()));
            for (int e = 0; e < cfg.cell.num_edges(); ++e) {
                auto [from, to] = cfg.cell.edges[e];
                EdgeHooks eh;
                Tape::Var mixed = mixed_edge(tape, c, e, node[from], edge_p[e], wbinds,
                                             hooks ? &eh : nullptr);
                if (hooks) {
                    eh.input = node[from];
                    eh.mixed = mixed;
                    hooks->cells[c][e] = std::move(eh);
                }
                node[to] = node[to].valid() ? tape.add(node[to], mixed) : mixed;
            }
            // cell output: sum of the intermediate nodes (width-preserving
            // analog of the DARTS concat)
            Tape::Var out{};
            for (int j = 1; j < cfg.cell.num_nodes; ++j)
                out = out.valid() ? tape.add(out, node[j]) : node[j];
            x = out;
        }

        Tape::Var head_v = bind(tape, wbinds, head_w);
        Tape::Var logits = tape.matmul(x, head_v);
        Tape::Var bias_v = bind(tape, wbinds, head_b);
        Tape::Var ones = tape.constant(Tensor::full({batch.rows(), 1}, 1.0));
        return tape.add(logits, tape.matmul(ones, bias_v));
    }

    /// Forward + mean cross-entropy against one-hot targets.
    Tape::Var loss(Tape& tape, const Tensor& batch, const Tensor& onehot,
                   std::vector<ParamBinding>& wbinds, std::vector<ParamBinding>& abinds,
                   ForwardHooks* hooks = nullptr) {
        Tape::Var logits = forward(tape, batch, wbinds, abinds, hooks);
        return tape.cross_entropy(logits, tape.constant(onehot));
    }

  private:
    static Tape::Var bind(Tape& tape, std::vector<ParamBinding>& binds, Tensor& storage) {
        Tape::Var v = tape.param(storage);
        binds.push_back(ParamBinding{v, storage.v.data(), storage.size()});
        return v;
    }

    Tape::Var mixed_edge(Tape& tape, int cell, int edge, Tape::Var x, Tape::Var p,
                         std::vector<ParamBinding>& wbinds, EdgeHooks* eh) {
        Tape::Var acc{};
        for (int k = 0; k < cfg.cell.num_ops(); ++k) {
            CandidateOp& op = bank[cell][edge][k];
            std::vector<Tape::Var> wvars;
            for (Tensor& w : op.weights) wvars.push_back(bind(tape, wbinds, w));
            Tape::Var out = apply_op(tape, op, x, wvars);
            if (op.learnable()) out = tape.standardize(out);
            if (eh) eh->candidates.push_back(out);
            Tape::Var term = tape.scale(tape.pick(p, k), out);
            acc = acc.valid() ? tape.add(acc, term) : term;
        }
        return acc;
    }
};

/// Stand-alone network with one fixed op per edge; fresh weights drawn from
/// the same per-(cell,edge,op) seed streams as the supernet so that an
/// architecture's weights match the hardened supernet bit-exactly.
class FixedNet {
  public:
    SupernetConfig cfg;
    Tensor stem, head_w, head_b;
    std::vector<std::vector<CandidateOp>> ops;  // [cell][edge]

    FixedNet(const Architecture& arch, SupernetConfig config, std::uint64_t seed)
        : cfg(std::move(config)) {
        cfg.cell.validate();
        if (static_cast<int>(arch.choice.size()) != cfg.cell.num_edges()) {
            throw std::invalid_argument("instantiate: architecture has " +
                                        std::to_string(arch.choice.size()) + " edges, spec needs " +
                                        std::to_string(cfg.cell.num_edges()));
        }
        Rng stem_rng(detail::stem_seed(seed));
        stem = init_linear(cfg.input_dim, cfg.width, stem_rng);
        Rng head_rng(detail::head_seed(seed));
        head_w = init_linear(cfg.width, cfg.classes, head_rng);
        head_b = Tensor::zeros({1, cfg.classes});
        ops.resize(static_cast<std::size_t>(cfg.num_cells));
        for (int c = 0; c < cfg.num_cells; ++c) {
            for (int e = 0; e < cfg.cell.num_edges(); ++e) {
                int slot = -1;
                for (int k = 0; k < cfg.cell.num_ops(); ++k)
                    if (cfg.cell.ops_per_edge[k] == arch.choice[e]) slot = k;
                if (slot < 0) {
                    throw std::invalid_argument(std::string("instantiate: op ") +
                                                canonical_name(arch.choice[e]) +
                                                " not in the spec's pool");
                }
                CandidateOp op = make_op(arch.choice[e], cfg.width);
                if (op.learnable()) init_weights(op, detail::op_seed(seed, c, e, slot));
                ops[c].push_back(std::move(op));
            }
        }
    }

    Tape::Var forward(Tape& tape, const Tensor& batch, std::vector<ParamBinding>& wbinds) {
        Tape::Var x = tape.constant(batch);
        Tape::Var stem_v = bind(tape, wbinds, stem);
        x = tape.matmul(x, stem_v);
        for (int c = 0; c < cfg.num_cells; ++c) {
            std::vector<Tape::Var> node(static_cast<std::size_t>(cfg.cell.num_nodes), Tape::Var{});
            node[0] = x;
            for (int e = 0; e < cfg.cell.num_edges(); ++e) {
                auto [from, to] = cfg.cell.edges[e];
                CandidateOp& op = ops[c][e];
                std::vector<Tape::Var> wvars;
                for (Tensor& w : op.weights) wvars.push_back(bind(tape, wbinds, w));
                Tape::Var out = apply_op(tape, op, node[from], wvars);
                if (op.learnable()) out = tape.standardize(out);
                node[to] = node[to].valid() ? tape.add(node[to], out) : out;
            }
            Tape::Var out{};
            for (int j = 1; j < cfg.cell.num_nodes; ++j)
                out = out.valid() ? tape.add(out, node[j]) : node[j];
            x = out;
        }
        Tape::Var head_v = bind(tape, wbinds, head_w);
        Tape::Var logits = tape.matmul(x, head_v);
        Tape::Var bias_v = bind(tape, wbinds, head_b);
        Tape::Var ones = tape.constant(Tensor::full({batch.rows(), 1}, 1.0));
        return tape.add(logits, tape.matmul(ones, bias_v));
    }

    Tape::Var loss(Tape& tape, const Tensor& batch, const Tensor& onehot,
                   std::vector<ParamBinding>& wbinds) {
        Tape::Var logits = forward(tape, batch, wbinds);
        return tape.cross_entropy(logits, tape.constant(onehot));
    }

  private:
    static Tape::Var bind(Tape& tape, std::vector<ParamBinding>& binds, Tensor& storage) {
        Tape::Var v = tape.param(storage);
        binds.push_back(ParamBinding{v, storage.v.data(), storage.size()});
        return v;
    }
};

inline FixedNet instantiate(const Architecture& arch, const SupernetConfig& cfg,
                            std::uint64_t seed) {
    return FixedNet(arch, cfg, seed);
}

}  // namespace dartslab
