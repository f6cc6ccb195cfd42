// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dartslab/space.hpp"
#include "dartslab/tape.hpp"

namespace dartslab {

/// One diagnostic row per (step, cell, edge, op). loss_val and corr are
/// optional (NaN = absent, empty CSV field). `provenance` names the data the
/// alpha-gradient measurement came from.
struct TraceRecord {
    long step = 0;
    int epoch = 0;
    int cell = 0;
    int edge = 0;
    std::string op_name;
    double p = 0.0;
    double grad_p = 0.0;
    double grad_alpha = 0.0;
    double loss_train = 0.0;
    double loss_val = std::numeric_limits<double>::quiet_NaN();
    double corr = std::numeric_limits<double>::quiet_NaN();
    std::string provenance = "train";

    bool operator==(const TraceRecord& o) const {
        auto eq = [](double a, double b) {
            return (std::isnan(a) && std::isnan(b)) || a == b;
        };
        return step == o.step && epoch == o.epoch && cell == o.cell && edge == o.edge &&
               op_name == o.op_name && eq(p, o.p) && eq(grad_p, o.grad_p) &&
               eq(grad_alpha, o.grad_alpha) && eq(loss_train, o.loss_train) &&
               eq(loss_val, o.loss_val) && eq(corr, o.corr) && provenance == o.provenance;
    }
};

inline constexpr const char* kTraceHeader =
    "step,epoch,cell,edge,op_name,p,grad_p,grad_alpha,loss_train,loss_val,corr,provenance";

namespace detail {
inline std::string fmt_double(double v) {
    if (std::isnan(v)) return "";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}
inline double parse_double(const std::string& s) {
    if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
    return std::stod(s);
}
}  // namespace detail

inline std::string trace_row(const TraceRecord& r) {
    std::ostringstream os;
    os << r.step << ',' << r.epoch << ',' << r.cell << ',' << r.edge << ',' << r.op_name << ','
       << detail::fmt_double(r.p) << ',' << detail::fmt_double(r.grad_p) << ','
       << detail::fmt_double(r.grad_alpha) << ',' << detail::fmt_double(r.loss_train) << ','
       << detail::fmt_double(r.loss_val) << ',' << detail::fmt_double(r.corr) << ','
       << r.provenance;
    return os.str();
}

inline void write_trace_csv(const std::vector<TraceRecord>& trace, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_trace_csv: cannot open " + path);
    f << kTraceHeader << "\n";
    for (const auto& r : trace) f << trace_row(r) << "\n";
    if (!f) throw std::runtime_error("write_trace_csv: write failed for " + path);
}

inline std::vector<TraceRecord> read_trace_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("read_trace_csv: cannot open " + path);
    std::string line;
    if (!std::getline(f, line) || line != kTraceHeader)
        throw std::runtime_error("read_trace_csv: bad header in " + path);
    std::vector<TraceRecord> out;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::string cur;
        for (char c : line) {
            if (c == ',') {
                cols.push_back(cur);
                cur.clear();
            } else
                cur += c;
        }
        cols.push_back(cur);
        if (cols.size() != 12) throw std::runtime_error("read_trace_csv: bad row: " + line);
        TraceRecord r;
        r.step = std::stol(cols[0]);
        r.epoch = std::stoi(cols[1]);
        r.cell = std::stoi(cols[2]);
        r.edge = std::stoi(cols[3]);
        r.op_name = cols[4];
        r.p = detail::parse_double(cols[5]);
        r.grad_p = detail::parse_double(cols[6]);
        r.grad_alpha = detail::parse_double(cols[7]);
        r.loss_train = detail::parse_double(cols[8]);
        r.loss_val = detail::parse_double(cols[9]);
        r.corr = detail::parse_double(cols[10]);
        r.provenance = cols[11];
        out.push_back(std::move(r));
    }
    return out;
}

/// Per-op mixing gradients on one edge, measured from a completed
/// forward+backward: grad_p[k] = sum_batch dL/d(mixed) . o_k(x). Returned
/// per cell; the tape's own dL/dp equals the sum over cells (shared alpha).
struct EdgeGradP {
    std::vector<std::vector<double>> per_cell;  // [cell][op]
    std::vector<double> total;                  // [op]
};

inline EdgeGradP grad_p_from_hooks(const Tape& tape, const ForwardHooks& hooks, int edge) {
    if (hooks.cells.empty() || edge < 0 ||
        edge >= static_cast<int>(hooks.cells[0].size())) {
        throw std::invalid_argument("grad_p: edge index " + std::to_string(edge) +
                                    " out of range");
    }
    EdgeGradP out;
    int ops = static_cast<int>(hooks.cells[0][edge].candidates.size());
    out.total.assign(static_cast<std::size_t>(ops), 0.0);
    for (const auto& cell : hooks.cells) {
        const EdgeHooks& eh = cell[edge];
        std::vector<double> row(static_cast<std::size_t>(ops), 0.0);
        const Tensor& gm = tape.grad(eh.mixed);
        for (int k = 0; k < ops; ++k) {
            row[k] = dot(gm, tape.value(eh.candidates[k]));
            out.total[k] += row[k];
        }
        out.per_cell.push_back(std::move(row));
    }
    return out;
}

/// Convenience probe: forward+backward on one batch, then read one edge.
inline EdgeGradP grad_p(Supernet& net, const Tensor& batch_x, const Tensor& batch_y, int edge) {
    Tape tape;
    std::vector<ParamBinding> wb, ab;
    ForwardHooks hooks;
    Tape::Var loss = net.loss(tape, batch_x, batch_y, wb, ab, &hooks);
    tape.backward(loss);
    return grad_p_from_hooks(tape, hooks, edge);
}

/// Per-sample quantities of one (cell, edge) captured from a pass: rows of
/// the loss gradient at the mixed output (rescaled to per-sample loss
/// gradients) and rows of the edge input.
struct EdgeSamples {
    Tensor grads;   // (N, width)
    Tensor inputs;  // (N, width)
};

inline EdgeSamples edge_samples(const Tape& tape, const ForwardHooks& hooks, int cell, int edge) {
    const EdgeHooks& eh = hooks.cells.at(cell).at(edge);
    EdgeSamples s;
    s.grads = tape.grad(eh.mixed);
    s.inputs = tape.value(eh.input);
    double n = s.grads.rows();
    for (auto& g : s.grads.v) g *= n;  // undo the 1/N of the mean loss
    return s;
}

/// The cross-batch coupling term: (1/NM) sum_j sum_k (g_a[j].g_b[k]) *
/// (x_b[k].x_a[j]) over per-sample loss gradients g at the mixed-edge output
/// and per-sample edge inputs x. The 1/NM normalization makes same-batch and
/// cross-batch values comparable across batch sizes; with per-sample
/// gradients defined against the per-sample loss it cancels against the
/// mean-loss 1/N factors exactly.
inline double correlation_sum(const EdgeSamples& a, const EdgeSamples& b) {
    if (a.grads.cols() != b.grads.cols() || a.inputs.cols() != b.inputs.cols()) {
        throw std::invalid_argument("correlation_sum: feature width mismatch");
    }
    int n = a.grads.rows(), m = b.grads.rows();
    double total = 0.0;
    for (int j = 0; j < n; ++j) {
        for (int k = 0; k < m; ++k) {
            double gg = 0.0, xx = 0.0;
            for (int c = 0; c < a.grads.cols(); ++c)
                gg += a.grads.at(j, c) * b.grads.at(k, c);
            for (int c = 0; c < a.inputs.cols(); ++c)
                xx += a.inputs.at(j, c) * b.inputs.at(k, c);
            total += gg * xx;
        }
    }
    return total / (static_cast<double>(n) * m);
}

/// Diagonal restriction of the same-batch sum: (1/N^2) sum_j |g_j|^2 |x_j|^2,
/// nonnegative by construction.
inline double correlation_diagonal(const EdgeSamples& a) {
    int n = a.grads.rows();
    double total = 0.0;
    for (int j = 0; j < n; ++j) {
        double gg = 0.0, xx = 0.0;
        for (int c = 0; c < a.grads.cols(); ++c) gg += a.grads.at(j, c) * a.grads.at(j, c);
        for (int c = 0; c < a.inputs.cols(); ++c) xx += a.inputs.at(j, c) * a.inputs.at(j, c);
        total += gg * xx;
    }
    return total / (static_cast<double>(n) * n);
}

struct CorrelationReport {
    std::string regime_label;
    // [cell][node]: per-node value = sum over the node's incoming edges.
    std::vector<std::vector<double>> per_node;
};

/// Evaluates the coupling term between two batches through one net snapshot,
/// aggregated per (cell, node). Both passes run at identical parameters.
inline CorrelationReport gradient_correlation_report(Supernet& net, const Tensor& ax,
                                                     const Tensor& ay, const Tensor& bx,
                                                     const Tensor& by,
                                                     const std::string& label = "") {
    Tape ta, tb;
    std::vector<ParamBinding> wb1, ab1, wb2, ab2;
    ForwardHooks ha, hb;
    ta.backward(net.loss(ta, ax, ay, wb1, ab1, &ha));
    tb.backward(net.loss(tb, bx, by, wb2, ab2, &hb));
    CorrelationReport rep;
    rep.regime_label = label;
    const CellSpec& spec = net.cfg.cell;
    rep.per_node.assign(static_cast<std::size_t>(net.cfg.num_cells),
                        std::vector<double>(static_cast<std::size_t>(spec.num_nodes), 0.0));
    for (int c = 0; c < net.cfg.num_cells; ++c) {
        for (int e = 0; e < spec.num_edges(); ++e) {
            double v = correlation_sum(edge_samples(ta, ha, c, e), edge_samples(tb, hb, c, e));
            rep.per_node[c][spec.edges[e].second] += v;
        }
    }
    return rep;
}

/// Single-edge variant (spec surface).
inline double gradient_correlation(Supernet& net, const Tensor& ax, const Tensor& ay,
                                   const Tensor& bx, const Tensor& by, int cell, int edge) {
    Tape ta, tb;
    std::vector<ParamBinding> wb1, ab1, wb2, ab2;
    ForwardHooks ha, hb;
    ta.backward(net.loss(ta, ax, ay, wb1, ab1, &ha));
    tb.backward(net.loss(tb, bx, by, wb2, ab2, &hb));
    return correlation_sum(edge_samples(ta, ha, cell, edge), edge_samples(tb, hb, cell, edge));
}

// ---- collapse detection ----

struct EdgeCollapse {
    int edge = -1;
    long crossing_step = -1;  // first step after which a non-learnable op's p
                              // stays above every learnable op's p to the end
    bool final_argmax_nonlearnable = false;
    bool flagged = false;  // final argmax non-learnable but oracle-best learnable
};

struct CollapseReport {
    std::vector<EdgeCollapse> edges;

    int crossings() const {
        int n = 0;
        for (const auto& e : edges) n += e.crossing_step >= 0 ? 1 : 0;
        return n;
    }
};

/// Scans a trace (cell 0; alphas are shared so p is identical across cells)
/// for the irreversibility crossing point per edge. `oracle_best`, when
/// given, flags edges whose final argmax is non-learnable where the
/// oracle-best architecture uses a learnable op.
inline CollapseReport collapse_detector(const std::vector<TraceRecord>& trace,
                                        const CellSpec& spec,
                                        const Architecture* oracle_best = nullptr) {
    CollapseReport rep;
    if (trace.empty()) return rep;
    for (int e = 0; e < spec.num_edges(); ++e) {
        // gather per-step max p over learnable / non-learnable ops
        std::vector<long> steps;
        std::vector<double> best_learn, best_non;
        for (const auto& r : trace) {
            if (r.cell != 0 || r.edge != e) continue;
            if (steps.empty() || steps.back() != r.step) {
                steps.push_back(r.step);
                best_learn.push_back(-1.0);
                best_non.push_back(-1.0);
            }
            double& slot = is_learnable(op_kind_from_name(r.op_name)) ? best_learn.back()
                                                                      : best_non.back();
            slot = std::max(slot, r.p);
        }
        if (steps.empty()) continue;
        EdgeCollapse ec;
        ec.edge = e;
        bool has_learn = best_learn.back() >= 0.0, has_non = best_non.back() >= 0.0;
        if (has_learn && has_non) {
            // walk backward over the maximal suffix where non-learnable leads
            int i = static_cast<int>(steps.size());
            while (i > 0 && best_non[i - 1] > best_learn[i - 1]) --i;
            if (i < static_cast<int>(steps.size())) ec.crossing_step = steps[i];
            ec.final_argmax_nonlearnable = best_non.back() > best_learn.back();
        } else if (has_non) {
            ec.final_argmax_nonlearnable = true;
        }
        if (oracle_best && ec.final_argmax_nonlearnable &&
            is_learnable(oracle_best->choice[e]))
            ec.flagged = true;
        rep.edges.push_back(ec);
    }
    return rep;
}

// ---- result emission ----

struct SearchSummary {
    AlphaSet final_alphas;
    Architecture architecture;
    CellSpec spec;
    double final_val_accuracy = std::numeric_limits<double>::quiet_NaN();
    std::optional<CorrelationReport> correlation;
};

inline nlohmann::json summary_json(const SearchSummary& s) {
    nlohmann::json j;
    j["activation"] = activation_name(s.final_alphas.activation);
    std::vector<std::vector<double>> alpha;
    for (int e = 0; e < s.final_alphas.num_edges(); ++e) {
        std::vector<double> row;
        for (int k = 0; k < s.final_alphas.num_ops(); ++k)
            row.push_back(s.final_alphas.alpha.at(e, k));
        alpha.push_back(std::move(row));
    }
    j["alpha"] = alpha;
    j["architecture"] = s.architecture.op_names();
    j["architecture_str"] = s.architecture.to_string(s.spec);
    if (!std::isnan(s.final_val_accuracy)) j["val_accuracy"] = s.final_val_accuracy;
    if (s.correlation) {
        j["correlation"] = {{"label", s.correlation->regime_label},
                            {"per_node", s.correlation->per_node}};
    }
    return j;
}

/// Writes <dir>/trace.csv and <dir>/summary.json.
inline void emit_traces(const std::vector<TraceRecord>& trace, const SearchSummary& summary,
                        const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    write_trace_csv(trace, dir + "/trace.csv");
    std::ofstream f(dir + "/summary.json");
    if (!f) throw std::runtime_error("emit_traces: cannot open " + dir + "/summary.json");
    f << summary_json(summary).dump(2) << "\n";
    if (!f) throw std::runtime_error("emit_traces: write failed in " + dir);
}

}  // namespace dartslab
