// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "dartslab/tensor.hpp"

namespace dartslab {

/// Reverse-mode tape over dense double tensors, define-by-run: forward values
/// are computed at op-recording time, the tape is rebuilt every forward pass.
/// Backward visits nodes exactly once in reverse insertion order and
/// accumulates adjoints additively at fan-out points.
class Tape {
  public:
    struct Var {
        int id = -1;
        bool valid() const { return id >= 0; }
    };

    /// Tracked leaf. Values are checked finite (tape boundary check).
    Var param(const Tensor& t) { return leaf(t, /*requires_grad=*/true); }
    /// Untracked leaf; backward never writes a gradient for it.
    Var constant(const Tensor& t) { return leaf(t, /*requires_grad=*/false); }

    const Tensor& value(Var x) const { return vals_[check(x)]; }
    /// Gradient d(loss)/d(var); zeros until backward() has run.
    const Tensor& grad(Var x) const { return grads_[check(x)]; }

    int num_nodes() const { return static_cast<int>(nodes_.size()); }

    // ---- primitives ----

    Var add(Var a, Var b) {
        require_same_shape("add", a, b);
        Tensor out = vals_[a.id];
        for (int i = 0; i < out.size(); ++i) out[i] += vals_[b.id][i];
        return record(Op::Add, a, b, std::move(out));
    }

    Var sub(Var a, Var b) {
        require_same_shape("sub", a, b);
        Tensor out = vals_[a.id];
        for (int i = 0; i < out.size(); ++i) out[i] -= vals_[b.id][i];
        return record(Op::Sub, a, b, std::move(out));
    }

    /// Elementwise product.
    Var mul(Var a, Var b) {
        require_same_shape("mul", a, b);
        Tensor out = vals_[a.id];
        for (int i = 0; i < out.size(); ++i) out[i] *= vals_[b.id][i];
        return record(Op::Mul, a, b, std::move(out));
    }

    /// Scale by a compile-time constant.
    Var smul(Var a, double c) {
        Tensor out = vals_[check(a)];
        for (auto& x : out.v) x *= c;
        Var r = record(Op::Smul, a, Var{}, std::move(out));
        nodes_.back().caux = c;
        return r;
    }

    /// Scale a tensor by a tracked scalar (shape {1}): y = s * x.
    /// The only tensor-tensor broadcast in the engine.
    Var scale(Var s, Var x) {
        if (vals_[check(s)].size() != 1) {
            throw std::invalid_argument("scale: scalar operand has shape " +
                                        vals_[s.id].shape_str() + ", expected (1)");
        }
        double c = vals_[s.id][0];
        Tensor out = vals_[check(x)];
        for (auto& e : out.v) e *= c;
        return record(Op::Scale, s, x, std::move(out));
    }

    /// Matrix product: (m,k) x (k,n) -> (m,n).
    Var matmul(Var a, Var b) {
        const Tensor& A = vals_[check(a)];
        const Tensor& B = vals_[check(b)];
        if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows()) {
            throw std::invalid_argument("matmul: incompatible shapes " + A.shape_str() + " and " +
                                        B.shape_str());
        }
        int m = A.rows(), k = A.cols(), n = B.cols();
        Tensor out = Tensor::zeros({m, n});
        for (int i = 0; i < m; ++i) {
            for (int l = 0; l < k; ++l) {
                double ail = A.at(i, l);
                if (ail == 0.0) continue;
                const double* brow = &B.v[static_cast<std::size_t>(l) * n];
                double* orow = &out.v[static_cast<std::size_t>(i) * n];
                for (int j = 0; j < n; ++j) orow[j] += ail * brow[j];
            }
        }
        return record(Op::Matmul, a, b, std::move(out));
    }

    Var relu(Var a) {
        Tensor out = vals_[check(a)];
        for (auto& x : out.v) x = x > 0.0 ? x : 0.0;
        return record(Op::Relu, a, Var{}, std::move(out));
    }

    /// Moving mean over the last dimension with clamped window (the pooling
    /// analog). Each output position averages the in-range entries of a
    /// window of `window` centered on it.
    Var mean_window(Var a, int window) {
        if (window < 1) throw std::invalid_argument("mean_window: window must be >= 1");
        const Tensor& A = vals_[check(a)];
        int rows = A.rank() == 2 ? A.rows() : 1;
        int len = A.rank() == 2 ? A.cols() : A.size();
        int half = window / 2;
        Tensor out = Tensor::zeros(A.shape);
        for (int r = 0; r < rows; ++r) {
            const double* in = &A.v[static_cast<std::size_t>(r) * len];
            double* o = &out.v[static_cast<std::size_t>(r) * len];
            for (int i = 0; i < len; ++i) {
                int lo = std::max(0, i - half), hi = std::min(len - 1, i + half);
                double s = 0.0;
                for (int j = lo; j <= hi; ++j) s += in[j];
                o[i] = s / (hi - lo + 1);
            }
        }
        Var v = record(Op::MeanWindow, a, Var{}, std::move(out));
        nodes_.back().aux = window;
        return v;
    }

    Var reshape(Var a, std::vector<int> shape) {
        const Tensor& A = vals_[check(a)];
        if (Tensor::count(shape) != A.size()) {
            throw std::invalid_argument("reshape: cannot view " + A.shape_str() + " as " +
                                        Tensor::shape_str(shape));
        }
        Tensor out(std::move(shape), A.v);
        return record(Op::Reshape, a, Var{}, std::move(out));
    }

    /// Softmax over a rank-1 tensor.
    Var softmax(Var a) {
        const Tensor& A = vals_[check(a)];
        if (A.rank() != 1 || A.size() == 0) {
            throw std::invalid_argument("softmax: expected nonempty vector, got " + A.shape_str());
        }
        Tensor out = softmax_values(A);
        return record(Op::Softmax, a, Var{}, std::move(out));
    }

    /// Elementwise logistic sigmoid.
    Var sigmoid(Var a) {
        Tensor out = vals_[check(a)];
        for (auto& x : out.v) x = 1.0 / (1.0 + std::exp(-x));
        return record(Op::Sigmoid, a, Var{}, std::move(out));
    }

    /// Batch standardization of a (N,F) tensor: per feature, subtract the
    /// batch mean and divide by sqrt(population variance + eps). No affine
    /// parameters.
    Var standardize(Var a, double eps = 1e-5) {
        const Tensor& A = vals_[check(a)];
        if (A.rank() != 2) {
            throw std::invalid_argument("standardize: expected (N,F) tensor, got " + A.shape_str());
        }
        int n = A.rows(), f = A.cols();
        Tensor out = Tensor::zeros(A.shape);
        for (int j = 0; j < f; ++j) {
            double mean = 0.0;
            for (int r = 0; r < n; ++r) mean += A.at(r, j);
            mean /= n;
            double var = 0.0;
            for (int r = 0; r < n; ++r) {
                double d = A.at(r, j) - mean;
                var += d * d;
            }
            var /= n;
            double inv = 1.0 / std::sqrt(var + eps);
            for (int r = 0; r < n; ++r) out.at(r, j) = (A.at(r, j) - mean) * inv;
        }
        Var v = record(Op::Standardize, a, Var{}, std::move(out));
        nodes_.back().caux = eps;
        return v;
    }

    /// Extract entry k of a rank-1 tensor as a tracked scalar.
    Var pick(Var a, int k) {
        const Tensor& A = vals_[check(a)];
        if (k < 0 || k >= A.size()) {
            throw std::invalid_argument("pick: index " + std::to_string(k) + " out of range for " +
                                        A.shape_str());
        }
        Var v = record(Op::Pick, a, Var{}, Tensor::scalar(A[k]));
        nodes_.back().aux = k;
        return v;
    }

    /// Mean cross-entropy of row logits against one-hot targets:
    /// (1/N) sum_r -y_r . log softmax(logits_r). Scalar output.
    Var cross_entropy(Var logits, Var onehot) {
        const Tensor& L = vals_[check(logits)];
        const Tensor& Y = vals_[check(onehot)];
        if (!L.same_shape(Y)) {
            throw std::invalid_argument("cross_entropy: logits " + L.shape_str() +
                                        " vs targets " + Y.shape_str());
        }
        int n = L.rows(), c = L.cols();
        if (L.rank() == 1) { n = 1; c = L.size(); }
        for (int r = 0; r < n; ++r) {
            int ones = 0;
            for (int j = 0; j < c; ++j) {
                double y = Y.v[static_cast<std::size_t>(r) * c + j];
                if (y == 1.0) ++ones;
                else if (y != 0.0) ones = -1000;
            }
            if (ones != 1) {
                throw std::invalid_argument("cross_entropy: target row " + std::to_string(r) +
                                            " is not one-hot");
            }
        }
        double total = 0.0;
        for (int r = 0; r < n; ++r) {
            const double* row = &L.v[static_cast<std::size_t>(r) * c];
            double mx = *std::max_element(row, row + c);
            double lse = 0.0;
            for (int j = 0; j < c; ++j) lse += std::exp(row[j] - mx);
            lse = std::log(lse) + mx;
            for (int j = 0; j < c; ++j) {
                if (Y.v[static_cast<std::size_t>(r) * c + j] == 1.0) total += lse - row[j];
            }
        }
        return record(Op::CrossEntropy, logits, onehot, Tensor::scalar(total / n));
    }

    /// Sum of all entries, scalar output.
    Var sum(Var a) {
        const Tensor& A = vals_[check(a)];
        double s = 0.0;
        for (double x : A.v) s += x;
        return record(Op::Sum, a, Var{}, Tensor::scalar(s));
    }

    /// Seeds d(loss)/d(loss)=1 and runs the reverse sweep. `loss` must be
    /// scalar and finite (tape boundary check).
    void backward(Var loss) {
        const Tensor& L = vals_[check(loss)];
        if (L.size() != 1) {
            throw std::invalid_argument("backward: loss has shape " + L.shape_str() +
                                        ", expected scalar");
        }
        if (!L.all_finite()) throw std::runtime_error("backward: loss is not finite");
        grads_[loss.id][0] = 1.0;
        for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) backward_node(nodes_[i]);
    }

  private:
    enum class Op {
        Leaf, Add, Sub, Mul, Smul, Scale, Matmul, Relu, MeanWindow, Reshape,
        Softmax, Sigmoid, Standardize, Pick, CrossEntropy, Sum,
    };

    struct Node {
        Op op;
        int a = -1, b = -1, out = -1;
        int aux = 0;
        double caux = 0.0;
    };

    Var leaf(const Tensor& t, bool requires_grad) {
        if (!t.all_finite()) {
            throw std::runtime_error("tape: non-finite values entering the tape, shape " +
                                     t.shape_str());
        }
        vals_.push_back(t);
        grads_.push_back(Tensor::zeros(t.shape));
        tracked_.push_back(requires_grad);
        return Var{static_cast<int>(vals_.size()) - 1};
    }

    Var record(Op op, Var a, Var b, Tensor out) {
        vals_.push_back(std::move(out));
        grads_.push_back(Tensor::zeros(vals_.back().shape));
        tracked_.push_back(true);
        int id = static_cast<int>(vals_.size()) - 1;
        nodes_.push_back(Node{op, a.id, b.id, id, 0, 0.0});
        return Var{id};
    }

    int check(Var v) const {
        if (!v.valid() || v.id >= static_cast<int>(vals_.size())) {
            throw std::invalid_argument("tape: invalid var handle");
        }
        return v.id;
    }

    void require_same_shape(const char* what, Var a, Var b) {
        const Tensor& A = vals_[check(a)];
        const Tensor& B = vals_[check(b)];
        if (!A.same_shape(B)) {
            throw std::invalid_argument(std::string(what) + ": shape mismatch " + A.shape_str() +
                                        " vs " + B.shape_str());
        }
    }

    static Tensor softmax_values(const Tensor& z) {
        double mx = *std::max_element(z.v.begin(), z.v.end());
        Tensor p = z;
        double s = 0.0;
        for (auto& x : p.v) {
            x = std::exp(x - mx);
            s += x;
        }
        for (auto& x : p.v) x /= s;
        return p;
    }

    void backward_node(const Node& nd) {
        const Tensor& g = grads_[nd.out];
        switch (nd.op) {
            case Op::Leaf: break;
            case Op::Add: {
                acc(nd.a, g, 1.0);
                acc(nd.b, g, 1.0);
                break;
            }
            case Op::Sub: {
                acc(nd.a, g, 1.0);
                acc(nd.b, g, -1.0);
                break;
            }
            case Op::Mul: {
                if (tracked_[nd.a]) {
                    Tensor& ga = grads_[nd.a];
                    const Tensor& vb = vals_[nd.b];
                    for (int i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
                }
                if (tracked_[nd.b]) {
                    Tensor& gb = grads_[nd.b];
                    const Tensor& va = vals_[nd.a];
                    for (int i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
                }
                break;
            }
            case Op::Smul: {
                acc(nd.a, g, nd.caux);
                break;
            }
            case Op::Scale: {
                if (tracked_[nd.a]) {
                    double s = 0.0;
                    const Tensor& vx = vals_[nd.b];
                    for (int i = 0; i < g.size(); ++i) s += g[i] * vx[i];
                    grads_[nd.a][0] += s;
                }
                if (tracked_[nd.b]) {
                    double c = vals_[nd.a][0];
                    Tensor& gx = grads_[nd.b];
                    for (int i = 0; i < g.size(); ++i) gx[i] += c * g[i];
                }
                break;
            }
            case Op::Matmul: {
                const Tensor& A = vals_[nd.a];
                const Tensor& B = vals_[nd.b];
                int m = A.rows(), k = A.cols(), n = B.cols();
                if (tracked_[nd.a]) {
                    Tensor& ga = grads_[nd.a];
                    for (int i = 0; i < m; ++i)
                        for (int l = 0; l < k; ++l) {
                            double s = 0.0;
                            for (int j = 0; j < n; ++j) s += g.at(i, j) * B.at(l, j);
                            ga.at(i, l) += s;
                        }
                }
                if (tracked_[nd.b]) {
                    Tensor& gb = grads_[nd.b];
                    for (int l = 0; l < k; ++l)
                        for (int i = 0; i < m; ++i) {
                            double ail = A.at(i, l);
                            if (ail == 0.0) continue;
                            for (int j = 0; j < n; ++j) gb.at(l, j) += ail * g.at(i, j);
                        }
                }
                break;
            }
            case Op::Relu: {
                if (tracked_[nd.a]) {
                    Tensor& ga = grads_[nd.a];
                    const Tensor& va = vals_[nd.a];
                    for (int i = 0; i < g.size(); ++i)
                        if (va[i] > 0.0) ga[i] += g[i];
                }
                break;
            }
            case Op::MeanWindow: {
                if (!tracked_[nd.a]) break;
                Tensor& ga = grads_[nd.a];
                const Tensor& va = vals_[nd.a];
                int rows = va.rank() == 2 ? va.rows() : 1;
                int len = va.rank() == 2 ? va.cols() : va.size();
                int half = nd.aux / 2;
                for (int r = 0; r < rows; ++r) {
                    const double* gi = &g.v[static_cast<std::size_t>(r) * len];
                    double* go = &ga.v[static_cast<std::size_t>(r) * len];
                    for (int i = 0; i < len; ++i) {
                        int lo = std::max(0, i - half), hi = std::min(len - 1, i + half);
                        double share = gi[i] / (hi - lo + 1);
                        for (int j = lo; j <= hi; ++j) go[j] += share;
                    }
                }
                break;
            }
            case Op::Reshape: {
                if (tracked_[nd.a]) {
                    Tensor& ga = grads_[nd.a];
                    for (int i = 0; i < g.size(); ++i) ga[i] += g[i];
                }
                break;
            }
            case Op::Softmax: {
                if (!tracked_[nd.a]) break;
                const Tensor& p = vals_[nd.out];
                double gp = 0.0;
                for (int i = 0; i < g.size(); ++i) gp += g[i] * p[i];
                Tensor& ga = grads_[nd.a];
                for (int i = 0; i < g.size(); ++i) ga[i] += p[i] * (g[i] - gp);
                break;
            }
            case Op::Sigmoid: {
                if (!tracked_[nd.a]) break;
                const Tensor& p = vals_[nd.out];
                Tensor& ga = grads_[nd.a];
                for (int i = 0; i < g.size(); ++i) ga[i] += g[i] * p[i] * (1.0 - p[i]);
                break;
            }
            case Op::Standardize: {
                if (!tracked_[nd.a]) break;
                const Tensor& x = vals_[nd.a];
                const Tensor& y = vals_[nd.out];
                Tensor& ga = grads_[nd.a];
                int n = x.rows(), f = x.cols();
                for (int j = 0; j < f; ++j) {
                    double mean = 0.0, var = 0.0;
                    for (int r = 0; r < n; ++r) mean += x.at(r, j);
                    mean /= n;
                    for (int r = 0; r < n; ++r) {
                        double d = x.at(r, j) - mean;
                        var += d * d;
                    }
                    var /= n;
                    double inv = 1.0 / std::sqrt(var + nd.caux);
                    double gmean = 0.0, gymean = 0.0;
                    for (int r = 0; r < n; ++r) {
                        gmean += g.at(r, j);
                        gymean += g.at(r, j) * y.at(r, j);
                    }
                    gmean /= n;
                    gymean /= n;
                    for (int r = 0; r < n; ++r)
                        ga.at(r, j) += inv * (g.at(r, j) - gmean - y.at(r, j) * gymean);
                }
                break;
            }
            case Op::Pick: {
                if (tracked_[nd.a]) grads_[nd.a][nd.aux] += g[0];
                break;
            }
            case Op::CrossEntropy: {
                if (!tracked_[nd.a]) break;
                const Tensor& L = vals_[nd.a];
                const Tensor& Y = vals_[nd.b];
                int n = L.rank() == 1 ? 1 : L.rows();
                int c = L.rank() == 1 ? L.size() : L.cols();
                Tensor& ga = grads_[nd.a];
                double scale = g[0] / n;
                for (int r = 0; r < n; ++r) {
                    const double* row = &L.v[static_cast<std::size_t>(r) * c];
                    double mx = *std::max_element(row, row + c);
                    double s = 0.0;
                    std::vector<double> e(static_cast<std::size_t>(c));
                    for (int j = 0; j < c; ++j) {
                        e[j] = std::exp(row[j] - mx);
                        s += e[j];
                    }
                    for (int j = 0; j < c; ++j) {
                        double p = e[j] / s;
                        ga.v[static_cast<std::size_t>(r) * c + j] +=
                            scale * (p - Y.v[static_cast<std::size_t>(r) * c + j]);
                    }
                }
                break;
            }
            case Op::Sum: {
                if (tracked_[nd.a]) {
                    Tensor& ga = grads_[nd.a];
                    for (auto& x : ga.v) x += g[0];
                }
                break;
            }
        }
    }

    void acc(int id, const Tensor& g, double c) {
        if (id < 0 || !tracked_[id]) return;
        Tensor& dst = grads_[id];
        for (int i = 0; i < g.size(); ++i) dst[i] += c * g[i];
    }

    std::vector<Tensor> vals_;
    std::vector<Tensor> grads_;
    std::vector<bool> tracked_;
    std::vector<Node> nodes_;
};

}  // namespace dartslab
