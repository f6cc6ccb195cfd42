// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dartslab/rng.hpp"
#include "dartslab/tensor.hpp"

namespace dartslab {

enum class TaskKind { LearnableRequired, SkipFriendly, GaussianClusters };

inline const char* task_name(TaskKind k) {
    switch (k) {
        case TaskKind::LearnableRequired: return "learnable_required";
        case TaskKind::SkipFriendly: return "skip_friendly";
        case TaskKind::GaussianClusters: return "gaussian_clusters";
    }
    return "?";
}
inline TaskKind task_from_name(const std::string& s) {
    if (s == "learnable_required") return TaskKind::LearnableRequired;
    if (s == "skip_friendly") return TaskKind::SkipFriendly;
    if (s == "gaussian_clusters") return TaskKind::GaussianClusters;
    throw std::invalid_argument("unknown task kind: " + s);
}

struct DatasetSpec {
    TaskKind kind = TaskKind::LearnableRequired;
    int input_dim = 16;
    int classes = 4;
    int n_train = 2048;
    int n_val = 512;
    int n_test = 512;
    std::uint64_t seed = 0;
    // teacher parameters (learnable_required)
    int teacher_hidden = 32;         // width of the even |.| stage
    int teacher_deep = 8;            // width of the second relu stage
    double teacher_cond = 3.0;       // singular spectrum clamp of the teacher maps
    double teacher_shallow_mix = 1.0;  // weight of the depth-1 logit component
    double teacher_deep_mix = 1.5;     // weight of the depth-2 logit component
    double label_margin = 0.35;      // min top-2 teacher logit gap kept
};

/// One split: samples as rows, labels both one-hot and as indices.
struct Split {
    Tensor x;        // (n, input_dim)
    Tensor onehot;   // (n, classes)
    std::vector<int> labels;

    int size() const { return x.rows(); }
};

struct TaskData {
    DatasetSpec spec;
    Split train, val, test;
    std::string fingerprint;
};

namespace detail {

/// FNV-1a over the spec fields; content-addresses cached datasets and oracle
/// tables.
inline std::string spec_fingerprint(const DatasetSpec& s) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xff;
            h *= 1099511628211ULL;
        }
    };
    mix(static_cast<std::uint64_t>(s.kind));
    mix(static_cast<std::uint64_t>(s.input_dim));
    mix(static_cast<std::uint64_t>(s.classes));
    mix(static_cast<std::uint64_t>(s.n_train));
    mix(static_cast<std::uint64_t>(s.n_val));
    mix(static_cast<std::uint64_t>(s.n_test));
    mix(s.seed);
    mix(static_cast<std::uint64_t>(s.teacher_hidden));
    mix(static_cast<std::uint64_t>(s.teacher_deep));
    static_assert(sizeof(double) == 8);
    for (double dv : {s.teacher_cond, s.teacher_shallow_mix, s.teacher_deep_mix, s.label_margin}) {
        std::uint64_t u;
        __builtin_memcpy(&u, &dv, 8);
        mix(u);
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/// Rows-orthonormal matrix (rows x cols, rows <= cols) via Gram-Schmidt on a
/// gaussian draw.
inline Tensor orthonormal_rows(int rows, int cols, Rng& rng) {
    Tensor m = Tensor::zeros({rows, cols});
    for (auto& x : m.v) x = rng.normal();
    for (int r = 0; r < rows; ++r) {
        for (int p = 0; p < r; ++p) {
            double d = 0.0;
            for (int c = 0; c < cols; ++c) d += m.at(r, c) * m.at(p, c);
            for (int c = 0; c < cols; ++c) m.at(r, c) -= d * m.at(p, c);
        }
        double n = 0.0;
        for (int c = 0; c < cols; ++c) n += m.at(r, c) * m.at(r, c);
        n = std::sqrt(n);
        if (n < 1e-9) throw std::runtime_error("orthonormal_rows: degenerate draw");
        for (int c = 0; c < cols; ++c) m.at(r, c) /= n;
    }
    return m;
}

/// Map with prescribed singular spectrum geometric in [1, cond]:
/// A = U diag(s) V with U column-orthonormal (rows x k), V rows-orthonormal
/// (k x cols), k = min(rows, cols). cond(A) == cond exactly.
inline Tensor conditioned_map(int rows, int cols, double cond, Rng& rng) {
    int k = std::min(rows, cols);
    Tensor ut = orthonormal_rows(k, rows, rng);  // U transposed
    Tensor v = orthonormal_rows(k, cols, rng);
    Tensor a = Tensor::zeros({rows, cols});
    for (int i = 0; i < k; ++i) {
        double s = k == 1 ? 1.0 : std::pow(cond, static_cast<double>(i) / (k - 1));
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) a.at(r, c) += ut.at(i, r) * s * v.at(i, c);
    }
    return a;
}

/// logits = b * relu(a2 * h) + shallow_mix * d * h - bias, with
/// h = |a1 x| - E|a1 x| (the expectation is the half-normal row mean).
/// The |.| stage makes labels an exactly even function of x, so no linear
/// readout of the raw input carries class signal (E[x | class] = 0 by
/// symmetry). The centered second stage is genuinely nonlinear (depth-2),
/// while the shallow d-term rewards extra parallel capacity.
struct Teacher {
    // Even-feature stage u = |a1 x| - E|a1 x| (h1 rows; the E term is the
    // half-normal row mean so u is centered), split into halves u_a, u_b.
    // Class scores decompose into additive chunks with distinct wiring
    // demands:
    //   z_a = ca u_a, z_b = cb u_b   (each half needs one full-width
    //                                 nonlinear map of the raw input)
    //   deep = b relu(a2 z_a)        (a second nonlinearity on top of the
    //                                 z_a readout)
    // logits = shallow_mix*(z_a + z_b) + deep_mix * deep - bias
    Tensor a1;  // (h1, input)
    Tensor ca;  // (classes, h1/2)
    Tensor cb;  // (classes, h1 - h1/2)
    Tensor a2;  // (h2, classes)
    Tensor b;   // (classes, h2)
    double shallow_mix = 1.0;
    double deep_mix = 1.0;
    std::vector<double> h1_mean;
    std::vector<double> bias;

    std::vector<double> logits(const double* x, int input_dim) const {
        std::vector<double> u(static_cast<std::size_t>(a1.rows()), 0.0);
        for (int r = 0; r < a1.rows(); ++r) {
            double s = 0.0;
            for (int c = 0; c < input_dim; ++c) s += a1.at(r, c) * x[c];
            u[r] = std::fabs(s) - h1_mean[r];
        }
        int half = a1.rows() / 2;
        std::vector<double> za(static_cast<std::size_t>(ca.rows()), 0.0);
        std::vector<double> zb(static_cast<std::size_t>(cb.rows()), 0.0);
        for (int r = 0; r < ca.rows(); ++r)
            for (int c = 0; c < half; ++c) za[r] += ca.at(r, c) * u[c];
        for (int r = 0; r < cb.rows(); ++r)
            for (int c = 0; c < cb.cols(); ++c) zb[r] += cb.at(r, c) * u[half + c];
        std::vector<double> w(static_cast<std::size_t>(a2.rows()), 0.0);
        for (int r = 0; r < a2.rows(); ++r) {
            double s = 0.0;
            for (int c = 0; c < a2.cols(); ++c) s += a2.at(r, c) * za[c];
            w[r] = s > 0.0 ? s : 0.0;
        }
        std::vector<double> out(static_cast<std::size_t>(b.rows()), 0.0);
        for (int r = 0; r < b.rows(); ++r) {
            double s = shallow_mix * (za[r] + zb[r]);
            for (int c = 0; c < b.cols(); ++c) s += deep_mix * b.at(r, c) * w[c];
            out[r] = s - (bias.empty() ? 0.0 : bias[r]);
        }
        return out;
    }
};

inline int argmax_with_margin(const std::vector<double>& v, double margin) {
    int best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = static_cast<int>(i);
    double second = -1e300;
    for (std::size_t i = 0; i < v.size(); ++i)
        if (static_cast<int>(i) != best && v[i] > second) second = v[i];
    return v[best] - second >= margin ? best : -1;
}

}  // namespace detail

/// Generates one split by rejection into per-class buckets: exactly
/// balanced when `classes` divides n, within one sample otherwise.
template <typename LabelFn>
inline Split fill_split(int n, int input_dim, int classes, Rng& rng, LabelFn&& label_of) {
    Split sp;
    sp.x = Tensor::zeros({n, input_dim});
    sp.onehot = Tensor::zeros({n, classes});
    sp.labels.assign(static_cast<std::size_t>(n), -1);
    std::vector<int> quota(static_cast<std::size_t>(classes), n / classes);
    for (int c = 0; c < n % classes; ++c) quota[c] += 1;
    int filled = 0;
    std::vector<double> sample(static_cast<std::size_t>(input_dim));
    long guard = 0;
    while (filled < n) {
        if (++guard > 1000L * n) throw std::runtime_error("fill_split: rejection stalled");
        for (auto& x : sample) x = rng.normal();
        int label = label_of(sample);
        if (label < 0 || quota[label] == 0) continue;
        quota[label] -= 1;
        for (int c = 0; c < input_dim; ++c) sp.x.at(filled, c) = sample[c];
        sp.onehot.at(filled, label) = 1.0;
        sp.labels[filled] = label;
        ++filled;
    }
    return sp;
}

/// Deterministic task generation. learnable_required labels come from a
/// fixed two-layer relu teacher, so no identity/linear path separates the
/// classes; skip_friendly labels are argmax of a linear map of the raw
/// input; gaussian_clusters are classic separated blobs.
inline TaskData generate(const DatasetSpec& spec) {
    if (spec.n_train <= 0 || spec.n_val <= 0 || spec.n_test <= 0)
        throw std::invalid_argument("generate: split sizes must be > 0");
    TaskData task;
    task.spec = spec;
    task.fingerprint = detail::spec_fingerprint(spec);
    Rng rng(derive_seed(spec.seed, 0xDA7A));

    if (spec.kind == TaskKind::LearnableRequired) {
        detail::Teacher t;
        int h1 = spec.teacher_hidden;
        int h2 = spec.teacher_deep;
        t.a1 = detail::conditioned_map(h1, spec.input_dim, spec.teacher_cond, rng);
        t.ca = detail::conditioned_map(spec.classes, h1 / 2, spec.teacher_cond, rng);
        t.cb = detail::conditioned_map(spec.classes, h1 - h1 / 2, spec.teacher_cond, rng);
        t.a2 = detail::conditioned_map(h2, spec.classes, spec.teacher_cond, rng);
        t.b = detail::conditioned_map(spec.classes, h2, spec.teacher_cond, rng);
        t.shallow_mix = spec.teacher_shallow_mix;
        t.deep_mix = spec.teacher_deep_mix;
        for (int r = 0; r < h1; ++r) {
            double n = 0.0;
            for (int c = 0; c < spec.input_dim; ++c) n += t.a1.at(r, c) * t.a1.at(r, c);
            t.h1_mean.push_back(std::sqrt(n) * 0.7978845608028654);  // sqrt(2/pi)
        }
        // center each class logit and normalize the residual scale so the
        // margin filter is comparable across seeds
        {
            Rng probe(derive_seed(spec.seed, 0x5CA1E));
            std::vector<double> x(static_cast<std::size_t>(spec.input_dim));
            std::vector<double> mean(static_cast<std::size_t>(spec.classes), 0.0);
            std::vector<std::vector<double>> draws;
            for (int i = 0; i < 512; ++i) {
                for (auto& e : x) e = probe.normal();
                draws.push_back(t.logits(x.data(), spec.input_dim));
                for (int c = 0; c < spec.classes; ++c) mean[c] += draws.back()[c];
            }
            for (auto& m : mean) m /= 512.0;
            double scale = 0.0;
            for (const auto& d : draws)
                for (int c = 0; c < spec.classes; ++c) scale += (d[c] - mean[c]) * (d[c] - mean[c]);
            scale = std::sqrt(scale / (512.0 * spec.classes));
            for (auto& e : t.b.v) e /= scale;
            t.bias.assign(mean.begin(), mean.end());
            for (auto& b : t.bias) b /= scale;
        }
        auto label = [&](const std::vector<double>& x) {
            return detail::argmax_with_margin(t.logits(x.data(), spec.input_dim),
                                              spec.label_margin);
        };
        task.train = fill_split(spec.n_train, spec.input_dim, spec.classes, rng, label);
        task.val = fill_split(spec.n_val, spec.input_dim, spec.classes, rng, label);
        task.test = fill_split(spec.n_test, spec.input_dim, spec.classes, rng, label);
    } else if (spec.kind == TaskKind::SkipFriendly) {
        Tensor c = detail::orthonormal_rows(spec.classes, spec.input_dim, rng);
        auto label = [&](const std::vector<double>& x) {
            std::vector<double> l(static_cast<std::size_t>(spec.classes), 0.0);
            for (int r = 0; r < spec.classes; ++r)
                for (int j = 0; j < spec.input_dim; ++j) l[r] += c.at(r, j) * x[j];
            return detail::argmax_with_margin(l, spec.label_margin);
        };
        task.train = fill_split(spec.n_train, spec.input_dim, spec.classes, rng, label);
        task.val = fill_split(spec.n_val, spec.input_dim, spec.classes, rng, label);
        task.test = fill_split(spec.n_test, spec.input_dim, spec.classes, rng, label);
    } else {
        Tensor means = detail::orthonormal_rows(spec.classes, spec.input_dim, rng);
        for (auto& x : means.v) x *= 3.0;
        auto draw = [&](int n, Rng& r) {
            Split sp;
            sp.x = Tensor::zeros({n, spec.input_dim});
            sp.onehot = Tensor::zeros({n, spec.classes});
            sp.labels.assign(static_cast<std::size_t>(n), -1);
            for (int i = 0; i < n; ++i) {
                int cls = i % spec.classes;  // round-robin: balanced within one
                for (int j = 0; j < spec.input_dim; ++j)
                    sp.x.at(i, j) = means.at(cls, j) + r.normal();
                sp.onehot.at(i, cls) = 1.0;
                sp.labels[i] = cls;
            }
            return sp;
        };
        task.train = draw(spec.n_train, rng);
        task.val = draw(spec.n_val, rng);
        task.test = draw(spec.n_test, rng);
    }
    return task;
}

/// Disjoint 50/50 split of the training set for bi-level search (w half,
/// alpha half). Odd sizes drop the last shuffled sample with a notice.
inline std::pair<Split, Split> split_for_bilevel(const Split& train, std::uint64_t seed) {
    int n = train.size();
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) idx[i] = i;
    Rng rng(derive_seed(seed, 0xB11E));
    for (int i = n - 1; i > 0; --i) std::swap(idx[i], idx[rng.below(static_cast<std::uint64_t>(i + 1))]);
    if (n % 2 != 0) {
        std::cerr << "split_for_bilevel: odd size " << n << ", dropping one sample\n";
        idx.pop_back();
        n -= 1;
    }
    auto take = [&](int begin, int count) {
        Split sp;
        sp.x = Tensor::zeros({count, train.x.cols()});
        sp.onehot = Tensor::zeros({count, train.onehot.cols()});
        sp.labels.assign(static_cast<std::size_t>(count), -1);
        for (int i = 0; i < count; ++i) {
            int src = idx[begin + i];
            for (int j = 0; j < train.x.cols(); ++j) sp.x.at(i, j) = train.x.at(src, j);
            for (int j = 0; j < train.onehot.cols(); ++j) sp.onehot.at(i, j) = train.onehot.at(src, j);
            sp.labels[i] = train.labels[src];
        }
        return sp;
    };
    return {take(0, n / 2), take(n / 2, n / 2)};
}

// ---- binary dataset cache ----
// layout: magic "DLDS", u32 version, u32 input_dim, u32 classes,
// 3 x (u32 n, n*input_dim doubles row-major, n u32 labels), fingerprint line.

inline void save_cache(const TaskData& task, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_cache: cannot open " + path);
    auto wu32 = [&f](std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
    f.write("DLDS", 4);
    wu32(1);
    wu32(static_cast<std::uint32_t>(task.spec.input_dim));
    wu32(static_cast<std::uint32_t>(task.spec.classes));
    for (const Split* sp : {&task.train, &task.val, &task.test}) {
        wu32(static_cast<std::uint32_t>(sp->size()));
        f.write(reinterpret_cast<const char*>(sp->x.v.data()),
                static_cast<std::streamsize>(sp->x.v.size() * 8));
        for (int l : sp->labels) wu32(static_cast<std::uint32_t>(l));
    }
    f << task.fingerprint << "\n";
    if (!f) throw std::runtime_error("save_cache: write failed for " + path);
}

inline TaskData load_cache(const std::string& path, const DatasetSpec& spec) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_cache: cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (std::string(magic, 4) != "DLDS") throw std::runtime_error("load_cache: bad magic in " + path);
    auto ru32 = [&f]() {
        std::uint32_t v = 0;
        f.read(reinterpret_cast<char*>(&v), 4);
        return v;
    };
    if (ru32() != 1) throw std::runtime_error("load_cache: unsupported version in " + path);
    TaskData task;
    task.spec = spec;
    int dim = static_cast<int>(ru32());
    int classes = static_cast<int>(ru32());
    for (Split* sp : {&task.train, &task.val, &task.test}) {
        int n = static_cast<int>(ru32());
        sp->x = Tensor::zeros({n, dim});
        f.read(reinterpret_cast<char*>(sp->x.v.data()), static_cast<std::streamsize>(sp->x.v.size() * 8));
        sp->onehot = Tensor::zeros({n, classes});
        sp->labels.assign(static_cast<std::size_t>(n), -1);
        for (int i = 0; i < n; ++i) {
            sp->labels[i] = static_cast<int>(ru32());
            sp->onehot.at(i, sp->labels[i]) = 1.0;
        }
    }
    std::getline(f, task.fingerprint);
    if (!f) throw std::runtime_error("load_cache: truncated file " + path);
    return task;
}

inline std::string task_fingerprint(const DatasetSpec& spec) {
    return detail::spec_fingerprint(spec);
}

}  // namespace dartslab
