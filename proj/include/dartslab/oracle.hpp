// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "dartslab/data.hpp"
#include "dartslab/optim.hpp"
#include "dartslab/search.hpp"
#include "dartslab/space.hpp"

namespace dartslab {

struct TrainBudget {
    int epochs = 30;
    int batch_size = 32;
    double lr = 0.01;
    double momentum = 0.9;
    int seeds = 3;
};

struct OracleEntry {
    Architecture arch;
    double mean_val_acc = 0.0;
    std::vector<double> seed_accs;
    double final_train_loss = 0.0;
};

/// Exhaustive ground truth for a micro search space: every architecture
/// trained from scratch and ranked by mean validation accuracy.
struct OracleTable {
    std::vector<OracleEntry> entries;
    std::string task_fingerprint;
    TrainBudget budget;
};

/// All ops^edges architectures, lexicographic with edge 0 as the most
/// significant digit: first entry all-op-0, last all-op-(k-1).
inline std::vector<Architecture> enumerate_architectures(const CellSpec& spec) {
    spec.validate();
    long total = 1;
    for (int e = 0; e < spec.num_edges(); ++e) total *= spec.num_ops();
    std::vector<Architecture> out;
    out.reserve(static_cast<std::size_t>(total));
    for (long code = 0; code < total; ++code) {
        Architecture a;
        a.choice.resize(static_cast<std::size_t>(spec.num_edges()));
        long rem = code;
        for (int e = spec.num_edges() - 1; e >= 0; --e) {
            a.choice[e] = spec.ops_per_edge[rem % spec.num_ops()];
            rem /= spec.num_ops();
        }
        out.push_back(std::move(a));
    }
    return out;
}

/// Number of distinct architectures (ops^edges) without materializing them.
inline long architecture_count(int num_edges, int num_ops) {
    long total = 1;
    for (int e = 0; e < num_edges; ++e) total *= num_ops;
    return total;
}

struct FixedTrainResult {
    double val_accuracy = 0.0;
    double final_train_loss = 0.0;
};

inline double fixednet_accuracy(FixedNet& net, const Split& split) {
    Tape tape;
    std::vector<ParamBinding> wb;
    Tape::Var logits = net.forward(tape, split.x, wb);
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

/// SGD-with-momentum training of an instantiated architecture on the train
/// split; accuracy measured on the val split.
inline FixedTrainResult train_fixed(FixedNet& net, const TaskData& task, const TrainBudget& budget,
                                    std::uint64_t seed) {
    Optimizer opt(OptimizerConfig::sgd(budget.lr, budget.momentum, 0.0));
    FixedTrainResult res;
    int steps = task.train.size() / budget.batch_size;
    if (steps == 0) throw std::invalid_argument("train_fixed: train split smaller than a batch");
    for (int epoch = 0; epoch < budget.epochs; ++epoch) {
        auto idx = detail::shuffled_indices(task.train.size(), seed, static_cast<std::uint64_t>(epoch));
        for (int s = 0; s < steps; ++s) {
            auto [x, y] = detail::gather_batch(task.train, idx, s * budget.batch_size,
                                               budget.batch_size);
            Tape tape;
            std::vector<ParamBinding> wb;
            Tape::Var loss = net.loss(tape, x, y, wb);
            tape.backward(loss);
            opt.step(tape, wb, -1.0, epoch * steps + s);
            res.final_train_loss = tape.value(loss)[0];
        }
    }
    res.val_accuracy = fixednet_accuracy(net, task.val);
    return res;
}

/// Trains every architecture in the space (micro spaces only: the entry
/// guard refuses more than `guard` candidates unless overridden). Candidate
/// trainings run on a small thread pool; the table order is the enumeration
/// order regardless of scheduling.
inline OracleTable evaluate_all(const SupernetConfig& cfg, const TaskData& task,
                                const TrainBudget& budget, std::uint64_t base_seed,
                                long guard = 1000, bool override_guard = false,
                                int threads = 2) {
    auto archs = enumerate_architectures(cfg.cell);
    if (static_cast<long>(archs.size()) > guard && !override_guard) {
        throw std::invalid_argument("evaluate_all: " + std::to_string(archs.size()) +
                                    " candidates exceed the guard of " + std::to_string(guard) +
                                    " (pass override to force)");
    }
    OracleTable table;
    table.task_fingerprint = task.fingerprint;
    table.budget = budget;
    table.entries.resize(archs.size());

    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= archs.size()) return;
            OracleEntry entry;
            entry.arch = archs[i];
            double acc = 0.0, loss = 0.0;
            for (int s = 0; s < budget.seeds; ++s) {
                FixedNet net(archs[i], cfg, derive_seed(base_seed, i, static_cast<std::uint64_t>(s)));
                auto r = train_fixed(net, task, budget,
                                     derive_seed(base_seed, i, static_cast<std::uint64_t>(s), 0xF17));
                entry.seed_accs.push_back(r.val_accuracy);
                acc += r.val_accuracy;
                loss += r.final_train_loss;
            }
            entry.mean_val_acc = acc / budget.seeds;
            entry.final_train_loss = loss / budget.seeds;
            table.entries[i] = std::move(entry);
        }
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < std::max(1, threads); ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    return table;
}

struct Rank {
    int rank = 0;         // 1-based, ties share the minimum rank
    double percentile = 0.0;  // 100 * rank / entries
};

inline Rank rank_of(const Architecture& arch, const OracleTable& table) {
    const OracleEntry* mine = nullptr;
    for (const auto& e : table.entries)
        if (e.arch == arch) mine = &e;
    if (!mine) throw std::invalid_argument("rank_of: architecture not present in the table");
    int better = 0;
    for (const auto& e : table.entries)
        if (e.mean_val_acc > mine->mean_val_acc) ++better;
    Rank r;
    r.rank = better + 1;
    r.percentile = 100.0 * r.rank / static_cast<double>(table.entries.size());
    return r;
}

inline const OracleEntry& oracle_best(const OracleTable& table) {
    if (table.entries.empty()) throw std::invalid_argument("oracle_best: empty table");
    const OracleEntry* best = &table.entries[0];
    for (const auto& e : table.entries)
        if (e.mean_val_acc > best->mean_val_acc) best = &e;
    return *best;
}

// ---- persistence (JSON keyed by architecture op names) ----

inline nlohmann::json oracle_json(const OracleTable& t) {
    nlohmann::json j;
    j["task_fingerprint"] = t.task_fingerprint;
    j["budget"] = {{"epochs", t.budget.epochs},
                   {"batch_size", t.budget.batch_size},
                   {"lr", t.budget.lr},
                   {"momentum", t.budget.momentum},
                   {"seeds", t.budget.seeds}};
    j["entries"] = nlohmann::json::array();
    for (const auto& e : t.entries) {
        j["entries"].push_back({{"ops", e.arch.op_names()},
                                {"mean_val_acc", e.mean_val_acc},
                                {"seed_accs", e.seed_accs},
                                {"final_train_loss", e.final_train_loss}});
    }
    return j;
}

inline void save_oracle(const OracleTable& t, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_oracle: cannot open " + path);
    f << oracle_json(t).dump(2) << "\n";
    if (!f) throw std::runtime_error("save_oracle: write failed for " + path);
}

inline OracleTable load_oracle(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_oracle: cannot open " + path);
    nlohmann::json j = nlohmann::json::parse(f);
    OracleTable t;
    t.task_fingerprint = j.at("task_fingerprint").get<std::string>();
    t.budget.epochs = j.at("budget").at("epochs").get<int>();
    t.budget.batch_size = j.at("budget").at("batch_size").get<int>();
    t.budget.lr = j.at("budget").at("lr").get<double>();
    t.budget.momentum = j.at("budget").at("momentum").get<double>();
    t.budget.seeds = j.at("budget").at("seeds").get<int>();
    for (const auto& je : j.at("entries")) {
        OracleEntry e;
        e.arch = Architecture::from_names(je.at("ops").get<std::vector<std::string>>());
        e.mean_val_acc = je.at("mean_val_acc").get<double>();
        e.seed_accs = je.at("seed_accs").get<std::vector<double>>();
        e.final_train_loss = je.at("final_train_loss").get<double>();
        t.entries.push_back(std::move(e));
    }
    return t;
}

/// Loads a cached table when its fingerprint and budget match; otherwise
/// evaluates and caches.
inline OracleTable oracle_for(const SupernetConfig& cfg, const TaskData& task,
                              const TrainBudget& budget, std::uint64_t seed,
                              const std::string& cache_path) {
    if (!cache_path.empty()) {
        std::ifstream probe(cache_path);
        if (probe) {
            OracleTable t = load_oracle(cache_path);
            if (t.task_fingerprint == task.fingerprint && t.budget.epochs == budget.epochs &&
                t.budget.batch_size == budget.batch_size && t.budget.lr == budget.lr &&
                t.budget.seeds == budget.seeds)
                return t;
        }
    }
    OracleTable t = evaluate_all(cfg, task, budget, seed);
    if (!cache_path.empty()) save_oracle(t, cache_path);
    return t;
}

}  // namespace dartslab
