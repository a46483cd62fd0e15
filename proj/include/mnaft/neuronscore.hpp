#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mnaft/model.hpp"
#include "mnaft/synthtask.hpp"

// Instruction-driven neuron awareness scoring, layer relevance aggregation,
// top-k layer selection, and the exact-ablation oracle.

namespace mnaft {

enum class ScoringKind { Translate, Ocr, Both };

inline const char* scoring_kind_name(ScoringKind k) {
    switch (k) {
        case ScoringKind::Translate: return "translate";
        case ScoringKind::Ocr: return "ocr";
        case ScoringKind::Both: return "both";
    }
    return "?";
}

inline ScoringKind scoring_kind_from_name(const std::string& s) {
    if (s == "translate") return ScoringKind::Translate;
    if (s == "ocr") return ScoringKind::Ocr;
    if (s == "both") return ScoringKind::Both;
    throw std::invalid_argument("unknown scoring kind '" + s + "'");
}

struct NeuronScores {
    // awareness: mean over token positions of |grad * activation|, then mean
    // over the scoring samples (always >= 0)
    std::vector<double> awareness;
    // signed first-order prediction of the ablation loss change: per sample
    // the position-summed -grad*activation, then mean over samples
    std::vector<double> ablation_estimate;
};

inline NeuronScores score_neurons(const Model& model, const TaskSpec& task,
                                  const std::vector<Sample>& scoring_set, ProbeKind kind) {
    if (scoring_set.empty()) throw std::invalid_argument("scoring set must be non-empty");
    const ModelConfig& cfg = model.config;
    size_t n_neurons = static_cast<size_t>(cfg.total_neurons());
    std::vector<double> awareness(n_neurons, 0.0);
    std::vector<double> estimate(n_neurons, 0.0);

    std::vector<int> instruction = instruction_tokens(task, kind);
    Bindings bindings = model.bindings();
    ForwardOptions opts;
    opts.tap_ffn = true;

    for (const Sample& sample : scoring_set) {
        ItGraph it = build_it_graph(cfg, sample.image, instruction, probe_target(sample, kind),
                                    true, opts);
        Tape tape = forward(it.graph, bindings);
        backward(tape);

        int total_blocks = cfg.vision_blocks + cfg.language_blocks;
        for (int b = 0; b < total_blocks; ++b) {
            const Tensor& h = tape.tap_activation(it.ffn_taps[b]);
            const Tensor& g = tape.tap_gradient(it.ffn_taps[b]);
            int rows = h.rows();
            for (int u = 0; u < cfg.d_ffn; ++u) {
                double abs_sum = 0.0, signed_sum = 0.0;
                for (int r = 0; r < rows; ++r) {
                    double prod = static_cast<double>(g.at(r, u)) * h.at(r, u);
                    abs_sum += std::fabs(prod);
                    signed_sum += prod;
                }
                size_t idx = static_cast<size_t>(b) * cfg.d_ffn + u;
                awareness[idx] += abs_sum / rows;
                estimate[idx] += -signed_sum;
            }
        }
    }

    double inv = 1.0 / static_cast<double>(scoring_set.size());
    for (size_t i = 0; i < n_neurons; ++i) {
        awareness[i] *= inv;
        estimate[i] *= inv;
    }
    return {std::move(awareness), std::move(estimate)};
}

inline std::vector<double> neuron_awareness(const Model& model, const TaskSpec& task,
                                            const std::vector<Sample>& scoring_set,
                                            ProbeKind kind) {
    return score_neurons(model, task, scoring_set, kind).awareness;
}

// --- score matrix -------------------------------------------------------------

struct ScoreMatrix {
    std::vector<int> task_ids;
    std::vector<NeuronId> neurons; // list_neurons order
    std::vector<std::vector<double>> values; // [task][neuron]
    int t_m = 0;

    int task_count() const { return static_cast<int>(task_ids.size()); }

    double at(int task_index, size_t neuron_index) const {
        return values[static_cast<size_t>(task_index)][neuron_index];
    }

    // column range of one block within the neuron axis
    std::pair<size_t, size_t> block_range(const ModelConfig& cfg, Module module, int block) const {
        int block_offset = module == Module::Vision ? block : cfg.vision_blocks + block;
        size_t begin = static_cast<size_t>(block_offset) * cfg.d_ffn;
        return {begin, begin + static_cast<size_t>(cfg.d_ffn)};
    }
};

inline ScoreMatrix build_score_matrix(const Model& model, const std::vector<TaskSpec>& tasks,
                                      const std::vector<std::vector<Sample>>& scoring_sets,
                                      ScoringKind kind = ScoringKind::Translate) {
    if (tasks.empty()) throw std::invalid_argument("need at least one task");
    if (scoring_sets.size() != tasks.size())
        throw std::invalid_argument("one scoring set per task required");
    for (const auto& set : scoring_sets)
        if (set.size() != scoring_sets[0].size())
            throw std::invalid_argument("scoring set size mismatch across tasks");

    ScoreMatrix m;
    m.neurons = list_neurons(model.config);
    m.t_m = static_cast<int>(scoring_sets[0].size());
    for (size_t t = 0; t < tasks.size(); ++t) {
        m.task_ids.push_back(tasks[t].id);
        std::vector<double> row;
        if (kind == ScoringKind::Both) {
            auto a = neuron_awareness(model, tasks[t], scoring_sets[t], ProbeKind::Translate);
            auto b = neuron_awareness(model, tasks[t], scoring_sets[t], ProbeKind::OcrProbe);
            row.resize(a.size());
            for (size_t i = 0; i < a.size(); ++i) row[i] = 0.5 * (a[i] + b[i]);
        } else {
            ProbeKind probe =
                kind == ScoringKind::Translate ? ProbeKind::Translate : ProbeKind::OcrProbe;
            row = neuron_awareness(model, tasks[t], scoring_sets[t], probe);
        }
        m.values.push_back(std::move(row));
    }
    return m;
}

// --- layer relevance and selection ---------------------------------------------

struct LayerRelevance {
    struct Entry {
        Module module;
        int block;
        double d;     // raw: mean over the block's neurons of mean-over-tasks scores
        double d_hat; // normalized per module, sums to 1
    };
    std::vector<Entry> entries; // vision blocks ascending, then language

    const Entry& find(Module m, int block) const {
        for (const auto& e : entries)
            if (e.module == m && e.block == block) return e;
        throw std::invalid_argument("no relevance entry for block");
    }
};

inline LayerRelevance layer_relevance(const ScoreMatrix& x, const ModelConfig& cfg) {
    LayerRelevance rel;
    auto add_module = [&](Module module, int blocks) {
        size_t first = rel.entries.size();
        double total = 0.0;
        for (int b = 0; b < blocks; ++b) {
            auto [begin, end] = x.block_range(cfg, module, b);
            double acc = 0.0;
            for (size_t i = begin; i < end; ++i) {
                double mean_tasks = 0.0;
                for (int t = 0; t < x.task_count(); ++t) mean_tasks += x.at(t, i);
                acc += mean_tasks / x.task_count();
            }
            double d = acc / static_cast<double>(end - begin);
            rel.entries.push_back({module, b, d, 0.0});
            total += d;
        }
        for (int b = 0; b < blocks; ++b) {
            auto& e = rel.entries[first + b];
            e.d_hat = total > 0.0 ? e.d / total : 1.0 / blocks;
        }
    };
    add_module(Module::Vision, cfg.vision_blocks);
    add_module(Module::Language, cfg.language_blocks);
    return rel;
}

struct SelectedLayers {
    std::vector<int> vision; // ascending block indices
    std::vector<int> llm;
    int k_vision = 0;
    int k_llm = 0;
};

inline SelectedLayers select_layers(const LayerRelevance& rel, int k_vision, int k_llm) {
    if (k_vision < 1 || k_llm < 1) throw std::invalid_argument("layer budgets must be >= 1");
    auto top_k = [&](Module module, int k) {
        std::vector<std::pair<double, int>> scored;
        for (const auto& e : rel.entries)
            if (e.module == module) scored.emplace_back(e.d_hat, e.block);
        std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second; // tie: lower block index wins
        });
        int take = std::min<int>(k, static_cast<int>(scored.size()));
        std::vector<int> blocks;
        for (int i = 0; i < take; ++i) blocks.push_back(scored[i].second);
        std::sort(blocks.begin(), blocks.end());
        return blocks;
    };
    SelectedLayers sel;
    sel.k_vision = k_vision;
    sel.k_llm = k_llm;
    sel.vision = top_k(Module::Vision, k_vision);
    sel.llm = top_k(Module::Language, k_llm);
    return sel;
}

// --- exact ablation oracle ------------------------------------------------------

// Loss change from forcing one neuron's post-activation output to zero at
// every position: mean ablated loss minus mean baseline loss over the set.
inline double exact_ablation(const Model& model, const NeuronId& neuron, const TaskSpec& task,
                             const std::vector<Sample>& scoring_set,
                             ProbeKind kind = ProbeKind::Translate) {
    if (scoring_set.empty()) throw std::invalid_argument("scoring set must be non-empty");
    std::vector<int> instruction = instruction_tokens(task, kind);
    Bindings bindings = model.bindings();

    auto mean_loss = [&](const ForwardOptions& opts) {
        double total = 0.0;
        for (const Sample& sample : scoring_set) {
            ItGraph it = build_it_graph(model.config, sample.image, instruction,
                                        probe_target(sample, kind), true, opts);
            Tape tape = forward(it.graph, bindings);
            total += static_cast<double>(tape.value(it.loss_node).data[0]);
        }
        return total / static_cast<double>(scoring_set.size());
    };

    ForwardOptions baseline;
    ForwardOptions ablated;
    ablated.ablate = neuron;
    return mean_loss(ablated) - mean_loss(baseline);
}

// --- rank correlation ------------------------------------------------------------

inline std::vector<double> average_ranks(const std::vector<double>& v) {
    size_t n = v.size();
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n, 0.0);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
        double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

inline double spearman_correlation(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2)
        throw std::invalid_argument("spearman needs two equal-length vectors");
    auto ra = average_ranks(a);
    auto rb = average_ranks(b);
    double ma = 0.0, mb = 0.0;
    for (size_t i = 0; i < ra.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= ra.size();
    mb /= rb.size();
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (size_t i = 0; i < ra.size(); ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (va == 0.0 || vb == 0.0) return 0.0;
    return cov / std::sqrt(va * vb);
}

// --- persistence -----------------------------------------------------------------

inline std::string format_g17(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void write_score_matrix_csv(const ScoreMatrix& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << "module,block,unit";
    for (int id : m.task_ids) out << ",task_" << id;
    out << "\n";
    for (size_t i = 0; i < m.neurons.size(); ++i) {
        const NeuronId& n = m.neurons[i];
        out << module_name(n.module) << "," << n.block << "," << n.unit;
        for (int t = 0; t < m.task_count(); ++t) out << "," << format_g17(m.at(t, i));
        out << "\n";
    }
    if (!out) throw IoError("write failed for '" + path + "'");
}

inline ScoreMatrix read_score_matrix_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty score matrix file");
    ScoreMatrix m;
    {
        std::istringstream header(line);
        std::string col;
        int idx = 0;
        while (std::getline(header, col, ',')) {
            if (idx >= 3) {
                if (col.rfind("task_", 0) != 0) throw IoError("malformed score matrix header");
                m.task_ids.push_back(std::stoi(col.substr(5)));
            }
            ++idx;
        }
    }
    m.values.assign(m.task_ids.size(), {});
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string field;
        std::getline(row, field, ',');
        Module module = module_from_name(field);
        std::getline(row, field, ',');
        int block = std::stoi(field);
        std::getline(row, field, ',');
        int unit = std::stoi(field);
        m.neurons.push_back({module, block, unit});
        for (size_t t = 0; t < m.task_ids.size(); ++t) {
            if (!std::getline(row, field, ',')) throw IoError("short score matrix row");
            m.values[t].push_back(std::stod(field));
        }
    }
    return m;
}

inline void write_layer_relevance_csv(const LayerRelevance& rel, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << "module,block,D,D_hat\n";
    for (const auto& e : rel.entries)
        out << module_name(e.module) << "," << e.block << "," << format_g17(e.d) << ","
            << format_g17(e.d_hat) << "\n";
    if (!out) throw IoError("write failed for '" + path + "'");
}

} // namespace mnaft
