#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mnaft/maskedft.hpp"

// Translation metrics, forgetting analysis, per-layer activation profiles,
// and deterministic 2-D neuron-group projections with SVG/CSV emitters.

namespace mnaft {

// --- metrics -----------------------------------------------------------------

// Corpus BLEU with modified n-gram precision (n = 1..4), geometric mean and
// brevity penalty. Orders with no candidate n-grams anywhere in the corpus
// are dropped from the mean (a perfect-match corpus of short sentences still
// scores 1); a populated order with zero matches gives 0.
inline double corpus_bleu(const std::vector<std::vector<int>>& candidates,
                          const std::vector<std::vector<int>>& references) {
    if (candidates.size() != references.size())
        throw std::invalid_argument("candidate/reference count mismatch");
    if (candidates.empty()) throw std::invalid_argument("empty corpus");
    for (const auto& r : references)
        if (r.empty()) throw std::invalid_argument("empty reference sentence");

    constexpr int kMaxOrder = 4;
    std::array<int64_t, kMaxOrder> matches{}, totals{};
    int64_t cand_len = 0, ref_len = 0;

    for (size_t i = 0; i < candidates.size(); ++i) {
        const auto& cand = candidates[i];
        const auto& ref = references[i];
        cand_len += static_cast<int64_t>(cand.size());
        ref_len += static_cast<int64_t>(ref.size());
        for (int n = 1; n <= kMaxOrder; ++n) {
            if (static_cast<int>(cand.size()) < n) continue;
            std::map<std::vector<int>, int64_t> ref_counts;
            for (size_t j = 0; j + n <= ref.size(); ++j)
                ++ref_counts[std::vector<int>(ref.begin() + j, ref.begin() + j + n)];
            for (size_t j = 0; j + n <= cand.size(); ++j) {
                ++totals[n - 1];
                auto it = ref_counts.find(std::vector<int>(cand.begin() + j, cand.begin() + j + n));
                if (it != ref_counts.end() && it->second > 0) {
                    ++matches[n - 1];
                    --it->second;
                }
            }
        }
    }

    if (cand_len == 0) return 0.0;
    double log_precision = 0.0;
    int orders = 0;
    for (int n = 0; n < kMaxOrder; ++n) {
        if (totals[n] == 0) continue;
        if (matches[n] == 0) return 0.0;
        log_precision += std::log(static_cast<double>(matches[n]) / totals[n]);
        ++orders;
    }
    if (orders == 0) return 0.0;
    double geo = std::exp(log_precision / orders);
    double bp = cand_len < ref_len
                    ? std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len))
                    : 1.0;
    return bp * geo;
}

inline double token_accuracy(const std::vector<std::vector<int>>& candidates,
                             const std::vector<std::vector<int>>& references) {
    if (candidates.size() != references.size())
        throw std::invalid_argument("candidate/reference count mismatch");
    int64_t correct = 0, total = 0;
    for (size_t i = 0; i < candidates.size(); ++i) {
        size_t overlap = std::min(candidates[i].size(), references[i].size());
        for (size_t j = 0; j < overlap; ++j)
            if (candidates[i][j] == references[i][j]) ++correct;
        total += static_cast<int64_t>(references[i].size());
    }
    return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

inline double exact_match(const std::vector<std::vector<int>>& candidates,
                          const std::vector<std::vector<int>>& references) {
    if (candidates.size() != references.size())
        throw std::invalid_argument("candidate/reference count mismatch");
    if (candidates.empty()) return 0.0;
    int64_t hits = 0;
    for (size_t i = 0; i < candidates.size(); ++i)
        if (candidates[i] == references[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(candidates.size());
}

// --- evaluation ----------------------------------------------------------------

struct EvalResult {
    int task_id = -1;
    std::string model_tag;
    double bleu = 0.0;
    double token_acc = 0.0;
    double exact = 0.0;
    int sample_count = 0;
};

constexpr int kGenerateSlack = 4;

inline EvalResult evaluate_model(const Model& model, const TaskSpec& task,
                                 const std::vector<Sample>& eval_set, const std::string& tag) {
    if (eval_set.empty()) throw std::invalid_argument("eval set must be non-empty");
    std::vector<int> instruction = instruction_tokens(task, ProbeKind::Translate);
    std::vector<std::vector<int>> candidates, references;
    for (const Sample& s : eval_set) {
        candidates.push_back(generate(model, s.image, instruction, kMaxSentenceLen + kGenerateSlack));
        references.push_back(s.target_tokens);
    }
    EvalResult r;
    r.task_id = task.id;
    r.model_tag = tag;
    r.bleu = corpus_bleu(candidates, references);
    r.token_acc = token_accuracy(candidates, references);
    r.exact = exact_match(candidates, references);
    r.sample_count = static_cast<int>(eval_set.size());
    return r;
}

struct ForgettingReport {
    int target_task = -1;
    struct Entry {
        int task_id = -1;
        double before = 0.0;
        double after = 0.0;
        double delta = 0.0; // after - before, exactly
    };
    std::vector<Entry> entries; // one per task, target included

    double mean_non_target_delta() const {
        double sum = 0.0;
        int n = 0;
        for (const auto& e : entries)
            if (e.task_id != target_task) {
                sum += e.delta;
                ++n;
            }
        return n == 0 ? 0.0 : sum / n;
    }
};

inline ForgettingReport forgetting_report(const Model& before, const Model& after,
                                          const std::vector<TaskSpec>& tasks, int target_task,
                                          const std::vector<std::vector<Sample>>& eval_sets) {
    if (tasks.size() != eval_sets.size())
        throw std::invalid_argument("one eval set per task required");
    ForgettingReport rep;
    rep.target_task = target_task;
    for (size_t t = 0; t < tasks.size(); ++t) {
        EvalResult b = evaluate_model(before, tasks[t], eval_sets[t], "before");
        EvalResult a = evaluate_model(after, tasks[t], eval_sets[t], "after");
        rep.entries.push_back({tasks[t].id, b.bleu, a.bleu, a.bleu - b.bleu});
    }
    return rep;
}

// --- activation profiles ---------------------------------------------------------

struct ProfileTable {
    struct Row {
        Module module;
        int block;
        int task_id;
        double value;
    };
    std::vector<Row> means;  // mean |post-GELU| over units, positions, samples
    std::vector<Row> deltas; // mean(block) - mean(block-1), per module and task
};

inline ProfileTable activation_profiles(const Model& model, const std::vector<TaskSpec>& tasks,
                                        const std::vector<std::vector<Sample>>& sets) {
    if (tasks.size() != sets.size())
        throw std::invalid_argument("one sample set per task required");
    const ModelConfig& cfg = model.config;
    Bindings bindings = model.bindings();
    ForwardOptions opts;
    opts.tap_ffn = true;
    int total_blocks = cfg.vision_blocks + cfg.language_blocks;

    ProfileTable table;
    for (size_t t = 0; t < tasks.size(); ++t) {
        if (sets[t].empty()) throw std::invalid_argument("sample set must be non-empty");
        std::vector<int> instruction = instruction_tokens(tasks[t], ProbeKind::Translate);
        std::vector<double> sums(static_cast<size_t>(total_blocks), 0.0);
        std::vector<int64_t> counts(static_cast<size_t>(total_blocks), 0);
        for (const Sample& s : sets[t]) {
            ItGraph it =
                build_it_graph(cfg, s.image, instruction, s.target_tokens, true, opts);
            Tape tape = forward(it.graph, bindings);
            for (int b = 0; b < total_blocks; ++b) {
                const Tensor& h = tape.tap_activation(it.ffn_taps[b]);
                for (float v : h.data) sums[b] += std::fabs(static_cast<double>(v));
                counts[b] += h.size();
            }
        }
        for (int b = 0; b < total_blocks; ++b) {
            Module module = b < cfg.vision_blocks ? Module::Vision : Module::Language;
            int block = b < cfg.vision_blocks ? b : b - cfg.vision_blocks;
            table.means.push_back({module, block, tasks[t].id, sums[b] / counts[b]});
        }
    }

    for (const auto& row : table.means) {
        if (row.block == 0) continue;
        for (const auto& prev : table.means)
            if (prev.module == row.module && prev.block == row.block - 1 &&
                prev.task_id == row.task_id)
                table.deltas.push_back({row.module, row.block, row.task_id,
                                        row.value - prev.value});
    }
    return table;
}

// --- 2-D projection ----------------------------------------------------------------

namespace detail {

// Cyclic Jacobi eigendecomposition of a symmetric matrix. Deterministic
// sweep order; eigenvalues returned descending with sign-fixed vectors.
inline void jacobi_eigen(std::vector<std::vector<double>> a, std::vector<double>& eigvals,
                         std::vector<std::vector<double>>& eigvecs) {
    size_t n = a.size();
    eigvecs.assign(n, std::vector<double>(n, 0.0));
    for (size_t i = 0; i < n; ++i) eigvecs[i][i] = 1.0;

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (size_t p = 0; p < n; ++p)
            for (size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
        if (off < 1e-24) break;
        for (size_t p = 0; p < n; ++p) {
            for (size_t q = p + 1; q < n; ++q) {
                if (std::fabs(a[p][q]) < 1e-300) continue;
                double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (size_t k = 0; k < n; ++k) {
                    double akp = a[k][p], akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for (size_t k = 0; k < n; ++k) {
                    double apk = a[p][k], aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for (size_t k = 0; k < n; ++k) {
                    double vkp = eigvecs[k][p], vkq = eigvecs[k][q];
                    eigvecs[k][p] = c * vkp - s * vkq;
                    eigvecs[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::vector<double> diag(n);
    for (size_t i = 0; i < n; ++i) diag[i] = a[i][i];
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t x, size_t y) { return diag[x] > diag[y]; });

    eigvals.resize(n);
    std::vector<std::vector<double>> sorted(n, std::vector<double>(n, 0.0));
    for (size_t j = 0; j < n; ++j) {
        eigvals[j] = diag[order[j]];
        double sign = 0.0;
        for (size_t i = 0; i < n; ++i) {
            double v = eigvecs[i][order[j]];
            if (sign == 0.0 && std::fabs(v) > 1e-12) sign = v > 0 ? 1.0 : -1.0;
        }
        if (sign == 0.0) sign = 1.0;
        for (size_t i = 0; i < n; ++i) sorted[i][j] = sign * eigvecs[i][order[j]];
    }
    eigvecs = std::move(sorted);
}

} // namespace detail

struct Projection2D {
    struct Point {
        double x = 0.0;
        double y = 0.0;
        int task_id = -1;
    };
    std::vector<Point> points;
    std::vector<double> eigenvalues;            // all, descending
    std::array<std::vector<double>, 2> directions; // top-2, sign-fixed
};

// Centers the feature rows and projects onto the top-2 principal directions
// (population covariance, deterministic Jacobi eigendecomposition).
inline Projection2D pca_2d(const std::vector<std::vector<double>>& features,
                           const std::vector<int>& task_labels) {
    if (features.empty()) throw std::invalid_argument("no feature rows");
    if (features.size() != task_labels.size())
        throw std::invalid_argument("one label per feature row required");
    size_t n = features.size(), d = features[0].size();
    if (d == 0) throw std::invalid_argument("empty feature vectors");

    std::vector<double> mean(d, 0.0);
    for (const auto& row : features)
        for (size_t j = 0; j < d; ++j) mean[j] += row[j];
    for (auto& v : mean) v /= static_cast<double>(n);

    std::vector<std::vector<double>> centered(n, std::vector<double>(d));
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < d; ++j) centered[i][j] = features[i][j] - mean[j];

    std::vector<std::vector<double>> cov(d, std::vector<double>(d, 0.0));
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < d; ++j)
            for (size_t k = j; k < d; ++k) cov[j][k] += centered[i][j] * centered[i][k];
    for (size_t j = 0; j < d; ++j)
        for (size_t k = j; k < d; ++k) {
            cov[j][k] /= static_cast<double>(n);
            cov[k][j] = cov[j][k];
        }

    std::vector<double> eigvals;
    std::vector<std::vector<double>> eigvecs;
    detail::jacobi_eigen(cov, eigvals, eigvecs);

    Projection2D out;
    out.eigenvalues = eigvals;
    for (int axis = 0; axis < 2; ++axis) {
        out.directions[axis].resize(d, 0.0);
        if (static_cast<size_t>(axis) < d)
            for (size_t i = 0; i < d; ++i) out.directions[axis][i] = eigvecs[i][axis];
    }
    for (size_t i = 0; i < n; ++i) {
        Projection2D::Point p;
        for (size_t j = 0; j < d; ++j) {
            p.x += centered[i][j] * out.directions[0][j];
            p.y += centered[i][j] * out.directions[1][j];
        }
        p.task_id = task_labels[i];
        out.points.push_back(p);
    }
    return out;
}

enum class NeuronGroup { General, Specific };

inline const char* neuron_group_name(NeuronGroup g) {
    return g == NeuronGroup::General ? "general" : "specific";
}

// Per-sample feature = the group's unit activations in the module's last
// selected block, mean-pooled over positions; one point per sample.
inline Projection2D neuron_projection(const Model& model, const NeuronPartition& partition,
                                      const std::vector<TaskSpec>& tasks,
                                      const std::vector<std::vector<Sample>>& sets,
                                      NeuronGroup group, Module module) {
    if (tasks.size() != sets.size())
        throw std::invalid_argument("one sample set per task required");
    const NeuronPartition::Layer* layer = nullptr;
    for (const auto& l : partition.layers)
        if (l.module == module && (!layer || l.block > layer->block)) layer = &l;
    if (!layer) throw std::invalid_argument("partition has no layer in this module");

    std::vector<int> units;
    if (group == NeuronGroup::General) {
        units = layer->general;
    } else {
        for (const auto& [task, task_units] : layer->specific)
            units.insert(units.end(), task_units.begin(), task_units.end());
        std::sort(units.begin(), units.end());
    }
    if (units.empty()) throw std::invalid_argument("empty neuron group");

    const ModelConfig& cfg = model.config;
    int tap_index = (module == Module::Vision ? 0 : cfg.vision_blocks) + layer->block;
    Bindings bindings = model.bindings();
    ForwardOptions opts;
    opts.tap_ffn = true;

    std::vector<std::vector<double>> features;
    std::vector<int> labels;
    for (size_t t = 0; t < tasks.size(); ++t) {
        std::vector<int> instruction = instruction_tokens(tasks[t], ProbeKind::Translate);
        for (const Sample& s : sets[t]) {
            ItGraph it = build_it_graph(cfg, s.image, instruction, s.target_tokens, true, opts);
            Tape tape = forward(it.graph, bindings);
            const Tensor& h = tape.tap_activation(it.ffn_taps[tap_index]);
            std::vector<double> feature;
            feature.reserve(units.size());
            for (int u : units) {
                double acc = 0.0;
                for (int r = 0; r < h.rows(); ++r) acc += static_cast<double>(h.at(r, u));
                feature.push_back(acc / h.rows());
            }
            features.push_back(std::move(feature));
            labels.push_back(tasks[t].id);
        }
    }
    return pca_2d(features, labels);
}

// --- emitters -----------------------------------------------------------------------

inline void emit_csv(const ProfileTable& table, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << "module,block,task,kind,value\n";
    for (const auto& r : table.means)
        out << module_name(r.module) << "," << r.block << "," << r.task_id << ",mean,"
            << format_g17(r.value) << "\n";
    for (const auto& r : table.deltas)
        out << module_name(r.module) << "," << r.block << "," << r.task_id << ",delta,"
            << format_g17(r.value) << "\n";
    if (!out) throw IoError("write failed for '" + path + "'");
}

inline void emit_csv(const Projection2D& projection, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << "x,y,task\n";
    for (const auto& p : projection.points)
        out << format_g17(p.x) << "," << format_g17(p.y) << "," << p.task_id << "\n";
    if (!out) throw IoError("write failed for '" + path + "'");
}

namespace detail {

constexpr int kSvgWidth = 800;
constexpr int kSvgHeight = 500;
constexpr int kSvgMargin = 60;

inline const char* task_color(int index) {
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                    "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};
    return palette[index % 8];
}

inline std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

inline void svg_open(std::ostringstream& os, const std::string& title) {
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kSvgWidth << "\" height=\""
       << kSvgHeight << "\" viewBox=\"0 0 " << kSvgWidth << " " << kSvgHeight << "\">\n";
    os << "<rect width=\"" << kSvgWidth << "\" height=\"" << kSvgHeight << "\" fill=\"white\"/>\n";
    os << "<text x=\"" << kSvgWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" "
       << "font-family=\"sans-serif\" font-size=\"16\">" << title << "</text>\n";
    // axes
    os << "<line x1=\"" << kSvgMargin << "\" y1=\"" << kSvgHeight - kSvgMargin << "\" x2=\""
       << kSvgWidth - kSvgMargin << "\" y2=\"" << kSvgHeight - kSvgMargin
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << kSvgMargin << "\" y1=\"" << kSvgMargin << "\" x2=\"" << kSvgMargin
       << "\" y2=\"" << kSvgHeight - kSvgMargin << "\" stroke=\"black\"/>\n";
}

} // namespace detail

// Grouped bar chart of one module's profile rows (means or deltas).
inline std::string render_profile_svg(const ProfileTable& table, Module module, bool deltas,
                                      const std::string& title) {
    using namespace detail;
    const auto& rows = deltas ? table.deltas : table.means;

    std::vector<int> blocks, task_ids;
    double vmax = 0.0;
    for (const auto& r : rows) {
        if (r.module != module) continue;
        if (std::find(blocks.begin(), blocks.end(), r.block) == blocks.end())
            blocks.push_back(r.block);
        if (std::find(task_ids.begin(), task_ids.end(), r.task_id) == task_ids.end())
            task_ids.push_back(r.task_id);
        vmax = std::max(vmax, std::fabs(r.value));
    }
    std::sort(blocks.begin(), blocks.end());
    std::sort(task_ids.begin(), task_ids.end());
    if (vmax == 0.0) vmax = 1.0;

    std::ostringstream os;
    svg_open(os, title);
    double plot_w = kSvgWidth - 2 * kSvgMargin;
    double plot_h = kSvgHeight - 2 * kSvgMargin;
    double baseline = kSvgHeight - kSvgMargin;

    if (!blocks.empty()) {
        double group_w = plot_w / blocks.size();
        double bar_w = group_w * 0.8 / std::max<size_t>(task_ids.size(), 1);
        for (size_t bi = 0; bi < blocks.size(); ++bi) {
            for (size_t ti = 0; ti < task_ids.size(); ++ti) {
                double value = 0.0;
                for (const auto& r : rows)
                    if (r.module == module && r.block == blocks[bi] && r.task_id == task_ids[ti])
                        value = r.value;
                double h = std::fabs(value) / vmax * (plot_h * 0.9);
                double x = kSvgMargin + bi * group_w + group_w * 0.1 + ti * bar_w;
                double y = value >= 0 ? baseline - h : baseline;
                os << "<rect x=\"" << fmt2(x) << "\" y=\"" << fmt2(y) << "\" width=\""
                   << fmt2(bar_w * 0.9) << "\" height=\"" << fmt2(h) << "\" fill=\""
                   << task_color(static_cast<int>(ti)) << "\"/>\n";
            }
            os << "<text x=\"" << fmt2(kSvgMargin + bi * group_w + group_w / 2) << "\" y=\""
               << kSvgHeight - kSvgMargin + 20 << "\" text-anchor=\"middle\" "
               << "font-family=\"sans-serif\" font-size=\"12\">block " << blocks[bi]
               << "</text>\n";
        }
        for (size_t ti = 0; ti < task_ids.size(); ++ti) {
            os << "<rect x=\"" << kSvgWidth - kSvgMargin - 120 << "\" y=\""
               << kSvgMargin + 18 * static_cast<int>(ti) << "\" width=\"12\" height=\"12\" fill=\""
               << task_color(static_cast<int>(ti)) << "\"/>\n";
            os << "<text x=\"" << kSvgWidth - kSvgMargin - 102 << "\" y=\""
               << kSvgMargin + 18 * static_cast<int>(ti) + 10
               << "\" font-family=\"sans-serif\" font-size=\"12\">task " << task_ids[ti]
               << "</text>\n";
        }
    }
    os << "</svg>\n";
    return os.str();
}

// Scatter plot of projected points, one color per task.
inline std::string render_scatter_svg(const Projection2D& projection, const std::string& title) {
    using namespace detail;
    std::ostringstream os;
    svg_open(os, title);

    double xmin = 0, xmax = 0, ymin = 0, ymax = 0;
    if (!projection.points.empty()) {
        xmin = xmax = projection.points[0].x;
        ymin = ymax = projection.points[0].y;
        for (const auto& p : projection.points) {
            xmin = std::min(xmin, p.x);
            xmax = std::max(xmax, p.x);
            ymin = std::min(ymin, p.y);
            ymax = std::max(ymax, p.y);
        }
    }
    double xspan = xmax - xmin > 1e-12 ? xmax - xmin : 1.0;
    double yspan = ymax - ymin > 1e-12 ? ymax - ymin : 1.0;

    std::vector<int> task_ids;
    for (const auto& p : projection.points)
        if (std::find(task_ids.begin(), task_ids.end(), p.task_id) == task_ids.end())
            task_ids.push_back(p.task_id);
    std::sort(task_ids.begin(), task_ids.end());

    for (const auto& p : projection.points) {
        double px = kSvgMargin + (p.x - xmin) / xspan * (kSvgWidth - 2 * kSvgMargin);
        double py = kSvgHeight - kSvgMargin - (p.y - ymin) / yspan * (kSvgHeight - 2 * kSvgMargin);
        int ti = static_cast<int>(std::find(task_ids.begin(), task_ids.end(), p.task_id) -
                                  task_ids.begin());
        os << "<circle cx=\"" << fmt2(px) << "\" cy=\"" << fmt2(py) << "\" r=\"3\" fill=\""
           << task_color(ti) << "\" fill-opacity=\"0.7\"/>\n";
    }
    for (size_t ti = 0; ti < task_ids.size(); ++ti) {
        os << "<rect x=\"" << kSvgWidth - kSvgMargin - 120 << "\" y=\""
           << kSvgMargin + 18 * static_cast<int>(ti) << "\" width=\"12\" height=\"12\" fill=\""
           << task_color(static_cast<int>(ti)) << "\"/>\n";
        os << "<text x=\"" << kSvgWidth - kSvgMargin - 102 << "\" y=\""
           << kSvgMargin + 18 * static_cast<int>(ti) + 10
           << "\" font-family=\"sans-serif\" font-size=\"12\">task " << task_ids[ti]
           << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << content;
    if (!out) throw IoError("write failed for '" + path + "'");
}

inline void emit_svg(const ProfileTable& table, Module module, bool deltas,
                     const std::string& title, const std::string& path) {
    write_text_file(path, render_profile_svg(table, module, deltas, title));
}

inline void emit_svg(const Projection2D& projection, const std::string& title,
                     const std::string& path) {
    write_text_file(path, render_scatter_svg(projection, title));
}

} // namespace mnaft
