#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mnaft/neuronscore.hpp"

// Classifies neurons in the selected layers into language-agnostic (general)
// and language-specific sets by the variance of their per-task awareness
// scores, then assigns each specific neuron to its argmax task.

namespace mnaft {

struct NeuronPartition {
    double epsilon = 0.5;
    double rho = 1.0;

    struct Layer {
        Module module = Module::Vision;
        int block = 0;
        double lambda = 0.0;                      // variance threshold for this layer
        std::vector<int> general;                 // unit indices, ascending
        std::map<int, std::vector<int>> specific; // task id -> unit indices, ascending

        std::vector<int> retained_units() const {
            std::vector<int> all = general;
            for (const auto& [task, units] : specific)
                all.insert(all.end(), units.begin(), units.end());
            std::sort(all.begin(), all.end());
            return all;
        }
    };
    std::vector<Layer> layers; // selected vision blocks ascending, then language

    const Layer* find(Module m, int block) const {
        for (const auto& l : layers)
            if (l.module == m && l.block == block) return &l;
        return nullptr;
    }
};

// Population standard deviation of each unit's score across the task axis.
inline std::vector<double> variance_by_neuron(const ScoreMatrix& x, const ModelConfig& cfg,
                                              Module module, int block) {
    if (x.task_count() < 2)
        throw std::invalid_argument("variance needs at least 2 tasks");
    auto [begin, end] = x.block_range(cfg, module, block);
    std::vector<double> sigma;
    sigma.reserve(end - begin);
    for (size_t i = begin; i < end; ++i) {
        double mean = 0.0;
        for (int t = 0; t < x.task_count(); ++t) mean += x.at(t, i);
        mean /= x.task_count();
        double var = 0.0;
        for (int t = 0; t < x.task_count(); ++t) {
            double d = x.at(t, i) - mean;
            var += d * d;
        }
        sigma.push_back(std::sqrt(var / x.task_count()));
    }
    return sigma;
}

struct GeneralSpecificSplit {
    std::vector<int> general;  // unit ids, ascending
    std::vector<int> specific; // unit ids, ascending
    double lambda = 0.0;
};

// Sorts the retained units by ascending variance; units ranked below
// floor(epsilon * p) are general, the rest specific. Ties break toward the
// lower unit index. lambda records the value at the cut (clamped to the last
// rank when epsilon = 1).
inline GeneralSpecificSplit split_general_specific(
    const std::vector<std::pair<int, double>>& sigma_by_unit, double epsilon) {
    if (epsilon < 0.0 || epsilon > 1.0)
        throw std::invalid_argument("epsilon must lie in [0, 1]");
    GeneralSpecificSplit out;
    if (sigma_by_unit.empty()) return out;

    std::vector<std::pair<int, double>> sorted = sigma_by_unit;
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second < b.second;
        return a.first < b.first;
    });

    int p = static_cast<int>(sorted.size());
    int cut = epsilon >= 1.0 ? p : static_cast<int>(std::floor(epsilon * p));
    out.lambda = sorted[static_cast<size_t>(std::min(cut, p - 1))].second;
    for (int r = 0; r < p; ++r)
        (r < cut ? out.general : out.specific).push_back(sorted[static_cast<size_t>(r)].first);
    std::sort(out.general.begin(), out.general.end());
    std::sort(out.specific.begin(), out.specific.end());
    return out;
}

// argmax task per specific unit; ties go to the lowest task index
inline std::map<int, std::vector<int>> assign_specific_to_tasks(
    const ScoreMatrix& x, const ModelConfig& cfg, Module module, int block,
    const std::vector<int>& specific_units) {
    auto [begin, end] = x.block_range(cfg, module, block);
    (void)end;
    std::map<int, std::vector<int>> result;
    for (int id : x.task_ids) result[id]; // every task present, possibly empty
    for (int unit : specific_units) {
        size_t col = begin + static_cast<size_t>(unit);
        int best_t = 0;
        double best_v = x.at(0, col);
        for (int t = 1; t < x.task_count(); ++t)
            if (x.at(t, col) > best_v) {
                best_v = x.at(t, col);
                best_t = t;
            }
        result[x.task_ids[static_cast<size_t>(best_t)]].push_back(unit);
    }
    for (auto& [task, units] : result) std::sort(units.begin(), units.end());
    return result;
}

inline NeuronPartition build_partition(const ScoreMatrix& x, const SelectedLayers& selected,
                                       double epsilon, double rho, const ModelConfig& cfg) {
    if (epsilon < 0.0 || epsilon > 1.0 || rho < 0.0 || rho > 1.0)
        throw std::invalid_argument("epsilon and rho must lie in [0, 1]");

    NeuronPartition part;
    part.epsilon = epsilon;
    part.rho = rho;

    auto add_layer = [&](Module module, int block) {
        auto [begin, end] = x.block_range(cfg, module, block);
        int p_total = static_cast<int>(end - begin);

        // importance pre-filter: keep the top ceil(rho*p) units by
        // mean-over-tasks score, ties toward the lower unit index
        std::vector<std::pair<double, int>> by_importance;
        for (int u = 0; u < p_total; ++u) {
            double mean = 0.0;
            for (int t = 0; t < x.task_count(); ++t) mean += x.at(t, begin + u);
            by_importance.emplace_back(mean / x.task_count(), u);
        }
        std::sort(by_importance.begin(), by_importance.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        int retained = static_cast<int>(std::ceil(rho * p_total));

        std::vector<double> sigma = variance_by_neuron(x, cfg, module, block);
        std::vector<std::pair<int, double>> sigma_by_unit;
        for (int r = 0; r < retained; ++r) {
            int unit = by_importance[static_cast<size_t>(r)].second;
            sigma_by_unit.emplace_back(unit, sigma[static_cast<size_t>(unit)]);
        }

        GeneralSpecificSplit split = split_general_specific(sigma_by_unit, epsilon);

        NeuronPartition::Layer layer;
        layer.module = module;
        layer.block = block;
        layer.lambda = split.lambda;
        layer.general = split.general;
        layer.specific = assign_specific_to_tasks(x, cfg, module, block, split.specific);
        part.layers.push_back(std::move(layer));
    };

    for (int b : selected.vision) add_layer(Module::Vision, b);
    for (int b : selected.llm) add_layer(Module::Language, b);
    return part;
}

// --- persistence -----------------------------------------------------------------

inline nlohmann::json partition_to_json(const NeuronPartition& part) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : part.layers) {
        nlohmann::json specific = nlohmann::json::object();
        for (const auto& [task, units] : l.specific) specific[std::to_string(task)] = units;
        layers.push_back({{"module", module_name(l.module)},
                          {"block", l.block},
                          {"lambda", l.lambda},
                          {"general", l.general},
                          {"specific", specific}});
    }
    return {{"epsilon", part.epsilon}, {"rho", part.rho}, {"layers", layers}};
}

inline void validate_partition(const NeuronPartition& part) {
    for (const auto& l : part.layers) {
        std::set<int> seen(l.general.begin(), l.general.end());
        if (seen.size() != l.general.size())
            throw std::invalid_argument("duplicate units in general set");
        for (const auto& [task, units] : l.specific)
            for (int u : units)
                if (!seen.insert(u).second)
                    throw std::invalid_argument("unit " + std::to_string(u) +
                                                " appears in more than one set");
    }
}

inline NeuronPartition partition_from_json(const nlohmann::json& j) {
    NeuronPartition part;
    part.epsilon = j.at("epsilon").get<double>();
    part.rho = j.at("rho").get<double>();
    for (const auto& lj : j.at("layers")) {
        NeuronPartition::Layer l;
        l.module = module_from_name(lj.at("module").get<std::string>());
        l.block = lj.at("block").get<int>();
        l.lambda = lj.at("lambda").get<double>();
        l.general = lj.at("general").get<std::vector<int>>();
        for (const auto& [key, units] : lj.at("specific").items())
            l.specific[std::stoi(key)] = units.get<std::vector<int>>();
        part.layers.push_back(std::move(l));
    }
    validate_partition(part);
    return part;
}

inline void write_partition_json(const NeuronPartition& part, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << partition_to_json(part).dump(2) << "\n";
    if (!out) throw IoError("write failed for '" + path + "'");
}

inline NeuronPartition read_partition_json(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    nlohmann::json j;
    in >> j;
    return partition_from_json(j);
}

} // namespace mnaft
