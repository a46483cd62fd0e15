#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mnaft/partition.hpp"

// Gradient masks built from a neuron partition, masked SGD fine-tuning, and
// the layer/neuron ablation mask variants.

namespace mnaft {

enum class FinetuneMode {
    Mnaft,
    Full,
    AllLayers,
    LanguageLayers,
    VisionLayers,
    GeneralOnly,
    SpecificOnly,
};

inline const char* finetune_mode_name(FinetuneMode m) {
    switch (m) {
        case FinetuneMode::Mnaft: return "mnaft";
        case FinetuneMode::Full: return "full";
        case FinetuneMode::AllLayers: return "all-layers";
        case FinetuneMode::LanguageLayers: return "language-layers";
        case FinetuneMode::VisionLayers: return "vision-layers";
        case FinetuneMode::GeneralOnly: return "general-only";
        case FinetuneMode::SpecificOnly: return "specific-only";
    }
    return "?";
}

inline FinetuneMode finetune_mode_from_name(const std::string& s) {
    for (FinetuneMode m : {FinetuneMode::Mnaft, FinetuneMode::Full, FinetuneMode::AllLayers,
                           FinetuneMode::LanguageLayers, FinetuneMode::VisionLayers,
                           FinetuneMode::GeneralOnly, FinetuneMode::SpecificOnly})
        if (s == finetune_mode_name(m)) return m;
    throw std::invalid_argument("unknown finetune mode '" + s + "'");
}

struct GradientMaskSet {
    std::map<std::string, Tensor> masks; // 0/1, one per model parameter
    std::string mode;
    int target_task = -1;
    uint64_t partition_hash = 0;
};

inline GradientMaskSet zero_masks(const Model& model) {
    GradientMaskSet set;
    for (const auto& [name, t] : model.params) set.masks.emplace(name, Tensor::zeros(t.shape));
    return set;
}

inline uint64_t partition_content_hash(const NeuronPartition& part) {
    return fnv1a64(partition_to_json(part).dump());
}

// Unmasks the parameters owned by one FFN unit: its incoming weight row and
// bias element, and (unless incoming_only) its outgoing weight column.
inline void unmask_ffn_unit(GradientMaskSet& set, const ModelConfig& cfg, Module module, int block,
                            int unit, bool include_outgoing = true) {
    if (unit < 0 || unit >= cfg.d_ffn)
        throw std::invalid_argument("unit index " + std::to_string(unit) + " out of range");
    if (block < 0 || block >= blocks_in_module(cfg, module))
        throw std::invalid_argument("block index " + std::to_string(block) + " out of range");
    std::string prefix = ffn_block_prefix(module, block);
    Tensor& w1 = set.masks.at(prefix + ".ffn.w1.weight");
    for (int c = 0; c < cfg.d_model; ++c) w1.at(unit, c) = 1.0f;
    set.masks.at(prefix + ".ffn.w1.bias").data[static_cast<size_t>(unit)] = 1.0f;
    if (include_outgoing) {
        Tensor& w2 = set.masks.at(prefix + ".ffn.w2.weight");
        for (int r = 0; r < cfg.d_model; ++r) w2.at(r, unit) = 1.0f;
    }
}

inline GradientMaskSet masks_from_partition(const NeuronPartition& part, int target_task,
                                            const Model& model, bool include_outgoing = true) {
    GradientMaskSet set = zero_masks(model);
    set.mode = finetune_mode_name(FinetuneMode::Mnaft);
    set.target_task = target_task;
    set.partition_hash = partition_content_hash(part);
    for (const auto& layer : part.layers) {
        for (int u : layer.general)
            unmask_ffn_unit(set, model.config, layer.module, layer.block, u, include_outgoing);
        auto it = layer.specific.find(target_task);
        if (it != layer.specific.end())
            for (int u : it->second)
                unmask_ffn_unit(set, model.config, layer.module, layer.block, u, include_outgoing);
    }
    return set;
}

inline GradientMaskSet ablation_mode_masks(FinetuneMode mode, const NeuronPartition& part,
                                           const SelectedLayers& selected, int target_task,
                                           const Model& model) {
    const ModelConfig& cfg = model.config;
    GradientMaskSet set = zero_masks(model);
    set.mode = finetune_mode_name(mode);
    set.target_task = target_task;
    set.partition_hash = partition_content_hash(part);

    auto unmask_all_units = [&](Module module) {
        for (int b = 0; b < blocks_in_module(cfg, module); ++b)
            for (int u = 0; u < cfg.d_ffn; ++u) unmask_ffn_unit(set, cfg, module, b, u);
    };

    switch (mode) {
        case FinetuneMode::Mnaft:
            return masks_from_partition(part, target_task, model);
        case FinetuneMode::Full:
            for (auto& [name, mask] : set.masks)
                std::fill(mask.data.begin(), mask.data.end(), 1.0f);
            break;
        case FinetuneMode::AllLayers:
            unmask_all_units(Module::Vision);
            unmask_all_units(Module::Language);
            break;
        case FinetuneMode::LanguageLayers:
            unmask_all_units(Module::Language);
            break;
        case FinetuneMode::VisionLayers:
            unmask_all_units(Module::Vision);
            break;
        case FinetuneMode::GeneralOnly:
            for (const auto& layer : part.layers)
                for (int u : layer.general)
                    unmask_ffn_unit(set, cfg, layer.module, layer.block, u);
            break;
        case FinetuneMode::SpecificOnly:
            for (const auto& layer : part.layers) {
                auto it = layer.specific.find(target_task);
                if (it == layer.specific.end()) continue;
                for (int u : it->second) unmask_ffn_unit(set, cfg, layer.module, layer.block, u);
            }
            break;
    }
    (void)selected;
    return set;
}

inline int64_t count_mask_ones(const GradientMaskSet& set) {
    int64_t n = 0;
    for (const auto& [name, mask] : set.masks)
        for (float v : mask.data) n += v != 0.0f ? 1 : 0;
    return n;
}

// --- updates -----------------------------------------------------------------

inline void sgd_update(Model& model, const std::map<std::string, Tensor>& grads, float lr) {
    for (auto& [name, param] : model.params) {
        auto it = grads.find(name);
        if (it == grads.end()) continue;
        const Tensor& g = it->second;
        if (g.shape != param.shape) throw std::invalid_argument("gradient shape mismatch for " + name);
        for (size_t i = 0; i < param.data.size(); ++i) param.data[i] -= lr * g.data[i];
    }
}

// Masked SGD step. Elements with mask 0 are skipped outright, so frozen
// parameters keep their exact bit patterns.
inline void masked_update(Model& model, const std::map<std::string, Tensor>& grads,
                          const GradientMaskSet& masks, float lr) {
    for (auto& [name, param] : model.params) {
        auto git = grads.find(name);
        if (git == grads.end()) continue;
        const Tensor& g = git->second;
        const Tensor& m = masks.masks.at(name);
        if (g.shape != param.shape || m.shape != param.shape)
            throw std::invalid_argument("gradient/mask shape mismatch for " + name);
        for (size_t i = 0; i < param.data.size(); ++i)
            if (m.data[i] != 0.0f) param.data[i] -= lr * (g.data[i] * m.data[i]);
    }
}

// --- training loop -------------------------------------------------------------

struct FinetuneConfig {
    FinetuneMode mode = FinetuneMode::Mnaft;
    int target_task = 0;
    float lr = 0.5f;
    int steps = 1000;
    int batch = 8;
    uint64_t seed = 1;
    bool use_adam = false; // masked-Adam variant (moments masked as well)

    void validate() const {
        if (!(lr > 0.0f)) throw std::invalid_argument("learning rate must be > 0");
        if (steps < 1) throw std::invalid_argument("steps must be >= 1");
        if (batch < 1) throw std::invalid_argument("batch size must be >= 1");
    }
};

struct TrainLog {
    struct Step {
        int step = 0;
        double loss = 0.0;
        double seconds = 0.0; // wall-clock duration of this step
    };
    std::vector<Step> steps;
};

inline void write_trainlog_csv(const TrainLog& log, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << "step,loss,seconds\n";
    for (const auto& s : log.steps)
        out << s.step << "," << format_g17(s.loss) << "," << format_g17(s.seconds) << "\n";
    if (!out) throw IoError("write failed for '" + path + "'");
}

struct TrainItem {
    const Sample* sample = nullptr;
    const std::vector<int>* instruction = nullptr;
};

// Mean loss and mean gradients over one batch; 64-bit accumulation in fixed
// item order.
inline double batch_gradients(const Model& model, const std::vector<TrainItem>& batch,
                              std::map<std::string, Tensor>& grads_out) {
    std::map<std::string, std::vector<double>> accum;
    for (const auto& [name, t] : model.params) accum[name].assign(t.data.size(), 0.0);

    Bindings bindings = model.bindings();
    double loss_sum = 0.0;
    for (const TrainItem& item : batch) {
        ItGraph it = build_it_graph(model.config, item.sample->image, *item.instruction,
                                    item.sample->target_tokens, true);
        Tape tape = forward(it.graph, bindings);
        loss_sum += static_cast<double>(tape.value(it.loss_node).data[0]);
        auto grads = backward(tape);
        for (auto& [name, g] : grads) {
            auto& acc = accum[name];
            for (size_t i = 0; i < g.data.size(); ++i) acc[i] += static_cast<double>(g.data[i]);
        }
    }

    double inv = 1.0 / static_cast<double>(batch.size());
    grads_out.clear();
    for (auto& [name, acc] : accum) {
        Tensor g = Tensor::zeros(model.params.at(name).shape);
        for (size_t i = 0; i < acc.size(); ++i) g.data[i] = static_cast<float>(acc[i] * inv);
        grads_out.emplace(name, std::move(g));
    }
    return loss_sum * inv;
}

namespace detail {

// Deterministic epoch-shuffled index stream over a fixed-size dataset.
class IndexStream {
  public:
    IndexStream(size_t n, uint64_t seed) : n_(n), seed_(seed) { refill(); }

    size_t next() {
        if (pos_ == order_.size()) refill();
        return order_[pos_++];
    }

  private:
    void refill() {
        order_.resize(n_);
        for (size_t i = 0; i < n_; ++i) order_[i] = i;
        Rng rng(mix_seed(seed_, epoch_++));
        rng.shuffle(order_);
        pos_ = 0;
    }

    size_t n_;
    uint64_t seed_;
    uint64_t epoch_ = 0;
    std::vector<size_t> order_;
    size_t pos_ = 0;
};

struct AdamState {
    std::map<std::string, std::vector<double>> m, v;
    int64_t t = 0;
};

inline void masked_adam_update(Model& model, const std::map<std::string, Tensor>& grads,
                               const GradientMaskSet& masks, float lr, AdamState& state) {
    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    ++state.t;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
    for (auto& [name, param] : model.params) {
        const Tensor& g = grads.at(name);
        const Tensor& mask = masks.masks.at(name);
        auto& m = state.m[name];
        auto& v = state.v[name];
        if (m.empty()) {
            m.assign(param.data.size(), 0.0);
            v.assign(param.data.size(), 0.0);
        }
        for (size_t i = 0; i < param.data.size(); ++i) {
            if (mask.data[i] == 0.0f) continue;
            double gi = static_cast<double>(g.data[i]);
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            param.data[i] -= static_cast<float>(lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps));
        }
    }
}

} // namespace detail

// Masked fine-tuning over one task's training split.
inline TrainLog finetune(Model& model, const std::vector<Sample>& dataset, const TaskSpec& task,
                         const FinetuneConfig& config, const GradientMaskSet& masks) {
    config.validate();
    if (dataset.empty()) throw std::invalid_argument("dataset must be non-empty");

    std::vector<int> instruction = instruction_tokens(task, ProbeKind::Translate);
    detail::IndexStream stream(dataset.size(), config.seed);
    detail::AdamState adam;
    TrainLog log;

    for (int step = 0; step < config.steps; ++step) {
        auto t0 = std::chrono::steady_clock::now();
        std::vector<TrainItem> batch;
        for (int i = 0; i < config.batch; ++i)
            batch.push_back({&dataset[stream.next()], &instruction});
        std::map<std::string, Tensor> grads;
        double loss = batch_gradients(model, batch, grads);
        if (config.use_adam)
            detail::masked_adam_update(model, grads, masks, config.lr, adam);
        else
            masked_update(model, grads, masks, config.lr);
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log.steps.push_back({step, loss, secs});
    }
    return log;
}

// Unmasked SGD over a mixed-task pool; used to train the base model.
inline TrainLog train_unmasked(Model& model, const std::vector<TrainItem>& pool, int steps,
                               int batch, float lr, uint64_t seed) {
    if (pool.empty()) throw std::invalid_argument("training pool must be non-empty");
    if (steps < 1) throw std::invalid_argument("steps must be >= 1");
    detail::IndexStream stream(pool.size(), seed);
    TrainLog log;
    for (int step = 0; step < steps; ++step) {
        auto t0 = std::chrono::steady_clock::now();
        std::vector<TrainItem> batch_items;
        for (int i = 0; i < batch; ++i) batch_items.push_back(pool[stream.next()]);
        std::map<std::string, Tensor> grads;
        double loss = batch_gradients(model, batch_items, grads);
        sgd_update(model, grads, lr);
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log.steps.push_back({step, loss, secs});
    }
    return log;
}

// --- mask persistence ------------------------------------------------------------

inline void write_maskset(const GradientMaskSet& set, const std::string& path) {
    std::ostringstream meta;
    meta << "mode=" << set.mode << "\n"
         << "target_task=" << set.target_task << "\n"
         << "partition_hash=" << set.partition_hash << "\n";
    write_container(path, meta.str(), set.masks);
}

inline GradientMaskSet read_maskset(const std::string& path) {
    Container c = read_container(path);
    GradientMaskSet set;
    set.masks = std::move(c.tensors);
    std::istringstream is(c.config_text);
    std::string line;
    while (std::getline(is, line)) {
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string key = line.substr(0, eq), value = line.substr(eq + 1);
        if (key == "mode") set.mode = value;
        else if (key == "target_task") set.target_task = std::stoi(value);
        else if (key == "partition_hash") set.partition_hash = std::stoull(value);
    }
    return set;
}

} // namespace mnaft
