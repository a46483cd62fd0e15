#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mnaft/autodiff.hpp"
#include "mnaft/checkpoint.hpp"
#include "mnaft/rng.hpp"
#include "mnaft/tensor.hpp"
#include "mnaft/vocab.hpp"

// Tiny multimodal transformer: patch vision encoder, linear connector,
// causal language decoder. Every FFN intermediate unit (post-GELU) is an
// addressable neuron, tappable through the autodiff graph.

namespace mnaft {

enum class Module { Vision, Language };

inline const char* module_name(Module m) { return m == Module::Vision ? "vision" : "language"; }

inline Module module_from_name(const std::string& s) {
    if (s == "vision") return Module::Vision;
    if (s == "language") return Module::Language;
    throw std::invalid_argument("unknown module '" + s + "'");
}

struct NeuronId {
    Module module = Module::Vision;
    int block = 0;
    int unit = 0;

    bool operator==(const NeuronId&) const = default;
    bool operator<(const NeuronId& o) const {
        return std::tie(module, block, unit) < std::tie(o.module, o.block, o.unit);
    }
};

struct ModelConfig {
    int d_model = 64;
    int n_heads = 4;
    int d_ffn = 128;
    int vision_blocks = 2;
    int language_blocks = 2;
    int patch_rows = 7;
    int patch_cols = 6;
    int max_image_patches = 27;
    int vocab_size = kVocabSize;
    int max_seq = 48;
    uint64_t init_seed = 0;

    void validate() const {
        if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0)
            throw std::invalid_argument("d_model must be a positive multiple of n_heads");
        if (d_ffn < 1) throw std::invalid_argument("d_ffn must be >= 1");
        if (vision_blocks < 1 || language_blocks < 1)
            throw std::invalid_argument("block counts must be >= 1");
        if (patch_rows < 1 || patch_cols < 1 || max_image_patches < 1)
            throw std::invalid_argument("patch geometry must be positive");
        if (vocab_size < kVocabSize)
            throw std::invalid_argument("vocab_size smaller than the assigned token id range");
        if (max_seq < 4) throw std::invalid_argument("max_seq too small");
    }

    int head_dim() const { return d_model / n_heads; }
    int total_neurons() const { return (vision_blocks + language_blocks) * d_ffn; }

    std::string to_text() const {
        std::ostringstream os;
        os << "d_model=" << d_model << "\n"
           << "n_heads=" << n_heads << "\n"
           << "d_ffn=" << d_ffn << "\n"
           << "vision_blocks=" << vision_blocks << "\n"
           << "language_blocks=" << language_blocks << "\n"
           << "patch_rows=" << patch_rows << "\n"
           << "patch_cols=" << patch_cols << "\n"
           << "max_image_patches=" << max_image_patches << "\n"
           << "vocab_size=" << vocab_size << "\n"
           << "max_seq=" << max_seq << "\n"
           << "init_seed=" << init_seed << "\n";
        return os.str();
    }

    static ModelConfig from_text(const std::string& text) {
        ModelConfig cfg;
        std::istringstream is(text);
        std::string line;
        while (std::getline(is, line)) {
            auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            std::string key = line.substr(0, eq);
            std::string value = line.substr(eq + 1);
            if (key == "d_model") cfg.d_model = std::stoi(value);
            else if (key == "n_heads") cfg.n_heads = std::stoi(value);
            else if (key == "d_ffn") cfg.d_ffn = std::stoi(value);
            else if (key == "vision_blocks") cfg.vision_blocks = std::stoi(value);
            else if (key == "language_blocks") cfg.language_blocks = std::stoi(value);
            else if (key == "patch_rows") cfg.patch_rows = std::stoi(value);
            else if (key == "patch_cols") cfg.patch_cols = std::stoi(value);
            else if (key == "max_image_patches") cfg.max_image_patches = std::stoi(value);
            else if (key == "vocab_size") cfg.vocab_size = std::stoi(value);
            else if (key == "max_seq") cfg.max_seq = std::stoi(value);
            else if (key == "init_seed") cfg.init_seed = std::stoull(value);
            else throw std::invalid_argument("unknown model config key '" + key + "'");
        }
        cfg.validate();
        return cfg;
    }
};

struct PixelGrid {
    int height = 7;
    int width = 0;
    std::vector<uint8_t> pixels; // row-major, 0 background / 1 ink

    uint8_t at(int r, int c) const { return pixels[static_cast<size_t>(r) * width + c]; }
};

struct Model {
    ModelConfig config;
    std::map<std::string, Tensor> params;

    Bindings bindings() const {
        Bindings b;
        for (const auto& [name, t] : params) b.emplace(name, &t);
        return b;
    }
};

enum class ParamKind { Weight, Bias, Gain };

// Single source of truth for the parameter table; init, checkpoint
// validation and mask construction all enumerate through here.
template <typename F>
void for_each_param(const ModelConfig& cfg, F&& fn) {
    auto block_params = [&](const std::string& prefix) {
        fn(prefix + ".ln1.gamma", std::vector<int>{cfg.d_model}, ParamKind::Gain);
        fn(prefix + ".ln1.beta", std::vector<int>{cfg.d_model}, ParamKind::Bias);
        for (const char* w : {"wq", "wk", "wv", "wo"}) {
            fn(prefix + ".attn." + w + ".weight", std::vector<int>{cfg.d_model, cfg.d_model},
               ParamKind::Weight);
            fn(prefix + ".attn." + w + ".bias", std::vector<int>{cfg.d_model}, ParamKind::Bias);
        }
        fn(prefix + ".ln2.gamma", std::vector<int>{cfg.d_model}, ParamKind::Gain);
        fn(prefix + ".ln2.beta", std::vector<int>{cfg.d_model}, ParamKind::Bias);
        fn(prefix + ".ffn.w1.weight", std::vector<int>{cfg.d_ffn, cfg.d_model}, ParamKind::Weight);
        fn(prefix + ".ffn.w1.bias", std::vector<int>{cfg.d_ffn}, ParamKind::Bias);
        fn(prefix + ".ffn.w2.weight", std::vector<int>{cfg.d_model, cfg.d_ffn}, ParamKind::Weight);
        fn(prefix + ".ffn.w2.bias", std::vector<int>{cfg.d_model}, ParamKind::Bias);
    };

    fn("vision.patch_embed.weight", std::vector<int>{cfg.d_model, cfg.patch_rows * cfg.patch_cols},
       ParamKind::Weight);
    fn("vision.patch_embed.bias", std::vector<int>{cfg.d_model}, ParamKind::Bias);
    fn("vision.pos_embed", std::vector<int>{cfg.max_image_patches, cfg.d_model}, ParamKind::Weight);
    for (int i = 0; i < cfg.vision_blocks; ++i) block_params("vision.block" + std::to_string(i));

    fn("connector.weight", std::vector<int>{cfg.d_model, cfg.d_model}, ParamKind::Weight);

    fn("language.tok_embed", std::vector<int>{cfg.vocab_size, cfg.d_model}, ParamKind::Weight);
    fn("language.pos_embed", std::vector<int>{cfg.max_seq, cfg.d_model}, ParamKind::Weight);
    for (int i = 0; i < cfg.language_blocks; ++i) block_params("language.block" + std::to_string(i));
    fn("language.ln_out.gamma", std::vector<int>{cfg.d_model}, ParamKind::Gain);
    fn("language.ln_out.beta", std::vector<int>{cfg.d_model}, ParamKind::Bias);
    fn("language.head.weight", std::vector<int>{cfg.vocab_size, cfg.d_model}, ParamKind::Weight);
    fn("language.head.bias", std::vector<int>{cfg.vocab_size}, ParamKind::Bias);
}

inline std::string ffn_block_prefix(Module m, int block) {
    return std::string(module_name(m)) + ".block" + std::to_string(block);
}

inline Model init_model(ModelConfig cfg, uint64_t seed) {
    cfg.validate();
    cfg.init_seed = seed;
    Model model;
    model.config = cfg;
    for_each_param(cfg, [&](const std::string& name, const std::vector<int>& shape, ParamKind kind) {
        Tensor t = Tensor::zeros(shape);
        t.trainable = true;
        if (kind == ParamKind::Gain) {
            std::fill(t.data.begin(), t.data.end(), 1.0f);
        } else if (kind == ParamKind::Weight) {
            int fan_out = shape[0];
            int fan_in = shape.size() == 2 ? shape[1] : shape[0];
            float a = std::sqrt(6.0f / static_cast<float>(fan_in + fan_out));
            Rng rng(mix_seed(seed, fnv1a64(name)));
            for (auto& v : t.data) v = rng.uniform(-a, a);
        }
        model.params.emplace(name, std::move(t));
    });
    return model;
}

inline void scale_parameters(Model& model, float factor) {
    for (auto& [name, t] : model.params)
        for (auto& v : t.data) v *= factor;
}

inline std::vector<NeuronId> list_neurons(const ModelConfig& cfg) {
    std::vector<NeuronId> out;
    out.reserve(static_cast<size_t>(cfg.total_neurons()));
    for (int b = 0; b < cfg.vision_blocks; ++b)
        for (int u = 0; u < cfg.d_ffn; ++u) out.push_back({Module::Vision, b, u});
    for (int b = 0; b < cfg.language_blocks; ++b)
        for (int u = 0; u < cfg.d_ffn; ++u) out.push_back({Module::Language, b, u});
    return out;
}

inline int blocks_in_module(const ModelConfig& cfg, Module m) {
    return m == Module::Vision ? cfg.vision_blocks : cfg.language_blocks;
}

// --- graph building ---------------------------------------------------------

struct ForwardOptions {
    bool tap_ffn = false;                // capture every block's post-GELU activations
    std::optional<NeuronId> ablate;      // force one unit's activation to zero
};

struct ItGraph {
    Graph graph;
    NodeId logits_node = -1;
    NodeId loss_node = -1;               // -1 when built without a loss
    std::vector<int> ffn_taps;           // handle per block, list_neurons block order
    int patches = 0;
    int instr_len = 0;
    int target_len = 0;
};

namespace detail {

inline Tensor patchify(const PixelGrid& grid, const ModelConfig& cfg) {
    if (grid.height != cfg.patch_rows)
        throw std::invalid_argument("grid height " + std::to_string(grid.height) +
                                    " != patch_rows " + std::to_string(cfg.patch_rows));
    if (grid.width <= 0 || grid.width % cfg.patch_cols != 0)
        throw std::invalid_argument("grid width must be a positive multiple of patch_cols");
    int patches = grid.width / cfg.patch_cols;
    if (patches > cfg.max_image_patches) throw std::invalid_argument("grid too wide");
    Tensor t = Tensor::zeros({patches, cfg.patch_rows * cfg.patch_cols});
    for (int p = 0; p < patches; ++p)
        for (int r = 0; r < cfg.patch_rows; ++r)
            for (int c = 0; c < cfg.patch_cols; ++c)
                t.at(p, r * cfg.patch_cols + c) =
                    static_cast<float>(grid.at(r, p * cfg.patch_cols + c));
    return t;
}

// additive attention mask: patch rows see all patches, text rows see all
// patches plus text up to and including themselves
inline Tensor prefix_causal_mask(int patches, int total) {
    Tensor m = Tensor::zeros({total, total});
    for (int i = 0; i < total; ++i)
        for (int j = 0; j < total; ++j) {
            bool allowed = j < patches || (i >= patches && j <= i);
            if (!allowed) m.at(i, j) = -1e30f;
        }
    return m;
}

struct BlockTap {
    int handle = -1;
};

// One pre-layernorm transformer block. `mask` < 0 means no attention mask.
inline NodeId transformer_block(Graph& g, const ModelConfig& cfg, const std::string& prefix,
                                NodeId x, int rows, NodeId mask, const ForwardOptions& opts,
                                Module module, int block_index, int* tap_handle) {
    auto linear = [&](NodeId in, const std::string& name) {
        return g.add(g.matmul(in, g.input(name + ".weight"), false, true),
                     g.input(name + ".bias"));
    };

    NodeId h = g.layernorm(x, g.input(prefix + ".ln1.gamma"), g.input(prefix + ".ln1.beta"));
    NodeId q = linear(h, prefix + ".attn.wq");
    NodeId k = linear(h, prefix + ".attn.wk");
    NodeId v = linear(h, prefix + ".attn.wv");

    int dh = cfg.head_dim();
    float inv_sqrt_dh = 1.0f / std::sqrt(static_cast<float>(dh));
    std::vector<NodeId> heads;
    for (int head = 0; head < cfg.n_heads; ++head) {
        int c0 = head * dh, c1 = (head + 1) * dh;
        NodeId qh = g.slice(q, 0, rows, c0, c1);
        NodeId kh = g.slice(k, 0, rows, c0, c1);
        NodeId vh = g.slice(v, 0, rows, c0, c1);
        NodeId scores = g.scale(g.matmul(qh, kh, false, true), inv_sqrt_dh);
        if (mask >= 0) scores = g.add(scores, mask);
        heads.push_back(g.matmul(g.softmax_rows(scores), vh));
    }
    NodeId attn_out = linear(g.concat(heads, 1), prefix + ".attn.wo");
    x = g.add(x, attn_out);

    NodeId h2 = g.layernorm(x, g.input(prefix + ".ln2.gamma"), g.input(prefix + ".ln2.beta"));
    NodeId pre = g.add(g.matmul(h2, g.input(prefix + ".ffn.w1.weight"), false, true),
                       g.input(prefix + ".ffn.w1.bias"));
    NodeId act = g.gelu(pre);
    if (opts.tap_ffn && tap_handle) *tap_handle = g.tap(act);
    if (opts.ablate && opts.ablate->module == module && opts.ablate->block == block_index) {
        Tensor m = Tensor::full({rows, cfg.d_ffn}, 1.0f);
        for (int r = 0; r < rows; ++r) m.at(r, opts.ablate->unit) = 0.0f;
        act = g.mul(act, g.constant(std::move(m)));
    }
    NodeId ffn_out = g.add(g.matmul(act, g.input(prefix + ".ffn.w2.weight"), false, true),
                           g.input(prefix + ".ffn.w2.bias"));
    return g.add(x, ffn_out);
}

inline NodeId build_patch_embedding(Graph& g, const ModelConfig& cfg, const PixelGrid& grid,
                                    int* patches_out) {
    Tensor patch_tensor = patchify(grid, cfg);
    int patches = patch_tensor.shape[0];
    *patches_out = patches;
    NodeId flat = g.constant(std::move(patch_tensor));
    NodeId embedded = g.add(g.matmul(flat, g.input("vision.patch_embed.weight"), false, true),
                            g.input("vision.patch_embed.bias"));
    NodeId pos = g.slice(g.input("vision.pos_embed"), 0, patches, 0, cfg.d_model);
    return g.add(embedded, pos);
}

inline NodeId build_vision_encoder(Graph& g, const ModelConfig& cfg, const PixelGrid& grid,
                                   const ForwardOptions& opts, std::vector<int>* taps,
                                   int* patches_out) {
    NodeId x = build_patch_embedding(g, cfg, grid, patches_out);
    for (int b = 0; b < cfg.vision_blocks; ++b) {
        int handle = -1;
        x = transformer_block(g, cfg, "vision.block" + std::to_string(b), x, *patches_out,
                              /*mask=*/-1, opts, Module::Vision, b, &handle);
        if (taps) (*taps)[b] = handle;
    }
    return x;
}

} // namespace detail

// Builds the image-translation graph. Decoder input rows are
// [connector(vision states); instruction; BOS; target]; when `with_loss`,
// the rows from BOS onward are scored against [target..., EOS] and the loss
// is the mean of the per-token cross entropies.
inline ItGraph build_it_graph(const ModelConfig& cfg, const PixelGrid& grid,
                              const std::vector<int>& instruction, const std::vector<int>& target,
                              bool with_loss = true, const ForwardOptions& opts = {}) {
    cfg.validate();
    if (with_loss && target.empty()) throw std::invalid_argument("empty target");

    ItGraph it;
    it.ffn_taps.assign(static_cast<size_t>(cfg.vision_blocks + cfg.language_blocks), -1);
    Graph& g = it.graph;

    std::vector<int> vision_taps(static_cast<size_t>(cfg.vision_blocks), -1);
    NodeId vis = detail::build_vision_encoder(g, cfg, grid, opts, &vision_taps, &it.patches);
    for (int b = 0; b < cfg.vision_blocks; ++b) it.ffn_taps[b] = vision_taps[b];

    NodeId projected = g.matmul(vis, g.input("connector.weight"), false, true);

    std::vector<int> tokens = instruction;
    tokens.push_back(kBosId);
    tokens.insert(tokens.end(), target.begin(), target.end());
    it.instr_len = static_cast<int>(instruction.size());
    it.target_len = static_cast<int>(target.size());

    int total = it.patches + static_cast<int>(tokens.size());
    if (total > cfg.max_seq) throw std::invalid_argument("sequence overflow");

    NodeId tok = g.embedding(g.input("language.tok_embed"), tokens);
    NodeId x = g.concat({projected, tok}, 0);
    x = g.add(x, g.slice(g.input("language.pos_embed"), 0, total, 0, cfg.d_model));

    NodeId mask = g.constant(detail::prefix_causal_mask(it.patches, total));
    for (int b = 0; b < cfg.language_blocks; ++b) {
        int handle = -1;
        x = detail::transformer_block(g, cfg, "language.block" + std::to_string(b), x, total, mask,
                                      opts, Module::Language, b, &handle);
        it.ffn_taps[cfg.vision_blocks + b] = handle;
    }

    NodeId final_ln =
        g.layernorm(x, g.input("language.ln_out.gamma"), g.input("language.ln_out.beta"));
    it.logits_node = g.add(g.matmul(final_ln, g.input("language.head.weight"), false, true),
                           g.input("language.head.bias"));

    if (with_loss) {
        int bos_row = it.patches + it.instr_len;
        NodeId scored = g.slice(it.logits_node, bos_row, bos_row + it.target_len + 1, 0,
                                cfg.vocab_size);
        std::vector<int> labels = target;
        labels.push_back(kEosId);
        it.loss_node = g.softmax_xent(scored, labels);
    }
    return it;
}

struct ItResult {
    Tensor logits;
    double loss = 0.0;
};

inline ItResult forward_it(const Model& model, const PixelGrid& grid,
                           const std::vector<int>& instruction, const std::vector<int>& target) {
    ItGraph it = build_it_graph(model.config, grid, instruction, target, true);
    Tape tape = forward(it.graph, model.bindings());
    ItResult res;
    res.logits = tape.value(it.logits_node);
    res.loss = static_cast<double>(tape.value(it.loss_node).data[0]);
    return res;
}

inline Tensor embed_patches(const Model& model, const PixelGrid& grid) {
    Graph g;
    int patches = 0;
    detail::build_patch_embedding(g, model.config, grid, &patches);
    Tape tape = forward(g, model.bindings());
    return tape.output();
}

inline Tensor encode_image(const Model& model, const PixelGrid& grid) {
    Graph g;
    int patches = 0;
    ForwardOptions opts;
    detail::build_vision_encoder(g, model.config, grid, opts, nullptr, &patches);
    Tape tape = forward(g, model.bindings());
    return tape.output();
}

// Greedy decoding; ties break toward the lowest token id, EOS stops and is
// stripped from the returned sequence.
inline std::vector<int> generate(const Model& model, const PixelGrid& grid,
                                 const std::vector<int>& instruction, int max_len) {
    if (max_len < 1) throw std::invalid_argument("max_len must be >= 1");
    std::vector<int> emitted;
    while (static_cast<int>(emitted.size()) < max_len) {
        ItGraph it = build_it_graph(model.config, grid, instruction, emitted, false);
        if (it.patches + it.instr_len + 1 + static_cast<int>(emitted.size()) >= model.config.max_seq)
            break; // no room to extend further
        Tape tape = forward(it.graph, model.bindings());
        Tensor logits = tape.value(it.logits_node);
        int last = logits.rows() - 1;
        int best = 0;
        float best_v = logits.at(last, 0);
        for (int j = 1; j < logits.cols(); ++j)
            if (logits.at(last, j) > best_v) {
                best_v = logits.at(last, j);
                best = j;
            }
        if (best == kEosId) break;
        emitted.push_back(best);
    }
    return emitted;
}

// --- checkpoints -------------------------------------------------------------

inline void save_checkpoint(const Model& model, const std::string& path) {
    write_container(path, model.config.to_text(), model.params);
}

inline Model load_checkpoint(const std::string& path) {
    Container c = read_container(path);
    Model model;
    model.config = ModelConfig::from_text(c.config_text);
    for_each_param(model.config,
                   [&](const std::string& name, const std::vector<int>& shape, ParamKind) {
                       auto it = c.tensors.find(name);
                       if (it == c.tensors.end())
                           throw IoError("checkpoint missing tensor '" + name + "'");
                       if (it->second.shape != shape)
                           throw IoError("checkpoint tensor '" + name + "' has shape " +
                                         shape_str(it->second.shape) + ", expected " +
                                         shape_str(shape));
                   });
    model.params = std::move(c.tensors);
    for (auto& [name, t] : model.params) t.trainable = true;
    return model;
}

} // namespace mnaft
