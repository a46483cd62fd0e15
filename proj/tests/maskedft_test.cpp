#include <gtest/gtest.h>

#include <cstdio>
#include <cstring>
#include <filesystem>

#include "mnaft/maskedft.hpp"

using namespace mnaft;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.d_ffn = 4;
    cfg.vision_blocks = 1;
    cfg.language_blocks = 1;
    return cfg;
}

ScoreMatrix random_matrix(const ModelConfig& cfg, int tasks, uint64_t seed) {
    ScoreMatrix m;
    m.neurons = list_neurons(cfg);
    Rng rng(seed);
    for (int t = 0; t < tasks; ++t) {
        m.task_ids.push_back(t);
        std::vector<double> row;
        for (size_t i = 0; i < m.neurons.size(); ++i) row.push_back(rng.next_double());
        m.values.push_back(std::move(row));
    }
    return m;
}

SelectedLayers select_all(const ModelConfig& cfg) {
    SelectedLayers sel;
    sel.k_vision = cfg.vision_blocks;
    sel.k_llm = cfg.language_blocks;
    for (int b = 0; b < cfg.vision_blocks; ++b) sel.vision.push_back(b);
    for (int b = 0; b < cfg.language_blocks; ++b) sel.llm.push_back(b);
    return sel;
}

NeuronPartition full_partition(const ModelConfig& cfg, uint64_t seed, double eps = 0.5) {
    return build_partition(random_matrix(cfg, 3, seed), select_all(cfg), eps, 1.0, cfg);
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    return a.shape == b.shape &&
           std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0;
}

std::map<std::string, Tensor> uniform_grads(const Model& model, float value) {
    std::map<std::string, Tensor> grads;
    for (const auto& [name, t] : model.params) grads.emplace(name, Tensor::full(t.shape, value));
    return grads;
}

} // namespace

TEST(MasksFromPartition, UnmasksRowsBiasAndColumns) {
    ModelConfig cfg = tiny_config();
    Model model = init_model(cfg, 3);

    NeuronPartition part;
    part.epsilon = 0.5;
    part.rho = 1.0;
    NeuronPartition::Layer layer;
    layer.module = Module::Language;
    layer.block = 0;
    layer.lambda = 0.0;
    layer.general = {0};
    layer.specific[7] = {2}; // target task 7
    layer.specific[8] = {1}; // other task: must stay frozen
    part.layers.push_back(layer);

    GradientMaskSet masks = masks_from_partition(part, 7, model);
    const Tensor& w1 = masks.masks.at("language.block0.ffn.w1.weight");
    const Tensor& b1 = masks.masks.at("language.block0.ffn.w1.bias");
    const Tensor& w2 = masks.masks.at("language.block0.ffn.w2.weight");
    for (int u = 0; u < cfg.d_ffn; ++u) {
        float expected = (u == 0 || u == 2) ? 1.0f : 0.0f; // Eq-13 unit mask [1,0,1,0]
        EXPECT_EQ(b1.data[static_cast<size_t>(u)], expected);
        for (int c = 0; c < cfg.d_model; ++c) EXPECT_EQ(w1.at(u, c), expected);
        for (int r = 0; r < cfg.d_model; ++r) EXPECT_EQ(w2.at(r, u), expected);
    }
    // everything outside the selected FFN stays zero
    for (const auto& [name, mask] : masks.masks) {
        if (name.rfind("language.block0.ffn", 0) == 0) continue;
        for (float v : mask.data) ASSERT_EQ(v, 0.0f) << name;
    }
}

TEST(MasksFromPartition, EmptyPartitionAllZero) {
    ModelConfig cfg = tiny_config();
    Model model = init_model(cfg, 5);
    NeuronPartition part;
    GradientMaskSet masks = masks_from_partition(part, 0, model);
    EXPECT_EQ(count_mask_ones(masks), 0);
}

TEST(MasksFromPartition, RejectsOutOfRangeUnit) {
    ModelConfig cfg = tiny_config();
    Model model = init_model(cfg, 5);
    NeuronPartition part;
    NeuronPartition::Layer layer;
    layer.module = Module::Vision;
    layer.block = 0;
    layer.general = {cfg.d_ffn}; // out of range
    part.layers.push_back(layer);
    EXPECT_THROW(masks_from_partition(part, 0, model), std::invalid_argument);
}

TEST(MasksFromPartition, IncomingOnlyVariantSkipsOutgoingColumns) {
    ModelConfig cfg = tiny_config();
    Model model = init_model(cfg, 5);
    NeuronPartition part;
    NeuronPartition::Layer layer;
    layer.module = Module::Vision;
    layer.block = 0;
    layer.general = {1};
    part.layers.push_back(layer);
    GradientMaskSet masks = masks_from_partition(part, 0, model, /*include_outgoing=*/false);
    const Tensor& w2 = masks.masks.at("vision.block0.ffn.w2.weight");
    for (float v : w2.data) EXPECT_EQ(v, 0.0f);
    EXPECT_EQ(count_mask_ones(masks), cfg.d_model + 1);
}

TEST(AblationModes, FullIsAllOnes) {
    ModelConfig cfg = tiny_config();
    Model model = init_model(cfg, 7);
    NeuronPartition part = full_partition(cfg, 11);
    GradientMaskSet masks =
        ablation_mode_masks(FinetuneMode::Full, part, select_all(cfg), 0, model);
    int64_t total = 0;
    for (const auto& [name, t] : model.params) total += t.size();
    EXPECT_EQ(count_mask_ones(masks), total);
}

TEST(AblationModes, VisionLayersLeaveLanguageFrozen) {
    ModelConfig cfg = tiny_config();
    Model model = init_model(cfg, 7);
    NeuronPartition part = full_partition(cfg, 13);
    GradientMaskSet masks =
        ablation_mode_masks(FinetuneMode::VisionLayers, part, select_all(cfg), 0, model);
    for (float v : masks.masks.at("language.block0.ffn.w1.weight").data) EXPECT_EQ(v, 0.0f);
    for (float v : masks.masks.at("vision.block0.ffn.w1.weight").data) EXPECT_EQ(v, 1.0f);
    for (float v : masks.masks.at("vision.block0.attn.wq.weight").data) EXPECT_EQ(v, 0.0f);
}

TEST(AblationModes, GeneralOnlyEmptySetGivesZeroMasks) {
    ModelConfig cfg = tiny_config();
    Model model = init_model(cfg, 7);
    NeuronPartition part = full_partition(cfg, 17, /*eps=*/0.0); // no general units
    GradientMaskSet masks =
        ablation_mode_masks(FinetuneMode::GeneralOnly, part, select_all(cfg), 0, model);
    EXPECT_EQ(count_mask_ones(masks), 0);
}

TEST(AblationModes, AllLayersEqualsUnionOfNeuronModes) {
    ModelConfig cfg = tiny_config();
    Model model = init_model(cfg, 7);
    NeuronPartition part = full_partition(cfg, 19); // all layers selected, rho = 1
    SelectedLayers sel = select_all(cfg);

    GradientMaskSet all_layers =
        ablation_mode_masks(FinetuneMode::AllLayers, part, sel, 0, model);
    GradientMaskSet the_union =
        ablation_mode_masks(FinetuneMode::GeneralOnly, part, sel, 0, model);
    for (int task : {0, 1, 2}) {
        GradientMaskSet spec =
            ablation_mode_masks(FinetuneMode::SpecificOnly, part, sel, task, model);
        for (auto& [name, mask] : the_union.masks) {
            const Tensor& other = spec.masks.at(name);
            for (size_t i = 0; i < mask.data.size(); ++i)
                mask.data[i] = std::max(mask.data[i], other.data[i]);
        }
    }
    for (const auto& [name, mask] : all_layers.masks)
        EXPECT_TRUE(bit_equal(mask, the_union.masks.at(name))) << name;
}

TEST(MaskedUpdate, WorkedExample) {
    ModelConfig cfg = tiny_config();
    Model model = init_model(cfg, 23);
    Tensor& w = model.params.at("connector.weight");
    w.at(0, 0) = 1.0f; w.at(0, 1) = 2.0f;
    w.at(1, 0) = 3.0f; w.at(1, 1) = 4.0f;

    GradientMaskSet masks = zero_masks(model);
    Tensor& mask = masks.masks.at("connector.weight");
    for (int c = 0; c < cfg.d_model; ++c) mask.at(0, c) = 1.0f; // row mask [1,0,...]

    std::map<std::string, Tensor> grads;
    grads.emplace("connector.weight", Tensor::full({cfg.d_model, cfg.d_model}, 1.0f));
    masked_update(model, grads, masks, 0.1f);

    EXPECT_FLOAT_EQ(w.at(0, 0), 0.9f);
    EXPECT_FLOAT_EQ(w.at(0, 1), 1.9f);
    EXPECT_FLOAT_EQ(w.at(1, 0), 3.0f);
    EXPECT_FLOAT_EQ(w.at(1, 1), 4.0f);
}

TEST(MaskedUpdate, AllOnesMatchesPlainSgdBitwise) {
    ModelConfig cfg = tiny_config();
    Model a = init_model(cfg, 29);
    Model b = init_model(cfg, 29);
    auto grads = uniform_grads(a, 0.37f);

    GradientMaskSet ones = zero_masks(a);
    for (auto& [name, mask] : ones.masks) std::fill(mask.data.begin(), mask.data.end(), 1.0f);

    masked_update(a, grads, ones, 0.05f);
    sgd_update(b, grads, 0.05f);
    for (const auto& [name, t] : a.params) EXPECT_TRUE(bit_equal(t, b.params.at(name))) << name;
}

TEST(MaskedUpdate, AllZeroIsIdentity) {
    ModelConfig cfg = tiny_config();
    Model model = init_model(cfg, 31);
    Model before = model;
    auto grads = uniform_grads(model, 1.3f);
    masked_update(model, grads, zero_masks(model), 0.5f);
    for (const auto& [name, t] : model.params)
        EXPECT_TRUE(bit_equal(t, before.params.at(name))) << name;
}

TEST(MaskedUpdate, EquivalentToMaterializedMaskedGradients) {
    ModelConfig cfg = tiny_config();
    Model a = init_model(cfg, 37);
    Model b = init_model(cfg, 37);
    NeuronPartition part = full_partition(cfg, 41);
    GradientMaskSet masks = masks_from_partition(part, 0, a);

    Rng rng(43);
    std::map<std::string, Tensor> grads;
    for (const auto& [name, t] : a.params) {
        Tensor g = Tensor::zeros(t.shape);
        for (auto& v : g.data) v = rng.uniform(-1.0f, 1.0f);
        grads.emplace(name, std::move(g));
    }

    masked_update(a, grads, masks, 0.1f);

    std::map<std::string, Tensor> materialized;
    for (const auto& [name, g] : grads) {
        Tensor gm = g;
        const Tensor& m = masks.masks.at(name);
        for (size_t i = 0; i < gm.data.size(); ++i) gm.data[i] = gm.data[i] * m.data[i];
        materialized.emplace(name, std::move(gm));
    }
    sgd_update(b, materialized, 0.1f);
    for (const auto& [name, t] : a.params) EXPECT_TRUE(bit_equal(t, b.params.at(name))) << name;
}

TEST(Finetune, RejectsBadConfig) {
    FinetuneConfig cfg;
    cfg.steps = 0;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg.steps = 1;
    cfg.lr = 0.0f;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Finetune, ZeroMasksFreezeModelAndLoss) {
    ModelConfig cfg = tiny_config();
    Model model = init_model(cfg, 47);
    Model before = model;

    auto langs = make_languages(2, 3);
    TaskSpec task(0, langs[0], langs[1]);
    auto dataset = sample_dataset(task, 1, 5, Split::Train); // fixed batch every step

    FinetuneConfig fc;
    fc.steps = 5;
    fc.batch = 1;
    fc.lr = 0.5f;
    fc.seed = 9;
    TrainLog log = finetune(model, dataset, task, fc, zero_masks(model));

    ASSERT_EQ(log.steps.size(), 5u);
    for (const auto& [name, t] : model.params)
        EXPECT_TRUE(bit_equal(t, before.params.at(name))) << name;
    for (const auto& s : log.steps) EXPECT_EQ(s.loss, log.steps[0].loss);
}

TEST(Finetune, FreezeExactnessUnderMnaftMasks) {
    ModelConfig cfg = tiny_config();
    Model model = init_model(cfg, 53);
    Model before = model;

    NeuronPartition part = full_partition(cfg, 59);
    GradientMaskSet masks = masks_from_partition(part, 0, model);

    auto langs = make_languages(3, 7);
    TaskSpec task(0, langs[0], langs[1]);
    auto dataset = sample_dataset(task, 24, 11, Split::Train);

    FinetuneConfig fc;
    fc.steps = 8;
    fc.batch = 2;
    fc.lr = 0.3f;
    fc.seed = 13;
    finetune(model, dataset, task, fc, masks);

    bool any_changed = false;
    for (const auto& [name, t] : model.params) {
        const Tensor& prev = before.params.at(name);
        const Tensor& mask = masks.masks.at(name);
        for (size_t i = 0; i < t.data.size(); ++i) {
            if (mask.data[i] == 0.0f) {
                ASSERT_EQ(std::memcmp(&t.data[i], &prev.data[i], sizeof(float)), 0)
                    << name << "[" << i << "]";
            } else if (t.data[i] != prev.data[i]) {
                any_changed = true;
            }
        }
    }
    EXPECT_TRUE(any_changed);
}

TEST(Finetune, DeterministicGivenSeeds) {
    ModelConfig cfg = tiny_config();
    auto langs = make_languages(2, 17);
    TaskSpec task(0, langs[0], langs[1]);
    auto dataset = sample_dataset(task, 16, 19, Split::Train);

    auto run = [&]() {
        Model model = init_model(cfg, 61);
        NeuronPartition part = full_partition(cfg, 67);
        GradientMaskSet masks = masks_from_partition(part, 0, model);
        FinetuneConfig fc;
        fc.steps = 6;
        fc.batch = 3;
        fc.lr = 0.2f;
        fc.seed = 23;
        finetune(model, dataset, task, fc, masks);
        return model;
    };
    Model a = run();
    Model b = run();
    for (const auto& [name, t] : a.params) EXPECT_TRUE(bit_equal(t, b.params.at(name))) << name;
}

TEST(TrainableCount, MnaftFormula) {
    ModelConfig cfg = tiny_config();
    Model model = init_model(cfg, 71);
    NeuronPartition part = full_partition(cfg, 73);
    int target = 1;
    GradientMaskSet masks = masks_from_partition(part, target, model);

    int64_t expected = 0;
    for (const auto& layer : part.layers) {
        size_t units = layer.general.size();
        auto it = layer.specific.find(target);
        if (it != layer.specific.end()) units += it->second.size();
        expected += static_cast<int64_t>(units) * (2 * cfg.d_model + 1);
    }
    EXPECT_EQ(count_mask_ones(masks), expected);
}

TEST(MaskSetFiles, RoundTripWithProvenance) {
    ModelConfig cfg = tiny_config();
    Model model = init_model(cfg, 79);
    NeuronPartition part = full_partition(cfg, 83);
    GradientMaskSet masks = masks_from_partition(part, 2, model);

    std::string path = (std::filesystem::temp_directory_path() / "mnaft_masks.bin").string();
    write_maskset(masks, path);
    GradientMaskSet loaded = read_maskset(path);
    EXPECT_EQ(loaded.mode, "mnaft");
    EXPECT_EQ(loaded.target_task, 2);
    EXPECT_EQ(loaded.partition_hash, masks.partition_hash);
    for (const auto& [name, mask] : masks.masks)
        EXPECT_TRUE(bit_equal(mask, loaded.masks.at(name))) << name;
    std::remove(path.c_str());
}

TEST(TrainUnmasked, LossDecreasesOnToyPool) {
    ModelConfig cfg = tiny_config();
    Model model = init_model(cfg, 89);
    auto langs = make_languages(2, 29);
    TaskSpec task(0, langs[0], langs[1]);
    auto dataset = sample_dataset(task, 32, 31, Split::Train);
    std::vector<int> instr = instruction_tokens(task, ProbeKind::Translate);
    std::vector<TrainItem> pool;
    for (const auto& s : dataset) pool.push_back({&s, &instr});

    TrainLog log = train_unmasked(model, pool, 60, 4, 0.2f, 37);
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 10; ++i) head += log.steps[i].loss;
    for (int i = 0; i < 10; ++i) tail += log.steps[log.steps.size() - 1 - i].loss;
    EXPECT_LT(tail, head);
}
