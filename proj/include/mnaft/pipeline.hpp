#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mnaft/evalreport.hpp"

// Pipeline stages behind the CLI: generate data, train the base model, score
// neurons, partition, fine-tune with masks, evaluate, and render reports.
// Every stage reads its inputs from files, writes its outputs to files, and
// records a manifest with input/output hashes so reruns are verifiable.

namespace mnaft {

struct RunConfig {
    ModelConfig model;
    int languages = 3;
    int train_per_task = 2000;
    int score_per_task = 128;
    int eval_per_task = 256;
    ScoringKind scoring_kind = ScoringKind::Translate;
    int k_vision = 1;
    int k_llm = 1;
    double epsilon = 0.5;
    double rho = 1.0;
    int base_steps = 1500;
    float base_lr = 0.5f;
    int base_batch = 8;
    int ft_steps = 1000;
    float ft_lr = 0.5f;
    int ft_batch = 8;
    FinetuneMode ft_mode = FinetuneMode::Mnaft;
    int ft_task = 0;
    uint64_t ft_seed = 1;
    uint64_t seed = 42;
    std::string out_dir = "out";

    void validate() const {
        model.validate();
        if (languages < 2 || languages * kConceptCount > kSurfaceVocab)
            throw std::invalid_argument("languages must be 2 or 3");
        if (train_per_task < 1 || score_per_task < 1 || eval_per_task < 1)
            throw std::invalid_argument("split sizes must be >= 1");
        if (epsilon < 0 || epsilon > 1 || rho < 0 || rho > 1)
            throw std::invalid_argument("epsilon and rho must lie in [0, 1]");
        if (k_vision < 1 || k_llm < 1) throw std::invalid_argument("layer budgets must be >= 1");
        if (ft_task < 0 || ft_task >= languages)
            throw std::invalid_argument("ft_task out of range");
    }

    std::vector<TaskSpec> tasks() const {
        auto langs = make_languages(languages, seed);
        std::vector<TaskSpec> out;
        for (int i = 0; i < languages; ++i)
            out.emplace_back(i, langs[i], langs[(i + 1) % languages]);
        return out;
    }

    std::string canonical_text() const {
        std::ostringstream os;
        os << "base_batch=" << base_batch << "\n"
           << "base_lr=" << format_g17(base_lr) << "\n"
           << "base_steps=" << base_steps << "\n"
           << "epsilon=" << format_g17(epsilon) << "\n"
           << "eval_per_task=" << eval_per_task << "\n"
           << "ft_batch=" << ft_batch << "\n"
           << "ft_lr=" << format_g17(ft_lr) << "\n"
           << "ft_mode=" << finetune_mode_name(ft_mode) << "\n"
           << "ft_seed=" << ft_seed << "\n"
           << "ft_steps=" << ft_steps << "\n"
           << "ft_task=" << ft_task << "\n"
           << "k_llm=" << k_llm << "\n"
           << "k_vision=" << k_vision << "\n"
           << "languages=" << languages << "\n"
           << "rho=" << format_g17(rho) << "\n"
           << "score_per_task=" << score_per_task << "\n"
           << "scoring_kind=" << scoring_kind_name(scoring_kind) << "\n"
           << "seed=" << seed << "\n"
           << "train_per_task=" << train_per_task << "\n"
           << model.to_text();
        return os.str();
    }
};

// TOML-style key/value file: `key = value`, '#' comments, optional quotes.
inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path + "'");
    RunConfig cfg;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto trim = [](std::string s) {
            size_t a = s.find_first_not_of(" \t\r");
            size_t b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(line_no) +
                                        ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
            value = value.substr(1, value.size() - 2);

        if (key == "languages") cfg.languages = std::stoi(value);
        else if (key == "train_per_task") cfg.train_per_task = std::stoi(value);
        else if (key == "score_per_task") cfg.score_per_task = std::stoi(value);
        else if (key == "eval_per_task") cfg.eval_per_task = std::stoi(value);
        else if (key == "scoring_kind") cfg.scoring_kind = scoring_kind_from_name(value);
        else if (key == "k_vision") cfg.k_vision = std::stoi(value);
        else if (key == "k_llm") cfg.k_llm = std::stoi(value);
        else if (key == "epsilon") cfg.epsilon = std::stod(value);
        else if (key == "rho") cfg.rho = std::stod(value);
        else if (key == "base_steps") cfg.base_steps = std::stoi(value);
        else if (key == "base_lr") cfg.base_lr = std::stof(value);
        else if (key == "base_batch") cfg.base_batch = std::stoi(value);
        else if (key == "ft_steps") cfg.ft_steps = std::stoi(value);
        else if (key == "ft_lr") cfg.ft_lr = std::stof(value);
        else if (key == "ft_batch") cfg.ft_batch = std::stoi(value);
        else if (key == "ft_mode") cfg.ft_mode = finetune_mode_from_name(value);
        else if (key == "ft_task") cfg.ft_task = std::stoi(value);
        else if (key == "ft_seed") cfg.ft_seed = std::stoull(value);
        else if (key == "seed") cfg.seed = std::stoull(value);
        else if (key == "out_dir") cfg.out_dir = value;
        else if (key == "d_model") cfg.model.d_model = std::stoi(value);
        else if (key == "n_heads") cfg.model.n_heads = std::stoi(value);
        else if (key == "d_ffn") cfg.model.d_ffn = std::stoi(value);
        else if (key == "vision_blocks") cfg.model.vision_blocks = std::stoi(value);
        else if (key == "language_blocks") cfg.model.language_blocks = std::stoi(value);
        else if (key == "patch_rows") cfg.model.patch_rows = std::stoi(value);
        else if (key == "patch_cols") cfg.model.patch_cols = std::stoi(value);
        else if (key == "max_image_patches") cfg.model.max_image_patches = std::stoi(value);
        else if (key == "vocab_size") cfg.model.vocab_size = std::stoi(value);
        else if (key == "max_seq") cfg.model.max_seq = std::stoi(value);
        else throw std::invalid_argument("unknown config key '" + key + "'");
    }
    return cfg;
}

// --- artifact paths ----------------------------------------------------------------

namespace paths {

inline std::string dataset(const RunConfig& cfg, int task, Split split) {
    return cfg.out_dir + "/data_task" + std::to_string(task) + "_" + split_name(split) + ".txt";
}
inline std::string base_checkpoint(const RunConfig& cfg) { return cfg.out_dir + "/base.ckpt"; }
inline std::string base_trainlog(const RunConfig& cfg) {
    return cfg.out_dir + "/trainlog_base.csv";
}
inline std::string score_matrix(const RunConfig& cfg) { return cfg.out_dir + "/score_matrix.csv"; }
inline std::string layer_relevance(const RunConfig& cfg) {
    return cfg.out_dir + "/layer_relevance.csv";
}
inline std::string selected_layers(const RunConfig& cfg) {
    return cfg.out_dir + "/selected_layers.json";
}
inline std::string oracle_report(const RunConfig& cfg) {
    return cfg.out_dir + "/oracle_spearman.json";
}
inline std::string partition(const RunConfig& cfg) { return cfg.out_dir + "/partition.json"; }
inline std::string model_tag(FinetuneMode mode, int task) {
    return std::string(finetune_mode_name(mode)) + "_task" + std::to_string(task);
}
inline std::string ft_checkpoint(const RunConfig& cfg, FinetuneMode mode, int task) {
    return cfg.out_dir + "/model_" + model_tag(mode, task) + ".ckpt";
}
inline std::string ft_masks(const RunConfig& cfg, FinetuneMode mode, int task) {
    return cfg.out_dir + "/masks_" + model_tag(mode, task) + ".bin";
}
inline std::string ft_trainlog(const RunConfig& cfg, FinetuneMode mode, int task) {
    return cfg.out_dir + "/trainlog_" + model_tag(mode, task) + ".csv";
}
inline std::string eval_report(const RunConfig& cfg) { return cfg.out_dir + "/report.json"; }
inline std::string manifest(const RunConfig& cfg, const std::string& stage) {
    return cfg.out_dir + "/manifest_" + stage + ".json";
}

} // namespace paths

// --- manifests -----------------------------------------------------------------------

// Manifest hashes use FNV-1a 64. Checkpoint containers carry their own
// trailing CRC-32, and any byte stream that ends with its own CRC-32 hashes
// to the fixed residue constant, so CRC is useless as a file fingerprint
// here.
inline uint64_t file_fnv1a64(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for hashing");
    uint64_t h = 14695981039346656037ULL;
    char buf[1 << 16];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ULL;
        }
    }
    return h;
}

inline std::string hash_hex(uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string utc_timestamp() {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

class StageRunner {
  public:
    StageRunner(const RunConfig& cfg, std::string stage)
        : cfg_(cfg), stage_(std::move(stage)), started_(utc_timestamp()) {}

    // Declares an input artifact: it must exist, and if a previous stage
    // recorded its hash, the bytes must still match. Runs before compute.
    void require_input(const std::string& path) {
        if (!std::filesystem::exists(path))
            throw std::invalid_argument(stage_ + ": missing input artifact '" + path + "'");
        std::string digest = hash_hex(file_fnv1a64(path));
        auto recorded = recorded_output_hash(path);
        if (recorded && *recorded != digest)
            throw std::invalid_argument(stage_ + ": input '" + path +
                                        "' does not match the hash recorded by its producing "
                                        "stage (expected " +
                                        *recorded + ", found " + digest + ")");
        inputs_[relative(path)] = digest;
    }

    void record_output(const std::string& path) {
        outputs_[relative(path)] = hash_hex(file_fnv1a64(path));
    }

    // Writes the manifest and returns the stage summary for stdout.
    nlohmann::json finish(nlohmann::json extra = nlohmann::json::object()) {
        nlohmann::json manifest = {{"stage", stage_},
                                   {"config_hash", hash_hex(fnv1a64(cfg_.canonical_text()))},
                                   {"inputs", inputs_},
                                   {"outputs", outputs_},
                                   {"started_at", started_},
                                   {"finished_at", utc_timestamp()}};
        std::ofstream out(paths::manifest(cfg_, stage_), std::ios::binary);
        if (!out) throw IoError("cannot write manifest for stage " + stage_);
        out << manifest.dump(2) << "\n";

        nlohmann::json summary = {{"stage", stage_}, {"status", "ok"}, {"outputs", outputs_}};
        for (auto& [k, v] : extra.items()) summary[k] = v;
        return summary;
    }

  private:
    std::string relative(const std::string& path) const {
        std::string prefix = cfg_.out_dir + "/";
        if (path.rfind(prefix, 0) == 0) return path.substr(prefix.size());
        return path;
    }

    std::optional<std::string> recorded_output_hash(const std::string& path) const {
        std::string rel = relative(path);
        if (!std::filesystem::exists(cfg_.out_dir)) return {};
        for (const auto& entry : std::filesystem::directory_iterator(cfg_.out_dir)) {
            std::string name = entry.path().filename().string();
            if (name.rfind("manifest_", 0) != 0 || entry.path().extension() != ".json") continue;
            std::ifstream in(entry.path());
            nlohmann::json j;
            try {
                in >> j;
            } catch (...) {
                continue;
            }
            if (!j.contains("outputs")) continue;
            auto it = j["outputs"].find(rel);
            if (it != j["outputs"].end()) return it->get<std::string>();
        }
        return {};
    }

    const RunConfig& cfg_;
    std::string stage_;
    std::string started_;
    std::map<std::string, std::string> inputs_;
    std::map<std::string, std::string> outputs_;
};

// --- stages ------------------------------------------------------------------------

namespace stages {

inline nlohmann::json gen_data(const RunConfig& cfg) {
    cfg.validate();
    std::filesystem::create_directories(cfg.out_dir);
    StageRunner stage(cfg, "gen-data");
    auto tasks = cfg.tasks();
    for (const auto& task : tasks) {
        for (auto [split, count] :
             {std::pair{Split::Train, cfg.train_per_task}, {Split::Score, cfg.score_per_task},
              {Split::Eval, cfg.eval_per_task}}) {
            auto samples = sample_dataset(task, count, cfg.seed, split);
            std::string path = paths::dataset(cfg, task.id, split);
            write_dataset(path, task.id, split, samples);
            stage.record_output(path);
        }
    }
    return stage.finish({{"tasks", static_cast<int>(tasks.size())}});
}

inline nlohmann::json train_base(const RunConfig& cfg) {
    cfg.validate();
    StageRunner stage(cfg, "train-base");
    auto tasks = cfg.tasks();

    std::vector<DatasetFile> files;
    for (const auto& task : tasks) {
        std::string path = paths::dataset(cfg, task.id, Split::Train);
        stage.require_input(path);
        files.push_back(read_dataset(path));
    }

    std::vector<std::vector<int>> instructions;
    for (const auto& task : tasks)
        instructions.push_back(instruction_tokens(task, ProbeKind::Translate));
    std::vector<TrainItem> pool;
    for (size_t t = 0; t < files.size(); ++t)
        for (const Sample& s : files[t].samples) pool.push_back({&s, &instructions[t]});

    Model model = init_model(cfg.model, cfg.seed);
    TrainLog log = train_unmasked(model, pool, cfg.base_steps, cfg.base_batch, cfg.base_lr,
                                  mix_seed(cfg.seed, 0x62617365)); // "base"

    save_checkpoint(model, paths::base_checkpoint(cfg));
    write_trainlog_csv(log, paths::base_trainlog(cfg));
    stage.record_output(paths::base_checkpoint(cfg));
    stage.record_output(paths::base_trainlog(cfg));
    return stage.finish({{"final_loss", log.steps.back().loss},
                         {"initial_loss", log.steps.front().loss}});
}

inline nlohmann::json score(const RunConfig& cfg, bool with_oracle = false) {
    cfg.validate();
    StageRunner stage(cfg, "score");
    stage.require_input(paths::base_checkpoint(cfg));
    auto tasks = cfg.tasks();
    std::vector<std::vector<Sample>> sets;
    for (const auto& task : tasks) {
        std::string path = paths::dataset(cfg, task.id, Split::Score);
        stage.require_input(path);
        sets.push_back(read_dataset(path).samples);
    }

    Model model = load_checkpoint(paths::base_checkpoint(cfg));
    ScoreMatrix matrix = build_score_matrix(model, tasks, sets, cfg.scoring_kind);
    LayerRelevance rel = layer_relevance(matrix, model.config);
    SelectedLayers sel = select_layers(rel, cfg.k_vision, cfg.k_llm);

    write_score_matrix_csv(matrix, paths::score_matrix(cfg));
    write_layer_relevance_csv(rel, paths::layer_relevance(cfg));
    {
        nlohmann::json j = {{"vision", sel.vision},
                            {"llm", sel.llm},
                            {"k_vision", sel.k_vision},
                            {"k_llm", sel.k_llm}};
        std::ofstream out(paths::selected_layers(cfg), std::ios::binary);
        if (!out) throw IoError("cannot write selected layers");
        out << j.dump(2) << "\n";
    }
    stage.record_output(paths::score_matrix(cfg));
    stage.record_output(paths::layer_relevance(cfg));
    stage.record_output(paths::selected_layers(cfg));

    nlohmann::json extra = {{"neurons", static_cast<int>(matrix.neurons.size())},
                            {"t_m", matrix.t_m}};
    if (with_oracle) {
        // Spearman between awareness and exact-ablation |dL| over all units
        // of the most relevant language block, on the first task
        int block = sel.llm.front();
        double best = -1.0;
        for (int b : sel.llm) {
            double d = rel.find(Module::Language, b).d_hat;
            if (d > best) {
                best = d;
                block = b;
            }
        }
        auto [begin, end] = matrix.block_range(model.config, Module::Language, block);
        std::vector<double> phi(matrix.values[0].begin() + begin,
                                matrix.values[0].begin() + end);
        std::vector<double> abl;
        for (int u = 0; u < model.config.d_ffn; ++u)
            abl.push_back(std::fabs(
                exact_ablation(model, {Module::Language, block, u}, tasks[0], sets[0])));
        double rho = spearman_correlation(phi, abl);
        nlohmann::json j = {{"module", "language"},
                            {"block", block},
                            {"task", tasks[0].id},
                            {"spearman", rho}};
        {
            std::ofstream out(paths::oracle_report(cfg), std::ios::binary);
            if (!out) throw IoError("cannot write oracle report");
            out << j.dump(2) << "\n";
        }
        stage.record_output(paths::oracle_report(cfg));
        extra["oracle_spearman"] = rho;
    }
    return stage.finish(extra);
}

inline nlohmann::json partition(const RunConfig& cfg) {
    cfg.validate();
    StageRunner stage(cfg, "partition");
    stage.require_input(paths::score_matrix(cfg));
    stage.require_input(paths::selected_layers(cfg));

    ScoreMatrix matrix = read_score_matrix_csv(paths::score_matrix(cfg));
    SelectedLayers sel;
    {
        std::ifstream in(paths::selected_layers(cfg));
        nlohmann::json j;
        in >> j;
        sel.vision = j.at("vision").get<std::vector<int>>();
        sel.llm = j.at("llm").get<std::vector<int>>();
        sel.k_vision = j.at("k_vision").get<int>();
        sel.k_llm = j.at("k_llm").get<int>();
    }
    NeuronPartition part = build_partition(matrix, sel, cfg.epsilon, cfg.rho, cfg.model);
    write_partition_json(part, paths::partition(cfg));
    stage.record_output(paths::partition(cfg));

    int general = 0, specific = 0;
    for (const auto& l : part.layers) {
        general += static_cast<int>(l.general.size());
        for (const auto& [task, units] : l.specific) specific += static_cast<int>(units.size());
    }
    return stage.finish({{"general_units", general}, {"specific_units", specific}});
}

inline nlohmann::json finetune_stage(const RunConfig& cfg, FinetuneMode mode, int task_id) {
    cfg.validate();
    StageRunner stage(cfg, "finetune-" + paths::model_tag(mode, task_id));
    stage.require_input(paths::base_checkpoint(cfg));
    stage.require_input(paths::partition(cfg));
    std::string train_path = paths::dataset(cfg, task_id, Split::Train);
    stage.require_input(train_path);

    Model model = load_checkpoint(paths::base_checkpoint(cfg));
    Model base_copy = model;
    NeuronPartition part = read_partition_json(paths::partition(cfg));
    auto tasks = cfg.tasks();
    if (task_id < 0 || task_id >= static_cast<int>(tasks.size()))
        throw std::invalid_argument("unknown task id " + std::to_string(task_id));

    SelectedLayers sel; // reconstructed from the partition for mask building
    for (const auto& l : part.layers)
        (l.module == Module::Vision ? sel.vision : sel.llm).push_back(l.block);
    sel.k_vision = std::max<int>(1, static_cast<int>(sel.vision.size()));
    sel.k_llm = std::max<int>(1, static_cast<int>(sel.llm.size()));

    GradientMaskSet masks = ablation_mode_masks(mode, part, sel, task_id, model);
    DatasetFile train = read_dataset(train_path);

    FinetuneConfig fc;
    fc.mode = mode;
    fc.target_task = task_id;
    fc.lr = cfg.ft_lr;
    fc.steps = cfg.ft_steps;
    fc.batch = cfg.ft_batch;
    fc.seed = mix_seed(cfg.seed, cfg.ft_seed);
    TrainLog log = finetune(model, train.samples, tasks[task_id], fc, masks);

    // frozen-bytes audit: every masked-0 element must be bit-identical
    for (const auto& [name, tensor] : model.params) {
        const Tensor& before = base_copy.params.at(name);
        const Tensor& mask = masks.masks.at(name);
        for (size_t i = 0; i < tensor.data.size(); ++i)
            if (mask.data[i] == 0.0f &&
                std::memcmp(&tensor.data[i], &before.data[i], sizeof(float)) != 0)
                throw std::logic_error("frozen parameter changed: " + name);
    }

    save_checkpoint(model, paths::ft_checkpoint(cfg, mode, task_id));
    write_maskset(masks, paths::ft_masks(cfg, mode, task_id));
    write_trainlog_csv(log, paths::ft_trainlog(cfg, mode, task_id));
    stage.record_output(paths::ft_checkpoint(cfg, mode, task_id));
    stage.record_output(paths::ft_masks(cfg, mode, task_id));
    stage.record_output(paths::ft_trainlog(cfg, mode, task_id));
    return stage.finish({{"mode", finetune_mode_name(mode)},
                         {"task", task_id},
                         {"trainable", count_mask_ones(masks)},
                         {"final_loss", log.steps.back().loss}});
}

inline std::vector<std::string> list_ft_checkpoints(const RunConfig& cfg) {
    std::vector<std::string> out;
    if (!std::filesystem::exists(cfg.out_dir)) return out;
    for (const auto& entry : std::filesystem::directory_iterator(cfg.out_dir)) {
        std::string name = entry.path().filename().string();
        if (name.rfind("model_", 0) == 0 && entry.path().extension() == ".ckpt")
            out.push_back(entry.path().string());
    }
    std::sort(out.begin(), out.end());
    return out;
}

// model_<mode>_task<t>.ckpt -> (mode, task)
inline std::pair<FinetuneMode, int> parse_ft_checkpoint_name(const std::string& path) {
    std::string name = std::filesystem::path(path).stem().string();
    if (name.rfind("model_", 0) != 0) throw std::invalid_argument("not a model checkpoint: " + path);
    std::string rest = name.substr(6);
    auto pos = rest.rfind("_task");
    if (pos == std::string::npos) throw std::invalid_argument("bad checkpoint name: " + path);
    return {finetune_mode_from_name(rest.substr(0, pos)), std::stoi(rest.substr(pos + 5))};
}

inline nlohmann::json eval(const RunConfig& cfg) {
    cfg.validate();
    StageRunner stage(cfg, "eval");
    stage.require_input(paths::base_checkpoint(cfg));
    auto tasks = cfg.tasks();
    std::vector<std::vector<Sample>> eval_sets;
    for (const auto& task : tasks) {
        std::string path = paths::dataset(cfg, task.id, Split::Eval);
        stage.require_input(path);
        eval_sets.push_back(read_dataset(path).samples);
    }
    auto ft_paths = list_ft_checkpoints(cfg);
    for (const auto& p : ft_paths) stage.require_input(p);

    Model base = load_checkpoint(paths::base_checkpoint(cfg));
    nlohmann::json results = nlohmann::json::array();
    auto add_results = [&](const Model& model, const std::string& tag) {
        std::vector<double> bleus;
        for (size_t t = 0; t < tasks.size(); ++t) {
            EvalResult r = evaluate_model(model, tasks[t], eval_sets[t], tag);
            results.push_back({{"task", r.task_id},
                               {"model", r.model_tag},
                               {"bleu", r.bleu},
                               {"token_accuracy", r.token_acc},
                               {"exact_match", r.exact},
                               {"samples", r.sample_count}});
            bleus.push_back(r.bleu);
        }
        return bleus;
    };

    auto base_bleus = add_results(base, "base");
    nlohmann::json forgetting = nlohmann::json::array();
    for (const auto& p : ft_paths) {
        auto [mode, target] = parse_ft_checkpoint_name(p);
        Model model = load_checkpoint(p);
        std::string tag = paths::model_tag(mode, target);
        auto bleus = add_results(model, tag);
        nlohmann::json entries = nlohmann::json::array();
        for (size_t t = 0; t < tasks.size(); ++t)
            entries.push_back({{"task", tasks[t].id},
                               {"before", base_bleus[t]},
                               {"after", bleus[t]},
                               {"delta", bleus[t] - base_bleus[t]}});
        forgetting.push_back({{"model", tag},
                              {"mode", finetune_mode_name(mode)},
                              {"target_task", target},
                              {"entries", entries}});
    }

    nlohmann::json report = {{"results", results}, {"forgetting", forgetting}};
    {
        std::ofstream out(paths::eval_report(cfg), std::ios::binary);
        if (!out) throw IoError("cannot write eval report");
        out << report.dump(2) << "\n";
    }
    stage.record_output(paths::eval_report(cfg));
    return stage.finish({{"models", static_cast<int>(ft_paths.size()) + 1}});
}

inline nlohmann::json report(const RunConfig& cfg) {
    cfg.validate();
    StageRunner stage(cfg, "report");
    stage.require_input(paths::base_checkpoint(cfg));
    stage.require_input(paths::partition(cfg));
    auto tasks = cfg.tasks();
    std::vector<std::vector<Sample>> sets;
    for (const auto& task : tasks) {
        std::string path = paths::dataset(cfg, task.id, Split::Score);
        stage.require_input(path);
        sets.push_back(read_dataset(path).samples);
    }

    Model model = load_checkpoint(paths::base_checkpoint(cfg));
    NeuronPartition part = read_partition_json(paths::partition(cfg));

    ProfileTable table = activation_profiles(model, tasks, sets);
    std::string profiles_csv = cfg.out_dir + "/profiles.csv";
    emit_csv(table, profiles_csv);
    stage.record_output(profiles_csv);
    for (Module module : {Module::Vision, Module::Language}) {
        for (bool deltas : {false, true}) {
            std::string path = cfg.out_dir + "/profile_" + module_name(module) + "_" +
                               (deltas ? "delta" : "mean") + ".svg";
            std::string title = std::string(module_name(module)) +
                                (deltas ? " delta average activation" : " average activation");
            emit_svg(table, module, deltas, title, path);
            stage.record_output(path);
        }
    }

    int projections = 0;
    for (Module module : {Module::Vision, Module::Language}) {
        for (NeuronGroup group : {NeuronGroup::General, NeuronGroup::Specific}) {
            std::string tag =
                std::string(module_name(module)) + "_" + neuron_group_name(group);
            try {
                Projection2D proj = neuron_projection(model, part, tasks, sets, group, module);
                emit_csv(proj, cfg.out_dir + "/projection_" + tag + ".csv");
                emit_svg(proj, tag + " neuron clusters",
                         cfg.out_dir + "/projection_" + tag + ".svg");
                stage.record_output(cfg.out_dir + "/projection_" + tag + ".csv");
                stage.record_output(cfg.out_dir + "/projection_" + tag + ".svg");
                ++projections;
            } catch (const std::invalid_argument&) {
                // a module without selected layers or with an empty group has
                // no projection to plot
            }
        }
    }
    return stage.finish({{"projections", projections}});
}

} // namespace stages

} // namespace mnaft
