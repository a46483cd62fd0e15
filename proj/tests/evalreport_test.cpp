#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mnaft/evalreport.hpp"

using namespace mnaft;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.d_ffn = 8;
    cfg.vision_blocks = 2;
    cfg.language_blocks = 2;
    return cfg;
}

std::vector<TaskSpec> three_tasks(uint64_t seed) {
    auto langs = make_languages(3, seed);
    std::vector<TaskSpec> tasks;
    for (int i = 0; i < 3; ++i) tasks.emplace_back(i, langs[i], langs[(i + 1) % 3]);
    return tasks;
}

} // namespace

TEST(CorpusBleu, PerfectMatchIsOne) {
    std::vector<std::vector<int>> corpus{{1, 2, 3}, {4, 5, 6, 7, 8}, {9, 9, 9}};
    EXPECT_NEAR(corpus_bleu(corpus, corpus), 1.0, 1e-12);
    // all-short corpus: 4-gram order has no candidates anywhere, still 1.0
    std::vector<std::vector<int>> shorts{{1, 2, 3}, {4, 5, 6}};
    EXPECT_NEAR(corpus_bleu(shorts, shorts), 1.0, 1e-12);
}

TEST(CorpusBleu, AllEmptyCandidatesIsZero) {
    std::vector<std::vector<int>> cands{{}, {}};
    std::vector<std::vector<int>> refs{{1, 2, 3}, {4, 5}};
    EXPECT_EQ(corpus_bleu(cands, refs), 0.0);
}

TEST(CorpusBleu, ZeroTrigramPrecisionIsZero) {
    // candidate "a b c" vs reference "a b d": p1 = 2/3, p2 = 1/2, p3 = 0
    std::vector<std::vector<int>> cands{{1, 2, 3}};
    std::vector<std::vector<int>> refs{{1, 2, 4}};
    EXPECT_EQ(corpus_bleu(cands, refs), 0.0);
}

TEST(CorpusBleu, HandComputedPrecisions) {
    // p1 = 4/5, p2 = 3/4, p3 = 2/3, p4 = 1/2, BP = 1
    std::vector<std::vector<int>> cands{{1, 2, 3, 4, 5}};
    std::vector<std::vector<int>> refs{{1, 2, 3, 4, 6}};
    double expected = std::pow((4.0 / 5.0) * (3.0 / 4.0) * (2.0 / 3.0) * (1.0 / 2.0), 0.25);
    EXPECT_NEAR(corpus_bleu(cands, refs), expected, 1e-12);
}

TEST(CorpusBleu, BrevityPenaltyAndShortOrders) {
    // candidate shorter than reference: its single bigram matches, trigram
    // and 4-gram orders have no candidates, so only the penalty bites
    std::vector<std::vector<int>> cands{{1, 2}};
    std::vector<std::vector<int>> refs{{1, 2, 3}};
    EXPECT_NEAR(corpus_bleu(cands, refs), std::exp(1.0 - 3.0 / 2.0), 1e-12);

    // full precisions with a length-4/3 ratio
    std::vector<std::vector<int>> c2{{1, 2, 3}};
    std::vector<std::vector<int>> r2{{1, 2, 3, 4}};
    EXPECT_NEAR(corpus_bleu(c2, r2), std::exp(1.0 - 4.0 / 3.0), 1e-12);
}

TEST(CorpusBleu, PermutationInvariant) {
    std::vector<std::vector<int>> cands{{1, 2, 3, 4}, {5, 6}, {7, 8, 9, 1, 2}};
    std::vector<std::vector<int>> refs{{1, 2, 3, 5}, {5, 6, 7}, {7, 8, 9, 1, 3}};
    double a = corpus_bleu(cands, refs);
    std::vector<std::vector<int>> cands2{cands[2], cands[0], cands[1]};
    std::vector<std::vector<int>> refs2{refs[2], refs[0], refs[1]};
    EXPECT_DOUBLE_EQ(a, corpus_bleu(cands2, refs2));
}

TEST(CorpusBleu, InputValidation) {
    std::vector<std::vector<int>> one{{1}};
    std::vector<std::vector<int>> two{{1}, {2}};
    EXPECT_THROW(corpus_bleu(one, two), std::invalid_argument);
    std::vector<std::vector<int>> empty_ref{{}};
    EXPECT_THROW(corpus_bleu(one, empty_ref), std::invalid_argument);
}

TEST(TokenAccuracy, KnownValues) {
    std::vector<std::vector<int>> refs{{1, 2, 3, 4}, {5, 6}};
    EXPECT_DOUBLE_EQ(token_accuracy(refs, refs), 1.0);
    std::vector<std::vector<int>> disjoint{{9, 9, 9, 9}, {9, 9}};
    EXPECT_DOUBLE_EQ(token_accuracy(disjoint, refs), 0.0);
    std::vector<std::vector<int>> halves{{1, 2}, {5}};
    EXPECT_DOUBLE_EQ(token_accuracy(halves, refs), 0.5);
}

TEST(ExactMatch, CountsWholeSequences) {
    std::vector<std::vector<int>> refs{{1, 2}, {3}, {4, 5}};
    std::vector<std::vector<int>> cands{{1, 2}, {9}, {4, 5}};
    EXPECT_NEAR(exact_match(cands, refs), 2.0 / 3.0, 1e-12);
}

TEST(Forgetting, IdenticalModelsGiveZeroDeltas) {
    ModelConfig cfg = tiny_config();
    Model model = init_model(cfg, 3);
    auto tasks = three_tasks(5);
    std::vector<std::vector<Sample>> sets;
    for (const auto& t : tasks) sets.push_back(sample_dataset(t, 4, 7, Split::Eval));
    ForgettingReport rep = forgetting_report(model, model, tasks, 0, sets);
    ASSERT_EQ(rep.entries.size(), 3u);
    for (const auto& e : rep.entries) {
        EXPECT_EQ(e.delta, 0.0);
        EXPECT_EQ(e.before, e.after);
    }
    EXPECT_EQ(rep.mean_non_target_delta(), 0.0);
}

TEST(Profiles, ZeroModelGivesZeroMeansAndDeltas) {
    ModelConfig cfg = tiny_config();
    Model model = init_model(cfg, 11);
    scale_parameters(model, 0.0f);
    auto tasks = three_tasks(13);
    std::vector<std::vector<Sample>> sets;
    for (const auto& t : tasks) sets.push_back(sample_dataset(t, 2, 17, Split::Score));
    ProfileTable table = activation_profiles(model, tasks, sets);
    ASSERT_EQ(table.means.size(), 3u * 4u); // 3 tasks x 4 blocks
    ASSERT_EQ(table.deltas.size(), 3u * 2u);
    for (const auto& r : table.means) EXPECT_EQ(r.value, 0.0);
    for (const auto& r : table.deltas) EXPECT_EQ(r.value, 0.0);
}

TEST(Profiles, DeltasTelescope) {
    ModelConfig cfg = tiny_config();
    Model model = init_model(cfg, 19);
    auto tasks = three_tasks(23);
    std::vector<std::vector<Sample>> sets;
    for (const auto& t : tasks) sets.push_back(sample_dataset(t, 3, 29, Split::Score));
    ProfileTable table = activation_profiles(model, tasks, sets);
    for (Module module : {Module::Vision, Module::Language}) {
        for (const auto& task : tasks) {
            double first = 0.0, last = 0.0, delta_sum = 0.0;
            for (const auto& r : table.means)
                if (r.module == module && r.task_id == task.id) {
                    if (r.block == 0) first = r.value;
                    if (r.block == 1) last = r.value;
                }
            for (const auto& r : table.deltas)
                if (r.module == module && r.task_id == task.id) delta_sum += r.value;
            EXPECT_EQ(delta_sum, last - first);
        }
    }
}

TEST(Pca, IdenticalSamplesCollapseToOrigin) {
    std::vector<std::vector<double>> features(6, {1.0, 2.0, 3.0});
    std::vector<int> labels(6, 0);
    Projection2D p = pca_2d(features, labels);
    for (const auto& pt : p.points) {
        EXPECT_NEAR(pt.x, 0.0, 1e-12);
        EXPECT_NEAR(pt.y, 0.0, 1e-12);
    }
}

TEST(Pca, OrthonormalDirections) {
    Rng rng(31);
    std::vector<std::vector<double>> features;
    std::vector<int> labels;
    for (int i = 0; i < 40; ++i) {
        std::vector<double> row;
        for (int j = 0; j < 5; ++j) row.push_back(rng.next_double() * (j + 1));
        features.push_back(row);
        labels.push_back(i % 3);
    }
    Projection2D p = pca_2d(features, labels);
    double d00 = 0, d11 = 0, d01 = 0;
    for (size_t j = 0; j < 5; ++j) {
        d00 += p.directions[0][j] * p.directions[0][j];
        d11 += p.directions[1][j] * p.directions[1][j];
        d01 += p.directions[0][j] * p.directions[1][j];
    }
    EXPECT_NEAR(d00, 1.0, 1e-9);
    EXPECT_NEAR(d11, 1.0, 1e-9);
    EXPECT_NEAR(d01, 0.0, 1e-9);
}

TEST(Pca, VarianceMatchesBruteForceCovariance) {
    Rng rng(37);
    size_t n = 50, d = 6;
    std::vector<std::vector<double>> features;
    std::vector<int> labels;
    for (size_t i = 0; i < n; ++i) {
        std::vector<double> row;
        for (size_t j = 0; j < d; ++j) row.push_back(rng.next_double() * (1.0 + (j % 2) * 4.0));
        features.push_back(row);
        labels.push_back(0);
    }
    Projection2D p = pca_2d(features, labels);

    // brute-force covariance trace
    std::vector<double> mean(d, 0.0);
    for (const auto& row : features)
        for (size_t j = 0; j < d; ++j) mean[j] += row[j] / n;
    double trace = 0.0;
    for (size_t j = 0; j < d; ++j) {
        double var = 0.0;
        for (const auto& row : features) var += (row[j] - mean[j]) * (row[j] - mean[j]);
        trace += var / n;
    }

    double eig_total = 0.0;
    for (double v : p.eigenvalues) eig_total += v;
    EXPECT_NEAR(eig_total, trace, 1e-6 * trace);

    double var_x = 0.0, var_y = 0.0;
    for (const auto& pt : p.points) {
        var_x += pt.x * pt.x / n;
        var_y += pt.y * pt.y / n;
    }
    EXPECT_NEAR(var_x + var_y, p.eigenvalues[0] + p.eigenvalues[1],
                1e-6 * (p.eigenvalues[0] + p.eigenvalues[1]));
}

TEST(Pca, TranslationInvariant) {
    Rng rng(41);
    std::vector<std::vector<double>> features;
    std::vector<int> labels;
    for (int i = 0; i < 20; ++i) {
        features.push_back({rng.next_double(), rng.next_double(), rng.next_double()});
        labels.push_back(0);
    }
    Projection2D a = pca_2d(features, labels);
    for (auto& row : features) {
        row[0] += 100.0;
        row[1] -= 42.0;
        row[2] += 7.0;
    }
    Projection2D b = pca_2d(features, labels);
    for (size_t i = 0; i < a.points.size(); ++i) {
        EXPECT_NEAR(a.points[i].x, b.points[i].x, 1e-7);
        EXPECT_NEAR(a.points[i].y, b.points[i].y, 1e-7);
    }
}

TEST(Pca, IdempotentInTwoDimensions) {
    Rng rng(43);
    std::vector<std::vector<double>> features;
    std::vector<int> labels;
    for (int i = 0; i < 30; ++i) {
        features.push_back({rng.next_double() * 3, rng.next_double(), rng.next_double() * 0.1});
        labels.push_back(0);
    }
    Projection2D first = pca_2d(features, labels);
    std::vector<std::vector<double>> coords;
    for (const auto& pt : first.points) coords.push_back({pt.x, pt.y});
    Projection2D second = pca_2d(coords, labels);
    for (size_t i = 0; i < coords.size(); ++i) {
        EXPECT_NEAR(second.points[i].x, first.points[i].x, 1e-9);
        EXPECT_NEAR(second.points[i].y, first.points[i].y, 1e-9);
    }
}

TEST(NeuronProjection, PointsPerSampleAndEmptyGroupError) {
    ModelConfig cfg = tiny_config();
    Model model = init_model(cfg, 47);
    auto tasks = three_tasks(53);
    std::vector<std::vector<Sample>> sets;
    for (const auto& t : tasks) sets.push_back(sample_dataset(t, 3, 59, Split::Score));

    NeuronPartition part;
    part.epsilon = 0.5;
    NeuronPartition::Layer layer;
    layer.module = Module::Language;
    layer.block = 1;
    layer.general = {0, 1, 2};
    layer.specific[0] = {3, 4};
    layer.specific[1] = {5};
    layer.specific[2] = {};
    part.layers.push_back(layer);

    Projection2D p = neuron_projection(model, part, tasks, sets, NeuronGroup::General,
                                       Module::Language);
    EXPECT_EQ(p.points.size(), 9u);
    int label_changes = 0;
    for (size_t i = 1; i < p.points.size(); ++i)
        if (p.points[i].task_id != p.points[i - 1].task_id) ++label_changes;
    EXPECT_EQ(label_changes, 2);

    NeuronPartition empty;
    NeuronPartition::Layer bare;
    bare.module = Module::Language;
    bare.block = 0;
    empty.layers.push_back(bare);
    EXPECT_THROW(
        neuron_projection(model, empty, tasks, sets, NeuronGroup::General, Module::Language),
        std::invalid_argument);
    EXPECT_THROW(
        neuron_projection(model, part, tasks, sets, NeuronGroup::General, Module::Vision),
        std::invalid_argument);
}

TEST(Svg, DeterministicAndValidWhenEmpty) {
    ProfileTable table;
    std::string empty_svg = render_profile_svg(table, Module::Vision, false, "profiles");
    EXPECT_NE(empty_svg.find("<svg"), std::string::npos);
    EXPECT_NE(empty_svg.find("<line"), std::string::npos); // axes only
    EXPECT_EQ(empty_svg, render_profile_svg(table, Module::Vision, false, "profiles"));

    table.means = {{Module::Vision, 0, 0, 1.5}, {Module::Vision, 1, 0, 0.5},
                   {Module::Vision, 0, 1, 1.0}, {Module::Vision, 1, 1, 2.0}};
    std::string a = render_profile_svg(table, Module::Vision, false, "profiles");
    std::string b = render_profile_svg(table, Module::Vision, false, "profiles");
    EXPECT_EQ(a, b);
    EXPECT_NE(a.find("<rect"), std::string::npos);

    Projection2D proj;
    proj.points = {{0.5, 1.0, 0}, {-0.5, -1.0, 1}};
    EXPECT_EQ(render_scatter_svg(proj, "clusters"), render_scatter_svg(proj, "clusters"));
}

TEST(Csv, ProjectionRoundTripsAt17Digits) {
    Projection2D proj;
    proj.points = {{1.0 / 3.0, -2.0 / 7.0, 0}, {1e-17, 123456.789012345678, 2}};
    std::string path = (std::filesystem::temp_directory_path() / "mnaft_proj.csv").string();
    emit_csv(proj, path);

    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "x,y,task");
    size_t i = 0;
    while (std::getline(in, line)) {
        auto c1 = line.find(',');
        auto c2 = line.find(',', c1 + 1);
        EXPECT_EQ(std::stod(line.substr(0, c1)), proj.points[i].x);
        EXPECT_EQ(std::stod(line.substr(c1 + 1, c2 - c1 - 1)), proj.points[i].y);
        EXPECT_EQ(std::stoi(line.substr(c2 + 1)), proj.points[i].task_id);
        ++i;
    }
    EXPECT_EQ(i, proj.points.size());
    std::remove(path.c_str());
}
