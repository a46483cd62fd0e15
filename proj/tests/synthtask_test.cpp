#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <set>

#include "mnaft/synthtask.hpp"

using namespace mnaft;

namespace {

TaskSpec default_task(uint64_t seed = 5) {
    auto langs = make_languages(3, seed);
    return TaskSpec(0, langs[0], langs[1]);
}

} // namespace

TEST(MakeLanguages, DeterministicAndDisjoint) {
    auto a = make_languages(3, 42);
    auto b = make_languages(3, 42);
    ASSERT_EQ(a.size(), 3u);
    for (int i = 0; i < 3; ++i) {
        EXPECT_EQ(a[i].concept_to_surface, b[i].concept_to_surface);
        EXPECT_EQ(a[i].rule, b[i].rule);
    }
    std::set<int> seen;
    for (const auto& lang : a)
        for (int s : lang.concept_to_surface) EXPECT_TRUE(seen.insert(s).second) << s;
    EXPECT_EQ(seen.size(), 120u);
}

TEST(MakeLanguages, RoundRobinOrderRules) {
    auto langs = make_languages(3, 1);
    EXPECT_EQ(langs[0].rule, OrderRule::Identity);
    EXPECT_EQ(langs[1].rule, OrderRule::Reverse);
    EXPECT_EQ(langs[2].rule, OrderRule::SwapAdjacent);
}

TEST(MakeLanguages, RejectsTooMany) {
    EXPECT_THROW(make_languages(4, 0), std::invalid_argument);
    EXPECT_THROW(make_languages(1, 0), std::invalid_argument);
}

TEST(TokenDisplay, InjectiveThreeChars) {
    std::set<std::string> seen;
    for (int id = 0; id < kSurfaceVocab; ++id) {
        std::string d = token_display(id);
        ASSERT_EQ(d.size(), 3u);
        EXPECT_TRUE(seen.insert(d).second) << d;
    }
}

TEST(OrderRules, PermutationsForEveryLength) {
    for (int len = 0; len <= 9; ++len) {
        std::vector<int> seq;
        for (int i = 0; i < len; ++i) seq.push_back(i * 10);
        for (OrderRule r : {OrderRule::Identity, OrderRule::Reverse, OrderRule::SwapAdjacent}) {
            auto out = apply_order_rule(r, seq);
            auto sorted_in = seq, sorted_out = out;
            std::sort(sorted_in.begin(), sorted_in.end());
            std::sort(sorted_out.begin(), sorted_out.end());
            EXPECT_EQ(sorted_in, sorted_out);
        }
    }
    EXPECT_EQ(apply_order_rule(OrderRule::Reverse, {1, 2, 3}), (std::vector<int>{3, 2, 1}));
    EXPECT_EQ(apply_order_rule(OrderRule::SwapAdjacent, {1, 2, 3, 4, 5}),
              (std::vector<int>{2, 1, 4, 3, 5}));
}

TEST(RenderText, EmptyGivesBackgroundPatch) {
    PixelGrid g = render_text({}, FontTable::standard());
    EXPECT_EQ(g.height, 7);
    EXPECT_EQ(g.width, 6);
    for (uint8_t p : g.pixels) EXPECT_EQ(p, 0);
}

TEST(RenderText, WidthFollowsLayout) {
    // m tokens of 3 glyphs each: 17 ink columns per token, 3 blank columns
    // between tokens, right-padded to a multiple of patch_cols
    for (int m = 1; m <= 8; ++m) {
        std::vector<int> tokens(m, 7);
        PixelGrid g = render_text(tokens, FontTable::standard());
        int expected = 20 * m - 3;
        int padded = ((expected + 5) / 6) * 6;
        EXPECT_EQ(g.width, padded) << m << " tokens";
        // columns beyond the layout width are padding
        for (int r = 0; r < g.height; ++r)
            for (int c = expected; c < padded; ++c) EXPECT_EQ(g.at(r, c), 0);
    }
}

TEST(RenderText, GoldenSnapshotTokenZero) {
    PixelGrid g = render_text({0}, FontTable::standard());
    EXPECT_EQ(grid_hash(g), 0x4eb68af0670953bbULL);
}

TEST(RenderText, InjectiveOnSampledSentences) {
    TaskSpec task = default_task();
    auto samples = sample_dataset(task, 1000, 99, Split::Train);
    std::set<uint64_t> hashes;
    std::set<std::vector<int>> sentences;
    for (const auto& s : samples) {
        if (sentences.insert(s.source_tokens).second) {
            EXPECT_TRUE(hashes.insert(grid_hash(s.image)).second);
        }
    }
}

TEST(Font, RejectsUnsupportedCharacter) {
    EXPECT_THROW(FontTable::standard().pixel('a', 0, 0), std::invalid_argument);
    EXPECT_THROW(token_display(kSurfaceVocab), std::invalid_argument);
}

TEST(Font, ContentHashStable) {
    EXPECT_EQ(FontTable::standard().content_hash(), FontTable::standard().content_hash());
}

TEST(SampleDataset, RoundTripInvariant) {
    TaskSpec task = default_task();
    auto samples = sample_dataset(task, 200, 7, Split::Train);
    for (const auto& s : samples) {
        ASSERT_GE(s.source_tokens.size(), 3u);
        ASSERT_LE(s.source_tokens.size(), 8u);
        std::vector<int> concepts;
        for (int surf : s.source_tokens) concepts.push_back(task.source.surface_to_concept(surf));
        std::vector<int> mapped;
        for (int c : concepts) mapped.push_back(task.target.concept_to_surface[c]);
        EXPECT_EQ(apply_order_rule(task.target.rule, mapped), s.target_tokens);
        EXPECT_EQ(grid_hash(render_text(s.source_tokens, FontTable::standard())),
                  grid_hash(s.image));
    }
}

TEST(SampleDataset, IdentityPairIsRelabeling) {
    auto langs = make_languages(3, 11);
    LanguageSpec src = langs[0];
    LanguageSpec tgt = langs[2];
    tgt.rule = OrderRule::Identity; // force identity<->identity
    TaskSpec task(1, src, tgt);
    auto samples = sample_dataset(task, 50, 3, Split::Train);
    for (const auto& s : samples) {
        ASSERT_EQ(s.source_tokens.size(), s.target_tokens.size());
        for (size_t i = 0; i < s.source_tokens.size(); ++i) {
            int c = src.surface_to_concept(s.source_tokens[i]);
            EXPECT_EQ(s.target_tokens[i], tgt.concept_to_surface[c]);
        }
    }
}

TEST(SampleDataset, ReverseRuleReversesConceptOrder) {
    auto langs = make_languages(3, 13);
    TaskSpec task(0, langs[0], langs[1]); // target rule = reverse
    ASSERT_EQ(task.target.rule, OrderRule::Reverse);
    auto samples = sample_dataset(task, 20, 5, Split::Train);
    for (const auto& s : samples) {
        std::vector<int> concepts_src, concepts_tgt;
        for (int surf : s.source_tokens) concepts_src.push_back(task.source.surface_to_concept(surf));
        for (int surf : s.target_tokens) concepts_tgt.push_back(task.target.surface_to_concept(surf));
        std::reverse(concepts_tgt.begin(), concepts_tgt.end());
        EXPECT_EQ(concepts_src, concepts_tgt);
    }
}

TEST(SampleDataset, FullyDeterministic) {
    TaskSpec task = default_task();
    auto a = sample_dataset(task, 64, 21, Split::Eval);
    auto b = sample_dataset(task, 64, 21, Split::Eval);
    ASSERT_EQ(a.size(), b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].source_tokens, b[i].source_tokens);
        EXPECT_EQ(a[i].target_tokens, b[i].target_tokens);
        EXPECT_EQ(a[i].image.pixels, b[i].image.pixels);
    }
}

TEST(SampleDataset, SplitsDisjointStreams) {
    TaskSpec task = default_task();
    auto train = sample_dataset(task, 32, 21, Split::Train);
    auto eval = sample_dataset(task, 32, 21, Split::Eval);
    int identical = 0;
    for (size_t i = 0; i < 32; ++i)
        if (train[i].source_tokens == eval[i].source_tokens) ++identical;
    EXPECT_LT(identical, 32);
}

TEST(InstructionTokens, StatedForms) {
    auto langs = make_languages(3, 17);
    TaskSpec t01(0, langs[0], langs[1]);
    TaskSpec t12(1, langs[1], langs[2]);
    auto tr = instruction_tokens(t01, ProbeKind::Translate);
    ASSERT_EQ(tr.size(), 3u);
    EXPECT_EQ(tr[0], kTranslateId);
    EXPECT_EQ(tr[1], lang_token(0));
    EXPECT_EQ(tr[2], lang_token(1));
    auto ocr1 = instruction_tokens(t01, ProbeKind::OcrProbe);
    auto ocr2 = instruction_tokens(t12, ProbeKind::OcrProbe);
    EXPECT_EQ(ocr1, ocr2);
    EXPECT_EQ(ocr1.size(), 1u);
    EXPECT_EQ(ocr1[0], kOcrId);
}

TEST(DatasetFiles, RoundTrip) {
    TaskSpec task = default_task();
    auto samples = sample_dataset(task, 40, 31, Split::Score);
    std::string path =
        (std::filesystem::temp_directory_path() / "mnaft_dataset_roundtrip.txt").string();
    write_dataset(path, task.id, Split::Score, samples);
    DatasetFile file = read_dataset(path);
    EXPECT_EQ(file.task_id, task.id);
    EXPECT_EQ(file.split, Split::Score);
    ASSERT_EQ(file.samples.size(), samples.size());
    for (size_t i = 0; i < samples.size(); ++i) {
        EXPECT_EQ(file.samples[i].source_tokens, samples[i].source_tokens);
        EXPECT_EQ(file.samples[i].target_tokens, samples[i].target_tokens);
        EXPECT_EQ(file.samples[i].image.pixels, samples[i].image.pixels);
        EXPECT_EQ(file.samples[i].image.width, samples[i].image.width);
    }
    std::remove(path.c_str());
}

TEST(DatasetFiles, GridRleRejectsBadEncodings) {
    EXPECT_THROW(decode_grid_rle("7:3"), IoError);
    EXPECT_THROW(decode_grid_rle("7x6:5"), IoError); // does not cover 42 pixels
}
