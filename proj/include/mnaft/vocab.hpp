#pragma once

// Token id layout shared by the task generator and the model.
//
//   [0, 120)    surface tokens (the global surface vocabulary)
//   120         BOS
//   121         EOS
//   122         OCR probe instruction
//   123         TRANSLATE instruction
//   [124, 134)  LANG_0 .. LANG_9

namespace mnaft {

constexpr int kSurfaceVocab = 120;
constexpr int kBosId = 120;
constexpr int kEosId = 121;
constexpr int kOcrId = 122;
constexpr int kTranslateId = 123;
constexpr int kLangBaseId = 124;
constexpr int kMaxLanguages = 10;
constexpr int kVocabSize = kLangBaseId + kMaxLanguages; // 134

constexpr int lang_token(int language_id) { return kLangBaseId + language_id; }

} // namespace mnaft
