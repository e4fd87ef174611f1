#pragma once

// Shared builders for unit and acceptance tests.

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "pbl/features.hpp"
#include "pbl/gamedata.hpp"
#include "pbl/listener.hpp"
#include "pbl/pipeline.hpp"
#include "pbl/synthetic.hpp"
#include "pbl/textalign.hpp"

namespace fixtures {

inline pbl::ImageRef image(const std::string& id, const pbl::Theme& theme = {"dog", "car"}) {
  return {id, theme, "images/" + id + ".ppm"};
}

// A and B share images s1..s3; A holds a4..a6, B holds b4..b6. A's targets
// are 1 (s1), 4 (a4) and 5 (a5); B's are 2 (s1), 3 (s2) and 4 (b5).
inline pbl::GameRound two_player_round(const std::string& game = "g1", int round_index = 1) {
  pbl::GameRound r;
  r.game_id = game;
  r.round_index = round_index;
  r.players[0].player_id = "A";
  r.players[1].player_id = "B";
  r.players[0].images = {image("s1"), image("s2"), image("s3"), image("a4"), image("a5"), image("a6")};
  r.players[1].images = {image("b4"), image("s1"), image("s2"), image("b5"), image("s3"), image("b6")};
  r.players[0].targets = {1, 4, 5};
  r.players[1].targets = {2, 3, 4};
  r.utterances = {{"A", "do you have the dog on a bed"},
                  {"B", "yes i do"},
                  {"B", "do you have the red car"},
                  {"A", "no"}};
  r.marks = {{"A", 1, pbl::Mark::common, 2},
             {"B", 2, pbl::Mark::common, 4},
             {"A", 4, pbl::Mark::different, 4},
             {"A", 5, pbl::Mark::different, 4},
             {"B", 3, pbl::Mark::common, 4},
             {"B", 4, pbl::Mark::different, 4}};
  return r;
}

inline pbl::ModelConfig tiny_config(int vocab, int image_dim, pbl::Variant variant = pbl::Variant::injection_only,
                                    std::uint64_t seed = 1) {
  pbl::ModelConfig c = pbl::ModelConfig::desk_scale(vocab);
  c.backbone.ffn_size = 32;
  c.image_dim = image_dim;
  c.variant = variant;
  c.seed = seed;
  c.backbone.seed = seed;
  return c;
}

inline pbl::RelevanceMatrix random_relevance(int rows, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 2.5);
  pbl::RelevanceMatrix m;
  for (int k = 0; k < rows; ++k) {
    pbl::RelevanceRow row;
    for (auto& v : row) v = u(rng);
    m.rows.push_back(row);
  }
  return m;
}

inline pbl::VisualContext random_visual(int dim, std::mt19937_64& rng, bool patches = false) {
  std::normal_distribution<double> n(0.0, 1.0);
  pbl::VisualContext v;
  pbl::PatchFeatureSet grids;
  for (std::size_t i = 0; i < pbl::kImagesPerPlayer; ++i) {
    grids[i] = Eigen::MatrixXd::NullaryExpr(pbl::kPatchCount, dim, [&] { return n(rng); });
    v.pooled[i] = pbl::mean_pool(grids[i]);
  }
  if (patches) v.patches = grids;
  return v;
}

inline const std::vector<std::string>& word_pool() {
  static const std::vector<std::string> kWords = {"the", "red", "one", "do", "you", "have", "a", "dog",
                                                  "yes", "no", "car", "blue", "man", "with", "hat", "ok"};
  return kWords;
}

inline std::string random_text(std::mt19937_64& rng, int min_words = 1, int max_words = 6) {
  const int n = min_words + static_cast<int>(rng() % static_cast<std::uint64_t>(max_words - min_words + 1));
  std::string s;
  for (int i = 0; i < n; ++i) {
    if (i) s += ' ';
    s += word_pool()[rng() % word_pool().size()];
  }
  return s;
}

inline pbl::TokenizedDialogue random_dialogue(int utterances, const pbl::Tokenizer& tok, std::mt19937_64& rng) {
  pbl::TokenizedDialogue d;
  for (int k = 0; k < utterances; ++k) pbl::append_utterance(d, rng() % 2 == 0, random_text(rng), tok);
  return d;
}

// Synthetic corpus with an in-memory image store and a ready pipeline.
struct DeskData {
  pbl::SyntheticCorpus corpus;
  pbl::SpawnResult spawned;
  std::shared_ptr<pbl::FeaturePipeline> pipeline;
};

inline DeskData desk_data(const pbl::SyntheticConfig& config, int image_dim = 32) {
  DeskData d;
  d.corpus = pbl::make_synthetic_corpus(config);
  d.spawned = pbl::spawn_instances(d.corpus.rounds);
  auto store = std::make_shared<pbl::MemoryImageStore>();
  for (const auto& img : d.corpus.image_list) store->add(img);
  d.pipeline = std::make_shared<pbl::FeaturePipeline>(
      std::make_shared<pbl::HashingTokenizer>(),
      std::shared_ptr<const pbl::RelevanceScorer>(pbl::make_scorer("color-lexicon")),
      std::shared_ptr<const pbl::PatchEncoder>(pbl::make_encoder("color-patch", image_dim)), store);
  return d;
}

}  // namespace fixtures
