#pragma once

// Turns perspective instances into model-ready examples: tokens, dense
// labels, relevance rows, image features and (for the baseline) reference
// chains from earlier rounds of the same game.

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "pbl/features.hpp"
#include "pbl/gamedata.hpp"
#include "pbl/listener.hpp"
#include "pbl/refchain.hpp"
#include "pbl/textalign.hpp"

namespace pbl {

struct PreparedExample {
  std::shared_ptr<const PerspectiveInstance> instance;
  TokenizedDialogue dialogue;
  RelevanceMatrix relevance;
  VisualContext visual;
  std::array<int, kTargetsPerPlayer> targets{};
  // Per target, one Label (as int) per token.
  std::array<std::vector<int>, kTargetsPerPlayer> labels;
  std::array<Mark, kTargetsPerPlayer> gold{};
  std::vector<int> clamped_images;
  // Per board image, the token ids of chain utterances from earlier rounds.
  std::array<std::vector<std::vector<int>>, kImagesPerPlayer> chain_tokens;

  const std::string& id() const { return instance->id(); }
  int length() const { return dialogue.length(); }
};

// Chain links of a set of rounds, queried per (game, image) for the rounds
// strictly before a given one.
class ChainIndex {
 public:
  ChainIndex() = default;
  ChainIndex(const std::vector<ChainLink>& links, const std::vector<std::shared_ptr<const GameRound>>& rounds,
             const Tokenizer& tokenizer);
  std::vector<std::vector<int>> before(const std::string& game_id, const std::string& image_id,
                                       int round_index) const;
  std::size_t size() const { return count_; }

 private:
  // (game, image) -> (round, token ids of the linked utterance)
  std::map<std::pair<std::string, std::string>, std::vector<std::pair<int, std::vector<int>>>> links_;
  std::size_t count_ = 0;
};

std::vector<std::shared_ptr<const GameRound>> unique_rounds(const InstanceList& instances);

ChainIndex build_chain_index(const std::vector<std::shared_ptr<const GameRound>>& rounds,
                             const RelevanceScorer& scorer, const ImageStore& images,
                             const ThresholdPolicy& policy, const Tokenizer& tokenizer,
                             std::vector<ChainLink>* links_out = nullptr);

class FeaturePipeline {
 public:
  FeaturePipeline(std::shared_ptr<const Tokenizer> tokenizer, std::shared_ptr<const RelevanceScorer> scorer,
                  std::shared_ptr<const PatchEncoder> encoder, std::shared_ptr<const ImageStore> images,
                  FeatureCache* cache = nullptr);

  // Keep 16x16 patch grids on each example (needed by the cross-attention
  // variant).
  void keep_patches(bool keep) { keep_patches_ = keep; }
  void set_chains(std::shared_ptr<const ChainIndex> chains) { chains_ = std::move(chains); }

  PreparedExample prepare(std::shared_ptr<const PerspectiveInstance> instance) const;
  std::vector<PreparedExample> prepare_all(const InstanceList& instances) const;

  VisualContext visual_for(const std::array<ImageRef, kImagesPerPlayer>& images) const;
  std::array<Image, kImagesPerPlayer> load_images(const std::array<ImageRef, kImagesPerPlayer>& images) const;
  RelevanceRow relevance_row(std::string_view text, const std::array<Image, kImagesPerPlayer>& images) const;

  const Tokenizer& tokenizer() const { return *tokenizer_; }
  std::shared_ptr<const Tokenizer> tokenizer_ptr() const { return tokenizer_; }
  const RelevanceScorer& scorer() const { return *scorer_; }
  const PatchEncoder& encoder() const { return *encoder_; }
  const ImageStore& images() const { return *images_; }
  int image_dim() const { return encoder_->feature_dim(); }

 private:
  const PatchGrid& patches_of(const ImageRef& ref) const;

  std::shared_ptr<const Tokenizer> tokenizer_;
  std::shared_ptr<const RelevanceScorer> scorer_;
  std::shared_ptr<const PatchEncoder> encoder_;
  std::shared_ptr<const ImageStore> images_;
  FeatureCache* cache_;
  bool keep_patches_ = false;
  std::shared_ptr<const ChainIndex> chains_;
  mutable std::mutex memo_mutex_;
  mutable std::map<std::string, std::shared_ptr<const PatchGrid>> memo_;
};

}  // namespace pbl
