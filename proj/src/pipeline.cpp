#include "pbl/pipeline.hpp"

#include <algorithm>
#include <set>

#include "pbl/errors.hpp"

namespace pbl {

ChainIndex::ChainIndex(const std::vector<ChainLink>& links,
                       const std::vector<std::shared_ptr<const GameRound>>& rounds, const Tokenizer& tokenizer) {
  std::map<std::pair<std::string, int>, const GameRound*> by_round;
  for (const auto& r : rounds) by_round[{r->game_id, r->round_index}] = r.get();
  for (const auto& l : links) {
    auto it = by_round.find({l.game_id, l.round});
    if (it == by_round.end()) continue;
    const auto& utts = it->second->utterances;
    if (l.utterance_index < 0 || l.utterance_index >= static_cast<int>(utts.size()))
      throw ContractError("chain link points past the end of round " + l.game_id + ":" +
                          std::to_string(l.round));
    std::vector<int> ids;
    for (const auto& piece : tokenizer.encode(utts[static_cast<std::size_t>(l.utterance_index)].text))
      ids.push_back(piece.id);
    links_[{l.game_id, l.image_id}].emplace_back(l.round, std::move(ids));
    ++count_;
  }
  for (auto& [key, list] : links_)
    std::stable_sort(list.begin(), list.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
}

std::vector<std::vector<int>> ChainIndex::before(const std::string& game_id, const std::string& image_id,
                                                 int round_index) const {
  std::vector<std::vector<int>> out;
  auto it = links_.find({game_id, image_id});
  if (it == links_.end()) return out;
  for (const auto& [round, ids] : it->second)
    if (round < round_index) out.push_back(ids);
  return out;
}

std::vector<std::shared_ptr<const GameRound>> unique_rounds(const InstanceList& instances) {
  std::vector<std::shared_ptr<const GameRound>> out;
  std::set<const GameRound*> seen;
  for (const auto& inst : instances)
    if (seen.insert(&inst->round()).second) out.push_back(inst->round_ptr());
  return out;
}

ChainIndex build_chain_index(const std::vector<std::shared_ptr<const GameRound>>& rounds,
                             const RelevanceScorer& scorer, const ImageStore& images,
                             const ThresholdPolicy& policy, const Tokenizer& tokenizer,
                             std::vector<ChainLink>* links_out) {
  std::vector<ChainLink> links;
  for (const auto& r : rounds) {
    auto extracted = extract_chains(*r, scorer, images, policy);
    links.insert(links.end(), extracted.begin(), extracted.end());
  }
  ChainIndex index(links, rounds, tokenizer);
  if (links_out) *links_out = std::move(links);
  return index;
}

FeaturePipeline::FeaturePipeline(std::shared_ptr<const Tokenizer> tokenizer,
                                 std::shared_ptr<const RelevanceScorer> scorer,
                                 std::shared_ptr<const PatchEncoder> encoder,
                                 std::shared_ptr<const ImageStore> images, FeatureCache* cache)
    : tokenizer_(std::move(tokenizer)),
      scorer_(std::move(scorer)),
      encoder_(std::move(encoder)),
      images_(std::move(images)),
      cache_(cache) {
  if (!tokenizer_ || !scorer_ || !encoder_ || !images_)
    throw ContractError("feature pipeline needs a tokenizer, scorer, encoder and image store");
}

const PatchGrid& FeaturePipeline::patches_of(const ImageRef& ref) const {
  {
    std::lock_guard lock(memo_mutex_);
    auto it = memo_.find(ref.image_id);
    if (it != memo_.end()) return *it->second;
  }
  auto grid = std::make_shared<const PatchGrid>(extract_patch_features(images_->load(ref), *encoder_, cache_));
  std::lock_guard lock(memo_mutex_);
  return *memo_.emplace(ref.image_id, std::move(grid)).first->second;
}

std::array<Image, kImagesPerPlayer> FeaturePipeline::load_images(
    const std::array<ImageRef, kImagesPerPlayer>& refs) const {
  std::array<Image, kImagesPerPlayer> out;
  for (std::size_t i = 0; i < refs.size(); ++i) out[i] = images_->load(refs[i]);
  return out;
}

VisualContext FeaturePipeline::visual_for(const std::array<ImageRef, kImagesPerPlayer>& refs) const {
  VisualContext v;
  PatchFeatureSet patches;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    patches[i] = patches_of(refs[i]);
    v.pooled[i] = mean_pool(patches[i]);
  }
  if (keep_patches_) v.patches = std::move(patches);
  return v;
}

RelevanceRow FeaturePipeline::relevance_row(std::string_view text,
                                            const std::array<Image, kImagesPerPlayer>& images) const {
  return score_relevance(text, std::span<const Image, kImagesPerPlayer>(images), *scorer_);
}

PreparedExample FeaturePipeline::prepare(std::shared_ptr<const PerspectiveInstance> instance) const {
  PreparedExample ex;
  ex.instance = instance;
  ex.dialogue = tokenize_and_align(*instance, *tokenizer_);
  auto images = load_images(instance->images());
  ex.relevance = relevance_for_dialogue(instance->utterances(), std::span<const Image, kImagesPerPlayer>(images),
                                        *scorer_, cache_);
  ex.visual = visual_for(instance->images());
  ex.targets = instance->targets();
  ex.gold = instance->gold_final_labels();
  LabelBuild build = build_label_sequences(*instance, ex.dialogue);
  ex.clamped_images = build.clamped_images;
  for (std::size_t s = 0; s < kTargetsPerPlayer; ++s)
    for (Label l : build.sequences[s].labels) ex.labels[s].push_back(static_cast<int>(l));
  if (chains_) {
    for (std::size_t i = 0; i < kImagesPerPlayer; ++i)
      ex.chain_tokens[i] = chains_->before(instance->round().game_id, instance->images()[i].image_id,
                                           instance->round().round_index);
  }
  return ex;
}

std::vector<PreparedExample> FeaturePipeline::prepare_all(const InstanceList& instances) const {
  std::vector<PreparedExample> out;
  out.reserve(instances.size());
  for (const auto& inst : instances) out.push_back(prepare(inst));
  return out;
}

}  // namespace pbl
