#pragma once

// The conditioned listener: backbone encoding with additive relevance
// injection, causal masking, and a per-token belief head for each target.

#include <Eigen/Dense>
#include <array>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pbl/backbone.hpp"
#include "pbl/features.hpp"
#include "pbl/nn.hpp"
#include "pbl/textalign.hpp"

namespace pbl {

enum class Variant { injection_only, cross_attention, no_relevance };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view text);

inline constexpr int kEmbeddingLayer = 0;

struct ModelConfig {
  BackboneConfig backbone;
  Variant variant = Variant::injection_only;
  // 0 is the embedding output, l in 1..L the output of layer l. Empty means
  // every layer including the embeddings.
  std::vector<int> injection_layers;
  int image_dim = kDefaultImageDim;
  int head_hidden = 0;  // 0: same as the backbone hidden size
  double init_std = 0.02;
  std::uint64_t seed = 0;

  int hidden_size() const { return backbone.hidden_size; }
  int head_width() const { return head_hidden > 0 ? head_hidden : backbone.hidden_size; }
  std::vector<int> resolved_injection_layers() const;
  bool injects_at(int layer) const;
  void validate() const;

  // d = 768, L = 12 text encoder.
  static ModelConfig full_scale(int vocab_size);
  // d = 16, L = 2 encoder for tests and the synthetic corpus.
  static ModelConfig desk_scale(int vocab_size);
};

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Trainable parameters the listener adds on top of its backbone: relevance
// projection, image position embeddings, belief head, and (for the
// cross-attention variant) the grouped convolution and attention block.
std::size_t listener_added_parameter_count(const ModelConfig& config);
std::size_t cross_attention_parameter_count(const ModelConfig& config);

struct VisualContext {
  ImageFeatureSet pooled;                 // used unless the variant is cross-attention
  std::optional<PatchFeatureSet> patches;  // required for cross-attention
};

// Per target image: T x 3 row-stochastic matrix over (undecided, common, different).
using BeliefSequence = Eigen::MatrixXd;

struct TargetBeliefs {
  std::array<int, kTargetsPerPlayer> image_indices{};
  std::array<BeliefSequence, kTargetsPerPlayer> beliefs;
};

// Hidden states after every stage: index 0 is the embedding output (after
// any injection), index l the output of layer l.
struct BackboneState {
  std::vector<Eigen::MatrixXd> layers;
  const Eigen::MatrixXd& final_layer() const { return layers.back(); }
};

class ListenerModel {
 public:
  explicit ListenerModel(ModelConfig config);
  ListenerModel(ListenerModel&&) noexcept = default;
  ListenerModel& operator=(ListenerModel&&) noexcept = default;

  const ModelConfig& config() const { return config_; }
  const Backbone& backbone() const { return *backbone_; }
  nn::ParameterSet& parameters() { return *params_; }
  const nn::ParameterSet& parameters() const { return *params_; }

  struct Encoding {
    std::vector<nn::Var> layers;                         // 0..L
    std::array<nn::Var, kImagesPerPlayer> image_vectors;  // 1 x image_dim each
    nn::Var final_states() const { return layers.back(); }
  };

  // Validates that relevance rows match the utterance spans (ContractError).
  Encoding encode(nn::Tape& tape, const TokenizedDialogue& dialogue, const RelevanceMatrix& relevance,
                  const VisualContext& visual) const;
  // Same as encode(), but rejects models that are not the cross-attention
  // variant with ConfigError.
  Encoding encode_with_cross_attention(nn::Tape& tape, const TokenizedDialogue& dialogue,
                                       const RelevanceMatrix& relevance,
                                       const VisualContext& visual) const;
  // Head logits (T x 3) for each target image index (1-based).
  std::array<nn::Var, kTargetsPerPlayer> logits(nn::Tape& tape, const Encoding& encoding,
                                                std::span<const int, kTargetsPerPlayer> targets) const;

  TargetBeliefs infer(const TokenizedDialogue& dialogue, const RelevanceMatrix& relevance,
                      const VisualContext& visual, std::span<const int, kTargetsPerPlayer> targets) const;
  BackboneState encode_states(const TokenizedDialogue& dialogue, const RelevanceMatrix& relevance,
                              const VisualContext& visual) const;

 private:
  // Adds W_proj c_k to every token of utterance k; the single place the
  // injection site is defined.
  nn::Var inject(nn::Tape& tape, nn::Var hidden, nn::Var injection) const;
  nn::Var cross_attend(nn::Tape& tape, nn::Var hidden, nn::Var patch_memory) const;

  ModelConfig config_;
  std::unique_ptr<nn::ParameterSet> params_;
  std::unique_ptr<Backbone> backbone_;
};

BeliefSequence softmax_beliefs(const Eigen::MatrixXd& logits);

// Incremental inference over a growing dialogue. Each step re-encodes the
// whole prefix; with causal masking this reproduces a full encode truncated
// at the same token exactly.
class ListenerSession {
 public:
  struct Utterance {
    int index = 0;  // must equal the number of utterances already seen
    bool from_self = true;
    std::string text;
  };
  struct Step {
    int utterance_index = 0;
    std::array<Eigen::Vector3d, kTargetsPerPlayer> latest;      // at the newest token
    std::array<Eigen::MatrixXd, kTargetsPerPlayer> trajectory;  // rows for the new utterance's tokens
  };

  ListenerSession(std::shared_ptr<const ListenerModel> model, std::shared_ptr<const Tokenizer> tokenizer,
                  VisualContext visual, std::array<int, kTargetsPerPlayer> targets);

  Step step(const Utterance& utterance, const RelevanceRow& relevance_row);

  const TokenizedDialogue& dialogue() const { return dialogue_; }
  const RelevanceMatrix& relevance() const { return relevance_; }
  const std::array<int, kTargetsPerPlayer>& targets() const { return targets_; }
  int num_utterances() const { return dialogue_.num_utterances(); }

 private:
  std::shared_ptr<const ListenerModel> model_;
  std::shared_ptr<const Tokenizer> tokenizer_;
  VisualContext visual_;
  std::array<int, kTargetsPerPlayer> targets_;
  TokenizedDialogue dialogue_;
  RelevanceMatrix relevance_;
};

}  // namespace pbl
