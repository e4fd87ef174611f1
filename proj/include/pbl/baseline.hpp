#pragma once

// Feed-forward reference-resolution baseline adapted to the listener task:
// one common/different prediction per target from whole-dialogue embeddings
// and per-image reference chains.

#include <Eigen/Dense>
#include <array>
#include <memory>
#include <span>
#include <vector>

#include "json.hpp"
#include "pbl/features.hpp"
#include "pbl/nn.hpp"

namespace pbl {

struct BaselineConfig {
  int vocab_size = 4100;
  int text_dim = 16;  // token embedding width
  int image_dim = kDefaultImageDim;
  int query_hidden = 0;    // 0: text_dim
  int context_hidden = 0;  // 0: text_dim
  int head_hidden = 0;     // 0: text_dim
  double init_std = 0.1;
  std::uint64_t seed = 0;
  std::uint64_t embedding_seed = 0xe11b;

  int query_width() const { return query_hidden > 0 ? query_hidden : text_dim; }
  int context_width() const { return context_hidden > 0 ? context_hidden : text_dim; }
  int head_width() const { return head_hidden > 0 ? head_hidden : text_dim; }
  void validate() const;
};

nlohmann::json to_json(const BaselineConfig& config);
BaselineConfig baseline_config_from_json(const nlohmann::json& j);

// Frozen token embeddings standing in for a pretrained contextual encoder.
class FrozenTokenEmbedding {
 public:
  FrozenTokenEmbedding(int vocab_size, int dim, std::uint64_t seed);
  Eigen::MatrixXd embed(std::span<const int> tokens) const;  // T x dim
  // Mean over every token of every listed utterance; zero when empty.
  Eigen::VectorXd mean_embedding(std::span<const std::vector<int>> utterances) const;
  int dim() const { return static_cast<int>(table_.cols()); }

 private:
  Eigen::MatrixXd table_;
};

struct BaselineInput {
  Eigen::MatrixXd dialogue;                            // T x text_dim
  ImageFeatureSet images;                              // pooled, image_dim each
  std::array<Eigen::VectorXd, kImagesPerPlayer> chains;  // text_dim each, zero for an empty chain
};

// Output classes of the baseline.
enum class BinaryLabel { common = 0, different = 1 };

class BaselineModel {
 public:
  explicit BaselineModel(BaselineConfig config);
  BaselineModel(BaselineModel&&) noexcept = default;
  BaselineModel& operator=(BaselineModel&&) noexcept = default;

  const BaselineConfig& config() const { return config_; }
  nn::ParameterSet& parameters() { return *params_; }
  const nn::ParameterSet& parameters() const { return *params_; }
  const FrozenTokenEmbedding& embedding() const { return embedding_; }

  // 1 x 2 logits over (common, different) for target image `target` (1-based).
  nn::Var forward(nn::Tape& tape, const BaselineInput& input, int target) const;
  // Context pool alone (1 x context_width), for inspection.
  nn::Var context_pool(nn::Tape& tape, const BaselineInput& input) const;
  Eigen::Vector2d predict(const BaselineInput& input, int target) const;

 private:
  void check(const BaselineInput& input) const;

  BaselineConfig config_;
  std::unique_ptr<nn::ParameterSet> params_;
  FrozenTokenEmbedding embedding_;
};

std::size_t baseline_parameter_count(const BaselineConfig& config);

}  // namespace pbl
