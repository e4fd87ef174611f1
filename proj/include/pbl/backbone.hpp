#pragma once

// Text encoder interface exposing per-layer hidden states, and the small
// randomly initialised transformer used at desk scale.

#include <cstdint>
#include <memory>
#include <span>
#include <string>

#include "pbl/nn.hpp"

namespace pbl {

struct BackboneConfig {
  std::string kind = "tiny-transformer";
  int vocab_size = 4100;
  int hidden_size = 768;
  int num_layers = 12;
  int num_heads = 12;
  int ffn_size = 3072;
  int max_positions = 512;
  double init_std = 0.02;
  std::uint64_t seed = 0;
};

// Encoders register their weights into the owning model's ParameterSet so
// optimisation and checkpointing see one flat set.
class Backbone {
 public:
  virtual ~Backbone() = default;
  virtual int hidden_size() const = 0;
  virtual int num_layers() const = 0;
  virtual int max_positions() const = 0;
  // Token + position embeddings: the layer-0 states.
  virtual nn::Var embed(nn::Tape& tape, std::span<const int> tokens) const = 0;
  // Applies layer `layer` (1-based). With `causal`, position t attends only
  // to positions <= t.
  virtual nn::Var layer(nn::Tape& tape, int layer, nn::Var hidden, bool causal) const = 0;
  virtual std::string identifier() const = 0;
};

std::unique_ptr<Backbone> make_backbone(const BackboneConfig& config, nn::ParameterSet& params);

struct AttentionWeights {
  const nn::Parameter* wq;
  const nn::Parameter* bq;
  const nn::Parameter* wk;
  const nn::Parameter* bk;
  const nn::Parameter* wv;
  const nn::Parameter* bv;
  const nn::Parameter* wo;
  const nn::Parameter* bo;
};

// Scaled dot-product attention with `heads` heads; queries come from
// `query_in`, keys and values from `memory`.
nn::Var multi_head_attention(nn::Tape& tape, nn::Var query_in, nn::Var memory,
                             const AttentionWeights& w, int heads, bool causal);

// Post-LayerNorm encoder with learned absolute positions and GELU FFN.
class TinyTransformer final : public Backbone {
 public:
  TinyTransformer(const BackboneConfig& config, nn::ParameterSet& params);
  int hidden_size() const override { return config_.hidden_size; }
  int num_layers() const override { return config_.num_layers; }
  int max_positions() const override { return config_.max_positions; }
  nn::Var embed(nn::Tape& tape, std::span<const int> tokens) const override;
  nn::Var layer(nn::Tape& tape, int layer, nn::Var hidden, bool causal) const override;
  std::string identifier() const override;

 private:
  struct Layer {
    AttentionWeights attn;
    const nn::Parameter *ln1_g, *ln1_b, *w1, *b1, *w2, *b2, *ln2_g, *ln2_b;
  };
  BackboneConfig config_;
  const nn::Parameter *tok_, *pos_, *ln_g_, *ln_b_;
  std::vector<Layer> layers_;
};

}  // namespace pbl
