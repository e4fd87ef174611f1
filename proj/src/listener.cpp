#include "pbl/listener.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "pbl/errors.hpp"

namespace pbl {

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::injection_only: return "injection-only";
    case Variant::cross_attention: return "cross-attention";
    case Variant::no_relevance: return "no-relevance";
  }
  return "?";
}

Variant parse_variant(std::string_view text) {
  if (text == "injection-only") return Variant::injection_only;
  if (text == "cross-attention") return Variant::cross_attention;
  if (text == "no-relevance") return Variant::no_relevance;
  throw ConfigError("unknown model variant '" + std::string(text) + "'");
}

std::vector<int> ModelConfig::resolved_injection_layers() const {
  if (variant == Variant::no_relevance) return {};
  if (!injection_layers.empty()) return injection_layers;
  std::vector<int> all;
  for (int l = 0; l <= backbone.num_layers; ++l) all.push_back(l);
  return all;
}

bool ModelConfig::injects_at(int layer) const {
  auto layers = resolved_injection_layers();
  return std::find(layers.begin(), layers.end(), layer) != layers.end();
}

void ModelConfig::validate() const {
  if (backbone.hidden_size <= 0 || backbone.num_layers <= 0)
    throw ConfigError("hidden size and layer count must be positive");
  if (image_dim <= 0) throw ConfigError("image feature dimension must be positive");
  std::set<int> seen;
  for (int l : injection_layers) {
    if (l < 0 || l > backbone.num_layers)
      throw ConfigError("injection layer " + std::to_string(l) + " outside 0.." +
                        std::to_string(backbone.num_layers));
    if (!seen.insert(l).second) throw ConfigError("injection layer listed twice");
  }
}

ModelConfig ModelConfig::full_scale(int vocab_size) {
  ModelConfig c;
  c.backbone.vocab_size = vocab_size;
  c.backbone.hidden_size = 768;
  c.backbone.num_layers = 12;
  c.backbone.num_heads = 12;
  c.backbone.ffn_size = 3072;
  return c;
}

ModelConfig ModelConfig::desk_scale(int vocab_size) {
  ModelConfig c;
  c.backbone.vocab_size = vocab_size;
  c.backbone.hidden_size = 16;
  c.backbone.num_layers = 2;
  c.backbone.num_heads = 2;
  c.backbone.ffn_size = 64;
  c.backbone.max_positions = 512;
  c.backbone.init_std = 0.1;
  c.init_std = 0.1;
  return c;
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"backbone",
           {{"kind", c.backbone.kind},
            {"vocab_size", c.backbone.vocab_size},
            {"hidden_size", c.backbone.hidden_size},
            {"num_layers", c.backbone.num_layers},
            {"num_heads", c.backbone.num_heads},
            {"ffn_size", c.backbone.ffn_size},
            {"max_positions", c.backbone.max_positions},
            {"init_std", c.backbone.init_std},
            {"seed", c.backbone.seed}}},
          {"variant", to_string(c.variant)},
          {"injection_layers", c.injection_layers},
          {"image_dim", c.image_dim},
          {"head_hidden", c.head_hidden},
          {"init_std", c.init_std},
          {"seed", c.seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    if (j.contains("backbone")) {
      const auto& b = j["backbone"];
      c.backbone.kind = b.value("kind", c.backbone.kind);
      c.backbone.vocab_size = b.value("vocab_size", c.backbone.vocab_size);
      c.backbone.hidden_size = b.value("hidden_size", c.backbone.hidden_size);
      c.backbone.num_layers = b.value("num_layers", c.backbone.num_layers);
      c.backbone.num_heads = b.value("num_heads", c.backbone.num_heads);
      c.backbone.ffn_size = b.value("ffn_size", c.backbone.ffn_size);
      c.backbone.max_positions = b.value("max_positions", c.backbone.max_positions);
      c.backbone.init_std = b.value("init_std", c.backbone.init_std);
      c.backbone.seed = b.value("seed", c.backbone.seed);
    }
    c.variant = parse_variant(j.value("variant", std::string("injection-only")));
    c.injection_layers = j.value("injection_layers", std::vector<int>{});
    c.image_dim = j.value("image_dim", c.image_dim);
    c.head_hidden = j.value("head_hidden", c.head_hidden);
    c.init_std = j.value("init_std", c.init_std);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad model config: ") + e.what());
  }
  c.validate();
  return c;
}

std::size_t cross_attention_parameter_count(const ModelConfig& c) {
  const std::size_t d = static_cast<std::size_t>(c.hidden_size());
  const std::size_t img = static_cast<std::size_t>(c.image_dim);
  const std::size_t conv = kImagesPerPlayer * (4 * img * img + img);
  const std::size_t attn = (d * d + d) + (img * d + d) + (img * d + d) + (d * d + d);
  return conv + attn;
}

std::size_t listener_added_parameter_count(const ModelConfig& c) {
  const std::size_t d = static_cast<std::size_t>(c.hidden_size());
  const std::size_t img = static_cast<std::size_t>(c.image_dim);
  const std::size_t hh = static_cast<std::size_t>(c.head_width());
  std::size_t n = kImagesPerPlayer * img + (img + d) * hh + hh + hh * kNumLabels + kNumLabels;
  if (c.variant != Variant::no_relevance) n += d * kImagesPerPlayer;
  if (c.variant == Variant::cross_attention) n += cross_attention_parameter_count(c);
  return n;
}

ListenerModel::ListenerModel(ModelConfig config)
    : config_(std::move(config)), params_(std::make_unique<nn::ParameterSet>()) {
  config_.validate();
  backbone_ = make_backbone(config_.backbone, *params_);
  if (backbone_->hidden_size() != config_.hidden_size())
    throw ConfigError("backbone hidden size disagrees with the model config");

  std::mt19937_64 rng(config_.seed ^ 0x11572e9ULL);
  const int d = config_.hidden_size(), img = config_.image_dim, hh = config_.head_width();
  const double s = config_.init_std;
  if (config_.variant != Variant::no_relevance)
    params_->add("listener.w_proj", nn::normal_matrix(d, kImagesPerPlayer, s, rng));
  params_->add("listener.image_pos", nn::normal_matrix(kImagesPerPlayer, img, s, rng));
  params_->add("listener.head.w1", nn::normal_matrix(img + d, hh, s, rng));
  params_->add("listener.head.b1", nn::Matrix::Zero(1, hh), false);
  params_->add("listener.head.w2", nn::normal_matrix(hh, kNumLabels, s, rng));
  params_->add("listener.head.b2", nn::Matrix::Zero(1, kNumLabels), false);
  if (config_.variant == Variant::cross_attention) {
    for (int g = 0; g < kImagesPerPlayer; ++g) {
      params_->add("xattn.conv" + std::to_string(g) + ".w", nn::normal_matrix(4 * img, img, s, rng));
      params_->add("xattn.conv" + std::to_string(g) + ".b", nn::Matrix::Zero(1, img), false);
    }
    params_->add("xattn.wq", nn::normal_matrix(d, d, s, rng));
    params_->add("xattn.bq", nn::Matrix::Zero(1, d), false);
    params_->add("xattn.wk", nn::normal_matrix(img, d, s, rng));
    params_->add("xattn.bk", nn::Matrix::Zero(1, d), false);
    params_->add("xattn.wv", nn::normal_matrix(img, d, s, rng));
    params_->add("xattn.bv", nn::Matrix::Zero(1, d), false);
    params_->add("xattn.wo", nn::normal_matrix(d, d, s, rng));
    params_->add("xattn.bo", nn::Matrix::Zero(1, d), false);
  }
}

nn::Var ListenerModel::inject(nn::Tape& tape, nn::Var hidden, nn::Var injection) const {
  return tape.add(hidden, injection);
}

nn::Var ListenerModel::cross_attend(nn::Tape& tape, nn::Var hidden, nn::Var patch_memory) const {
  const auto& p = *params_;
  AttentionWeights w{&p.at("xattn.wq"), &p.at("xattn.bq"), &p.at("xattn.wk"), &p.at("xattn.bk"),
                     &p.at("xattn.wv"), &p.at("xattn.bv"), &p.at("xattn.wo"), &p.at("xattn.bo")};
  return tape.add(hidden, multi_head_attention(tape, hidden, patch_memory, w,
                                               config_.backbone.num_heads, false));
}

ListenerModel::Encoding ListenerModel::encode(nn::Tape& tape, const TokenizedDialogue& dialogue,
                                              const RelevanceMatrix& relevance,
                                              const VisualContext& visual) const {
  const int T = dialogue.length();
  if (T == 0) throw ContractError("cannot encode an empty dialogue");
  int expect = 0;
  for (const auto& span : dialogue.spans) {
    if (span.begin != expect || span.end <= span.begin)
      throw ContractError("utterance spans must be contiguous and non-empty");
    expect = span.end;
  }
  if (expect != T) throw ContractError("utterance spans do not cover the dialogue");

  const int img = config_.image_dim;
  Encoding enc;

  nn::Var injection;
  const bool uses_relevance = config_.variant != Variant::no_relevance;
  if (uses_relevance) {
    if (relevance.size() != dialogue.num_utterances())
      throw ContractError("relevance has " + std::to_string(relevance.size()) + " rows for " +
                          std::to_string(dialogue.num_utterances()) + " utterances");
    nn::Matrix per_token(T, kImagesPerPlayer);
    for (int k = 0; k < dialogue.num_utterances(); ++k) {
      const auto& span = dialogue.spans[static_cast<std::size_t>(k)];
      const auto& row = relevance.rows[static_cast<std::size_t>(k)];
      for (int t = span.begin; t < span.end; ++t)
        for (int j = 0; j < kImagesPerPlayer; ++j) per_token(t, j) = row[static_cast<std::size_t>(j)];
    }
    injection = tape.matmul_nt(tape.constant(std::move(per_token)),
                               tape.parameter(params_->at("listener.w_proj")));
  }

  nn::Var patch_memory;
  if (config_.variant == Variant::cross_attention) {
    if (!visual.patches) throw ContractError("cross-attention variant needs patch features");
    std::vector<nn::Var> downsampled;
    for (int g = 0; g < kImagesPerPlayer; ++g) {
      const auto& grid = (*visual.patches)[static_cast<std::size_t>(g)];
      if (grid.rows() != kPatchCount || grid.cols() != img)
        throw ContractError("patch grid for image " + std::to_string(g + 1) + " has the wrong shape");
      nn::Var blocks = tape.blocks_2x2(tape.constant(grid), kPatchGrid);
      nn::Var down = tape.add_row(
          tape.matmul(blocks, tape.parameter(params_->at("xattn.conv" + std::to_string(g) + ".w"))),
          tape.parameter(params_->at("xattn.conv" + std::to_string(g) + ".b")));
      enc.image_vectors[static_cast<std::size_t>(g)] = tape.mean_rows(down);
      downsampled.push_back(down);
    }
    patch_memory = tape.concat_rows(downsampled);
  } else {
    for (int g = 0; g < kImagesPerPlayer; ++g) {
      const auto& v = visual.pooled[static_cast<std::size_t>(g)];
      if (v.size() != img)
        throw ContractError("missing or mis-sized image feature for image " + std::to_string(g + 1));
      enc.image_vectors[static_cast<std::size_t>(g)] = tape.constant(v.transpose());
    }
  }

  nn::Var h = backbone_->embed(tape, dialogue.tokens);
  if (uses_relevance && config_.injects_at(kEmbeddingLayer)) h = inject(tape, h, injection);
  if (config_.variant == Variant::cross_attention) {
    // Two applications of one weight-tied block.
    h = cross_attend(tape, h, patch_memory);
    h = cross_attend(tape, h, patch_memory);
  }
  enc.layers.push_back(h);
  for (int l = 1; l <= backbone_->num_layers(); ++l) {
    h = backbone_->layer(tape, l, h, /*causal=*/true);
    if (uses_relevance && config_.injects_at(l)) h = inject(tape, h, injection);
    enc.layers.push_back(h);
  }
  return enc;
}

ListenerModel::Encoding ListenerModel::encode_with_cross_attention(nn::Tape& tape,
                                                                   const TokenizedDialogue& dialogue,
                                                                   const RelevanceMatrix& relevance,
                                                                   const VisualContext& visual) const {
  if (config_.variant != Variant::cross_attention)
    throw ConfigError("model variant is " + std::string(to_string(config_.variant)) +
                      ", not cross-attention");
  return encode(tape, dialogue, relevance, visual);
}

std::array<nn::Var, kTargetsPerPlayer> ListenerModel::logits(
    nn::Tape& tape, const Encoding& encoding, std::span<const int, kTargetsPerPlayer> targets) const {
  const int img = config_.image_dim, d = config_.hidden_size();
  nn::Var w1 = tape.parameter(params_->at("listener.head.w1"));
  nn::Var w1_image = tape.slice_rows(w1, 0, img);
  nn::Var w1_text = tape.slice_rows(w1, img, d);
  nn::Var b1 = tape.parameter(params_->at("listener.head.b1"));
  nn::Var w2 = tape.parameter(params_->at("listener.head.w2"));
  nn::Var b2 = tape.parameter(params_->at("listener.head.b2"));
  nn::Var positions = tape.parameter(params_->at("listener.image_pos"));

  // [v_j + pos_j ; h_t] W1 split into its image and text row blocks.
  nn::Var text_part = tape.matmul(encoding.final_states(), w1_text);
  std::array<nn::Var, kTargetsPerPlayer> out;
  for (std::size_t s = 0; s < kTargetsPerPlayer; ++s) {
    const int j = targets[s];
    if (j < 1 || j > kImagesPerPlayer) throw ContractError("target index outside 1..6");
    nn::Var v = tape.add(encoding.image_vectors[static_cast<std::size_t>(j - 1)],
                         tape.slice_rows(positions, j - 1, 1));
    nn::Var image_part = tape.add(tape.matmul(v, w1_image), b1);
    nn::Var hidden = tape.gelu(tape.add_row(text_part, image_part));
    out[s] = tape.add_row(tape.matmul(hidden, w2), b2);
  }
  return out;
}

BeliefSequence softmax_beliefs(const Eigen::MatrixXd& logits) {
  BeliefSequence p(logits.rows(), logits.cols());
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    Eigen::RowVectorXd e = (logits.row(t).array() - logits.row(t).maxCoeff()).exp();
    p.row(t) = e / e.sum();
  }
  return p;
}

TargetBeliefs ListenerModel::infer(const TokenizedDialogue& dialogue, const RelevanceMatrix& relevance,
                                   const VisualContext& visual,
                                   std::span<const int, kTargetsPerPlayer> targets) const {
  nn::Tape tape(/*track_gradients=*/false);
  auto enc = encode(tape, dialogue, relevance, visual);
  auto lg = logits(tape, enc, targets);
  TargetBeliefs out;
  for (std::size_t s = 0; s < kTargetsPerPlayer; ++s) {
    out.image_indices[s] = targets[s];
    out.beliefs[s] = softmax_beliefs(lg[s].value());
  }
  return out;
}

BackboneState ListenerModel::encode_states(const TokenizedDialogue& dialogue,
                                           const RelevanceMatrix& relevance,
                                           const VisualContext& visual) const {
  nn::Tape tape(false);
  auto enc = encode(tape, dialogue, relevance, visual);
  BackboneState state;
  for (const auto& v : enc.layers) state.layers.push_back(v.value());
  return state;
}

// --- streaming -------------------------------------------------------------

ListenerSession::ListenerSession(std::shared_ptr<const ListenerModel> model,
                                 std::shared_ptr<const Tokenizer> tokenizer, VisualContext visual,
                                 std::array<int, kTargetsPerPlayer> targets)
    : model_(std::move(model)), tokenizer_(std::move(tokenizer)), visual_(std::move(visual)),
      targets_(targets) {
  if (!model_ || !tokenizer_) throw ContractError("session needs a model and a tokenizer");
}

ListenerSession::Step ListenerSession::step(const Utterance& utterance, const RelevanceRow& relevance_row) {
  if (utterance.index != num_utterances())
    throw SessionError("expected utterance " + std::to_string(num_utterances()) + ", got " +
                       std::to_string(utterance.index));
  if (utterance.text.find_first_not_of(" \t\r\n") == std::string::npos)
    throw ValidationError("utterance text is empty");

  TokenizedDialogue dialogue = dialogue_;
  append_utterance(dialogue, utterance.from_self, utterance.text, *tokenizer_);
  RelevanceMatrix relevance = relevance_;
  relevance.rows.push_back(relevance_row);

  TargetBeliefs beliefs = model_->infer(dialogue, relevance, visual_, targets_);
  const TokenSpan span = dialogue.spans.back();
  Step out;
  out.utterance_index = utterance.index;
  for (std::size_t s = 0; s < kTargetsPerPlayer; ++s) {
    out.trajectory[s] = beliefs.beliefs[s].middleRows(span.begin, span.size());
    out.latest[s] = beliefs.beliefs[s].row(span.end - 1).transpose();
  }
  dialogue_ = std::move(dialogue);
  relevance_ = std::move(relevance);
  return out;
}

}  // namespace pbl
