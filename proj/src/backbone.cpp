#include "pbl/backbone.hpp"

#include <cmath>
#include <vector>

#include "pbl/errors.hpp"

namespace pbl {

nn::Var multi_head_attention(nn::Tape& tape, nn::Var query_in, nn::Var memory,
                             const AttentionWeights& w, int heads, bool causal) {
  nn::Var q = tape.add_row(tape.matmul(query_in, tape.parameter(*w.wq)), tape.parameter(*w.bq));
  nn::Var k = tape.add_row(tape.matmul(memory, tape.parameter(*w.wk)), tape.parameter(*w.bk));
  nn::Var v = tape.add_row(tape.matmul(memory, tape.parameter(*w.wv)), tape.parameter(*w.bv));
  const nn::Index d = q.cols();
  if (d % heads != 0) throw ConfigError("hidden size must be divisible by the head count");
  const nn::Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<nn::Var> outputs;
  for (int h = 0; h < heads; ++h) {
    nn::Var qh = tape.slice_cols(q, h * dh, dh);
    nn::Var kh = tape.slice_cols(k, h * dh, dh);
    nn::Var vh = tape.slice_cols(v, h * dh, dh);
    nn::Var probs = tape.softmax_rows(tape.scale(tape.matmul_nt(qh, kh), scale), causal);
    outputs.push_back(tape.matmul(probs, vh));
  }
  nn::Var joined = heads == 1 ? outputs[0] : tape.concat_cols(outputs);
  return tape.add_row(tape.matmul(joined, tape.parameter(*w.wo)), tape.parameter(*w.bo));
}

TinyTransformer::TinyTransformer(const BackboneConfig& config, nn::ParameterSet& params)
    : config_(config) {
  const int d = config_.hidden_size;
  if (d <= 0 || config_.num_layers <= 0 || config_.num_heads <= 0 || d % config_.num_heads != 0)
    throw ConfigError("invalid backbone dimensions");
  std::mt19937_64 rng(config_.seed);
  const double s = config_.init_std;
  auto row = [](int n, double v) { return nn::Matrix::Constant(1, n, v); };
  tok_ = &params.add("backbone.tok_emb", nn::normal_matrix(config_.vocab_size, d, s, rng));
  pos_ = &params.add("backbone.pos_emb", nn::normal_matrix(config_.max_positions, d, s, rng));
  ln_g_ = &params.add("backbone.emb_ln.g", row(d, 1.0), false);
  ln_b_ = &params.add("backbone.emb_ln.b", row(d, 0.0), false);
  for (int l = 1; l <= config_.num_layers; ++l) {
    const std::string p = "backbone.layer" + std::to_string(l) + ".";
    Layer L;
    L.attn.wq = &params.add(p + "attn.wq", nn::normal_matrix(d, d, s, rng));
    L.attn.bq = &params.add(p + "attn.bq", row(d, 0.0), false);
    L.attn.wk = &params.add(p + "attn.wk", nn::normal_matrix(d, d, s, rng));
    L.attn.bk = &params.add(p + "attn.bk", row(d, 0.0), false);
    L.attn.wv = &params.add(p + "attn.wv", nn::normal_matrix(d, d, s, rng));
    L.attn.bv = &params.add(p + "attn.bv", row(d, 0.0), false);
    L.attn.wo = &params.add(p + "attn.wo", nn::normal_matrix(d, d, s, rng));
    L.attn.bo = &params.add(p + "attn.bo", row(d, 0.0), false);
    L.ln1_g = &params.add(p + "ln1.g", row(d, 1.0), false);
    L.ln1_b = &params.add(p + "ln1.b", row(d, 0.0), false);
    L.w1 = &params.add(p + "ffn.w1", nn::normal_matrix(d, config_.ffn_size, s, rng));
    L.b1 = &params.add(p + "ffn.b1", row(config_.ffn_size, 0.0), false);
    L.w2 = &params.add(p + "ffn.w2", nn::normal_matrix(config_.ffn_size, d, s, rng));
    L.b2 = &params.add(p + "ffn.b2", row(d, 0.0), false);
    L.ln2_g = &params.add(p + "ln2.g", row(d, 1.0), false);
    L.ln2_b = &params.add(p + "ln2.b", row(d, 0.0), false);
    layers_.push_back(L);
  }
}

std::string TinyTransformer::identifier() const {
  return "tiny-transformer/d" + std::to_string(config_.hidden_size) + "-L" +
         std::to_string(config_.num_layers) + "-h" + std::to_string(config_.num_heads);
}

nn::Var TinyTransformer::embed(nn::Tape& tape, std::span<const int> tokens) const {
  const auto T = static_cast<nn::Index>(tokens.size());
  if (T == 0) throw ContractError("cannot embed an empty sequence");
  if (T > config_.max_positions)
    throw ContractError("sequence of " + std::to_string(T) + " tokens exceeds " +
                        std::to_string(config_.max_positions) + " positions");
  nn::Var tok = tape.gather_rows(tape.parameter(*tok_), tokens);
  nn::Var pos = tape.slice_rows(tape.parameter(*pos_), 0, T);
  return tape.layer_norm(tape.add(tok, pos), tape.parameter(*ln_g_), tape.parameter(*ln_b_));
}

nn::Var TinyTransformer::layer(nn::Tape& tape, int layer, nn::Var hidden, bool causal) const {
  if (layer < 1 || layer > config_.num_layers) throw ContractError("layer index out of range");
  const Layer& L = layers_[static_cast<std::size_t>(layer - 1)];
  nn::Var attn = multi_head_attention(tape, hidden, hidden, L.attn, config_.num_heads, causal);
  nn::Var h1 = tape.layer_norm(tape.add(hidden, attn), tape.parameter(*L.ln1_g), tape.parameter(*L.ln1_b));
  nn::Var ff = tape.gelu(tape.add_row(tape.matmul(h1, tape.parameter(*L.w1)), tape.parameter(*L.b1)));
  ff = tape.add_row(tape.matmul(ff, tape.parameter(*L.w2)), tape.parameter(*L.b2));
  return tape.layer_norm(tape.add(h1, ff), tape.parameter(*L.ln2_g), tape.parameter(*L.ln2_b));
}

std::unique_ptr<Backbone> make_backbone(const BackboneConfig& config, nn::ParameterSet& params) {
  if (config.kind == "tiny-transformer") return std::make_unique<TinyTransformer>(config, params);
  throw ConfigError("unknown backbone kind '" + config.kind +
                    "'; pretrained encoders plug in through the Backbone interface");
}

}  // namespace pbl
