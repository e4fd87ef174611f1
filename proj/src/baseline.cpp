#include "pbl/baseline.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "pbl/errors.hpp"

namespace pbl {

void BaselineConfig::validate() const {
  if (vocab_size <= 0 || text_dim <= 0 || image_dim <= 0)
    throw ConfigError("baseline sizes must be positive");
}

nlohmann::json to_json(const BaselineConfig& c) {
  return {{"vocab_size", c.vocab_size},         {"text_dim", c.text_dim},
          {"image_dim", c.image_dim},           {"query_hidden", c.query_hidden},
          {"context_hidden", c.context_hidden}, {"head_hidden", c.head_hidden},
          {"init_std", c.init_std},             {"seed", c.seed},
          {"embedding_seed", c.embedding_seed}};
}

BaselineConfig baseline_config_from_json(const nlohmann::json& j) {
  BaselineConfig c;
  try {
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.text_dim = j.value("text_dim", c.text_dim);
    c.image_dim = j.value("image_dim", c.image_dim);
    c.query_hidden = j.value("query_hidden", c.query_hidden);
    c.context_hidden = j.value("context_hidden", c.context_hidden);
    c.head_hidden = j.value("head_hidden", c.head_hidden);
    c.init_std = j.value("init_std", c.init_std);
    c.seed = j.value("seed", c.seed);
    c.embedding_seed = j.value("embedding_seed", c.embedding_seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad baseline config: ") + e.what());
  }
  c.validate();
  return c;
}

FrozenTokenEmbedding::FrozenTokenEmbedding(int vocab_size, int dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  table_ = nn::normal_matrix(vocab_size, dim, 1.0 / std::sqrt(static_cast<double>(dim)), rng);
}

Eigen::MatrixXd FrozenTokenEmbedding::embed(std::span<const int> tokens) const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(tokens.size()), table_.cols());
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (tokens[t] < 0 || tokens[t] >= table_.rows()) throw ContractError("token id outside the vocabulary");
    out.row(static_cast<Eigen::Index>(t)) = table_.row(tokens[t]);
  }
  return out;
}

Eigen::VectorXd FrozenTokenEmbedding::mean_embedding(std::span<const std::vector<int>> utterances) const {
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(table_.cols());
  std::size_t n = 0;
  for (const auto& u : utterances) {
    for (int id : u) {
      if (id < 0 || id >= table_.rows()) throw ContractError("token id outside the vocabulary");
      sum += table_.row(id).transpose();
      ++n;
    }
  }
  return n ? Eigen::VectorXd(sum / static_cast<double>(n)) : sum;
}

BaselineModel::BaselineModel(BaselineConfig config)
    : config_(std::move(config)),
      params_(std::make_unique<nn::ParameterSet>()),
      embedding_(config_.vocab_size, config_.text_dim, config_.embedding_seed) {
  config_.validate();
  std::mt19937_64 rng(config_.seed ^ 0xba5e11e5ULL);
  const int e = config_.text_dim, img = config_.image_dim;
  const int hq = config_.query_width(), hc = config_.context_width(), hh = config_.head_width();
  const double s = config_.init_std;
  params_->add("baseline.query.w", nn::normal_matrix(e + img, hq, s, rng));
  params_->add("baseline.query.b", nn::Matrix::Zero(1, hq), false);
  params_->add("baseline.query.score", nn::normal_matrix(hq, 1, s, rng));
  params_->add("baseline.context.w_image", nn::normal_matrix(img, hc, s, rng));
  params_->add("baseline.context.w_text", nn::normal_matrix(e, hc, s, rng));
  params_->add("baseline.context.b", nn::Matrix::Zero(1, hc), false);
  params_->add("baseline.head.w1", nn::normal_matrix(hq + hc, hh, s, rng));
  params_->add("baseline.head.b1", nn::Matrix::Zero(1, hh), false);
  params_->add("baseline.head.w2", nn::normal_matrix(hh, 2, s, rng));
  params_->add("baseline.head.b2", nn::Matrix::Zero(1, 2), false);
}

std::size_t baseline_parameter_count(const BaselineConfig& c) {
  const std::size_t e = static_cast<std::size_t>(c.text_dim), img = static_cast<std::size_t>(c.image_dim);
  const std::size_t hq = static_cast<std::size_t>(c.query_width());
  const std::size_t hc = static_cast<std::size_t>(c.context_width());
  const std::size_t hh = static_cast<std::size_t>(c.head_width());
  return (e + img) * hq + hq + hq + img * hc + e * hc + hc + (hq + hc) * hh + hh + hh * 2 + 2;
}

void BaselineModel::check(const BaselineInput& input) const {
  if (input.dialogue.rows() == 0) throw ContractError("baseline needs a non-empty dialogue");
  if (input.dialogue.cols() != config_.text_dim) throw ContractError("dialogue embedding width mismatch");
  for (int i = 0; i < kImagesPerPlayer; ++i) {
    if (input.images[static_cast<std::size_t>(i)].size() != config_.image_dim)
      throw ContractError("missing or mis-sized image feature for image " + std::to_string(i + 1));
    if (input.chains[static_cast<std::size_t>(i)].size() != config_.text_dim)
      throw ContractError("missing chain embedding for image " + std::to_string(i + 1));
  }
}

nn::Var BaselineModel::context_pool(nn::Tape& tape, const BaselineInput& input) const {
  check(input);
  const auto& p = *params_;
  nn::Var w_image = tape.parameter(p.at("baseline.context.w_image"));
  nn::Var w_text = tape.parameter(p.at("baseline.context.w_text"));
  nn::Var bias = tape.parameter(p.at("baseline.context.b"));
  // Each image is encoded on its own and the rows are pooled in a canonical
  // (value-sorted) order, so permuting the images changes nothing, bit for bit.
  std::vector<nn::Var> rows;
  for (int i = 0; i < kImagesPerPlayer; ++i) {
    const auto u = static_cast<std::size_t>(i);
    nn::Var a = tape.matmul(tape.constant(input.images[u].transpose()), w_image);
    nn::Var b = tape.matmul(tape.constant(input.chains[u].transpose()), w_text);
    rows.push_back(tape.gelu(tape.add(tape.add(a, b), bias)));
  }
  std::vector<int> order(rows.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
    const auto& vx = rows[static_cast<std::size_t>(x)].value();
    const auto& vy = rows[static_cast<std::size_t>(y)].value();
    return std::lexicographical_compare(vx.data(), vx.data() + vx.size(), vy.data(), vy.data() + vy.size());
  });
  std::vector<nn::Var> sorted;
  for (int i : order) sorted.push_back(rows[static_cast<std::size_t>(i)]);
  return tape.mean_rows(tape.concat_rows(sorted));
}

nn::Var BaselineModel::forward(nn::Tape& tape, const BaselineInput& input, int target) const {
  if (target < 1 || target > kImagesPerPlayer) throw ContractError("target index outside 1..6");
  nn::Var pool = context_pool(tape, input);
  const auto& p = *params_;
  const Eigen::Index T = input.dialogue.rows();

  // Query encoder: score each [token; target image] row, then a learned
  // softmax-weighted average over the dialogue.
  nn::Var target_row = tape.constant(input.images[static_cast<std::size_t>(target - 1)].transpose());
  std::array<nn::Var, 2> parts{tape.constant(input.dialogue), tape.broadcast_rows(target_row, T)};
  nn::Var x = tape.concat_cols(parts);
  nn::Var q = tape.gelu(tape.add_row(tape.matmul(x, tape.parameter(p.at("baseline.query.w"))),
                                     tape.parameter(p.at("baseline.query.b"))));
  nn::Var scores = tape.transpose(tape.matmul(q, tape.parameter(p.at("baseline.query.score"))));
  nn::Var weights = tape.softmax_rows(scores);
  nn::Var query = tape.matmul(weights, q);

  std::array<nn::Var, 2> joined{query, pool};
  nn::Var hidden = tape.gelu(tape.add(tape.matmul(tape.concat_cols(joined), tape.parameter(p.at("baseline.head.w1"))),
                                      tape.parameter(p.at("baseline.head.b1"))));
  return tape.add(tape.matmul(hidden, tape.parameter(p.at("baseline.head.w2"))),
                  tape.parameter(p.at("baseline.head.b2")));
}

Eigen::Vector2d BaselineModel::predict(const BaselineInput& input, int target) const {
  nn::Tape tape(false);
  Eigen::RowVectorXd z = forward(tape, input, target).value();
  Eigen::RowVectorXd e = (z.array() - z.maxCoeff()).exp();
  return (e / e.sum()).transpose();
}

}  // namespace pbl
