#pragma once

// Randomised property checks on the listener, shared by the unit tests and
// the acceptance runner.

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "pbl/listener.hpp"
#include "pbl/trainer.hpp"

namespace properties {

struct ListenerProblem {
  std::shared_ptr<pbl::ListenerModel> model;
  std::shared_ptr<pbl::HashingTokenizer> tokenizer;
  pbl::TokenizedDialogue dialogue;
  pbl::RelevanceMatrix relevance;
  pbl::VisualContext visual;
  std::array<int, pbl::kTargetsPerPlayer> targets{1, 3, 5};
};

inline ListenerProblem make_problem(std::uint64_t seed, pbl::Variant variant = pbl::Variant::injection_only,
                                    int utterances = 4, int image_dim = 8) {
  std::mt19937_64 rng(seed);
  ListenerProblem p;
  p.tokenizer = std::make_shared<pbl::HashingTokenizer>(64);
  auto cfg = fixtures::tiny_config(p.tokenizer->vocab_size(), image_dim, variant, seed);
  p.model = std::make_shared<pbl::ListenerModel>(cfg);
  p.dialogue = fixtures::random_dialogue(utterances, *p.tokenizer, rng);
  p.relevance = fixtures::random_relevance(utterances, rng);
  p.visual = fixtures::random_visual(image_dim, rng, variant == pbl::Variant::cross_attention);
  std::vector<int> slots{1, 2, 3, 4, 5, 6};
  std::shuffle(slots.begin(), slots.end(), rng);
  for (std::size_t s = 0; s < 3; ++s) p.targets[s] = slots[s];
  return p;
}

inline pbl::TargetBeliefs infer(const ListenerProblem& p, const pbl::TokenizedDialogue& d,
                                const pbl::RelevanceMatrix& r) {
  return p.model->infer(d, r, p.visual, p.targets);
}

// Plain causal backbone pass without any injection.
inline std::vector<Eigen::MatrixXd> plain_states(const pbl::ListenerModel& model, const pbl::TokenizedDialogue& d) {
  pbl::nn::Tape tape(false);
  std::vector<Eigen::MatrixXd> out;
  pbl::nn::Var h = model.backbone().embed(tape, d.tokens);
  out.push_back(h.value());
  for (int l = 1; l <= model.backbone().num_layers(); ++l) {
    h = model.backbone().layer(tape, l, h, true);
    out.push_back(h.value());
  }
  return out;
}

// Zero relevance must leave every stage bitwise equal to the plain pass.
inline bool zero_relevance_is_identity(const ListenerProblem& p) {
  pbl::RelevanceMatrix zeros;
  zeros.rows.assign(p.relevance.rows.size(), pbl::RelevanceRow{});
  auto states = p.model->encode_states(p.dialogue, zeros, p.visual);
  auto plain = plain_states(*p.model, p.dialogue);
  if (states.layers.size() != plain.size()) return false;
  for (std::size_t l = 0; l < plain.size(); ++l)
    if (!(states.layers[l].array() == plain[l].array()).all()) return false;
  return true;
}

// Three utterances of three words each: T = 12.
inline ListenerProblem gradient_problem(std::uint64_t seed) {
  auto p = make_problem(seed);
  p.dialogue = pbl::TokenizedDialogue{};
  pbl::append_utterance(p.dialogue, true, "do you have", *p.tokenizer);
  pbl::append_utterance(p.dialogue, false, "the red one", *p.tokenizer);
  pbl::append_utterance(p.dialogue, true, "yes i do", *p.tokenizer);
  std::mt19937_64 rng(seed + 1);
  p.relevance = fixtures::random_relevance(3, rng);
  return p;
}

// Largest change of any belief at tokens <= t after perturbing everything
// strictly after t: later tokens, later relevance rows, or the span layout
// (truncating or extending the dialogue).
inline double perturbation_effect(const ListenerProblem& p, std::mt19937_64& rng) {
  const auto& d = p.dialogue;
  const int T = d.length();
  const int t = static_cast<int>(rng() % static_cast<std::uint64_t>(T - 1));
  const int k = d.utterance_of(t);
  pbl::TokenizedDialogue d2 = d;
  pbl::RelevanceMatrix r2 = p.relevance;
  std::uniform_real_distribution<double> u(0.0, 2.5);
  switch (rng() % 3) {
    case 0:
      for (int i = t + 1; i < T; ++i)
        d2.tokens[static_cast<std::size_t>(i)] = 4 + static_cast<int>(rng() % 60);
      for (int j = k + 1; j < d.num_utterances(); ++j)
        for (auto& v : r2.rows[static_cast<std::size_t>(j)]) v = u(rng);
      break;
    case 1: {
      // Cut the dialogue right after t.
      d2.tokens.resize(static_cast<std::size_t>(t + 1));
      d2.token_text.resize(static_cast<std::size_t>(t + 1));
      d2.spans.resize(static_cast<std::size_t>(k + 1));
      d2.spans.back().end = t + 1;
      d2.marker_positions.resize(static_cast<std::size_t>(k + 1));
      d2.from_self.resize(static_cast<std::size_t>(k + 1));
      r2.rows.resize(static_cast<std::size_t>(k + 1));
      break;
    }
    default: {
      pbl::append_utterance(d2, rng() % 2 == 0, fixtures::random_text(rng), *p.tokenizer);
      pbl::RelevanceRow row;
      for (auto& v : row) v = u(rng);
      r2.rows.push_back(row);
      break;
    }
  }
  auto a = infer(p, d, p.relevance);
  auto b = infer(p, d2, r2);
  double worst = 0.0;
  for (std::size_t s = 0; s < 3; ++s)
    worst = std::max(worst, (a.beliefs[s].topRows(t + 1) - b.beliefs[s].topRows(t + 1)).cwiseAbs().maxCoeff());
  return worst;
}

inline pbl::PreparedExample example_of(const ListenerProblem& p, std::mt19937_64& rng) {
  pbl::PreparedExample ex;
  ex.dialogue = p.dialogue;
  ex.relevance = p.relevance;
  ex.visual = p.visual;
  ex.targets = p.targets;
  for (auto& y : ex.labels) {
    y.resize(static_cast<std::size_t>(p.dialogue.length()));
    for (auto& v : y) v = static_cast<int>(rng() % 3);
  }
  return ex;
}

struct GradientProbe {
  std::string parameter;
  Eigen::Index entry = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double relative_error() const {
    const double scale = std::max({std::fabs(analytic), std::fabs(numeric), 1e-7});
    return std::fabs(analytic - numeric) / scale;
  }
};

// Central differences on random entries of the relevance projection, the
// image position embeddings and the head.
inline std::vector<GradientProbe> gradient_probes(ListenerProblem& p, int probes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto ex = example_of(p, rng);
  pbl::ListenerTrainable trainable(*p.model);
  const pbl::Supervision dense;
  auto& params = p.model->parameters();
  params.zero_grad();
  {
    pbl::nn::Tape tape;
    tape.backward(trainable.loss(tape, ex, dense));
  }
  auto loss_value = [&] {
    pbl::nn::Tape tape(false);
    return trainable.loss(tape, ex, dense).value()(0, 0);
  };
  const std::vector<std::string> names{"listener.w_proj", "listener.image_pos", "listener.head.w1",
                                       "listener.head.b1", "listener.head.w2", "listener.head.b2"};
  std::vector<GradientProbe> out;
  const double h = 1e-5;
  for (int i = 0; i < probes; ++i) {
    const std::string& name = names[static_cast<std::size_t>(i) % names.size()];
    auto& param = params.at(name);
    GradientProbe probe;
    probe.parameter = name;
    if (name == "listener.image_pos") {
      // Rows of non-target images have no gradient; probe target rows.
      const Eigen::Index row = p.targets[rng() % 3] - 1;
      const Eigen::Index col = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(param.value.cols()));
      probe.entry = row + col * param.value.rows();
    } else {
      probe.entry = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(param.value.size()));
    }
    probe.analytic = param.grad(probe.entry);
    const double saved = param.value(probe.entry);
    param.value(probe.entry) = saved + h;
    const double up = loss_value();
    param.value(probe.entry) = saved - h;
    const double down = loss_value();
    param.value(probe.entry) = saved;
    probe.numeric = (up - down) / (2 * h);
    out.push_back(probe);
  }
  return out;
}

}  // namespace properties
