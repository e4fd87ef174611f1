#pragma once

// Independent reference computations the library is checked against. They
// are written from the definitions, not from the library code.

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "pbl/refchain.hpp"
#include "pbl/textalign.hpp"

namespace oracles {

// Label of `image` at token t: scan every mark and keep the latest one that
// is observable at t. A mark after p utterances is observable once utterance
// p (0-based) has started; one after the final utterance only at the last
// token.
inline std::vector<int> brute_force_labels(int image, const std::vector<pbl::MarkAction>& marks,
                                           const pbl::TokenizedDialogue& d) {
  const int T = d.length(), K = d.num_utterances();
  std::vector<int> out(static_cast<std::size_t>(T), 0);
  for (int t = 0; t < T; ++t) {
    int u = -1;
    for (int k = 0; k < K; ++k)
      if (d.spans[static_cast<std::size_t>(k)].begin <= t && t < d.spans[static_cast<std::size_t>(k)].end) u = k;
    int label = 0;
    for (const auto& m : marks) {
      if (m.image_index != image) continue;
      bool visible = m.position <= u || (m.position >= K && t == T - 1);
      if (visible) label = m.mark == pbl::Mark::common ? 1 : 2;
    }
    out[static_cast<std::size_t>(t)] = label;
  }
  return out;
}

struct RandomLabelCase {
  pbl::TokenizedDialogue dialogue;
  std::array<int, pbl::kTargetsPerPlayer> targets{};
  std::vector<pbl::MarkAction> marks;  // in time order
};

inline RandomLabelCase random_label_case(std::mt19937_64& rng, const pbl::Tokenizer& tok) {
  RandomLabelCase c;
  const int K = 1 + static_cast<int>(rng() % 10);
  c.dialogue = fixtures::random_dialogue(K, tok, rng);
  std::vector<int> slots{1, 2, 3, 4, 5, 6};
  std::shuffle(slots.begin(), slots.end(), rng);
  for (int s = 0; s < pbl::kTargetsPerPlayer; ++s) c.targets[static_cast<std::size_t>(s)] = slots[static_cast<std::size_t>(s)];
  // Zero to two marks per target (the second models a corrected mark),
  // occasionally on a non-target image.
  for (int s = 0; s < pbl::kTargetsPerPlayer + 1; ++s) {
    const int image = s < pbl::kTargetsPerPlayer ? c.targets[static_cast<std::size_t>(s)] : slots[3];
    const int n = static_cast<int>(rng() % 3);
    for (int i = 0; i < n; ++i) {
      pbl::MarkAction m;
      m.actor = "A";
      m.image_index = image;
      m.mark = rng() % 2 ? pbl::Mark::common : pbl::Mark::different;
      m.position = static_cast<int>(rng() % static_cast<std::uint64_t>(K + 1));
      c.marks.push_back(m);
    }
  }
  std::stable_sort(c.marks.begin(), c.marks.end(),
                   [](const pbl::MarkAction& a, const pbl::MarkAction& b) { return a.position < b.position; });
  return c;
}

// -sum log p(label) over every (target, token) with a nonzero weight.
inline double loop_loss(const std::array<Eigen::MatrixXd, 3>& beliefs, const std::array<std::vector<int>, 3>& labels,
                        bool final_only) {
  double total = 0.0;
  for (int j = 0; j < 3; ++j) {
    const auto& b = beliefs[static_cast<std::size_t>(j)];
    const auto& y = labels[static_cast<std::size_t>(j)];
    for (int t = 0; t < static_cast<int>(y.size()); ++t) {
      if (final_only && t + 1 != static_cast<int>(y.size())) continue;
      total -= std::log(b(t, y[static_cast<std::size_t>(t)]));
    }
  }
  return total;
}

// Chain links by exhaustive search: for each image column, the first row
// holding the column maximum.
inline std::vector<std::pair<std::string, int>> argmax_links(const std::vector<std::string>& ids,
                                                             const Eigen::MatrixXd& scores) {
  std::vector<std::pair<std::string, int>> out;
  for (Eigen::Index i = 0; i < scores.cols(); ++i) {
    const double best = scores.col(i).maxCoeff();
    for (Eigen::Index k = 0; k < scores.rows(); ++k)
      if (scores(k, i) == best) {
        out.emplace_back(ids[static_cast<std::size_t>(i)], static_cast<int>(k));
        break;
      }
  }
  return out;
}

struct RefchainPropertyReport {
  int trials = 0;
  int violations = 0;
};

// Random score matrices: at most one link per image per round, no more
// links than images, links on argmax rows, and scale-free policies unchanged
// by positive rescaling.
inline RefchainPropertyReport refchain_properties(int trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 2.5), scale(0.01, 100.0), frac(0.0, 1.0);
  RefchainPropertyReport r;
  for (int trial = 0; trial < trials; ++trial) {
    ++r.trials;
    const int rows = 1 + static_cast<int>(rng() % 12), cols = 6 + static_cast<int>(rng() % 7);
    Eigen::MatrixXd scores = Eigen::MatrixXd::NullaryExpr(rows, cols, [&] { return u(rng); });
    // Ties on a few entries so the lowest-index rule is exercised.
    if (rows > 1 && trial % 3 == 0) scores(rows - 1, 0) = scores(0, 0);
    std::vector<std::string> ids;
    for (int i = 0; i < cols; ++i) ids.push_back("img" + std::to_string(i));
    const double c = scale(rng);
    bool ok = true;
    for (const auto& policy :
         {pbl::ThresholdPolicy::top_one(), pbl::ThresholdPolicy::relative(frac(rng)), pbl::ThresholdPolicy::absolute(1.0)}) {
      auto links = pbl::extract_from_scores("g", 1, ids, scores, policy);
      std::set<std::string> seen;
      for (const auto& l : links) ok = ok && seen.insert(l.image_id).second && l.round == 1;
      ok = ok && static_cast<int>(links.size()) <= cols;
      auto expect = argmax_links(ids, scores);
      for (const auto& l : links)
        ok = ok && std::find(expect.begin(), expect.end(), std::make_pair(l.image_id, l.utterance_index)) != expect.end();
      if (policy.kind == pbl::ThresholdPolicy::Kind::top_one) ok = ok && static_cast<int>(links.size()) == cols;
      if (policy.kind != pbl::ThresholdPolicy::Kind::absolute) {
        Eigen::MatrixXd scaled = scores * c;
        ok = ok && pbl::extract_from_scores("g", 1, ids, scaled, policy) == links;
      }
    }
    if (!ok) ++r.violations;
  }
  return r;
}

}  // namespace oracles
