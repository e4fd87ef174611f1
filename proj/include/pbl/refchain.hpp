#pragma once

// Metric-based reference-chain extraction, scoring against gold links, and
// confidence-ranked failure listings.

#include <Eigen/Dense>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "pbl/features.hpp"
#include "pbl/gamedata.hpp"
#include "pbl/image.hpp"

namespace pbl {

// One utterance linked to one image in one round.
struct ChainLink {
  std::string game_id;
  std::string image_id;
  int round = 0;
  int utterance_index = 0;
  std::string annotator;  // gold files only
  auto key() const { return std::tie(game_id, image_id, round, utterance_index); }
  bool operator==(const ChainLink& o) const { return key() == o.key(); }
  bool operator<(const ChainLink& o) const { return key() < o.key(); }
};

// Links for one image, ordered by (round, utterance).
struct ReferenceChain {
  std::string game_id;
  std::string image_id;
  std::vector<std::pair<int, int>> links;
};

std::vector<ReferenceChain> group_chains(std::vector<ChainLink> links);

struct ThresholdPolicy {
  enum class Kind { top_one, absolute, relative_to_max };
  Kind kind = Kind::top_one;
  // absolute: minimum score; relative_to_max: fraction of the round's
  // highest score. Only top_one and relative_to_max are scale-free.
  double value = 0.0;

  static ThresholdPolicy top_one() { return {Kind::top_one, 0.0}; }
  static ThresholdPolicy absolute(double t) { return {Kind::absolute, t}; }
  static ThresholdPolicy relative(double f) { return {Kind::relative_to_max, f}; }
  std::string describe() const;
};

ThresholdPolicy parse_threshold_policy(std::string_view text);

// Candidate images of a round: both boards, deduplicated, first-seen order.
std::vector<std::string> round_images(const GameRound& round);

// scores(k, i): utterance k against image i. Each image gets its
// best-scoring utterance (lowest index on ties) if the policy admits it.
std::vector<ChainLink> extract_from_scores(const std::string& game_id, int round_index,
                                           const std::vector<std::string>& image_ids,
                                           const Eigen::MatrixXd& scores, const ThresholdPolicy& policy);

Eigen::MatrixXd score_round(const GameRound& round, const std::vector<std::string>& image_ids,
                            const RelevanceScorer& scorer, const ImageStore& images);

std::vector<ChainLink> extract_chains(const GameRound& round, const RelevanceScorer& scorer,
                                      const ImageStore& images, const ThresholdPolicy& policy);

struct ChainScores {
  double precision = 0.0;
  double recall = 0.0;
  bool precision_undefined = false;  // nothing was extracted
  int correct = 0;
  int extracted = 0;
  int gold = 0;
};

// Throws EvaluationError when gold is empty.
ChainScores evaluate_chains(const std::vector<ChainLink>& extracted, const std::vector<ChainLink>& gold);

struct PredictionRecord {
  std::string id;
  std::string predicted;
  std::string gold;
  double confidence = 0.0;
  std::string context;
};

// The `top_n` most confident records whose prediction disagrees with gold.
std::vector<PredictionRecord> inspect_failures(std::vector<PredictionRecord> records, int top_n);

std::vector<ChainLink> read_chains(std::istream& in);
std::vector<ChainLink> load_chains(const std::filesystem::path& path);
void write_chains(std::ostream& out, const std::vector<ChainLink>& links);
void save_chains(const std::filesystem::path& path, const std::vector<ChainLink>& links);

}  // namespace pbl
