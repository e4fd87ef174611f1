#include "pbl/refchain.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include "json.hpp"
#include "pbl/errors.hpp"

namespace pbl {

std::vector<ReferenceChain> group_chains(std::vector<ChainLink> links) {
  std::sort(links.begin(), links.end());
  std::vector<ReferenceChain> out;
  for (const auto& l : links) {
    if (out.empty() || out.back().game_id != l.game_id || out.back().image_id != l.image_id)
      out.push_back({l.game_id, l.image_id, {}});
    out.back().links.emplace_back(l.round, l.utterance_index);
  }
  return out;
}

std::string ThresholdPolicy::describe() const {
  switch (kind) {
    case Kind::top_one: return "top1";
    case Kind::absolute: return "abs:" + std::to_string(value);
    case Kind::relative_to_max: return "rel:" + std::to_string(value);
  }
  return "?";
}

ThresholdPolicy parse_threshold_policy(std::string_view text) {
  if (text == "top1") return ThresholdPolicy::top_one();
  auto number = [&](std::size_t skip) {
    try {
      return std::stod(std::string(text.substr(skip)));
    } catch (const std::exception&) {
      throw ConfigError("bad threshold policy '" + std::string(text) + "'");
    }
  };
  if (text.starts_with("abs:")) return ThresholdPolicy::absolute(number(4));
  if (text.starts_with("rel:")) return ThresholdPolicy::relative(number(4));
  throw ConfigError("threshold policy must be top1, abs:<score> or rel:<fraction>");
}

std::vector<std::string> round_images(const GameRound& round) {
  std::vector<std::string> ids;
  for (const auto& board : round.players)
    for (const auto& img : board.images)
      if (std::find(ids.begin(), ids.end(), img.image_id) == ids.end()) ids.push_back(img.image_id);
  return ids;
}

std::vector<ChainLink> extract_from_scores(const std::string& game_id, int round_index,
                                           const std::vector<std::string>& image_ids,
                                           const Eigen::MatrixXd& scores, const ThresholdPolicy& policy) {
  std::vector<ChainLink> out;
  if (scores.rows() == 0) return out;
  if (scores.cols() != static_cast<Eigen::Index>(image_ids.size()))
    throw ContractError("score matrix has " + std::to_string(scores.cols()) + " columns for " +
                        std::to_string(image_ids.size()) + " images");
  const double round_max = scores.maxCoeff();
  for (Eigen::Index i = 0; i < scores.cols(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < scores.rows(); ++k)
      if (scores(k, i) > scores(best, i)) best = k;
    const double s = scores(best, i);
    bool keep = true;
    switch (policy.kind) {
      case ThresholdPolicy::Kind::top_one: break;
      case ThresholdPolicy::Kind::absolute: keep = s >= policy.value; break;
      case ThresholdPolicy::Kind::relative_to_max: keep = s > 0 && s >= policy.value * round_max; break;
    }
    if (keep)
      out.push_back({game_id, image_ids[static_cast<std::size_t>(i)], round_index, static_cast<int>(best), {}});
  }
  return out;
}

Eigen::MatrixXd score_round(const GameRound& round, const std::vector<std::string>& image_ids,
                            const RelevanceScorer& scorer, const ImageStore& images) {
  std::vector<Image> loaded;
  for (const auto& id : image_ids) {
    const ImageRef* ref = nullptr;
    for (const auto& board : round.players)
      for (const auto& img : board.images)
        if (img.image_id == id) ref = &img;
    loaded.push_back(images.load(*ref));
  }
  Eigen::MatrixXd scores(static_cast<Eigen::Index>(round.utterances.size()),
                         static_cast<Eigen::Index>(image_ids.size()));
  for (std::size_t k = 0; k < round.utterances.size(); ++k)
    for (std::size_t i = 0; i < loaded.size(); ++i)
      scores(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)) =
          scorer.score(round.utterances[k].text, loaded[i]);
  return scores;
}

std::vector<ChainLink> extract_chains(const GameRound& round, const RelevanceScorer& scorer,
                                      const ImageStore& images, const ThresholdPolicy& policy) {
  auto ids = round_images(round);
  return extract_from_scores(round.game_id, round.round_index, ids, score_round(round, ids, scorer, images),
                             policy);
}

ChainScores evaluate_chains(const std::vector<ChainLink>& extracted, const std::vector<ChainLink>& gold) {
  if (gold.empty()) throw EvaluationError("gold chain set is empty");
  std::set<ChainLink> gold_set(gold.begin(), gold.end());
  std::set<ChainLink> extracted_set(extracted.begin(), extracted.end());
  ChainScores s;
  s.gold = static_cast<int>(gold_set.size());
  s.extracted = static_cast<int>(extracted_set.size());
  for (const auto& l : extracted_set) s.correct += gold_set.count(l) ? 1 : 0;
  s.recall = static_cast<double>(s.correct) / s.gold;
  if (s.extracted == 0) {
    s.precision_undefined = true;
    s.precision = 0.0;
  } else {
    s.precision = static_cast<double>(s.correct) / s.extracted;
  }
  return s;
}

std::vector<PredictionRecord> inspect_failures(std::vector<PredictionRecord> records, int top_n) {
  std::vector<PredictionRecord> wrong;
  for (auto& r : records)
    if (r.predicted != r.gold) wrong.push_back(std::move(r));
  std::stable_sort(wrong.begin(), wrong.end(),
                   [](const auto& a, const auto& b) { return a.confidence > b.confidence; });
  if (top_n < static_cast<int>(wrong.size())) wrong.resize(static_cast<std::size_t>(std::max(top_n, 0)));
  return wrong;
}

std::vector<ChainLink> read_chains(std::istream& in) {
  std::vector<ChainLink> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      ChainLink l;
      l.game_id = j.at("game_id").get<std::string>();
      l.image_id = j.at("image_id").get<std::string>();
      l.round = j.at("round").get<int>();
      l.utterance_index = j.at("utterance_index").get<int>();
      l.annotator = j.value("annotator", std::string());
      out.push_back(std::move(l));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("chain file line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<ChainLink> load_chains(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return read_chains(in);
}

void write_chains(std::ostream& out, const std::vector<ChainLink>& links) {
  for (const auto& l : links) {
    nlohmann::ordered_json j{{"game_id", l.game_id},
                             {"image_id", l.image_id},
                             {"round", l.round},
                             {"utterance_index", l.utterance_index}};
    if (!l.annotator.empty()) j["annotator"] = l.annotator;
    out << j.dump() << '\n';
  }
}

void save_chains(const std::filesystem::path& path, const std::vector<ChainLink>& links) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  write_chains(out, links);
}

}  // namespace pbl
