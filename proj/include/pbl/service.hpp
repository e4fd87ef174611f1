#pragma once

// Live game sessions: a human (or scripted) player and a partner exchange
// utterances while the listener streams beliefs about the human's targets.

#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "json.hpp"
#include "pbl/listener.hpp"
#include "pbl/pipeline.hpp"

namespace pbl {

enum class Speaker { human, partner };
std::string_view to_string(Speaker s);
Speaker parse_speaker(std::string_view text);

enum class SessionStatus { open, closed };

using Belief = std::array<double, kNumLabels>;  // (undecided, common, different)

struct CreateSessionRequest {
  std::vector<ImageRef> images;  // must hold 6
  std::vector<int> targets;      // 3 distinct board indices, 1-based
  std::string checkpoint_id = "default";
  std::optional<std::array<Mark, kTargetsPerPlayer>> gold;  // per target, when known
};

struct TargetBelief {
  int image_index = 0;
  Belief belief{};
};

struct UtteranceResult {
  int utterance_index = 0;
  std::array<TargetBelief, kTargetsPerPlayer> beliefs;
  RelevanceRow relevance{};
  // Token-level rows of the new utterance, only when requested.
  std::optional<std::array<Eigen::MatrixXd, kTargetsPerPlayer>> trajectory;
};

struct MarkRecord {
  int image_index = 0;
  Mark mark = Mark::common;
  int position = 0;  // utterances seen when the mark was made
  Belief belief_at_mark{};
};

struct TargetReport {
  int image_index = 0;
  Mark human_mark = Mark::common;
  int mark_position = 0;
  Belief belief_at_mark{};
  Belief belief_at_close{};
  Mark model_at_mark = Mark::common;
  Mark model_at_close = Mark::common;
  std::optional<Mark> gold;
};

struct ScoreReport {
  std::string session_id;
  int utterances = 0;
  std::array<TargetReport, kTargetsPerPlayer> targets;
  std::optional<int> human_correct;  // set when gold is known
  std::optional<int> model_correct;
};

struct SessionView {
  std::string session_id;
  SessionStatus status = SessionStatus::open;
  std::array<ImageRef, kImagesPerPlayer> images;
  std::array<int, kTargetsPerPlayer> targets{};
  std::vector<std::pair<Speaker, std::string>> utterances;
  std::array<TargetBelief, kTargetsPerPlayer> beliefs;
  std::vector<MarkRecord> marks;
  std::optional<ScoreReport> report;
  std::uint64_t version = 0;
};

// Thread-safe. Operations on one session are serialized; different
// sessions proceed independently. Models are shared read-only.
class SessionManager {
 public:
  explicit SessionManager(std::shared_ptr<const FeaturePipeline> pipeline,
                          std::optional<std::filesystem::path> journal = std::nullopt);

  void register_checkpoint(const std::string& id, std::shared_ptr<const ListenerModel> model);
  bool has_checkpoint(const std::string& id) const;

  std::string create_session(const CreateSessionRequest& request);
  UtteranceResult post_utterance(const std::string& session_id, Speaker speaker, const std::string& text,
                                 bool with_trajectory = false);
  MarkRecord post_mark(const std::string& session_id, int image_index, Mark mark);
  ScoreReport close_session(const std::string& session_id);
  SessionView view(const std::string& session_id) const;
  // Blocks until the session's version exceeds `since` or the timeout
  // passes; returns the current view either way.
  SessionView wait_for_update(const std::string& session_id, std::uint64_t since,
                              std::chrono::milliseconds timeout) const;
  // Any session image with this id.
  std::optional<ImageRef> find_image(const std::string& image_id) const;
  const FeaturePipeline& pipeline() const { return *pipeline_; }
  std::size_t session_count() const;

 private:
  struct Session {
    mutable std::mutex mutex;
    mutable std::condition_variable changed;
    std::string id;
    SessionStatus status = SessionStatus::open;
    std::array<ImageRef, kImagesPerPlayer> refs;
    std::array<Image, kImagesPerPlayer> images;
    std::optional<std::array<Mark, kTargetsPerPlayer>> gold;
    std::unique_ptr<ListenerSession> listener;
    std::vector<std::pair<Speaker, std::string>> utterances;
    std::array<TargetBelief, kTargetsPerPlayer> beliefs;
    std::vector<MarkRecord> marks;
    std::optional<ScoreReport> report;
    std::uint64_t version = 0;
  };

  std::shared_ptr<Session> find(const std::string& id) const;
  SessionView snapshot(const Session& s) const;
  void journal(const nlohmann::json& event);

  std::shared_ptr<const FeaturePipeline> pipeline_;
  mutable std::shared_mutex registry_mutex_;
  std::map<std::string, std::shared_ptr<const ListenerModel>> checkpoints_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t next_id_ = 1;
  std::mutex journal_mutex_;
  std::optional<std::ofstream> journal_;
};

nlohmann::json to_json(const UtteranceResult& r);
nlohmann::json to_json(const MarkRecord& r);
nlohmann::json to_json(const ScoreReport& r);
nlohmann::json to_json(const SessionView& v);
CreateSessionRequest create_request_from_json(const nlohmann::json& j);

}  // namespace pbl
