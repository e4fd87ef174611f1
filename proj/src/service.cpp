#include "pbl/service.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include "pbl/errors.hpp"

namespace pbl {

std::string_view to_string(Speaker s) { return s == Speaker::human ? "human" : "partner"; }

Speaker parse_speaker(std::string_view text) {
  if (text == "human") return Speaker::human;
  if (text == "partner") return Speaker::partner;
  throw ValidationError("speaker must be 'human' or 'partner'");
}

namespace {

Belief row_belief(const Eigen::Vector3d& v) { return {v(0), v(1), v(2)}; }

Mark decide(const Belief& b) {
  return b[static_cast<int>(Label::different)] > b[static_cast<int>(Label::common)] ? Mark::different : Mark::common;
}

nlohmann::json belief_json(const TargetBelief& b) {
  return {{"image_index", b.image_index},
          {"undecided", b.belief[0]},
          {"common", b.belief[1]},
          {"different", b.belief[2]}};
}

nlohmann::json beliefs_json(const std::array<TargetBelief, kTargetsPerPlayer>& beliefs) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& b : beliefs) out.push_back(belief_json(b));
  return out;
}

nlohmann::json triple(const Belief& b) { return {b[0], b[1], b[2]}; }

}  // namespace

SessionManager::SessionManager(std::shared_ptr<const FeaturePipeline> pipeline,
                               std::optional<std::filesystem::path> journal)
    : pipeline_(std::move(pipeline)) {
  if (!pipeline_) throw ContractError("session manager needs a feature pipeline");
  if (journal) {
    journal_.emplace(*journal, std::ios::app);
    if (!*journal_) throw IoError("cannot open journal " + journal->string());
  }
}

void SessionManager::register_checkpoint(const std::string& id, std::shared_ptr<const ListenerModel> model) {
  if (!model) throw ContractError("null model for checkpoint " + id);
  std::unique_lock lock(registry_mutex_);
  checkpoints_[id] = std::move(model);
}

bool SessionManager::has_checkpoint(const std::string& id) const {
  std::shared_lock lock(registry_mutex_);
  return checkpoints_.count(id) > 0;
}

std::size_t SessionManager::session_count() const {
  std::shared_lock lock(registry_mutex_);
  return sessions_.size();
}

void SessionManager::journal(const nlohmann::json& event) {
  if (!journal_) return;
  std::lock_guard lock(journal_mutex_);
  *journal_ << event.dump() << '\n';
  journal_->flush();
}

std::shared_ptr<SessionManager::Session> SessionManager::find(const std::string& id) const {
  std::shared_lock lock(registry_mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFoundError("no session '" + id + "'");
  return it->second;
}

std::string SessionManager::create_session(const CreateSessionRequest& req) {
  if (req.images.size() != kImagesPerPlayer)
    throw ValidationError("a session needs exactly 6 images, got " + std::to_string(req.images.size()));
  if (req.targets.size() != kTargetsPerPlayer)
    throw ValidationError("a session needs exactly 3 targets, got " + std::to_string(req.targets.size()));
  std::set<int> distinct;
  for (int t : req.targets) {
    if (t < 1 || t > kImagesPerPlayer) throw ValidationError("target index " + std::to_string(t) + " outside 1..6");
    if (!distinct.insert(t).second) throw ValidationError("target indices must be distinct");
  }
  std::set<std::string> ids;
  for (const auto& img : req.images) {
    if (img.image_id.empty()) throw ValidationError("image without an id");
    if (!ids.insert(img.image_id).second) throw ValidationError("duplicate image " + img.image_id);
  }

  std::shared_ptr<const ListenerModel> model;
  {
    std::shared_lock lock(registry_mutex_);
    auto it = checkpoints_.find(req.checkpoint_id);
    if (it == checkpoints_.end()) throw NotFoundError("unknown checkpoint '" + req.checkpoint_id + "'");
    model = it->second;
  }

  auto s = std::make_shared<Session>();
  std::copy(req.images.begin(), req.images.end(), s->refs.begin());
  try {
    s->images = pipeline_->load_images(s->refs);
  } catch (const Error& e) {
    throw ValidationError(std::string("cannot load session images: ") + e.what());
  }
  std::array<int, kTargetsPerPlayer> targets{};
  std::copy(req.targets.begin(), req.targets.end(), targets.begin());
  s->gold = req.gold;
  s->listener = std::make_unique<ListenerSession>(model, pipeline_->tokenizer_ptr(), pipeline_->visual_for(s->refs),
                                                  targets);
  for (std::size_t i = 0; i < kTargetsPerPlayer; ++i)
    s->beliefs[i] = {targets[i], {1.0 / 3, 1.0 / 3, 1.0 / 3}};

  {
    std::unique_lock lock(registry_mutex_);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "s%06llu", static_cast<unsigned long long>(next_id_++));
    s->id = buf;
    sessions_[s->id] = s;
  }
  nlohmann::json images = nlohmann::json::array();
  for (const auto& r : s->refs) images.push_back(r.image_id);
  journal({{"event", "create"}, {"session", s->id}, {"images", images}, {"targets", req.targets},
           {"checkpoint", req.checkpoint_id}});
  return s->id;
}

UtteranceResult SessionManager::post_utterance(const std::string& id, Speaker speaker, const std::string& text,
                                               bool with_trajectory) {
  auto s = find(id);
  std::unique_lock lock(s->mutex);
  if (s->status != SessionStatus::open) throw StateError("session " + id + " is closed");
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) throw ValidationError("utterance text is empty");

  const RelevanceRow row = pipeline_->relevance_row(text, s->images);
  ListenerSession::Utterance u{s->listener->num_utterances(), speaker == Speaker::human, text};
  auto step = s->listener->step(u, row);

  UtteranceResult out;
  out.utterance_index = step.utterance_index;
  out.relevance = row;
  for (std::size_t i = 0; i < kTargetsPerPlayer; ++i) {
    s->beliefs[i].belief = row_belief(step.latest[i]);
    out.beliefs[i] = s->beliefs[i];
  }
  if (with_trajectory) out.trajectory = step.trajectory;
  s->utterances.emplace_back(speaker, text);
  ++s->version;
  s->changed.notify_all();
  lock.unlock();
  journal({{"event", "utterance"}, {"session", id}, {"speaker", to_string(speaker)}, {"text", text}});
  return out;
}

MarkRecord SessionManager::post_mark(const std::string& id, int image_index, Mark mark) {
  auto s = find(id);
  std::unique_lock lock(s->mutex);
  if (s->status != SessionStatus::open) throw StateError("session " + id + " is closed");
  const auto& targets = s->listener->targets();
  auto it = std::find(targets.begin(), targets.end(), image_index);
  if (it == targets.end()) throw ValidationError("image " + std::to_string(image_index) + " is not a target");
  for (const auto& m : s->marks)
    if (m.image_index == image_index) throw StateError("image " + std::to_string(image_index) + " is already marked");
  MarkRecord rec;
  rec.image_index = image_index;
  rec.mark = mark;
  rec.position = s->listener->num_utterances();
  rec.belief_at_mark = s->beliefs[static_cast<std::size_t>(it - targets.begin())].belief;
  s->marks.push_back(rec);
  ++s->version;
  s->changed.notify_all();
  lock.unlock();
  journal({{"event", "mark"}, {"session", id}, {"image_index", image_index}, {"mark", to_string(mark)},
           {"position", rec.position}});
  return rec;
}

ScoreReport SessionManager::close_session(const std::string& id) {
  auto s = find(id);
  std::unique_lock lock(s->mutex);
  if (s->status != SessionStatus::open) throw StateError("session " + id + " is already closed");
  if (s->marks.size() != kTargetsPerPlayer)
    throw StateError("all 3 targets must be marked before closing (" + std::to_string(s->marks.size()) + " marked)");
  ScoreReport rep;
  rep.session_id = id;
  rep.utterances = s->listener->num_utterances();
  int human = 0, model = 0;
  for (std::size_t i = 0; i < kTargetsPerPlayer; ++i) {
    TargetReport& t = rep.targets[i];
    t.image_index = s->beliefs[i].image_index;
    const MarkRecord& m = *std::find_if(s->marks.begin(), s->marks.end(),
                                        [&](const MarkRecord& r) { return r.image_index == t.image_index; });
    t.human_mark = m.mark;
    t.mark_position = m.position;
    t.belief_at_mark = m.belief_at_mark;
    t.belief_at_close = s->beliefs[i].belief;
    t.model_at_mark = decide(t.belief_at_mark);
    t.model_at_close = decide(t.belief_at_close);
    if (s->gold) {
      t.gold = (*s->gold)[i];
      human += t.human_mark == *t.gold ? 1 : 0;
      model += t.model_at_close == *t.gold ? 1 : 0;
    }
  }
  if (s->gold) {
    rep.human_correct = human;
    rep.model_correct = model;
  }
  s->status = SessionStatus::closed;
  s->report = rep;
  ++s->version;
  s->changed.notify_all();
  lock.unlock();
  journal({{"event", "close"}, {"session", id}, {"report", to_json(rep)}});
  return rep;
}

SessionView SessionManager::snapshot(const Session& s) const {
  SessionView v;
  v.session_id = s.id;
  v.status = s.status;
  v.images = s.refs;
  v.targets = s.listener->targets();
  v.utterances = s.utterances;
  v.beliefs = s.beliefs;
  v.marks = s.marks;
  v.report = s.report;
  v.version = s.version;
  return v;
}

SessionView SessionManager::view(const std::string& id) const {
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  return snapshot(*s);
}

SessionView SessionManager::wait_for_update(const std::string& id, std::uint64_t since,
                                            std::chrono::milliseconds timeout) const {
  auto s = find(id);
  std::unique_lock lock(s->mutex);
  s->changed.wait_for(lock, timeout, [&] { return s->version > since; });
  return snapshot(*s);
}

std::optional<ImageRef> SessionManager::find_image(const std::string& image_id) const {
  std::shared_lock lock(registry_mutex_);
  for (const auto& [id, s] : sessions_)
    for (const auto& r : s->refs)
      if (r.image_id == image_id) return r;
  return std::nullopt;
}

// --- JSON ------------------------------------------------------------------

nlohmann::json to_json(const UtteranceResult& r) {
  nlohmann::json j{{"utterance_index", r.utterance_index},
                   {"beliefs", beliefs_json(r.beliefs)},
                   {"relevance", r.relevance}};
  if (r.trajectory) {
    nlohmann::json traj = nlohmann::json::array();
    for (const auto& m : *r.trajectory) {
      nlohmann::json rows = nlohmann::json::array();
      for (Eigen::Index t = 0; t < m.rows(); ++t) rows.push_back({m(t, 0), m(t, 1), m(t, 2)});
      traj.push_back(rows);
    }
    j["trajectory"] = traj;
  }
  return j;
}

nlohmann::json to_json(const MarkRecord& r) {
  return {{"image_index", r.image_index},
          {"mark", to_string(r.mark)},
          {"position", r.position},
          {"belief_at_mark", triple(r.belief_at_mark)}};
}

nlohmann::json to_json(const ScoreReport& r) {
  nlohmann::json targets = nlohmann::json::array();
  for (const auto& t : r.targets) {
    nlohmann::json j{{"image_index", t.image_index},
                     {"human_mark", to_string(t.human_mark)},
                     {"mark_position", t.mark_position},
                     {"belief_at_mark", triple(t.belief_at_mark)},
                     {"belief_at_close", triple(t.belief_at_close)},
                     {"model_at_mark", to_string(t.model_at_mark)},
                     {"model_at_close", to_string(t.model_at_close)}};
    j["gold"] = t.gold ? nlohmann::json(to_string(*t.gold)) : nlohmann::json(nullptr);
    targets.push_back(j);
  }
  nlohmann::json j{{"session_id", r.session_id}, {"utterances", r.utterances}, {"targets", targets}};
  j["human_correct"] = r.human_correct ? nlohmann::json(*r.human_correct) : nlohmann::json(nullptr);
  j["model_correct"] = r.model_correct ? nlohmann::json(*r.model_correct) : nlohmann::json(nullptr);
  return j;
}

nlohmann::json to_json(const SessionView& v) {
  nlohmann::json images = nlohmann::json::array();
  for (const auto& r : v.images) images.push_back({{"id", r.image_id}, {"uri", "/images/" + r.image_id}});
  nlohmann::json utterances = nlohmann::json::array();
  for (const auto& [sp, text] : v.utterances) utterances.push_back({{"speaker", to_string(sp)}, {"text", text}});
  nlohmann::json marks = nlohmann::json::array();
  for (const auto& m : v.marks) marks.push_back(to_json(m));
  nlohmann::json j{{"session_id", v.session_id},
                   {"status", v.status == SessionStatus::open ? "open" : "closed"},
                   {"images", images},
                   {"targets", v.targets},
                   {"utterances", utterances},
                   {"beliefs", beliefs_json(v.beliefs)},
                   {"marks", marks},
                   {"version", v.version}};
  j["report"] = v.report ? to_json(*v.report) : nlohmann::json(nullptr);
  return j;
}

CreateSessionRequest create_request_from_json(const nlohmann::json& j) {
  CreateSessionRequest req;
  try {
    for (const auto& img : j.at("images")) {
      ImageRef ref;
      if (img.is_string()) {
        ref.image_id = img.get<std::string>();
      } else {
        ref.image_id = img.at("id").get<std::string>();
        ref.uri = img.value("uri", std::string());
        if (img.contains("theme")) ref.theme = img["theme"].get<Theme>();
      }
      req.images.push_back(std::move(ref));
    }
    req.targets = j.at("targets").get<std::vector<int>>();
    req.checkpoint_id = j.value("checkpoint", req.checkpoint_id);
    if (j.contains("gold") && !j["gold"].is_null()) {
      const auto gold = j["gold"].get<std::vector<std::string>>();
      if (gold.size() != kTargetsPerPlayer) throw ValidationError("gold needs one mark per target");
      std::array<Mark, kTargetsPerPlayer> g{};
      for (std::size_t i = 0; i < kTargetsPerPlayer; ++i) g[i] = parse_mark(gold[i]);
      req.gold = g;
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed session request: ") + e.what());
  }
  return req;
}

}  // namespace pbl
