#include "pbl/gamedata.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include "json.hpp"
#include "pbl/errors.hpp"
#include "pbl/util.hpp"

namespace pbl {

using ordered_json = nlohmann::ordered_json;

std::string_view to_string(Mark mark) { return mark == Mark::common ? "common" : "different"; }

Mark parse_mark(std::string_view text) {
  if (text == "common") return Mark::common;
  if (text == "different") return Mark::different;
  throw ValidationError("unknown mark '" + std::string(text) + "'");
}

std::string theme_key(const Theme& theme) { return theme[0] + " & " + theme[1]; }

const PlayerBoard& GameRound::board(std::string_view player_id) const {
  for (const auto& p : players)
    if (p.player_id == player_id) return p;
  throw ValidationError("round " + game_id + ":" + std::to_string(round_index) +
                        " has no player '" + std::string(player_id) + "'");
}

const PlayerBoard& GameRound::partner_board(std::string_view player_id) const {
  if (players[0].player_id == player_id) return players[1];
  if (players[1].player_id == player_id) return players[0];
  throw ValidationError("round " + game_id + ":" + std::to_string(round_index) +
                        " has no player '" + std::string(player_id) + "'");
}

bool GameRound::is_shared(std::string_view player_id, int index) const {
  const std::string& id = board(player_id).image(index).image_id;
  const auto& other = partner_board(player_id).images;
  return std::any_of(other.begin(), other.end(),
                     [&](const ImageRef& r) { return r.image_id == id; });
}

PerspectiveInstance::PerspectiveInstance(std::shared_ptr<const GameRound> round, int self_slot)
    : round_(std::move(round)), self_slot_(self_slot) {
  if (self_slot_ != 0 && self_slot_ != 1) throw ContractError("self_slot must be 0 or 1");
  id_ = round_->game_id + ":" + std::to_string(round_->round_index) + ":" + self_id();
  for (int s = 0; s < kTargetsPerPlayer; ++s) {
    gold_[static_cast<std::size_t>(s)] =
        round_->is_shared(self_id(), board().targets[static_cast<std::size_t>(s)]) ? Mark::common
                                                                                 : Mark::different;
  }
}

const std::string& PerspectiveInstance::self_id() const {
  return round_->players[static_cast<std::size_t>(self_slot_)].player_id;
}
const std::string& PerspectiveInstance::partner_id() const {
  return round_->players[static_cast<std::size_t>(1 - self_slot_)].player_id;
}
const PlayerBoard& PerspectiveInstance::board() const {
  return round_->players[static_cast<std::size_t>(self_slot_)];
}

std::vector<MarkAction> PerspectiveInstance::own_marks() const {
  std::vector<MarkAction> out;
  for (const auto& m : round_->marks)
    if (m.actor == self_id()) out.push_back(m);
  return out;
}

Mark PerspectiveInstance::gold_for_image(int image_index) const {
  for (int s = 0; s < kTargetsPerPlayer; ++s)
    if (targets()[static_cast<std::size_t>(s)] == image_index) return gold_[static_cast<std::size_t>(s)];
  throw ContractError("image " + std::to_string(image_index) + " is not a target of " + id_);
}

std::string PerspectiveInstance::player_pair_key() const {
  std::string a = self_id(), b = partner_id();
  if (b < a) std::swap(a, b);
  return a + "|" + b;
}

namespace {

std::string board_key(const PlayerBoard& board) {
  std::vector<std::string> ids;
  for (const auto& img : board.images) ids.push_back(img.image_id);
  std::sort(ids.begin(), ids.end());
  std::string key;
  for (const auto& id : ids) key += id + ",";
  return key;
}

}  // namespace

std::string PerspectiveInstance::combination_key() const {
  std::string a = board_key(round_->players[0]), b = board_key(round_->players[1]);
  if (b < a) std::swap(a, b);
  return a + "|" + b;
}

// --- parsing ---------------------------------------------------------------

namespace {

class RecordContext {
 public:
  explicit RecordContext(std::size_t line) : where_("line " + std::to_string(line)) {}
  RecordContext(const RecordContext& parent, const std::string& more)
      : where_(parent.where_ + ", " + more) {}
  [[noreturn]] void fail(const std::string& msg) const { throw ParseError(where_ + ": " + msg); }
  [[noreturn]] void invalid(const std::string& msg) const {
    throw ValidationError(where_ + ": " + msg);
  }
  const std::string& where() const { return where_; }

 private:
  std::string where_;
};

const ordered_json& require(const ordered_json& obj, const char* key, const RecordContext& ctx) {
  if (!obj.is_object()) ctx.fail("expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) ctx.fail(std::string("missing field '") + key + "'");
  return *it;
}

std::string require_string(const ordered_json& obj, const char* key, const RecordContext& ctx) {
  const auto& v = require(obj, key, ctx);
  if (!v.is_string()) ctx.fail(std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

int require_int(const ordered_json& obj, const char* key, const RecordContext& ctx) {
  const auto& v = require(obj, key, ctx);
  if (!v.is_number_integer()) ctx.fail(std::string("field '") + key + "' must be an integer");
  return v.get<int>();
}

ImageRef parse_image(const ordered_json& j, const RecordContext& ctx) {
  ImageRef ref;
  ref.image_id = require_string(j, "id", ctx);
  const auto& theme = require(j, "theme", ctx);
  if (!theme.is_array() || theme.size() != 2 || !theme[0].is_string() || !theme[1].is_string())
    ctx.fail("image theme must be a pair of category names");
  ref.theme = {theme[0].get<std::string>(), theme[1].get<std::string>()};
  ref.uri = j.contains("uri") && j["uri"].is_string() ? j["uri"].get<std::string>() : "";
  return ref;
}

PlayerBoard parse_board(const std::string& player_id, const ordered_json& j,
                        const RecordContext& ctx) {
  PlayerBoard board;
  board.player_id = player_id;
  const auto& images = require(j, "images", ctx);
  if (!images.is_array() || images.size() != kImagesPerPlayer)
    ctx.fail("player must have exactly 6 images");
  for (std::size_t i = 0; i < images.size(); ++i)
    board.images[i] = parse_image(images[i], RecordContext(ctx, "image " + std::to_string(i + 1)));
  const auto& targets = require(j, "targets", ctx);
  if (!targets.is_array() || targets.size() != kTargetsPerPlayer)
    ctx.fail("player must have exactly 3 targets");
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (!targets[i].is_number_integer()) ctx.fail("target indices must be integers");
    int t = targets[i].get<int>();
    if (t < 1 || t > kImagesPerPlayer) ctx.invalid("target index " + std::to_string(t) + " outside 1..6");
    board.targets[i] = t;
  }
  std::set<int> distinct(board.targets.begin(), board.targets.end());
  if (distinct.size() != kTargetsPerPlayer) ctx.invalid("target indices must be distinct");
  return board;
}

GameRound parse_round(const std::string& game_id, const ordered_json& j, const RecordContext& ctx) {
  GameRound round;
  round.game_id = game_id;
  round.round_index = require_int(j, "round_index", ctx);
  if (round.round_index < 1 || round.round_index > 5) ctx.fail("round_index must be in 1..5");

  const auto& players = require(j, "players", ctx);
  if (!players.is_object() || players.size() != 2) ctx.fail("round must have exactly 2 players");
  std::size_t slot = 0;
  for (const auto& [pid, pj] : players.items())
    round.players[slot++] = parse_board(pid, pj, RecordContext(ctx, "player " + pid));

  const Theme& theme = round.players[0].images[0].theme;
  for (const auto& p : round.players)
    for (const auto& img : p.images)
      if (img.theme != theme) ctx.invalid("image " + img.image_id + " has a different theme");

  const auto& events = require(j, "events", ctx);
  if (!events.is_array()) ctx.fail("events must be an array");
  std::set<std::pair<std::string, int>> marked;
  for (std::size_t e = 0; e < events.size(); ++e) {
    RecordContext ectx(ctx, "event " + std::to_string(e + 1));
    const auto& ev = events[e];
    std::string type = require_string(ev, "type", ectx);
    std::string actor = require_string(ev, "actor", ectx);
    if (actor != round.players[0].player_id && actor != round.players[1].player_id)
      ectx.invalid("unknown actor '" + actor + "'");
    const auto& payload = require(ev, "payload", ectx);
    if (type == "utterance") {
      round.utterances.push_back({actor, require_string(payload, "text", ectx)});
    } else if (type == "mark") {
      MarkAction m;
      m.actor = actor;
      m.image_index = require_int(payload, "image_index", ectx);
      std::string mark = require_string(payload, "mark", ectx);
      if (mark != "common" && mark != "different") ectx.fail("mark must be common or different");
      m.mark = parse_mark(mark);
      if (m.image_index < 1 || m.image_index > kImagesPerPlayer)
        ectx.invalid("mark references unknown image " + std::to_string(m.image_index));
      const auto& targets = round.board(actor).targets;
      if (std::find(targets.begin(), targets.end(), m.image_index) == targets.end())
        ectx.invalid("mark references image " + std::to_string(m.image_index) +
                     " which is not a target of " + actor);
      if (!marked.insert({actor, m.image_index}).second)
        ectx.invalid("image " + std::to_string(m.image_index) + " marked twice by " + actor);
      m.position = static_cast<int>(round.utterances.size());
      round.marks.push_back(m);
    } else {
      ectx.fail("unknown event type '" + type + "'");
    }
  }
  return round;
}

}  // namespace

std::vector<GameRound> parse_game_log(std::istream& in) {
  std::vector<GameRound> rounds;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    RecordContext ctx(line_no);
    ordered_json record;
    try {
      record = ordered_json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      ctx.fail(std::string("malformed record: ") + e.what());
    }
    std::string game_id = require_string(record, "game_id", ctx);
    RecordContext gctx(ctx, "game " + game_id);
    const auto& rj = require(record, "rounds", gctx);
    if (!rj.is_array()) gctx.fail("rounds must be an array");
    for (std::size_t r = 0; r < rj.size(); ++r)
      rounds.push_back(parse_round(game_id, rj[r], RecordContext(gctx, "round " + std::to_string(r + 1))));
  }
  return rounds;
}

std::vector<GameRound> parse_game_log(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_game_log(in);
}

std::vector<GameRound> load_game_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open game log '" + path + "'");
  return parse_game_log(in);
}

void write_game_log(std::ostream& out, const std::vector<GameRound>& rounds) {
  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<const GameRound*>> by_game;
  for (const auto& r : rounds) {
    auto [it, fresh] = by_game.try_emplace(r.game_id);
    if (fresh) order.push_back(r.game_id);
    it->second.push_back(&r);
  }
  for (const auto& game_id : order) {
    ordered_json game;
    game["game_id"] = game_id;
    game["rounds"] = ordered_json::array();
    for (const GameRound* r : by_game[game_id]) {
      ordered_json rj;
      rj["round_index"] = r->round_index;
      ordered_json players = ordered_json::object();
      for (const auto& p : r->players) {
        ordered_json pj;
        pj["images"] = ordered_json::array();
        for (const auto& img : p.images)
          pj["images"].push_back({{"id", img.image_id}, {"theme", img.theme}, {"uri", img.uri}});
        pj["targets"] = p.targets;
        players[p.player_id] = pj;
      }
      rj["players"] = players;
      ordered_json events = ordered_json::array();
      auto emit_marks_at = [&](int position) {
        for (const auto& m : r->marks)
          if (m.position == position)
            events.push_back({{"type", "mark"},
                              {"actor", m.actor},
                              {"payload", {{"image_index", m.image_index}, {"mark", to_string(m.mark)}}}});
      };
      emit_marks_at(0);
      for (std::size_t k = 0; k < r->utterances.size(); ++k) {
        events.push_back({{"type", "utterance"},
                          {"actor", r->utterances[k].speaker},
                          {"payload", {{"text", r->utterances[k].text}}}});
        emit_marks_at(static_cast<int>(k + 1));
      }
      rj["events"] = events;
      game["rounds"].push_back(rj);
    }
    out << game.dump() << '\n';
  }
}

// --- filtering -------------------------------------------------------------

SpawnResult spawn_instances(const std::vector<GameRound>& rounds) {
  SpawnResult result;
  for (const auto& round : rounds) {
    ++result.audit.rounds_seen;
    std::string reason;
    if (round.utterances.empty() ||
        std::any_of(round.marks.begin(), round.marks.end(),
                    [](const MarkAction& m) { return m.position == 0; })) {
      reason = "early_mark";
      ++result.audit.early_mark_drops;
    } else {
      for (const auto& player : round.players) {
        for (int target : player.targets) {
          const MarkAction* last = nullptr;
          for (const auto& m : round.marks)
            if (m.actor == player.player_id && m.image_index == target) last = &m;
          if (last == nullptr) {
            reason = "incomplete";
            break;
          }
          Mark truth = round.is_shared(player.player_id, target) ? Mark::common : Mark::different;
          if (last->mark != truth) {
            reason = "mistake";
            break;
          }
        }
        if (!reason.empty()) break;
      }
      if (reason == "incomplete") ++result.audit.incomplete_drops;
      if (reason == "mistake") ++result.audit.mistake_drops;
    }
    if (!reason.empty()) {
      result.audit.dropped_instances += 2;
      result.audit.dropped_rounds.push_back(round.game_id + ":" + std::to_string(round.round_index) +
                                            ":" + reason);
      continue;
    }
    ++result.audit.rounds_kept;
    auto shared = std::make_shared<const GameRound>(round);
    result.instances.push_back(std::make_shared<const PerspectiveInstance>(shared, 0));
    result.instances.push_back(std::make_shared<const PerspectiveInstance>(shared, 1));
  }
  return result;
}

// --- splitting -------------------------------------------------------------

std::string_view to_string(PartitionPolicy policy) {
  switch (policy) {
    case PartitionPolicy::theme_disjoint: return "theme-disjoint";
    case PartitionPolicy::repartition_images: return "repartition-I";
    case PartitionPolicy::repartition_players: return "repartition-P";
  }
  return "?";
}

PartitionPolicy parse_partition_policy(std::string_view text) {
  if (text == "theme-disjoint") return PartitionPolicy::theme_disjoint;
  if (text == "repartition-I") return PartitionPolicy::repartition_images;
  if (text == "repartition-P") return PartitionPolicy::repartition_players;
  throw ConfigError("unknown partition policy '" + std::string(text) + "'");
}

SplitRatios parse_ratios(std::string_view text) {
  auto parts = split(text, ',');
  if (parts.size() != 3) throw ConfigError("ratios must have three comma-separated values");
  double v[3];
  for (int i = 0; i < 3; ++i) {
    try {
      v[i] = std::stod(parts[static_cast<std::size_t>(i)]);
    } catch (const std::exception&) {
      throw ConfigError("bad ratio '" + parts[static_cast<std::size_t>(i)] + "'");
    }
    if (v[i] < 0) throw ConfigError("ratios must be non-negative");
  }
  double total = v[0] + v[1] + v[2];
  if (total <= 0) throw ConfigError("ratios must not all be zero");
  return {v[0] / total, v[1] / total, v[2] / total};
}

std::vector<std::string> DatasetSplit::instance_ids() const {
  std::vector<std::string> ids;
  ids.reserve(instances.size());
  for (const auto& inst : instances) ids.push_back(inst->id());
  return ids;
}

namespace {

struct Group {
  std::string key;
  InstanceList members;
};

std::vector<Group> group_by(const InstanceList& instances,
                            std::string (PerspectiveInstance::*key_fn)() const) {
  std::map<std::string, InstanceList> groups;
  for (const auto& inst : instances) groups[((*inst).*key_fn)()].push_back(inst);
  std::vector<Group> out;
  for (auto& [k, members] : groups) out.push_back({k, std::move(members)});
  return out;
}

SplitResult theme_disjoint_split(const InstanceList& instances, const SplitRatios& ratios,
                                 std::mt19937_64& rng) {
  auto themes = group_by(instances, &PerspectiveInstance::theme_key);
  const std::array<double, 3> weights{ratios.train, ratios.valid, ratios.test};
  const int needed = static_cast<int>(std::count_if(weights.begin(), weights.end(),
                                                    [](double w) { return w > 0; }));
  if (static_cast<int>(themes.size()) < needed) {
    std::string blocking = themes.empty() ? std::string("<none>") : themes.front().key;
    throw PartitionError("cannot make " + std::to_string(needed) +
                         " theme-disjoint splits: blocking theme '" + blocking + "' is the only theme" +
                         (themes.size() > 1 ? "s available" : " available"));
  }
  seeded_shuffle(themes, rng);
  std::stable_sort(themes.begin(), themes.end(), [](const Group& a, const Group& b) {
    return a.members.size() > b.members.size();
  });

  const double total = static_cast<double>(instances.size());
  std::array<double, 3> assigned{0, 0, 0};
  std::array<std::vector<const Group*>, 3> buckets;
  for (const auto& g : themes) {
    int best = -1;
    double best_deficit = -1e300;
    for (int s = 0; s < 3; ++s) {
      if (weights[static_cast<std::size_t>(s)] <= 0) continue;
      double deficit = weights[static_cast<std::size_t>(s)] * total - assigned[static_cast<std::size_t>(s)];
      if (buckets[static_cast<std::size_t>(s)].empty()) deficit += total;  // every split needs a theme
      if (deficit > best_deficit) {
        best_deficit = deficit;
        best = s;
      }
    }
    assigned[static_cast<std::size_t>(best)] += static_cast<double>(g.members.size());
    buckets[static_cast<std::size_t>(best)].push_back(&g);
  }

  SplitResult out;
  DatasetSplit* splits[3] = {&out.train, &out.valid, &out.test};
  const char* names[3] = {"train", "valid", "test"};
  for (int s = 0; s < 3; ++s) {
    splits[s]->name = names[s];
    splits[s]->policy = PartitionPolicy::theme_disjoint;
    for (const Group* g : buckets[static_cast<std::size_t>(s)])
      splits[s]->instances.insert(splits[s]->instances.end(), g->members.begin(), g->members.end());
  }
  return out;
}

// Moves whole groups from `pool` into validation while every value of
// `keep_key` in a moved group remains represented among the instances left
// behind for training.
void constrained_repartition(const InstanceList& pool, double valid_fraction,
                             std::string (PerspectiveInstance::*group_key)() const,
                             std::string (PerspectiveInstance::*keep_key)() const,
                             std::mt19937_64& rng, InstanceList& train, InstanceList& valid) {
  auto groups = group_by(pool, group_key);
  seeded_shuffle(groups, rng);
  std::map<std::string, int> remaining;
  for (const auto& inst : pool) ++remaining[((*inst).*keep_key)()];

  const auto target = static_cast<std::size_t>(valid_fraction * static_cast<double>(pool.size()) + 0.5);
  std::set<std::string> moved;
  std::size_t moved_count = 0;
  for (const auto& g : groups) {
    if (moved_count >= target) break;
    if (moved_count + g.members.size() > target + g.members.size() / 2) continue;
    std::map<std::string, int> take;
    for (const auto& inst : g.members) ++take[((*inst).*keep_key)()];
    bool ok = std::all_of(take.begin(), take.end(),
                          [&](const auto& kv) { return remaining[kv.first] - kv.second >= 1; });
    if (!ok) continue;
    for (const auto& [k, n] : take) remaining[k] -= n;
    moved.insert(g.key);
    moved_count += g.members.size();
  }
  for (const auto& inst : pool)
    (moved.count(((*inst).*group_key)()) ? valid : train).push_back(inst);
}

}  // namespace

SplitResult split_dataset(const InstanceList& instances, PartitionPolicy policy,
                          const SplitRatios& ratios, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  SplitResult base = theme_disjoint_split(instances, ratios, rng);
  if (policy == PartitionPolicy::theme_disjoint) return base;

  InstanceList pool = base.train.instances;
  pool.insert(pool.end(), base.valid.instances.begin(), base.valid.instances.end());
  std::sort(pool.begin(), pool.end(), [](const auto& a, const auto& b) { return a->id() < b->id(); });
  const double valid_fraction = ratios.valid / (ratios.train + ratios.valid);

  SplitResult out;
  out.test = base.test;
  out.train.name = "train";
  out.valid.name = "valid";
  if (policy == PartitionPolicy::repartition_images) {
    constrained_repartition(pool, valid_fraction, &PerspectiveInstance::combination_key,
                            &PerspectiveInstance::player_pair_key, rng, out.train.instances,
                            out.valid.instances);
  } else {
    constrained_repartition(pool, valid_fraction, &PerspectiveInstance::player_pair_key,
                            &PerspectiveInstance::combination_key, rng, out.train.instances,
                            out.valid.instances);
  }
  if (valid_fraction > 0 && out.valid.instances.empty())
    throw PartitionError(std::string("no group satisfies the ") + std::string(to_string(policy)) +
                         " constraint; validation split would be empty");
  for (DatasetSplit* s : {&out.train, &out.valid, &out.test}) s->policy = policy;
  return out;
}

std::uint64_t binomial(int n, int k) {
  if (k < 0 || k > n) return 0;
  k = std::min(k, n - k);
  std::uint64_t r = 1;
  for (int i = 1; i <= k; ++i) r = r * static_cast<std::uint64_t>(n - k + i) / static_cast<std::uint64_t>(i);
  return r;
}

std::uint64_t combination_count(int pool, int per_board, int min_common, int max_common) {
  std::uint64_t sum = 0;
  for (int c = min_common; c <= max_common; ++c)
    sum += binomial(per_board, c) * binomial(pool - c, per_board - c);
  return binomial(pool, per_board) * sum;
}

}  // namespace pbl
