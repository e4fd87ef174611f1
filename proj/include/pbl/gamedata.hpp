#pragma once

// Game logs, per-player perspective instances and dataset splits.
//
// Game-log schema (one JSON object per line):
//
//   {"game_id": "g0001",
//    "rounds": [
//      {"round_index": 1,
//       "players": {
//         "A": {"images": [{"id": "..", "theme": ["dog", "car"], "uri": ".."}, x6],
//               "targets": [1, 4, 5]},
//         "B": {...}},
//       "events": [
//         {"type": "utterance", "actor": "A", "payload": {"text": "..."}},
//         {"type": "mark", "actor": "B",
//          "payload": {"image_index": 4, "mark": "common"}}]}]}
//
// Image and target indices are 1-based. Events are in time order. A mark
// is stored with the index of the last utterance that preceded it (0 when
// it precedes every utterance). Retracting a mark is not representable.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace pbl {

inline constexpr int kImagesPerPlayer = 6;
inline constexpr int kTargetsPerPlayer = 3;

enum class Mark : std::uint8_t { common, different };

std::string_view to_string(Mark mark);
Mark parse_mark(std::string_view text);

using Theme = std::array<std::string, 2>;
std::string theme_key(const Theme& theme);

struct ImageRef {
  std::string image_id;
  Theme theme;
  std::string uri;

  bool operator==(const ImageRef&) const = default;
};

struct Utterance {
  std::string speaker;
  std::string text;
};

struct MarkAction {
  std::string actor;
  int image_index = 0;  // 1..6 in the actor's board
  Mark mark = Mark::common;
  int position = 0;  // index (1-based) of the last preceding utterance
};

struct PlayerBoard {
  std::string player_id;
  std::array<ImageRef, kImagesPerPlayer> images;
  std::array<int, kTargetsPerPlayer> targets{};  // 1-based, distinct

  const ImageRef& image(int index) const { return images.at(static_cast<std::size_t>(index - 1)); }
};

struct GameRound {
  std::string game_id;
  int round_index = 1;
  std::array<PlayerBoard, 2> players;
  std::vector<Utterance> utterances;
  std::vector<MarkAction> marks;

  const PlayerBoard& board(std::string_view player_id) const;
  const PlayerBoard& partner_board(std::string_view player_id) const;
  // Whether image `index` of `player_id`'s board is also on the partner's.
  bool is_shared(std::string_view player_id, int index) const;
  const Theme& theme() const { return players[0].images[0].theme; }
};

// One player's view of a round: the unit of training and evaluation.
class PerspectiveInstance {
 public:
  PerspectiveInstance(std::shared_ptr<const GameRound> round, int self_slot);

  const GameRound& round() const { return *round_; }
  std::shared_ptr<const GameRound> round_ptr() const { return round_; }
  const std::string& id() const { return id_; }
  const std::string& self_id() const;
  const std::string& partner_id() const;
  const PlayerBoard& board() const;
  const std::array<ImageRef, kImagesPerPlayer>& images() const { return board().images; }
  const std::array<int, kTargetsPerPlayer>& targets() const { return board().targets; }
  const std::vector<Utterance>& utterances() const { return round_->utterances; }
  // Marks made by this player, in time order.
  std::vector<MarkAction> own_marks() const;
  // Gold label per target slot, aligned with targets().
  const std::array<Mark, kTargetsPerPlayer>& gold_final_labels() const { return gold_; }
  Mark gold_for_image(int image_index) const;

  std::string theme_key() const { return pbl::theme_key(round_->theme()); }
  // Unordered pair of player ids.
  std::string player_pair_key() const;
  // Unordered pair of the two boards' image sets.
  std::string combination_key() const;

 private:
  std::shared_ptr<const GameRound> round_;
  int self_slot_;
  std::string id_;
  std::array<Mark, kTargetsPerPlayer> gold_{};
};

using InstanceList = std::vector<std::shared_ptr<const PerspectiveInstance>>;

// --- parsing ---------------------------------------------------------------

std::vector<GameRound> parse_game_log(std::istream& in);
std::vector<GameRound> parse_game_log(std::string_view text);
std::vector<GameRound> load_game_log(const std::string& path);
// Writes rounds grouped by game_id in first-seen order.
void write_game_log(std::ostream& out, const std::vector<GameRound>& rounds);

// --- filtering -------------------------------------------------------------

struct SpawnAudit {
  int rounds_seen = 0;
  int rounds_kept = 0;
  int mistake_drops = 0;     // a final mark disagrees with the true overlap
  int early_mark_drops = 0;  // a mark precedes the first utterance
  int incomplete_drops = 0;  // some target never marked
  int dropped_instances = 0;
  std::vector<std::string> dropped_rounds;  // "game:round:reason"
};

struct SpawnResult {
  InstanceList instances;
  SpawnAudit audit;
};

SpawnResult spawn_instances(const std::vector<GameRound>& rounds);

// --- splitting -------------------------------------------------------------

enum class PartitionPolicy { theme_disjoint, repartition_images, repartition_players };

std::string_view to_string(PartitionPolicy policy);
PartitionPolicy parse_partition_policy(std::string_view text);

struct SplitRatios {
  double train = 0.7;
  double valid = 0.1;
  double test = 0.2;
};

SplitRatios parse_ratios(std::string_view text);  // "70,10,20" or "0.7,0.1,0.2"

struct DatasetSplit {
  std::string name;
  PartitionPolicy policy = PartitionPolicy::theme_disjoint;
  InstanceList instances;

  std::vector<std::string> instance_ids() const;
};

struct SplitResult {
  DatasetSplit train;
  DatasetSplit valid;
  DatasetSplit test;
};

// Deterministic in (instances, policy, ratios, seed). The repartition
// policies keep the theme-disjoint test split and re-divide the remaining
// instances so that validation holds unseen image combinations with seen
// player pairs (images) or unseen player pairs with seen combinations
// (players).
SplitResult split_dataset(const InstanceList& instances, PartitionPolicy policy,
                          const SplitRatios& ratios, std::uint64_t seed);

// Count of two-board combinations drawn from a pool of `pool` images with
// `per_board` images per player and between `min_common` and `max_common`
// shared images, using sum_c C(pool, per_board) C(per_board, c)
// C(pool - c, per_board - c).
std::uint64_t combination_count(int pool, int per_board, int min_common, int max_common);
std::uint64_t binomial(int n, int k);

}  // namespace pbl
