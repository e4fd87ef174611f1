#include <algorithm>
#include <set>
#include <sstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "pbl/errors.hpp"
#include "pbl/gamedata.hpp"
#include "pbl/synthetic.hpp"

using namespace pbl;

namespace {

std::string log_of(const std::vector<GameRound>& rounds) {
  std::ostringstream out;
  write_game_log(out, rounds);
  return out.str();
}

std::set<std::string> themes_of(const DatasetSplit& split) {
  std::set<std::string> out;
  for (const auto& inst : split.instances) out.insert(inst->theme_key());
  return out;
}

// One round per theme, each with a distinct theme name.
InstanceList many_theme_instances(int themes) {
  std::vector<GameRound> rounds;
  for (int i = 0; i < themes; ++i) {
    GameRound r = fixtures::two_player_round("g" + std::to_string(i));
    const Theme theme{"t" + std::to_string(i), "x"};
    for (auto& p : r.players)
      for (auto& img : p.images) img.theme = theme;
    rounds.push_back(r);
  }
  return spawn_instances(rounds).instances;
}

}  // namespace

TEST_SUITE("gamedata") {
  TEST_CASE("game log round-trips through the line-delimited format") {
    const GameRound r = fixtures::two_player_round();
    auto parsed = parse_game_log(log_of({r}));
    REQUIRE(parsed.size() == 1);
    const GameRound& p = parsed[0];
    CHECK(p.game_id == r.game_id);
    CHECK(p.round_index == r.round_index);
    CHECK(p.players[0].images == r.players[0].images);
    CHECK(p.players[1].targets == r.players[1].targets);
    REQUIRE(p.utterances.size() == r.utterances.size());
    CHECK(p.utterances[2].text == r.utterances[2].text);
    REQUIRE(p.marks.size() == r.marks.size());
    for (std::size_t i = 0; i < p.marks.size(); ++i) {
      CHECK(p.marks[i].actor == r.marks[i].actor);
      CHECK(p.marks[i].image_index == r.marks[i].image_index);
      CHECK(p.marks[i].mark == r.marks[i].mark);
      CHECK(p.marks[i].position == r.marks[i].position);
    }
  }

  TEST_CASE("marks snap to the number of preceding utterances") {
    const std::string board =
        R"({"images": [{"id": "i1", "theme": ["a", "b"]}, {"id": "i2", "theme": ["a", "b"]},
                       {"id": "i3", "theme": ["a", "b"]}, {"id": "i4", "theme": ["a", "b"]},
                       {"id": "i5", "theme": ["a", "b"]}, {"id": "i6", "theme": ["a", "b"]}],
            "targets": [1, 2, 3]})";
    std::string line = R"({"game_id": "g", "rounds": [{"round_index": 1, "players": {"A": )" + board +
                       R"(, "B": )" + board + R"(}, "events": [
        {"type": "mark", "actor": "A", "payload": {"image_index": 1, "mark": "common"}},
        {"type": "utterance", "actor": "A", "payload": {"text": "hi"}},
        {"type": "mark", "actor": "B", "payload": {"image_index": 2, "mark": "different"}},
        {"type": "utterance", "actor": "B", "payload": {"text": "yo"}},
        {"type": "utterance", "actor": "A", "payload": {"text": "ok"}},
        {"type": "mark", "actor": "A", "payload": {"image_index": 3, "mark": "common"}}]}]})";
    std::replace(line.begin(), line.end(), '\n', ' ');
    auto rounds = parse_game_log(line);
    REQUIRE(rounds.size() == 1);
    REQUIRE(rounds[0].marks.size() == 3);
    CHECK(rounds[0].marks[0].position == 0);
    CHECK(rounds[0].marks[1].position == 1);
    CHECK(rounds[0].marks[2].position == 3);
  }

  TEST_CASE("malformed logs are rejected with the failing field") {
    CHECK_THROWS_AS(parse_game_log(std::string_view("{not json")), ParseError);
    CHECK_THROWS_AS(parse_game_log(std::string_view(R"({"rounds": []})")), ParseError);

    GameRound r = fixtures::two_player_round();
    std::string text = log_of({r});
    // Drop one image from the first board.
    auto j = nlohmann::json::parse(text);
    j["rounds"][0]["players"]["A"]["images"].erase(0);
    CHECK_THROWS_AS(parse_game_log(std::string_view(j.dump())), ParseError);

    j = nlohmann::json::parse(text);
    j["rounds"][0]["players"]["A"]["targets"] = {1, 1, 2};
    CHECK_THROWS_AS(parse_game_log(std::string_view(j.dump())), ValidationError);

    j = nlohmann::json::parse(text);
    j["rounds"][0]["events"].push_back(
        {{"type", "mark"}, {"actor", "A"}, {"payload", {{"image_index", 2}, {"mark", "common"}}}});
    CHECK_THROWS_AS(parse_game_log(std::string_view(j.dump())), ValidationError);  // not a target

    j = nlohmann::json::parse(text);
    j["rounds"][0]["events"][0]["actor"] = "Z";
    CHECK_THROWS_AS(parse_game_log(std::string_view(j.dump())), ValidationError);
  }

  TEST_CASE("perspective instances carry the true overlap as gold") {
    auto round = std::make_shared<const GameRound>(fixtures::two_player_round());
    PerspectiveInstance a(round, 0), b(round, 1);
    CHECK(a.id() == "g1:1:A");
    CHECK(a.partner_id() == "B");
    CHECK(a.gold_final_labels() == std::array<Mark, 3>{Mark::common, Mark::different, Mark::different});
    CHECK(b.gold_final_labels() == std::array<Mark, 3>{Mark::common, Mark::common, Mark::different});
    CHECK(a.own_marks().size() == 3);
    CHECK(a.player_pair_key() == b.player_pair_key());
    CHECK(a.combination_key() == b.combination_key());
    CHECK_THROWS_AS(a.gold_for_image(2), ContractError);
  }

  TEST_CASE("gold equals the overlap relation on every synthetic instance") {
    SyntheticConfig cfg;
    cfg.games_per_theme = 3;
    auto corpus = make_synthetic_corpus(cfg);
    auto spawned = spawn_instances(corpus.rounds);
    REQUIRE(!spawned.instances.empty());
    for (const auto& inst : spawned.instances) {
      const auto& partner = inst->round().partner_board(inst->self_id());
      for (std::size_t s = 0; s < kTargetsPerPlayer; ++s) {
        const auto& img = inst->board().image(inst->targets()[s]);
        bool shared = std::find(partner.images.begin(), partner.images.end(), img) != partner.images.end();
        CHECK(inst->gold_final_labels()[s] == (shared ? Mark::common : Mark::different));
      }
    }
  }

  TEST_CASE("spawn drops bad rounds with an audit that accounts for them") {
    GameRound good = fixtures::two_player_round("g1");
    GameRound mistake = fixtures::two_player_round("g2");
    mistake.marks[0].mark = Mark::different;  // image 1 is shared
    GameRound early = fixtures::two_player_round("g3");
    early.marks[1].position = 0;
    GameRound incomplete = fixtures::two_player_round("g4");
    incomplete.marks.pop_back();

    const std::vector<GameRound> rounds{good, mistake, early, incomplete};
    auto result = spawn_instances(rounds);
    CHECK(result.instances.size() == 2);
    CHECK(result.audit.rounds_seen == 4);
    CHECK(result.audit.rounds_kept == 1);
    CHECK(result.audit.mistake_drops == 1);
    CHECK(result.audit.early_mark_drops == 1);
    CHECK(result.audit.incomplete_drops == 1);
    CHECK(result.audit.dropped_instances == 2 * result.audit.rounds_seen - static_cast<int>(result.instances.size()));
    CHECK(result.audit.dropped_rounds.size() == 3);

    auto again = spawn_instances(rounds);
    REQUIRE(again.instances.size() == result.instances.size());
    for (std::size_t i = 0; i < again.instances.size(); ++i)
      CHECK(again.instances[i]->id() == result.instances[i]->id());
  }

  TEST_CASE("a single theme cannot be split three ways") {
    auto instances = spawn_instances({fixtures::two_player_round("g1"), fixtures::two_player_round("g2")}).instances;
    CHECK_THROWS_AS(split_dataset(instances, PartitionPolicy::theme_disjoint, {}, 1), PartitionError);
  }

  TEST_CASE("theme-disjoint split is disjoint, seeded and close to the ratios") {
    auto instances = many_theme_instances(100);
    auto split = split_dataset(instances, PartitionPolicy::theme_disjoint, {0.7, 0.1, 0.2}, 4);
    const double n = static_cast<double>(instances.size());
    CHECK(std::abs(split.train.instances.size() / n - 0.7) <= 0.02);
    CHECK(std::abs(split.valid.instances.size() / n - 0.1) <= 0.02);
    CHECK(std::abs(split.test.instances.size() / n - 0.2) <= 0.02);

    auto tr = themes_of(split.train), va = themes_of(split.valid), te = themes_of(split.test);
    for (const auto& t : va) CHECK(!tr.count(t));
    for (const auto& t : te) CHECK((!tr.count(t) && !va.count(t)));

    auto again = split_dataset(instances, PartitionPolicy::theme_disjoint, {0.7, 0.1, 0.2}, 4);
    CHECK(again.train.instance_ids() == split.train.instance_ids());
    CHECK(again.test.instance_ids() == split.test.instance_ids());
  }

  TEST_CASE("repartitions keep the test split and honour their seen/unseen rules") {
    SyntheticConfig cfg;
    cfg.games_per_theme = 6;
    auto instances = spawn_instances(make_synthetic_corpus(cfg).rounds).instances;
    auto base = split_dataset(instances, PartitionPolicy::theme_disjoint, {}, 11);

    auto by_players = split_dataset(instances, PartitionPolicy::repartition_players, {}, 11);
    CHECK(by_players.test.instance_ids() == base.test.instance_ids());
    REQUIRE(!by_players.valid.instances.empty());
    std::set<std::string> train_combos, train_pairs;
    for (const auto& i : by_players.train.instances) {
      train_combos.insert(i->combination_key());
      train_pairs.insert(i->player_pair_key());
    }
    for (const auto& i : by_players.valid.instances) {
      CHECK(train_combos.count(i->combination_key()) == 1);
      CHECK(train_pairs.count(i->player_pair_key()) == 0);
    }

    auto by_images = split_dataset(instances, PartitionPolicy::repartition_images, {}, 11);
    CHECK(by_images.test.instance_ids() == base.test.instance_ids());
    REQUIRE(!by_images.valid.instances.empty());
    train_combos.clear();
    train_pairs.clear();
    for (const auto& i : by_images.train.instances) {
      train_combos.insert(i->combination_key());
      train_pairs.insert(i->player_pair_key());
    }
    for (const auto& i : by_images.valid.instances) {
      CHECK(train_combos.count(i->combination_key()) == 0);
      CHECK(train_pairs.count(i->player_pair_key()) == 1);
    }
  }

  TEST_CASE("combination count identity") {
    CHECK(binomial(12, 6) == 924);
    CHECK(binomial(10, 4) == 210);
    CHECK(binomial(3, 5) == 0);
    // C(12,6) [C(6,2) C(10,4) + C(6,3) C(9,3) + C(6,4) C(8,2)]
    CHECK(combination_count(12, 6, 2, 4) == 924ULL * (15 * 210 + 20 * 84 + 15 * 28));
    CHECK(combination_count(12, 6, 2, 4) == 4851000ULL);
  }

  TEST_CASE("ratio and policy parsing") {
    auto r = parse_ratios("70,10,20");
    CHECK(r.train == doctest::Approx(0.7));
    CHECK(r.test == doctest::Approx(0.2));
    CHECK(parse_ratios("0.5,0.25,0.25").valid == doctest::Approx(0.25));
    CHECK_THROWS_AS(parse_ratios("1,2"), ConfigError);
    CHECK_THROWS_AS(parse_ratios("a,b,c"), ConfigError);
    CHECK(parse_partition_policy("repartition-P") == PartitionPolicy::repartition_players);
    CHECK_THROWS_AS(parse_partition_policy("nope"), ConfigError);
    CHECK(parse_mark("different") == Mark::different);
    CHECK_THROWS(parse_mark("maybe"));
  }
}
