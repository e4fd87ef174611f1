#include "pbl/synthetic.hpp"

#include <algorithm>
#include <fstream>
#include <random>

#include "pbl/errors.hpp"
#include "pbl/features.hpp"
#include "pbl/util.hpp"

namespace pbl {

namespace {

const std::vector<Theme>& theme_names() {
  static const std::vector<Theme> kThemes = {
      {"dog", "car"},     {"cat", "bicycle"}, {"person", "bowl"}, {"bus", "cup"},
      {"horse", "chair"}, {"bird", "table"},  {"cake", "couch"},  {"boat", "kite"},
      {"train", "bench"}, {"sheep", "truck"}, {"pizza", "oven"},  {"zebra", "clock"},
  };
  return kThemes;
}

const std::vector<std::string>& fillers() {
  static const std::vector<std::string> kFillers = {"ok", "hmm let me look", "one moment", "alright",
                                                     "i see", "nice", "got it", "sure"};
  return kFillers;
}

double uniform01(std::mt19937_64& rng) { return std::generate_canonical<double, 53>(rng); }

Image make_image(const std::string& id, const std::array<int, 3>& rgb, int size, std::mt19937_64& rng) {
  Image img{id, size, size, std::vector<std::uint8_t>(static_cast<std::size_t>(size * size * 3))};
  for (std::size_t i = 0; i < img.rgb.size(); ++i) {
    const int noise = static_cast<int>(uniform_below(rng, 31)) - 15;
    img.rgb[i] = static_cast<std::uint8_t>(std::clamp(rgb[i % 3] + noise, 0, 255));
  }
  return img;
}

struct Combination {
  std::array<int, kImagesPerPlayer> first;   // indices into the theme's images
  std::array<int, kImagesPerPlayer> second;
};

Combination make_combination(int pool, std::mt19937_64& rng) {
  std::vector<int> order(static_cast<std::size_t>(pool));
  for (int i = 0; i < pool; ++i) order[static_cast<std::size_t>(i)] = i;
  seeded_shuffle(order, rng);
  const int shared = 2 + static_cast<int>(uniform_below(rng, 3));  // 2..4
  Combination c;
  for (int i = 0; i < kImagesPerPlayer; ++i) c.first[static_cast<std::size_t>(i)] = order[static_cast<std::size_t>(i)];
  for (int i = 0; i < shared; ++i) c.second[static_cast<std::size_t>(i)] = order[static_cast<std::size_t>(i)];
  for (int i = shared; i < kImagesPerPlayer; ++i)
    c.second[static_cast<std::size_t>(i)] = order[static_cast<std::size_t>(kImagesPerPlayer + i - shared)];
  return c;
}

}  // namespace

SyntheticCorpus make_synthetic_corpus(const SyntheticConfig& cfg) {
  if (cfg.themes < 1 || cfg.themes > static_cast<int>(theme_names().size()))
    throw ConfigError("synthetic theme count must be in 1.." + std::to_string(theme_names().size()));
  if (cfg.players < 2) throw ConfigError("synthetic corpus needs at least two players");
  std::mt19937_64 rng(cfg.seed);
  SyntheticCorpus corpus;

  std::vector<std::string> colors;
  for (const auto& [name, rgb] : ColorLexiconEmbedder::lexicon()) colors.push_back(name);
  const int pool = static_cast<int>(colors.size());

  int game_counter = 0;
  for (int th = 0; th < cfg.themes; ++th) {
    const Theme theme = theme_names()[static_cast<std::size_t>(th)];
    std::vector<ImageRef> refs;
    for (int i = 0; i < pool; ++i) {
      const std::string id = theme[0] + "_" + theme[1] + "_" + colors[static_cast<std::size_t>(i)];
      Image img = make_image(id, ColorLexiconEmbedder::lexicon().at(colors[static_cast<std::size_t>(i)]),
                             cfg.image_size, rng);
      corpus.image_list.push_back(img);
      corpus.images.add(std::move(img));
      refs.push_back({id, theme, "images/" + id + ".ppm"});
    }
    std::vector<Combination> combos;
    for (int c = 0; c < cfg.combinations_per_theme; ++c) combos.push_back(make_combination(pool, rng));

    for (int g = 0; g < cfg.games_per_theme; ++g) {
      const std::string game_id = "g" + std::to_string(1000 + game_counter++);
      const int pa = static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(cfg.players)));
      int pb = static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(cfg.players - 1)));
      if (pb >= pa) ++pb;
      const std::array<std::string, 2> ids{"p" + std::to_string(pa), "p" + std::to_string(pb)};

      for (int r = 1; r <= cfg.rounds_per_game; ++r) {
        const Combination& combo =
            combos[static_cast<std::size_t>(uniform_below(rng, static_cast<std::uint64_t>(combos.size())))];
        GameRound round;
        round.game_id = game_id;
        round.round_index = r;
        std::array<std::array<int, kImagesPerPlayer>, 2> boards{combo.first, combo.second};
        for (int s = 0; s < 2; ++s) {
          auto& board = boards[static_cast<std::size_t>(s)];
          std::vector<int> shuffled(board.begin(), board.end());
          seeded_shuffle(shuffled, rng);
          std::copy(shuffled.begin(), shuffled.end(), board.begin());
          PlayerBoard pb_;
          pb_.player_id = ids[static_cast<std::size_t>(s)];
          for (int i = 0; i < kImagesPerPlayer; ++i)
            pb_.images[static_cast<std::size_t>(i)] = refs[static_cast<std::size_t>(board[static_cast<std::size_t>(i)])];
          std::vector<int> slots{1, 2, 3, 4, 5, 6};
          seeded_shuffle(slots, rng);
          std::sort(slots.begin(), slots.begin() + kTargetsPerPlayer);
          for (int t = 0; t < kTargetsPerPlayer; ++t) pb_.targets[static_cast<std::size_t>(t)] = slots[static_cast<std::size_t>(t)];
          round.players[static_cast<std::size_t>(s)] = pb_;
        }

        if (uniform01(rng) < cfg.early_mark_rate) {
          const auto& b = round.players[0];
          const int idx = b.targets[0];
          round.marks.push_back({b.player_id, idx, round.is_shared(b.player_id, idx) ? Mark::common : Mark::different, 0});
        }
        const bool plant_mistake = uniform01(rng) < cfg.mistake_rate;

        // Interleave the two players' questions in random order.
        std::vector<std::pair<int, int>> questions;  // (player slot, target slot)
        for (int s = 0; s < 2; ++s)
          for (int t = 0; t < kTargetsPerPlayer; ++t) questions.emplace_back(s, t);
        seeded_shuffle(questions, rng);
        bool mistake_done = false;
        for (const auto& [s, t] : questions) {
          const auto& asker = round.players[static_cast<std::size_t>(s)];
          const auto& answerer = round.players[static_cast<std::size_t>(1 - s)];
          if (uniform01(rng) < cfg.filler_rate) {
            const auto& who = round.players[uniform_below(rng, 2)];
            round.utterances.push_back(
                {who.player_id, fillers()[uniform_below(rng, fillers().size())]});
          }
          const int idx = asker.targets[static_cast<std::size_t>(t)];
          const ImageRef& img = asker.image(idx);
          const std::string color = img.image_id.substr(img.image_id.rfind('_') + 1);
          const bool shared = round.is_shared(asker.player_id, idx);
          round.utterances.push_back({asker.player_id, "do you have the " + color + " one"});
          round.utterances.push_back({answerer.player_id, shared ? "yes i have the " + color + " one"
                                                                 : "no i do not have the " + color + " one"});
          Mark mark = shared ? Mark::common : Mark::different;
          if (plant_mistake && !mistake_done) {
            mark = shared ? Mark::different : Mark::common;
            mistake_done = true;
          }
          const bool already = std::any_of(round.marks.begin(), round.marks.end(), [&](const MarkAction& m) {
            return m.actor == asker.player_id && m.image_index == idx;
          });
          if (!already)
            round.marks.push_back({asker.player_id, idx, mark, static_cast<int>(round.utterances.size())});
        }
        // A closing line, so every mark is observable before the dialogue ends.
        round.utterances.push_back({round.players[uniform_below(rng, 2)].player_id, "ok that is all thanks"});
        corpus.rounds.push_back(std::move(round));
      }
    }
  }
  return corpus;
}

void write_synthetic_corpus(const SyntheticCorpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  for (const auto& img : corpus.image_list) write_ppm(dir / "images" / (img.id + ".ppm"), img);
  std::ofstream out(dir / "games.jsonl");
  if (!out) throw IoError("cannot write " + (dir / "games.jsonl").string());
  write_game_log(out, corpus.rounds);
}

}  // namespace pbl
