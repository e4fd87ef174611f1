#pragma once

// A small, fully separable game corpus: every image in a theme has its own
// colour, and each target's mark is stated outright in the dialogue
// ("do you have the red one" / "yes i have the red one").

#include <cstdint>
#include <filesystem>
#include <vector>

#include "pbl/gamedata.hpp"
#include "pbl/image.hpp"

namespace pbl {

struct SyntheticConfig {
  int themes = 6;
  int games_per_theme = 12;
  int rounds_per_game = 5;
  int combinations_per_theme = 5;
  int players = 8;
  int image_size = 32;
  double filler_rate = 0.3;      // chance of a filler line before each question
  double mistake_rate = 0.0;     // chance a round carries a wrong final mark
  double early_mark_rate = 0.0;  // chance a round opens with a mark
  std::uint64_t seed = 7;
};

struct SyntheticCorpus {
  std::vector<GameRound> rounds;
  MemoryImageStore images;
  std::vector<Image> image_list;  // same images, in creation order
};

SyntheticCorpus make_synthetic_corpus(const SyntheticConfig& config);

// Writes <dir>/games.jsonl and <dir>/images/<id>.ppm; image uris are
// relative to <dir>.
void write_synthetic_corpus(const SyntheticCorpus& corpus, const std::filesystem::path& dir);

}  // namespace pbl
