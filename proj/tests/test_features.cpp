#include <filesystem>
#include <random>

#include "doctest.h"
#include "fixtures.hpp"
#include "pbl/errors.hpp"
#include "pbl/features.hpp"
#include "pbl/image.hpp"

using namespace pbl;

namespace {

Image solid(const std::string& id, std::uint8_t r, std::uint8_t g, std::uint8_t b, int size = 32) {
  Image img{id, size, size, {}};
  for (int i = 0; i < size * size; ++i) img.rgb.insert(img.rgb.end(), {r, g, b});
  return img;
}

Image noisy(const std::string& id, std::uint64_t seed, int size = 40) {
  std::mt19937_64 rng(seed);
  Image img{id, size, size, {}};
  for (int i = 0; i < size * size * 3; ++i) img.rgb.push_back(static_cast<std::uint8_t>(rng() % 256));
  return img;
}

// Text always embeds to e0; each image id maps to a unit vector with a
// chosen cosine against e0.
struct AxisText final : TextEmbedder {
  Eigen::VectorXd embed(std::string_view) const override { return Eigen::Vector2d(1.0, 0.0); }
  std::string version() const override { return "axis"; }
};

struct CosineImage final : ImageEmbedder {
  Eigen::VectorXd embed(const Image& image) const override {
    double c = image.id == "a" ? 0.3 : image.id == "b" ? 0.1 : image.id == "neg" ? -0.5 : 0.0;
    return Eigen::Vector2d(c, std::sqrt(1.0 - c * c));
  }
  std::string version() const override { return "cosine"; }
};

struct CountingScorer final : RelevanceScorer {
  mutable int calls = 0;
  double score(std::string_view text, const Image& image) const override {
    ++calls;
    return static_cast<double>(text.size()) + image.width;
  }
  std::string version() const override { return "counting"; }
};

struct FailingScorer final : RelevanceScorer {
  double score(std::string_view, const Image& image) const override {
    if (image.id == "bad") throw std::runtime_error("boom");
    return 1.0;
  }
  std::string version() const override { return "failing"; }
};

std::array<Image, 6> six(std::array<std::string, 6> ids) {
  std::array<Image, 6> out;
  for (std::size_t i = 0; i < 6; ++i) out[i] = solid(ids[i], 10, 20, 30, 4);
  return out;
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("pbl-test-" + std::to_string(std::random_device{}()) + std::to_string(std::rand()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_SUITE("features") {
  TEST_CASE("clip-style score clips at zero and rescales by 2.5") {
    EmbeddingRelevanceScorer scorer(std::make_shared<AxisText>(), std::make_shared<CosineImage>());
    auto row = score_relevance("anything", six({"a", "b", "neg", "z", "a", "b"}), scorer);
    CHECK(row[0] == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(row[1] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(row[2] == 0.0);
    CHECK(row[3] == doctest::Approx(0.0));
    CHECK(clip_style_score(Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 0)) == 0.0);
    CHECK_THROWS_AS(clip_style_score(Eigen::Vector2d(1, 0), Eigen::Vector3d(1, 0, 0)), ContractError);
  }

  TEST_CASE("identical images score identically") {
    auto scorer = make_scorer("color-lexicon");
    std::array<Image, 6> same;
    same.fill(solid("x", 230, 25, 25));
    auto row = score_relevance("the red one", same, *scorer);
    for (double v : row) CHECK(v == row[0]);
    CHECK(row[0] > 2.0);
  }

  TEST_CASE("colour-lexicon relevance peaks on the named colour") {
    auto scorer = make_scorer("color-lexicon");
    const auto& lex = ColorLexiconEmbedder::lexicon();
    std::array<Image, 6> board;
    const std::array<std::string, 6> names{"red", "orange", "yellow", "pink", "white", "purple"};
    for (std::size_t i = 0; i < 6; ++i) {
      auto rgb = lex.at(names[i]);
      board[i] = solid(names[i], static_cast<std::uint8_t>(rgb[0]), static_cast<std::uint8_t>(rgb[1]),
                       static_cast<std::uint8_t>(rgb[2]));
    }
    for (std::size_t i = 0; i < 6; ++i) {
      auto row = score_relevance("do you have the " + names[i] + " one", board, *scorer);
      for (std::size_t j = 0; j < 6; ++j) {
        if (j == i)
          CHECK(row[j] == doctest::Approx(kClipScoreScale).epsilon(1e-3));
        else
          CHECK(row[j] < 0.5);
      }
    }
    auto none = score_relevance("hello there", board, *scorer);
    for (double v : none) CHECK(v == 0.0);
  }

  TEST_CASE("a scorer failure on one image fails the whole row") {
    FailingScorer scorer;
    auto images = six({"a", "b", "bad", "c", "d", "e"});
    CHECK_THROWS_AS(score_relevance("x", images, scorer), ScorerError);
  }

  TEST_CASE("incremental relevance equals batch and per-row calls") {
    CountingScorer scorer;
    auto images = six({"a", "b", "c", "d", "e", "f"});
    const std::vector<Utterance> utts{{"A", "one"}, {"B", "three"}, {"A", "fifteen words"}};
    auto batch = relevance_for_dialogue(utts, images, scorer);
    RelevanceBuilder builder(images, scorer);
    for (const auto& u : utts) builder.append(u.text);
    CHECK(builder.matrix() == batch);
    REQUIRE(batch.size() == 3);
    for (std::size_t k = 0; k < 3; ++k) CHECK(batch.rows[k] == score_relevance(utts[k].text, images, scorer));
    CHECK(relevance_for_dialogue({}, images, scorer).size() == 0);
  }

  TEST_CASE("cache is transparent and skips recomputation") {
    TempDir dir;
    CountingScorer scorer;
    auto images = six({"a", "b", "c", "d", "e", "f"});
    const std::vector<Utterance> utts{{"A", "one"}, {"B", "two"}};
    auto plain = relevance_for_dialogue(utts, images, scorer);
    {
      FeatureCache cache(dir.path);
      auto first = relevance_for_dialogue(utts, images, scorer, &cache);
      CHECK(first == plain);
    }
    FeatureCache reopened(dir.path);
    const int before = scorer.calls;
    auto second = relevance_for_dialogue(utts, images, scorer, &reopened);
    CHECK(second == plain);
    CHECK(scorer.calls == before);

    ColorPatchEncoder enc(24);
    Image img = noisy("n", 3);
    PatchGrid direct = extract_patch_features(img, enc);
    PatchGrid stored = extract_patch_features(img, enc, &reopened);
    PatchGrid hit = extract_patch_features(img, enc, &reopened);
    CHECK(stored.cwiseEqual(direct).all());
    CHECK(hit.cwiseEqual(direct).all());
  }

  TEST_CASE("patch grids are 16x16 by the encoder dimension") {
    ColorPatchEncoder enc;
    auto grid = extract_patch_features(noisy("n", 1), enc);
    CHECK(grid.rows() == 256);
    CHECK(grid.cols() == 512);
    CHECK(grid.allFinite());
    Image empty{"e", 0, 0, {}};
    CHECK_THROWS_AS(extract_patch_features(empty, enc), IoError);
  }

  TEST_CASE("a constant-colour image gives near-constant patch rows") {
    ColorPatchEncoder enc(64);
    auto grid = enc.encode(solid("s", 40, 200, 90, 48));
    Eigen::RowVectorXd first = grid.row(0);
    double worst = 0.0;
    for (Eigen::Index r = 0; r < grid.rows(); ++r) worst = std::max(worst, (grid.row(r) - first).cwiseAbs().maxCoeff());
    CHECK(worst < 1e-12);
  }

  TEST_CASE("mean pooling") {
    CHECK(mean_pool(Eigen::MatrixXd::Ones(256, 5)).isApprox(Eigen::VectorXd::Ones(5)));
    std::mt19937_64 rng(8);
    std::normal_distribution<double> n;
    Eigen::MatrixXd grid = Eigen::MatrixXd::NullaryExpr(256, 7, [&] { return n(rng); });
    Eigen::VectorXd pooled = mean_pool(grid);
    for (int c = 0; c < 7; ++c) {
      double sum = 0.0;
      for (int r = 0; r < 256; ++r) sum += grid(r, c);
      CHECK(std::abs(pooled(c) - sum / 256.0) < 1e-6);
    }
    CHECK_THROWS_AS(mean_pool(Eigen::MatrixXd::Ones(255, 5)), ContractError);
  }

  TEST_CASE("strided convolution downsampling matches a scalar loop") {
    const int dim = 3;
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n;
    Eigen::MatrixXd grid = Eigen::MatrixXd::NullaryExpr(256, dim, [&] { return n(rng); });
    GroupConvKernel k{Eigen::MatrixXd::NullaryExpr(4 * dim, dim, [&] { return n(rng); }),
                      Eigen::RowVectorXd::NullaryExpr(dim, [&] { return n(rng); })};
    auto down = downsample_patches(grid, k);
    REQUIRE(down.rows() == 64);
    // Six images of 64 cells each make the 384-vector memory.
    CHECK(6 * down.rows() == 384);
    for (int Y = 0; Y < 8; ++Y)
      for (int X = 0; X < 8; ++X)
        for (int co = 0; co < dim; ++co) {
          double acc = k.bias(co);
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx)
              for (int ci = 0; ci < dim; ++ci)
                acc += grid((2 * Y + dy) * 16 + 2 * X + dx, ci) * k.weight((dy * 2 + dx) * dim + ci, co);
          CHECK(std::abs(down(Y * 8 + X, co) - acc) < 1e-12);
        }
    Eigen::VectorXd pooled = pool_downsampled(grid, k);
    CHECK(pooled.isApprox(down.colwise().mean().transpose()));
    GroupConvKernel bad{Eigen::MatrixXd::Zero(dim, dim), Eigen::RowVectorXd::Zero(dim)};
    CHECK_THROWS_AS(downsample_patches(grid, bad), ContractError);
  }

  TEST_CASE("ppm encoding round-trips and stores resolve images") {
    Image img = noisy("q", 5, 7);
    Image back = decode_ppm(encode_ppm(img), "q");
    CHECK(back.width == 7);
    CHECK(back.rgb == img.rgb);
    CHECK(back.content_hash() == img.content_hash());
    CHECK_THROWS(decode_ppm("P3\n1 1\n255\n0 0 0", "x"));

    TempDir dir;
    write_ppm(dir.path / "q.ppm", img);
    DirectoryImageStore store(dir.path);
    CHECK(store.load({"q", {"a", "b"}, "q.ppm"}).rgb == img.rgb);
    CHECK_THROWS(store.load({"missing", {"a", "b"}, "missing.ppm"}));

    MemoryImageStore mem;
    mem.add(img);
    CHECK(mem.load({"q", {"a", "b"}, ""}).rgb == img.rgb);
    CHECK_THROWS_AS(mem.load({"nope", {"a", "b"}, ""}), IoError);
  }
}
