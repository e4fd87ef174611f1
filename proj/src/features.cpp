#include "pbl/features.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "pbl/errors.hpp"
#include "pbl/util.hpp"

namespace pbl {

// --- cache -----------------------------------------------------------------

FeatureCache::FeatureCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
  std::ifstream in(dir_ / "index.tsv");
  std::string line;
  while (std::getline(in, line)) {
    auto f = split(line, '\t');
    if (f.size() != 4) continue;  // torn trailing line from an interrupted write
    index_[f[0]] = {std::stol(f[1]), std::stol(f[2]), std::stoull(f[3])};
  }
}

std::string FeatureCache::key(std::string_view kind, std::string_view version, std::uint64_t content) {
  std::string tagged = std::string(kind) + '\0' + std::string(version);
  return std::string(kind) + "-" + hex64(fnv1a64(tagged) ^ content) + "-" + hex64(content);
}

std::optional<Eigen::MatrixXd> FeatureCache::get(const std::string& key) const {
  Entry e;
  {
    std::shared_lock lock(mutex_);
    auto it = index_.find(key);
    if (it == index_.end()) return std::nullopt;
    e = it->second;
  }
  std::ifstream in(dir_ / "features.bin", std::ios::binary);
  if (!in) throw IoError("feature cache data file missing in " + dir_.string());
  Eigen::MatrixXd m(e.rows, e.cols);
  in.seekg(static_cast<std::streamoff>(e.offset));
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  if (!in) throw IoError("feature cache entry '" + key + "' is truncated");
  return m;
}

void FeatureCache::put(const std::string& key, const Eigen::MatrixXd& value) {
  std::unique_lock lock(mutex_);
  if (index_.count(key)) return;
  std::ofstream data(dir_ / "features.bin", std::ios::binary | std::ios::app);
  data.seekp(0, std::ios::end);
  auto offset = static_cast<std::uint64_t>(data.tellp());
  data.write(reinterpret_cast<const char*>(value.data()),
             static_cast<std::streamsize>(value.size() * sizeof(double)));
  data.flush();
  if (!data) throw IoError("cannot append to feature cache in " + dir_.string());
  std::ofstream index(dir_ / "index.tsv", std::ios::app);
  index << key << '\t' << value.rows() << '\t' << value.cols() << '\t' << offset << '\n';
  index.flush();
  index_[key] = {value.rows(), value.cols(), offset};
}

std::size_t FeatureCache::size() const {
  std::shared_lock lock(mutex_);
  return index_.size();
}

// --- relevance -------------------------------------------------------------

double clip_style_score(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double scale) {
  if (a.size() != b.size()) throw ContractError("embedding dimensions differ");
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return scale * std::max(a.dot(b) / (na * nb), 0.0);
}

EmbeddingRelevanceScorer::EmbeddingRelevanceScorer(std::shared_ptr<const TextEmbedder> text,
                                                   std::shared_ptr<const ImageEmbedder> image)
    : text_(std::move(text)), image_(std::move(image)) {}

double EmbeddingRelevanceScorer::score(std::string_view text, const Image& image) const {
  return clip_style_score(text_->embed(text), image_->embed(image));
}

std::string EmbeddingRelevanceScorer::version() const {
  return "clipscore(" + text_->version() + "," + image_->version() + ")";
}

namespace {

Eigen::Vector3d centered_rgb(double r, double g, double b) {
  return {r / 127.5 - 1.0, g / 127.5 - 1.0, b / 127.5 - 1.0};
}

}  // namespace

const std::map<std::string, std::array<int, 3>>& ColorLexiconEmbedder::lexicon() {
  static const std::map<std::string, std::array<int, 3>> kColors = {
      {"red", {230, 25, 25}},     {"green", {30, 170, 40}},   {"blue", {30, 60, 220}},
      {"yellow", {240, 220, 30}}, {"cyan", {40, 210, 220}},   {"magenta", {210, 40, 200}},
      {"orange", {245, 140, 20}}, {"purple", {120, 40, 170}}, {"white", {245, 245, 245}},
      {"black", {15, 15, 15}},    {"pink", {250, 160, 190}},  {"brown", {130, 80, 30}},
  };
  return kColors;
}

Eigen::VectorXd ColorLexiconEmbedder::embed(std::string_view text) const {
  const auto& colors = lexicon();
  Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(colors.size()));
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    auto it = colors.find(word);
    if (it != colors.end()) v(std::distance(colors.begin(), it)) += 1.0;
    word.clear();
  };
  for (char c : text) {
    if (std::isalpha(static_cast<unsigned char>(c)))
      word += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    else
      flush();
  }
  flush();
  return v;
}

Eigen::VectorXd MeanColorEmbedder::embed(const Image& image) const {
  if (image.width <= 0 || image.height <= 0) throw ScorerError("empty image '" + image.id + "'");
  double sum[3] = {0, 0, 0};
  for (std::size_t i = 0; i < image.rgb.size(); ++i) sum[i % 3] += image.rgb[i];
  const double n = static_cast<double>(image.width) * image.height;
  const Eigen::Vector3d mean = centered_rgb(sum[0] / n, sum[1] / n, sum[2] / n);
  // Soft membership of the mean colour in each lexicon colour.
  const auto& colors = ColorLexiconEmbedder::lexicon();
  Eigen::VectorXd v(static_cast<Eigen::Index>(colors.size()));
  Eigen::Index k = 0;
  for (const auto& [name, rgb] : colors) {
    const double d2 = (mean - centered_rgb(rgb[0], rgb[1], rgb[2])).squaredNorm();
    v(k++) = std::exp(-d2 / (2.0 * kWidth * kWidth));
  }
  return v;
}

std::unique_ptr<RelevanceScorer> make_scorer(std::string_view name) {
  if (name == "color-lexicon")
    return std::make_unique<EmbeddingRelevanceScorer>(std::make_shared<ColorLexiconEmbedder>(),
                                                      std::make_shared<MeanColorEmbedder>());
  throw ConfigError("unknown scorer '" + std::string(name) + "'");
}

RelevanceRow score_relevance(std::string_view text, std::span<const Image, kImagesPerPlayer> images,
                             const RelevanceScorer& scorer) {
  RelevanceRow row{};
  for (std::size_t j = 0; j < kImagesPerPlayer; ++j) {
    double s;
    try {
      s = scorer.score(text, images[j]);
    } catch (const std::exception& e) {
      throw ScorerError("scoring against image '" + images[j].id + "' failed: " + e.what());
    }
    if (!std::isfinite(s)) throw ScorerError("non-finite score against image '" + images[j].id + "'");
    row[j] = s;
  }
  return row;
}

RelevanceBuilder::RelevanceBuilder(std::span<const Image, kImagesPerPlayer> images,
                                   const RelevanceScorer& scorer, FeatureCache* cache)
    : scorer_(scorer), cache_(cache), images_hash_(0) {
  for (std::size_t j = 0; j < kImagesPerPlayer; ++j) {
    images_[j] = images[j];
    images_hash_ = fnv1a64(hex64(images[j].content_hash()), images_hash_ ^ 0x9e3779b97f4a7c15ULL);
  }
}

const RelevanceRow& RelevanceBuilder::append(std::string_view text) {
  RelevanceRow row;
  std::string key;
  if (cache_ != nullptr) {
    key = FeatureCache::key("rel", scorer_.version(), fnv1a64(text, images_hash_));
    if (auto hit = cache_->get(key)) {
      for (std::size_t j = 0; j < kImagesPerPlayer; ++j) row[j] = (*hit)(0, static_cast<Eigen::Index>(j));
      matrix_.rows.push_back(row);
      return matrix_.rows.back();
    }
  }
  row = score_relevance(text, images_, scorer_);
  if (cache_ != nullptr) {
    Eigen::MatrixXd m(1, kImagesPerPlayer);
    for (std::size_t j = 0; j < kImagesPerPlayer; ++j) m(0, static_cast<Eigen::Index>(j)) = row[j];
    cache_->put(key, m);
  }
  matrix_.rows.push_back(row);
  return matrix_.rows.back();
}

RelevanceMatrix relevance_for_dialogue(std::span<const Utterance> utterances,
                                       std::span<const Image, kImagesPerPlayer> images,
                                       const RelevanceScorer& scorer, FeatureCache* cache) {
  RelevanceBuilder builder(images, scorer, cache);
  for (const auto& u : utterances) builder.append(u.text);
  return builder.matrix();
}

// --- patch features --------------------------------------------------------

ColorPatchEncoder::ColorPatchEncoder(int dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
  if (dim_ < 1) throw ConfigError("encoder dimension must be positive");
  std::mt19937_64 rng(seed_);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(7.0));
  projection_.resize(7, dim_);
  for (Eigen::Index i = 0; i < projection_.size(); ++i) projection_.data()[i] = normal(rng);
}

std::string ColorPatchEncoder::version() const {
  return "color-patch-v1:" + std::to_string(dim_) + ":" + std::to_string(seed_);
}

PatchGrid ColorPatchEncoder::encode(const Image& image) const {
  if (image.width <= 0 || image.height <= 0) throw IoError("image '" + image.id + "' has no pixels");
  Eigen::MatrixXd cell_stats(kPatchCount, 7);
  for (int cy = 0; cy < kPatchGrid; ++cy) {
    for (int cx = 0; cx < kPatchGrid; ++cx) {
      int x0 = cx * image.width / kPatchGrid, x1 = std::max(x0 + 1, (cx + 1) * image.width / kPatchGrid);
      int y0 = cy * image.height / kPatchGrid, y1 = std::max(y0 + 1, (cy + 1) * image.height / kPatchGrid);
      double sum[3] = {0, 0, 0}, sq[3] = {0, 0, 0};
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x)
          for (int c = 0; c < 3; ++c) {
            double v = image.at(x, y, c) / 127.5 - 1.0;
            sum[c] += v;
            sq[c] += v * v;
          }
      const double n = static_cast<double>((x1 - x0) * (y1 - y0));
      const int row = cy * kPatchGrid + cx;
      for (int c = 0; c < 3; ++c) {
        double m = sum[c] / n;
        cell_stats(row, c) = m;
        cell_stats(row, 3 + c) = std::sqrt(std::max(sq[c] / n - m * m, 0.0));
      }
      cell_stats(row, 6) = 1.0;
    }
  }
  return (cell_stats * projection_).array().tanh().matrix();
}

std::unique_ptr<PatchEncoder> make_encoder(std::string_view name, int dim) {
  if (name == "color-patch") return std::make_unique<ColorPatchEncoder>(dim);
  throw ConfigError("unknown encoder '" + std::string(name) + "'");
}

PatchGrid extract_patch_features(const Image& image, const PatchEncoder& encoder, FeatureCache* cache) {
  std::string key;
  if (cache != nullptr) {
    key = FeatureCache::key("patch", encoder.version(), image.content_hash());
    if (auto hit = cache->get(key)) return *hit;
  }
  PatchGrid grid = encoder.encode(image);
  if (grid.rows() != kPatchCount || grid.cols() != encoder.feature_dim())
    throw ContractError("encoder returned a " + std::to_string(grid.rows()) + "x" +
                        std::to_string(grid.cols()) + " grid for image '" + image.id + "'");
  if (!grid.allFinite()) throw ContractError("encoder returned non-finite features for '" + image.id + "'");
  if (cache != nullptr) cache->put(key, grid);
  return grid;
}

Eigen::VectorXd mean_pool(const PatchGrid& grid) {
  if (grid.rows() != kPatchCount) throw ContractError("patch grid must have 256 rows");
  return grid.colwise().mean().transpose();
}

PatchGrid downsample_patches(const PatchGrid& grid, const GroupConvKernel& kernel) {
  const Eigen::Index dim = grid.cols();
  if (grid.rows() != kPatchCount) throw ContractError("patch grid must have 256 rows");
  if (kernel.weight.rows() != 4 * dim || kernel.weight.cols() != dim || kernel.bias.size() != dim)
    throw ContractError("convolution kernel does not match the feature dimension");
  PatchGrid out(kDownsampledCount, dim);
  for (int Y = 0; Y < kDownsampledGrid; ++Y) {
    for (int X = 0; X < kDownsampledGrid; ++X) {
      Eigen::RowVectorXd acc = kernel.bias;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          int src = (2 * Y + dy) * kPatchGrid + (2 * X + dx);
          acc += grid.row(src) * kernel.weight.middleRows((dy * 2 + dx) * dim, dim);
        }
      out.row(Y * kDownsampledGrid + X) = acc;
    }
  }
  return out;
}

Eigen::VectorXd pool_downsampled(const PatchGrid& grid, const GroupConvKernel& kernel) {
  return downsample_patches(grid, kernel).colwise().mean().transpose();
}

ImageFeatureSet mean_pool_all(const PatchFeatureSet& patches) {
  ImageFeatureSet out;
  for (std::size_t j = 0; j < kImagesPerPlayer; ++j) out[j] = mean_pool(patches[j]);
  return out;
}

}  // namespace pbl
