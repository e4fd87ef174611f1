#pragma once

// Utterance-image relevance scores, patch features, pooling and the on-disk
// feature cache.

#include <Eigen/Dense>
#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pbl/gamedata.hpp"
#include "pbl/image.hpp"

namespace pbl {

inline constexpr int kPatchGrid = 16;
inline constexpr int kPatchCount = kPatchGrid * kPatchGrid;
inline constexpr int kDownsampledGrid = 8;
inline constexpr int kDownsampledCount = kDownsampledGrid * kDownsampledGrid;
inline constexpr int kDefaultImageDim = 512;
inline constexpr double kClipScoreScale = 2.5;

using RelevanceRow = std::array<double, kImagesPerPlayer>;

// One row per utterance; columns follow the instance's board order.
struct RelevanceMatrix {
  std::vector<RelevanceRow> rows;
  int size() const { return static_cast<int>(rows.size()); }
  bool operator==(const RelevanceMatrix&) const = default;
};

// Rows are patches in row-major grid order (row = y * 16 + x).
using PatchGrid = Eigen::MatrixXd;
using PatchFeatureSet = std::array<PatchGrid, kImagesPerPlayer>;
using ImageFeatureSet = std::array<Eigen::VectorXd, kImagesPerPlayer>;

// --- on-disk cache ---------------------------------------------------------

// Flat binary sidecar (features.bin, native doubles) plus a tab-separated
// index (index.tsv: key, rows, cols, byte offset). Writes are serialized;
// reads may run concurrently.
class FeatureCache {
 public:
  explicit FeatureCache(std::filesystem::path dir);
  std::optional<Eigen::MatrixXd> get(const std::string& key) const;
  void put(const std::string& key, const Eigen::MatrixXd& value);
  std::size_t size() const;
  const std::filesystem::path& dir() const { return dir_; }

  static std::string key(std::string_view kind, std::string_view version, std::uint64_t content);

 private:
  struct Entry {
    Eigen::Index rows, cols;
    std::uint64_t offset;
  };
  std::filesystem::path dir_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, Entry> index_;
};

// --- relevance -------------------------------------------------------------

class RelevanceScorer {
 public:
  virtual ~RelevanceScorer() = default;
  virtual double score(std::string_view text, const Image& image) const = 0;
  virtual std::string version() const = 0;
};

class TextEmbedder {
 public:
  virtual ~TextEmbedder() = default;
  virtual Eigen::VectorXd embed(std::string_view text) const = 0;
  virtual std::string version() const = 0;
};

class ImageEmbedder {
 public:
  virtual ~ImageEmbedder() = default;
  virtual Eigen::VectorXd embed(const Image& image) const = 0;
  virtual std::string version() const = 0;
};

// scale * max(cos(a, b), 0); zero-norm inputs score 0.
double clip_style_score(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                        double scale = kClipScoreScale);

// CLIPScore semantics over a pair of embedders.
class EmbeddingRelevanceScorer final : public RelevanceScorer {
 public:
  EmbeddingRelevanceScorer(std::shared_ptr<const TextEmbedder> text,
                           std::shared_ptr<const ImageEmbedder> image);
  double score(std::string_view text, const Image& image) const override;
  std::string version() const override;

 private:
  std::shared_ptr<const TextEmbedder> text_;
  std::shared_ptr<const ImageEmbedder> image_;
};

// Desk-scale embedders sharing a space with one axis per lexicon colour:
// text counts colour words, an image scores its mean pixel against each
// lexicon colour.
class ColorLexiconEmbedder final : public TextEmbedder {
 public:
  Eigen::VectorXd embed(std::string_view text) const override;
  std::string version() const override { return "color-lexicon-v2"; }
  static const std::map<std::string, std::array<int, 3>>& lexicon();
};

class MeanColorEmbedder final : public ImageEmbedder {
 public:
  Eigen::VectorXd embed(const Image& image) const override;
  std::string version() const override { return "mean-color-v2"; }
  // Gaussian width in centered RGB units.
  static constexpr double kWidth = 0.2;
};

std::unique_ptr<RelevanceScorer> make_scorer(std::string_view name);

RelevanceRow score_relevance(std::string_view text, std::span<const Image, kImagesPerPlayer> images,
                             const RelevanceScorer& scorer);

// Incremental construction; appending K utterances one at a time yields the
// same matrix as the batch call.
class RelevanceBuilder {
 public:
  RelevanceBuilder(std::span<const Image, kImagesPerPlayer> images, const RelevanceScorer& scorer,
                   FeatureCache* cache = nullptr);
  const RelevanceRow& append(std::string_view text);
  const RelevanceMatrix& matrix() const { return matrix_; }

 private:
  std::array<Image, kImagesPerPlayer> images_;
  const RelevanceScorer& scorer_;
  FeatureCache* cache_;
  std::uint64_t images_hash_;
  RelevanceMatrix matrix_;
};

RelevanceMatrix relevance_for_dialogue(std::span<const Utterance> utterances,
                                       std::span<const Image, kImagesPerPlayer> images,
                                       const RelevanceScorer& scorer, FeatureCache* cache = nullptr);

// --- patch features --------------------------------------------------------

class PatchEncoder {
 public:
  virtual ~PatchEncoder() = default;
  virtual PatchGrid encode(const Image& image) const = 0;
  virtual int feature_dim() const = 0;
  virtual std::string version() const = 0;
};

// Per-cell colour mean and spread on a 16x16 grid, lifted to `dim`
// features by a fixed seeded projection and tanh.
class ColorPatchEncoder final : public PatchEncoder {
 public:
  explicit ColorPatchEncoder(int dim = kDefaultImageDim, std::uint64_t seed = 0x5e9f0);
  PatchGrid encode(const Image& image) const override;
  int feature_dim() const override { return dim_; }
  std::string version() const override;

 private:
  int dim_;
  std::uint64_t seed_;
  Eigen::MatrixXd projection_;  // 7 x dim
};

std::unique_ptr<PatchEncoder> make_encoder(std::string_view name, int dim = kDefaultImageDim);

PatchGrid extract_patch_features(const Image& image, const PatchEncoder& encoder,
                                 FeatureCache* cache = nullptr);

// Mean over all patch rows.
Eigen::VectorXd mean_pool(const PatchGrid& grid);

// Per-image kernel of a 2x2, stride-2 convolution over the 16x16 grid.
// Kernel rows are ordered (dy, dx, input channel).
struct GroupConvKernel {
  Eigen::MatrixXd weight;  // 4*dim x dim
  Eigen::RowVectorXd bias;  // dim
};

// 16x16 grid -> 8x8 grid (64 rows).
PatchGrid downsample_patches(const PatchGrid& grid, const GroupConvKernel& kernel);
// Mean over the downsampled 8x8 grid.
Eigen::VectorXd pool_downsampled(const PatchGrid& grid, const GroupConvKernel& kernel);

ImageFeatureSet mean_pool_all(const PatchFeatureSet& patches);

}  // namespace pbl
