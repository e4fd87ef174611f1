#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "pbl/gamedata.hpp"

namespace pbl {

// 8-bit RGB raster, row-major, 3 bytes per pixel.
struct Image {
  std::string id;
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  std::uint8_t at(int x, int y, int channel) const {
    return rgb[static_cast<std::size_t>((y * width + x) * 3 + channel)];
  }
  std::uint64_t content_hash() const;
};

Image decode_ppm(std::string_view bytes, std::string id = {});
std::string encode_ppm(const Image& image);
Image read_ppm(const std::filesystem::path& path, std::string id = {});
void write_ppm(const std::filesystem::path& path, const Image& image);

class ImageStore {
 public:
  virtual ~ImageStore() = default;
  virtual Image load(const ImageRef& ref) const = 0;
};

// Resolves ImageRef::uri relative to a root directory; binary PPM (P6) only.
class DirectoryImageStore final : public ImageStore {
 public:
  explicit DirectoryImageStore(std::filesystem::path root) : root_(std::move(root)) {}
  Image load(const ImageRef& ref) const override;
  std::filesystem::path path_of(const ImageRef& ref) const { return root_ / ref.uri; }

 private:
  std::filesystem::path root_;
};

// Keyed by image id.
class MemoryImageStore final : public ImageStore {
 public:
  void add(Image image);
  Image load(const ImageRef& ref) const override;
  std::size_t size() const { return images_.size(); }

 private:
  std::map<std::string, Image> images_;
};

}  // namespace pbl
