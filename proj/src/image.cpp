#include "pbl/image.hpp"

#include <fstream>
#include <sstream>

#include "pbl/errors.hpp"
#include "pbl/util.hpp"

namespace pbl {

std::uint64_t Image::content_hash() const {
  std::uint64_t h = fnv1a64(std::to_string(width) + "x" + std::to_string(height));
  return fnv1a64(std::span<const std::uint8_t>(rgb), h);
}

Image decode_ppm(std::string_view bytes, std::string id) {
  std::size_t pos = 0;
  auto next_token = [&]() -> std::string {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return std::string(bytes.substr(start, pos - start));
  };
  if (next_token() != "P6") throw IoError("image '" + id + "' is not a binary PPM");
  Image img;
  img.id = std::move(id);
  try {
    img.width = std::stoi(next_token());
    img.height = std::stoi(next_token());
    if (std::stoi(next_token()) != 255) throw IoError("image '" + img.id + "': only 8-bit PPM supported");
  } catch (const std::logic_error&) {
    throw IoError("image '" + img.id + "': malformed PPM header");
  }
  ++pos;  // single whitespace after maxval
  const auto n = static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height) * 3;
  if (img.width <= 0 || img.height <= 0 || bytes.size() < pos + n)
    throw IoError("image '" + img.id + "': truncated pixel data");
  img.rgb.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                 bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
  return img;
}

std::string encode_ppm(const Image& image) {
  std::string out = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  out.append(image.rgb.begin(), image.rgb.end());
  return out;
}

Image read_ppm(const std::filesystem::path& path, std::string id) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read image '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_ppm(ss.str(), id.empty() ? path.stem().string() : std::move(id));
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image '" + path.string() + "'");
  out << encode_ppm(image);
}

Image DirectoryImageStore::load(const ImageRef& ref) const {
  return read_ppm(path_of(ref), ref.image_id);
}

void MemoryImageStore::add(Image image) {
  std::string key = image.id;
  images_.insert_or_assign(std::move(key), std::move(image));
}

Image MemoryImageStore::load(const ImageRef& ref) const {
  auto it = images_.find(ref.image_id);
  if (it == images_.end()) throw IoError("unknown image '" + ref.image_id + "'");
  return it->second;
}

}  // namespace pbl
