#include "desnow/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "desnow/error.hpp"

namespace desnow {
namespace {

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void dump(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

// Parses the whitespace/comment separated header tokens of a netpbm or PFM
// file. Returns the offset of the first payload byte.
std::size_t parse_header(const std::string& bytes, int n_tokens,
                         std::vector<std::string>& tokens,
                         const std::filesystem::path& path) {
  std::size_t pos = 0;
  while (static_cast<int>(tokens.size()) < n_tokens) {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    if (pos >= bytes.size()) throw IoError("truncated header in " + path.string());
    std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos])))
      ++pos;
    tokens.emplace_back(bytes.substr(start, pos - start));
  }
  if (pos >= bytes.size()) throw IoError("missing payload in " + path.string());
  return pos + 1;  // single whitespace byte after the last token
}

int parse_int(const std::string& s, const std::filesystem::path& path) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw IoError("bad header field '" + s + "' in " + path.string());
  }
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

ImageTensor::ImageTensor(Tensor t) : pixels(std::move(t)) {
  if (pixels.rank() == 3) pixels = pixels.reshaped({1, pixels.dim(0), pixels.dim(1), pixels.dim(2)});
  require(pixels.rank() == 4 && pixels.n() == 1 && pixels.c() == 3,
          "image tensor must be (H, W, 3), got " + shape_string(pixels.shape()));
}

void validate_image(const ImageTensor& image, int multiple) {
  const int h = image.height(), w = image.width();
  require(h >= 16 && w >= 16,
          "image must be at least 16x16, got " + std::to_string(h) + "x" +
              std::to_string(w));
  require(h % multiple == 0 && w % multiple == 0,
          "image dims " + std::to_string(h) + "x" + std::to_string(w) +
              " must be divisible by " + std::to_string(multiple));
  for (double v : image.pixels.values()) {
    require(v >= 0.0 && v <= 1.0, "image values must lie in [0, 1]");
  }
}

ImageTensor quantize_8bit(const ImageTensor& image) {
  ImageTensor out = image;
  for (double& v : out.pixels.values()) v = to_byte(v) / 255.0;
  return out;
}

ImageTensor clamp01(const ImageTensor& image) {
  ImageTensor out = image;
  for (double& v : out.pixels.values()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

ImageTensor downscale(const ImageTensor& image, int levels) {
  ImageTensor cur = image;
  for (int l = 0; l < levels; ++l) {
    const int h = cur.height(), w = cur.width();
    require(h % 2 == 0 && w % 2 == 0, "downscale needs even dims");
    ImageTensor next(h / 2, w / 2);
    for (int y = 0; y < h / 2; ++y)
      for (int x = 0; x < w / 2; ++x)
        for (int c = 0; c < 3; ++c)
          next.at(y, x, c) = 0.25 * (cur.at(2 * y, 2 * x, c) + cur.at(2 * y, 2 * x + 1, c) +
                                     cur.at(2 * y + 1, 2 * x, c) +
                                     cur.at(2 * y + 1, 2 * x + 1, c));
    cur = std::move(next);
  }
  return cur;
}

void write_ppm(const std::filesystem::path& path, const ImageTensor& image) {
  std::string out = "P6\n" + std::to_string(image.width()) + " " +
                    std::to_string(image.height()) + "\n255\n";
  out.reserve(out.size() + image.pixels.size());
  for (double v : image.pixels.values()) out.push_back(static_cast<char>(to_byte(v)));
  dump(path, out);
}

ImageTensor read_ppm(const std::filesystem::path& path) {
  const std::string bytes = slurp(path);
  std::vector<std::string> tok;
  const std::size_t off = parse_header(bytes, 4, tok, path);
  if (tok[0] != "P6") throw IoError("not a binary PPM (P6): " + path.string());
  const int w = parse_int(tok[1], path), h = parse_int(tok[2], path);
  const int maxval = parse_int(tok[3], path);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) {
    throw IoError("unsupported PPM geometry/maxval in " + path.string());
  }
  const std::size_t count = static_cast<std::size_t>(w) * h * 3;
  if (bytes.size() - off < count) throw IoError("truncated PPM payload: " + path.string());
  ImageTensor img(h, w);
  for (std::size_t i = 0; i < count; ++i) {
    img.pixels[i] = static_cast<unsigned char>(bytes[off + i]) / static_cast<double>(maxval);
  }
  return img;
}

void write_label_pgm(const std::filesystem::path& path, const SemanticMap& map) {
  std::string out = "P5\n" + std::to_string(map.width) + " " +
                    std::to_string(map.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(map.labels.data()), map.labels.size());
  dump(path, out);
}

SemanticMap read_label_pgm(const std::filesystem::path& path) {
  const std::string bytes = slurp(path);
  std::vector<std::string> tok;
  const std::size_t off = parse_header(bytes, 4, tok, path);
  if (tok[0] != "P5") throw IoError("not a binary PGM (P5): " + path.string());
  SemanticMap map;
  map.width = parse_int(tok[1], path);
  map.height = parse_int(tok[2], path);
  const int maxval = parse_int(tok[3], path);
  if (map.width <= 0 || map.height <= 0 || maxval <= 0 || maxval > 255) {
    throw IoError("unsupported PGM geometry/maxval in " + path.string());
  }
  const std::size_t count = static_cast<std::size_t>(map.width) * map.height;
  if (bytes.size() - off < count) throw IoError("truncated PGM payload: " + path.string());
  map.labels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(off),
                    bytes.begin() + static_cast<std::ptrdiff_t>(off + count));
  return map;
}

void write_pfm(const std::filesystem::path& path, const DepthMap& map) {
  std::string out = "Pf\n" + std::to_string(map.width) + " " +
                    std::to_string(map.height) + "\n-1.0\n";
  // PFM stores rows bottom to top.
  for (int y = map.height - 1; y >= 0; --y) {
    out.append(reinterpret_cast<const char*>(map.depth.data() +
                                             static_cast<std::size_t>(y) * map.width),
               static_cast<std::size_t>(map.width) * sizeof(float));
  }
  dump(path, out);
}

DepthMap read_pfm(const std::filesystem::path& path) {
  const std::string bytes = slurp(path);
  std::vector<std::string> tok;
  const std::size_t off = parse_header(bytes, 4, tok, path);
  if (tok[0] != "Pf") throw IoError("not a greyscale PFM (Pf): " + path.string());
  DepthMap map;
  map.width = parse_int(tok[1], path);
  map.height = parse_int(tok[2], path);
  double scale = 0.0;
  try {
    scale = std::stod(tok[3]);
  } catch (const std::exception&) {
    throw IoError("bad PFM scale in " + path.string());
  }
  if (map.width <= 0 || map.height <= 0) throw IoError("bad PFM size: " + path.string());
  if (scale >= 0.0) throw IoError("big-endian PFM not supported: " + path.string());
  const std::size_t count = static_cast<std::size_t>(map.width) * map.height;
  if (bytes.size() - off < count * sizeof(float)) {
    throw IoError("truncated PFM payload: " + path.string());
  }
  map.depth.resize(count);
  for (int y = 0; y < map.height; ++y) {
    const std::size_t src = off + static_cast<std::size_t>(map.height - 1 - y) *
                                      map.width * sizeof(float);
    std::memcpy(map.depth.data() + static_cast<std::size_t>(y) * map.width,
                bytes.data() + src, static_cast<std::size_t>(map.width) * sizeof(float));
  }
  return map;
}

}  // namespace desnow
