#include "desnow/snow_synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <random>
#include <set>
#include <sstream>

#include "desnow/error.hpp"
#include "desnow/priors.hpp"

namespace desnow {
namespace {

using Json = nlohmann::ordered_json;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

double uniform01(std::mt19937_64& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

Rgb hsv_to_rgb(double h, double s, double v) {
  const double c = v * s;
  const double hp = std::fmod(h * 6.0, 6.0);
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  Rgb rgb{};
  switch (static_cast<int>(hp)) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
  }
  const double m = v - c;
  for (double& ch : rgb) ch += m;
  return rgb;
}

// Separable Gaussian blur of a single-channel H x W field, zero outside.
std::vector<double> gaussian_blur(const std::vector<double>& src, int h, int w,
                                  double sigma) {
  if (sigma <= 0.0) return src;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    total += kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  }
  for (double& k : kernel) k /= total;
  std::vector<double> tmp(src.size(), 0.0), out(src.size(), 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int xx = x + i;
        if (xx >= 0 && xx < w) acc += kernel[i + radius] * src[y * w + xx];
      }
      tmp[y * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int yy = y + i;
        if (yy >= 0 && yy < h) acc += kernel[i + radius] * tmp[yy * w + x];
      }
      out[y * w + x] = acc;
    }
  return out;
}

double segment_distance(double px, double py, double ax, double ay, double bx,
                        double by) {
  const double vx = bx - ax, vy = by - ay;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0.0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = px - (ax + t * vx), dy = py - (ay + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

Json snow_to_json(const SnowParams& p) {
  Json j;
  j["severity"] = to_string(p.severity);
  j["flake_density"] = p.flake_density;
  j["radius_min"] = p.radius_min;
  j["radius_max"] = p.radius_max;
  j["streak_length"] = p.streak_length;
  j["blur_sigma"] = p.blur_sigma;
  return j;
}

SnowParams snow_from_json(const Json& j) {
  SnowParams p;
  p.severity = parse_severity(j.at("severity").get<std::string>());
  p.flake_density = j.at("flake_density").get<double>();
  p.radius_min = j.at("radius_min").get<double>();
  p.radius_max = j.at("radius_max").get<double>();
  p.streak_length = j.at("streak_length").get<int>();
  p.blur_sigma = j.at("blur_sigma").get<double>();
  return p;
}

}  // namespace

std::string to_string(Severity s) {
  switch (s) {
    case Severity::kSmall: return "small";
    case Severity::kMedium: return "medium";
    case Severity::kLarge: return "large";
  }
  return "medium";
}

Severity parse_severity(const std::string& s) {
  if (s == "small") return Severity::kSmall;
  if (s == "medium") return Severity::kMedium;
  if (s == "large") return Severity::kLarge;
  throw InvalidArgument("unknown severity '" + s + "' (expected small|medium|large)");
}

SnowParams SnowParams::for_severity(Severity severity, std::uint64_t seed) {
  SnowParams p;
  p.severity = severity;
  p.seed = seed;
  switch (severity) {
    case Severity::kSmall:
      p.flake_density = 0.002, p.radius_min = 1, p.radius_max = 2;
      p.streak_length = 0, p.blur_sigma = 0.5;
      break;
    case Severity::kMedium:
      p.flake_density = 0.006, p.radius_min = 1, p.radius_max = 3;
      p.streak_length = 3, p.blur_sigma = 0.7;
      break;
    case Severity::kLarge:
      p.flake_density = 0.012, p.radius_min = 2, p.radius_max = 5;
      p.streak_length = 6, p.blur_sigma = 1.0;
      break;
  }
  return p;
}

void SnowParams::validate() const {
  require(flake_density > 0.0 && flake_density <= 0.2,
          "flake_density must lie in (0, 0.2]");
  require(radius_min > 0.0 && radius_min <= radius_max,
          "flake radius range must satisfy 0 < min <= max");
  require(streak_length >= 0, "streak_length must be >= 0");
  require(blur_sigma >= 0.0, "blur_sigma must be >= 0");
}

void SceneSpec::validate() const {
  require(height >= 16 && width >= 16, "scene canvas must be at least 16x16");
  require(n_objects >= 1, "scene needs at least one object");
  for (const auto& [id, color] : class_palette) {
    require(id >= 0 && id < kSemanticClasses, "palette class id out of [0, 30)");
    (void)color;
  }
  if (!class_palette.empty()) {
    require(class_palette.count(0) == 1, "palette must define background class 0");
  }
}

std::map<int, Rgb> default_palette() {
  std::map<int, Rgb> palette;
  palette[0] = {0.45, 0.55, 0.70};
  for (int c = 1; c < kSemanticClasses; ++c) {
    const double hue = std::fmod(c * 0.381966, 1.0);  // golden-ratio spacing
    const double sat = 0.45 + 0.4 * ((c * 7) % 5) / 4.0;
    const double val = 0.35 + 0.4 * ((c * 3) % 4) / 3.0;
    palette[c] = hsv_to_rgb(hue, sat, val);
  }
  return palette;
}

Scene generate_scene(const SceneSpec& spec) {
  spec.validate();
  const auto palette = spec.class_palette.empty() ? default_palette() : spec.class_palette;
  std::vector<int> object_classes;
  for (const auto& [id, color] : palette)
    if (id != 0) object_classes.push_back(id);
  if (object_classes.empty()) object_classes.push_back(0);

  const int h = spec.height, w = spec.width;
  std::mt19937_64 rng(spec.seed);
  Scene scene;
  scene.clean = ImageTensor(h, w);
  scene.semantic = {h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w, 0)};
  scene.depth = {h, w, std::vector<float>(static_cast<std::size_t>(h) * w, kBackgroundDepth)};

  const Rgb sky = palette.at(0);
  for (int y = 0; y < h; ++y) {
    const double shade = 0.8 + 0.2 * (1.0 - static_cast<double>(y) / (h - 1));
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) scene.clean.at(y, x, c) = std::clamp(sky[c] * shade, 0.0, 1.0);
  }

  struct Object {
    int cls;
    bool ellipse;
    double cx, cy, rx, ry;
    float depth;
    Rgb color;
    double tilt;
  };
  std::vector<Object> objects;
  for (int i = 0; i < spec.n_objects; ++i) {
    Object o{};
    o.cls = object_classes[std::uniform_int_distribution<std::size_t>(
        0, object_classes.size() - 1)(rng)];
    o.ellipse = uniform01(rng) < 0.5;
    o.cx = uniform01(rng) * w;
    o.cy = uniform01(rng) * h;
    o.rx = (0.08 + 0.22 * uniform01(rng)) * w;
    o.ry = (0.08 + 0.22 * uniform01(rng)) * h;
    o.depth = static_cast<float>(2.0 + 88.0 * uniform01(rng));
    const double gain = 0.85 + 0.3 * uniform01(rng);
    const double haze = 0.35 * o.depth / kBackgroundDepth;
    for (int c = 0; c < 3; ++c) {
      const double base = std::clamp(palette.at(o.cls)[c] * gain, 0.0, 1.0);
      o.color[c] = (1.0 - haze) * base + haze * sky[c];
    }
    o.tilt = 0.15 * (2.0 * uniform01(rng) - 1.0);
    objects.push_back(o);
  }
  // Painter's order: far objects first, nearer ones overwrite.
  std::stable_sort(objects.begin(), objects.end(),
                   [](const Object& a, const Object& b) { return a.depth > b.depth; });

  for (const Object& o : objects) {
    const int y0 = std::max(0, static_cast<int>(std::floor(o.cy - o.ry)));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(o.cy + o.ry)));
    const int x0 = std::max(0, static_cast<int>(std::floor(o.cx - o.rx)));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(o.cx + o.rx)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double u = (x + 0.5 - o.cx) / o.rx;
        const double v = (y + 0.5 - o.cy) / o.ry;
        const bool inside = o.ellipse ? (u * u + v * v <= 1.0)
                                      : (std::abs(u) <= 1.0 && std::abs(v) <= 1.0);
        if (!inside) continue;
        const double shade = 1.0 + o.tilt * u;
        for (int c = 0; c < 3; ++c)
          scene.clean.at(y, x, c) = std::clamp(o.color[c] * shade, 0.0, 1.0);
        const std::size_t idx = static_cast<std::size_t>(y) * w + x;
        scene.semantic.labels[idx] = static_cast<std::uint8_t>(o.cls);
        scene.depth.depth[idx] = o.depth;
      }
  }
  return scene;
}

SnowLayer generate_snow_mask(int height, int width, const SnowParams& params) {
  params.validate();
  require(height >= 16 && width >= 16, "snow mask must be at least 16x16");
  const int h = height, w = width;
  std::mt19937_64 rng(params.seed);
  const auto n_flakes = std::poisson_distribution<long>(
      params.flake_density * static_cast<double>(h) * w)(rng);
  // Shared fall direction: within ~25 degrees of straight down.
  const double angle = (2.0 * uniform01(rng) - 1.0) * 0.44;
  const double dir_x = std::sin(angle), dir_y = std::cos(angle);

  const std::size_t pixels = static_cast<std::size_t>(h) * w;
  std::vector<double> coverage(pixels, 0.0), weighted(pixels, 0.0), weight(pixels, 0.0);
  for (long f = 0; f < n_flakes; ++f) {
    const double cx = uniform01(rng) * w;
    const double cy = uniform01(rng) * h;
    const double r = params.radius_min + (params.radius_max - params.radius_min) * uniform01(rng);
    const double intensity = 0.7 + 0.3 * uniform01(rng);
    const double ex = cx + dir_x * params.streak_length;
    const double ey = cy + dir_y * params.streak_length;
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min(cx, ex) - r - 1)));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(std::max(cx, ex) + r + 1)));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min(cy, ey) - r - 1)));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(std::max(cy, ey) + r + 1)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double d = segment_distance(x + 0.5, y + 0.5, cx, cy, ex, ey);
        const double c = std::clamp(r + 0.5 - d, 0.0, 1.0);
        if (c <= 0.0) continue;
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        coverage[i] = std::max(coverage[i], c);
        weighted[i] += c * intensity;
        weight[i] += c;
      }
  }
  coverage = gaussian_blur(coverage, h, w, params.blur_sigma);
  weighted = gaussian_blur(weighted, h, w, params.blur_sigma);
  weight = gaussian_blur(weight, h, w, params.blur_sigma);

  SnowLayer layer{SnowMask{Tensor({1, h, w, 1})}, ChromaticMap{Tensor({1, h, w, 3})}};
  for (std::size_t i = 0; i < pixels; ++i) {
    if (weight[i] <= 0.0 || coverage[i] <= 0.0) continue;
    layer.mask.coverage[i] = std::clamp(coverage[i], 0.0, 1.0);
    const double a = std::clamp(weighted[i] / weight[i], 0.0, 1.0);
    for (int c = 0; c < 3; ++c) layer.chroma.intensity[i * 3 + c] = a;
  }
  return layer;
}

ImageTensor composite(const ImageTensor& clean, const ChromaticMap& chroma,
                      const SnowMask& mask) {
  const int h = clean.height(), w = clean.width();
  require(chroma.intensity.rank() == 4 && chroma.intensity.h() == h &&
              chroma.intensity.w() == w && chroma.intensity.c() == 3,
          "composite: chromatic map shape " + shape_string(chroma.intensity.shape()) +
              " does not match image " + shape_string(clean.pixels.shape()));
  require(mask.coverage.rank() == 4 && mask.coverage.h() == h &&
              mask.coverage.w() == w && mask.coverage.c() == 1,
          "composite: snow mask shape " + shape_string(mask.coverage.shape()) +
              " does not match image " + shape_string(clean.pixels.shape()));
  ImageTensor out(h, w);
  const std::size_t pixels = static_cast<std::size_t>(h) * w;
  for (std::size_t p = 0; p < pixels; ++p) {
    const double m = mask.coverage[p];
    for (int c = 0; c < 3; ++c) {
      const std::size_t i = p * 3 + c;
      out.pixels[i] = std::clamp(chroma.intensity[i] * m + clean.pixels[i] * (1.0 - m), 0.0, 1.0);
    }
  }
  return out;
}

std::uint64_t derive_seed(std::uint64_t global_seed, std::uint64_t index) {
  return splitmix64(splitmix64(global_seed) + index);
}

std::string manifest_to_json(const DatasetManifest& m) {
  Json j;
  j["version"] = m.version;
  j["global_seed"] = m.global_seed;
  j["height"] = m.height;
  j["width"] = m.width;
  if (m.snow) j["snow"] = snow_to_json(*m.snow);
  j["entries"] = Json::array();
  for (const auto& e : m.entries) {
    Json je;
    je["clean_path"] = e.clean_path;
    je["snowy_path"] = e.snowy_path;
    je["semantic_path"] = e.semantic_path;
    je["depth_path"] = e.depth_path;
    je["severity"] = to_string(e.severity);
    je["seed"] = e.seed;
    j["entries"].push_back(je);
  }
  return j.dump(2) + "\n";
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << manifest_to_json(manifest);
  if (!out) throw IoError("failed writing manifest " + path.string());
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  DatasetManifest m;
  try {
    const Json j = Json::parse(in);
    if (!j.contains("version")) throw IoError("manifest lacks the version field");
    m.version = j.at("version").get<int>();
    if (m.version != DatasetManifest::kVersion) {
      throw UnsupportedVersion("unsupported manifest version " + std::to_string(m.version));
    }
    m.global_seed = j.value("global_seed", std::uint64_t{0});
    m.height = j.value("height", 0);
    m.width = j.value("width", 0);
    if (j.contains("snow")) m.snow = snow_from_json(j.at("snow"));
    for (const auto& je : j.at("entries")) {
      ManifestEntry e;
      e.clean_path = je.at("clean_path").get<std::string>();
      e.snowy_path = je.at("snowy_path").get<std::string>();
      e.semantic_path = je.at("semantic_path").get<std::string>();
      e.depth_path = je.at("depth_path").get<std::string>();
      e.severity = parse_severity(je.at("severity").get<std::string>());
      e.seed = je.at("seed").get<std::uint64_t>();
      m.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest " + path.string() + ": " + e.what());
  }
  m.base_dir = path.parent_path();
  if (m.entries.empty()) throw InvalidArgument("manifest has no entries: " + path.string());
  std::set<std::string> seen;
  for (const auto& e : m.entries) {
    if (!seen.insert(e.snowy_path).second) {
      throw InvalidArgument("duplicate snowy_path in manifest: " + e.snowy_path);
    }
    for (const auto* rel : {&e.clean_path, &e.snowy_path, &e.semantic_path, &e.depth_path}) {
      if (!std::filesystem::exists(m.resolve(*rel))) {
        throw IoError("manifest references missing file " + m.resolve(*rel).string());
      }
    }
  }
  return m;
}

DatasetManifest build_dataset(int n, const SnowParams& snow,
                              const std::filesystem::path& out_dir,
                              std::uint64_t global_seed, const DatasetOptions& options) {
  require(n >= 1, "build_dataset needs n >= 1");
  snow.validate();
  require(options.min_objects >= 1 && options.min_objects <= options.max_objects,
          "invalid object count range");
  namespace fs = std::filesystem;
  try {
    for (const char* sub : {"clean", "snowy", "semantic", "depth"}) {
      fs::create_directories(out_dir / sub);
    }
  } catch (const fs::filesystem_error& e) {
    throw IoError("cannot create dataset directory " + out_dir.string() + ": " + e.what());
  }

  DatasetManifest m;
  m.global_seed = global_seed;
  m.height = options.height;
  m.width = options.width;
  m.snow = snow;
  m.base_dir = out_dir;
  for (int i = 0; i < n; ++i) {
    const std::uint64_t seed = derive_seed(global_seed, static_cast<std::uint64_t>(i));
    std::mt19937_64 rng(seed);
    SceneSpec spec;
    spec.seed = rng();
    spec.n_objects = std::uniform_int_distribution<int>(options.min_objects,
                                                         options.max_objects)(rng);
    spec.height = options.height;
    spec.width = options.width;
    Scene scene = generate_scene(spec);
    const ImageTensor clean = quantize_8bit(scene.clean);

    SnowParams params = snow;
    params.seed = rng();
    const SnowLayer layer = generate_snow_mask(spec.height, spec.width, params);
    const ImageTensor snowy = quantize_8bit(composite(clean, layer.chroma, layer.mask));

    char stem[16];
    std::snprintf(stem, sizeof stem, "%05d", i);
    ManifestEntry e;
    e.clean_path = std::string("clean/") + stem + ".ppm";
    e.snowy_path = std::string("snowy/") + stem + ".ppm";
    e.semantic_path = std::string("semantic/") + stem + ".pgm";
    e.depth_path = std::string("depth/") + stem + ".pfm";
    e.severity = snow.severity;
    e.seed = seed;
    write_ppm(m.resolve(e.clean_path), clean);
    write_ppm(m.resolve(e.snowy_path), snowy);
    write_label_pgm(m.resolve(e.semantic_path), scene.semantic);
    write_pfm(m.resolve(e.depth_path), scene.depth);
    m.entries.push_back(std::move(e));
  }
  save_manifest(m, out_dir / "manifest.json");
  return m;
}

std::vector<Sample> load_samples(const DatasetManifest& manifest) {
  std::vector<Sample> samples;
  samples.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    Sample s;
    s.clean = read_ppm(manifest.resolve(e.clean_path));
    s.snowy = read_ppm(manifest.resolve(e.snowy_path));
    std::tie(s.semantic, s.depth) =
        load_prior_maps(manifest.resolve(e.semantic_path), manifest.resolve(e.depth_path));
    require(s.clean.height() == s.snowy.height() && s.clean.width() == s.snowy.width() &&
                s.semantic.height == s.clean.height() && s.semantic.width == s.clean.width(),
            "sample files disagree in size for " + e.snowy_path);
    s.severity = e.severity;
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace desnow
