#include "desnow/pipeline.hpp"

#include <algorithm>
#include <numeric>

#include "desnow/error.hpp"
#include "json.hpp"

namespace desnow {
namespace {

using nlohmann::json;

json parse_json(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed ") + what + ": " + e.what());
  }
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

const std::string& attribute(const ParamStore& store, const std::string& key) {
  auto it = store.attributes.find(key);
  if (it == store.attributes.end()) {
    throw IoError("checkpoint lacks the '" + key + "' attribute");
  }
  return it->second;
}

}  // namespace

std::string coarse_config_json(const CoarseNetConfig& c) {
  json j = {{"channels", c.channels},
            {"n_core_blocks", c.n_core_blocks},
            {"n_rows", c.n_rows},
            {"growth", c.growth}};
  return j.dump();
}

CoarseNetConfig coarse_config_from_json(const std::string& text) {
  const json j = parse_json(text, "coarse config");
  CoarseNetConfig c;
  try {
    read_field(j, "channels", c.channels);
    read_field(j, "n_core_blocks", c.n_core_blocks);
    read_field(j, "n_rows", c.n_rows);
    read_field(j, "growth", c.growth);
  } catch (const json::exception& e) {
    throw IoError(std::string("bad coarse config: ") + e.what());
  }
  return c;
}

std::string fine_config_json(const DdmsConfig& c) {
  json j = {{"variant", to_string(c.variant)},
            {"n_scales", c.n_scales},
            {"channels", c.channels},
            {"rdbs_per_row", c.rdbs_per_row},
            {"feature_rows", c.feature_rows},
            {"growth", c.growth},
            {"semantic_group_width", c.semantic_group_width},
            {"geometric_group_width", c.geometric_group_width},
            {"attention_hidden", c.attention_hidden},
            {"snowcnn_blocks", c.snowcnn_blocks},
            {"rrdb_depth", c.rrdb_depth}};
  return j.dump();
}

DdmsConfig fine_config_from_json(const std::string& text) {
  const json j = parse_json(text, "fine config");
  DdmsConfig c;
  try {
    if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
    read_field(j, "n_scales", c.n_scales);
    read_field(j, "channels", c.channels);
    read_field(j, "rdbs_per_row", c.rdbs_per_row);
    read_field(j, "feature_rows", c.feature_rows);
    read_field(j, "growth", c.growth);
    read_field(j, "semantic_group_width", c.semantic_group_width);
    read_field(j, "geometric_group_width", c.geometric_group_width);
    read_field(j, "attention_hidden", c.attention_hidden);
    read_field(j, "snowcnn_blocks", c.snowcnn_blocks);
    read_field(j, "rrdb_depth", c.rrdb_depth);
  } catch (const json::exception& e) {
    throw IoError(std::string("bad fine config: ") + e.what());
  }
  return c;
}

Pipeline::Pipeline(Variant variant, CoarseNetConfig coarse, DdmsConfig fine)
    : coarse_(coarse), fine_(build_variant(variant, fine)) {}

Pipeline Pipeline::from_store(const ParamStore& store) {
  const DdmsConfig fine = fine_config_from_json(attribute(store, "fine_config"));
  const CoarseNetConfig coarse = coarse_config_from_json(attribute(store, "coarse_config"));
  return Pipeline(fine.variant, coarse, fine);
}

void Pipeline::describe(ParamStore& store) const {
  store.attributes["variant"] = to_string(variant());
  store.attributes["coarse_config"] = coarse_config_json(coarse_.config());
  store.attributes["fine_config"] = fine_config_json(fine_.config());
}

ParamLayout Pipeline::coarse_layout() const {
  ParamLayout layout;
  if (has_coarse()) coarse_.declare(layout);
  return layout;
}

ParamLayout Pipeline::fine_layout() const {
  ParamLayout layout;
  fine_.declare(layout);
  return layout;
}

int Pipeline::size_multiple() const {
  const int f = fine_.config().size_multiple();
  return has_coarse() ? std::lcm(f, coarse_.size_multiple()) : f;
}

ImageTensor Pipeline::coarse_result(const ParamStore& store, const ImageTensor& snowy) const {
  if (!has_coarse()) return snowy;
  return coarse_.infer(store, snowy);
}

ImageTensor Pipeline::infer(const ParamStore& store, const ImageTensor& snowy,
                            const SemanticMap* semantic, const DepthMap* depth) const {
  validate_image(snowy, 1);
  const int h = snowy.height(), w = snowy.width();
  const SemanticMap sem = semantic ? *semantic : uniform_semantic(h, w);
  const DepthMap dep = depth ? *depth : uniform_depth(h, w);
  require(sem.height == h && sem.width == w && dep.height == h && dep.width == w,
          "prior maps must match the image size");

  const int m = size_multiple();
  const int ph = (h + m - 1) / m * m, pw = (w + m - 1) / m * m;
  const ImageTensor input = pad_image(snowy, ph, pw);
  const SemanticMap psem = pad_labels(sem, ph, pw);
  const DepthMap pdep = pad_depth(dep, ph, pw);

  const ImageTensor coarse = coarse_result(store, input);
  const PriorPyramid priors = build_prior_pyramid({&psem, 1}, {&pdep, 1}, fine_.config().n_scales);

  ag::Graph graph(false);
  ParamBinding p(graph, store);
  std::vector<Var> outs = fine_.forward(p, graph.constant(coarse.pixels), &priors);
  const ImageTensor full = clamp01(ImageTensor(outs.back().value()));
  return crop_image(full, 0, 0, h, w);
}

ImageTensor pad_image(const ImageTensor& image, int height, int width) {
  require(height >= image.height() && width >= image.width(), "pad_image: target too small");
  if (height == image.height() && width == image.width()) return image;
  ImageTensor out(height, width);
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(y, image.height() - 1);
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(x, image.width() - 1);
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = image.at(sy, sx, c);
    }
  }
  return out;
}

SemanticMap pad_labels(const SemanticMap& map, int height, int width) {
  require(height >= map.height && width >= map.width, "pad_labels: target too small");
  SemanticMap out{height, width, std::vector<std::uint8_t>(std::size_t(height) * width)};
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      out.labels[std::size_t(y) * width + x] =
          map.at(std::min(y, map.height - 1), std::min(x, map.width - 1));
  return out;
}

DepthMap pad_depth(const DepthMap& map, int height, int width) {
  require(height >= map.height && width >= map.width, "pad_depth: target too small");
  DepthMap out{height, width, std::vector<float>(std::size_t(height) * width)};
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      out.depth[std::size_t(y) * width + x] =
          map.at(std::min(y, map.height - 1), std::min(x, map.width - 1));
  return out;
}

ImageTensor crop_image(const ImageTensor& image, int y, int x, int height, int width) {
  require(y >= 0 && x >= 0 && y + height <= image.height() && x + width <= image.width(),
          "crop_image: window outside the image");
  ImageTensor out(height, width);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c)
      for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = image.at(y + r, x + c, ch);
  return out;
}

}  // namespace desnow
