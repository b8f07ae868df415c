#pragma once

#include <string>
#include <vector>

#include "desnow/coarse_net.hpp"
#include "desnow/ddms_net.hpp"
#include "desnow/image.hpp"
#include "desnow/priors.hpp"

namespace desnow {

// Coarse network (for variants that use it) followed by the fine network.
// The whole model lives in one ParamStore: coarse.* and fine.* entries.
class Pipeline {
 public:
  Pipeline(Variant variant, CoarseNetConfig coarse = {}, DdmsConfig fine = {});

  // Rebuilds the pipeline recorded in a checkpoint's attributes.
  static Pipeline from_store(const ParamStore& store);
  // Records variant and both network configs as checkpoint attributes.
  void describe(ParamStore& store) const;

  Variant variant() const { return fine_.variant(); }
  bool has_coarse() const { return uses_coarse_stage(variant()); }
  const CoarseNet& coarse() const { return coarse_; }
  const FineNetwork& fine() const { return fine_; }

  ParamLayout coarse_layout() const;
  ParamLayout fine_layout() const;
  // Inputs fed straight into forward() must be multiples of this.
  int size_multiple() const;

  // Clamped coarse result; the snowy image itself when there is no coarse
  // stage.
  ImageTensor coarse_result(const ParamStore& store, const ImageTensor& snowy) const;

  // Full restoration of one image of any size >= 16. Inputs that are not a
  // multiple of size_multiple() are edge-padded and the result cropped back.
  // Missing priors fall back to uniform maps.
  ImageTensor infer(const ParamStore& store, const ImageTensor& snowy,
                    const SemanticMap* semantic = nullptr,
                    const DepthMap* depth = nullptr) const;

 private:
  CoarseNet coarse_;
  FineNetwork fine_;
};

std::string coarse_config_json(const CoarseNetConfig& c);
CoarseNetConfig coarse_config_from_json(const std::string& text);
std::string fine_config_json(const DdmsConfig& c);
DdmsConfig fine_config_from_json(const std::string& text);

// Edge-replicating pad on the bottom and right.
ImageTensor pad_image(const ImageTensor& image, int height, int width);
SemanticMap pad_labels(const SemanticMap& map, int height, int width);
DepthMap pad_depth(const DepthMap& map, int height, int width);
ImageTensor crop_image(const ImageTensor& image, int y, int x, int height, int width);

}  // namespace desnow
