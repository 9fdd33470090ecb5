#pragma once

#include "colf/image.hpp"
#include "colf/tensor.hpp"

namespace colf {

// Maps a source image to a d-channel feature volume at half resolution:
// 3 -> d/2 (stride 1) -> ELU -> d/2 -> d (stride 2) -> ELU -> d -> d (stride 1),
// all 3x3 with zero padding. Trained jointly with the rest of the pipeline.
class Encoder {
 public:
  // Registers parameters under "encoder." in the store.
  Encoder(ParamStore& store, int d, Rng& rng);

  // Output shape is (ceil(H/2), ceil(W/2), d). Throws when expected extents
  // were configured and the input disagrees.
  TensorPtr encode(const Image& image) const;
  TensorPtr encode(const TensorPtr& image_hwc) const;

  void set_expected_extents(int width, int height) {
    expected_w_ = width;
    expected_h_ = height;
  }
  int d() const { return d_; }

 private:
  int d_;
  int expected_w_ = 0, expected_h_ = 0;  // 0 = unconstrained
  TensorPtr w1_, b1_, w2_, b2_, w3_, b3_;
};

TensorPtr image_to_tensor(const Image& image);

}  // namespace colf
