#include "colf/encoder.hpp"

#include <stdexcept>

namespace colf {

TensorPtr image_to_tensor(const Image& image) {
  return constant({image.height, image.width, 3}, image.rgb);
}

Encoder::Encoder(ParamStore& store, int d, Rng& rng) : d_(d) {
  if (d < 2 || d % 2 != 0) throw std::invalid_argument("Encoder: d must be even and >= 2");
  const int dh = d / 2;
  w1_ = store.create("encoder.conv1.w", {3 * 9, dh}, 3 * 9, rng);
  b1_ = store.create_zeros("encoder.conv1.b", {dh});
  w2_ = store.create("encoder.conv2.w", {dh * 9, d}, dh * 9, rng);
  b2_ = store.create_zeros("encoder.conv2.b", {d});
  w3_ = store.create("encoder.conv3.w", {static_cast<int64_t>(d) * 9, d}, static_cast<int64_t>(d) * 9, rng);
  b3_ = store.create_zeros("encoder.conv3.b", {d});
}

TensorPtr Encoder::encode(const Image& image) const {
  if (expected_w_ && (image.width != expected_w_ || image.height != expected_h_))
    throw std::invalid_argument("Encoder: image extents " + std::to_string(image.width) + "x" +
                                std::to_string(image.height) + " do not match configured camera " +
                                std::to_string(expected_w_) + "x" + std::to_string(expected_h_));
  return encode(image_to_tensor(image));
}

TensorPtr Encoder::encode(const TensorPtr& image_hwc) const {
  auto h1 = elu(conv2d(image_hwc, w1_, b1_, 3, 3, /*stride=*/1, /*pad=*/1));
  auto h2 = elu(conv2d(h1, w2_, b2_, 3, 3, /*stride=*/2, /*pad=*/1));
  return conv2d(h2, w3_, b3_, 3, 3, /*stride=*/1, /*pad=*/1);
}

}  // namespace colf
