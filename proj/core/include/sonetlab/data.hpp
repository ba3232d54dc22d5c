#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sonetlab/tensor.hpp"

namespace sonetlab::data {

struct Dataset {
  Tensor images;            // {N, c, h, w}, pixels in [0, 1]
  std::vector<int> labels;  // class indices
  std::string split;
  int num_classes = 0;

  int size() const { return images.defined() ? images.dim(0) : 0; }
  std::vector<int> example_shape() const;
  Tensor example(int i) const;  // {c,h,w}
  Dataset subset(int first_n) const;
};

// IDX ingestion (big-endian header; magic 0x00000803 for images with the
// pixel bytes scaled by 1/255, 0x00000801 for label bytes).
Tensor load_idx_tensor(const std::string& path);
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// CIFAR-10 binary batches: 3073-byte records (label byte + 3x32x32 pixels).
Dataset load_cifar_binary(const std::string& path);

// Deterministic synthetic corpora for property tests and desk-scale runs:
//   blobs  - two unit-variance Gaussians at x = +-margin (default 2),
//            embedded into 1x4x4 images via an affine squash into [0,1]
//   rings  - two concentric noisy circles, same embedding
//   glyphs - ten synthetic digit classes rendered from a 5x7 pixel font onto
//            1x14x14 canvases with random shift, intensity jitter and noise
enum class SyntheticKind { blobs, rings, glyphs };
SyntheticKind synthetic_kind_from_string(const std::string& name);
Dataset make_synthetic(SyntheticKind kind, int n, std::uint64_t seed);

// 2x2 mean-pool every image; halves both spatial extents.
Dataset downsample2x(const Dataset& d);

// Raw coordinates -> pixel embedding used by blobs/rings (exposed for the
// oracle tests): p = clamp((v + 5)/10, 0, 1).
double embed_coordinate(double v);

}  // namespace sonetlab::data
