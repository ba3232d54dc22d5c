#include "sonetlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "sonetlab/errors.hpp"
#include "sonetlab/rng.hpp"

namespace sonetlab::data {

std::vector<int> Dataset::example_shape() const {
  const auto& s = images.shape();
  return {s[1], s[2], s[3]};
}

Tensor Dataset::example(int i) const {
  if (i < 0 || i >= size()) throw ContractViolation("dataset example index out of range");
  const auto shape = example_shape();
  Tensor out(shape);
  const std::int64_t stride = out.size();
  std::memcpy(out.data(), images.data() + static_cast<std::int64_t>(i) * stride,
              static_cast<std::size_t>(stride) * sizeof(double));
  return out;
}

Dataset Dataset::subset(int first_n) const {
  if (first_n >= size()) return *this;
  if (first_n <= 0) throw ContractViolation("dataset subset must keep at least one example");
  Dataset out;
  const auto& s = images.shape();
  out.images = Tensor({first_n, s[1], s[2], s[3]});
  std::memcpy(out.images.data(), images.data(),
              static_cast<std::size_t>(out.images.size()) * sizeof(double));
  out.labels.assign(labels.begin(), labels.begin() + first_n);
  out.split = split;
  out.num_classes = num_classes;
  return out;
}

namespace {

std::uint32_t read_be_u32(std::ifstream& in, const std::string& path, std::int64_t& offset) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (in.gcount() != 4) {
    throw IngestError(path + ": truncated at byte offset " + std::to_string(offset));
  }
  offset += 4;
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
         std::uint32_t(b[3]);
}

std::vector<unsigned char> read_bytes(std::ifstream& in, std::int64_t count,
                                      const std::string& path, std::int64_t& offset) {
  std::vector<unsigned char> buf(static_cast<std::size_t>(count));
  in.read(reinterpret_cast<char*>(buf.data()), count);
  if (in.gcount() != count) {
    throw IngestError(path + ": truncated at byte offset " + std::to_string(offset + in.gcount()));
  }
  offset += count;
  return buf;
}

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

}  // namespace

Tensor load_idx_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open IDX file: " + path);
  std::int64_t offset = 0;
  const std::uint32_t magic = read_be_u32(in, path, offset);
  if (magic == kIdxImagesMagic) {
    const int n = static_cast<int>(read_be_u32(in, path, offset));
    const int h = static_cast<int>(read_be_u32(in, path, offset));
    const int w = static_cast<int>(read_be_u32(in, path, offset));
    const std::int64_t count = static_cast<std::int64_t>(n) * h * w;
    const auto bytes = read_bytes(in, count, path, offset);
    Tensor out({n, h, w});
    for (std::int64_t i = 0; i < count; ++i) out[i] = bytes[static_cast<std::size_t>(i)] / 255.0;
    return out;
  }
  if (magic == kIdxLabelsMagic) {
    const int n = static_cast<int>(read_be_u32(in, path, offset));
    const auto bytes = read_bytes(in, n, path, offset);
    Tensor out({n});
    for (int i = 0; i < n; ++i) out[i] = static_cast<double>(bytes[static_cast<std::size_t>(i)]);
    return out;
  }
  throw IngestError(path + ": bad IDX magic " + std::to_string(magic));
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  Tensor images = load_idx_tensor(images_path);
  if (images.rank() != 3) throw IngestError(images_path + ": expected an IDX image file");
  Tensor labels = load_idx_tensor(labels_path);
  if (labels.rank() != 1) throw IngestError(labels_path + ": expected an IDX label file");
  if (images.dim(0) != labels.dim(0)) {
    throw IngestError("IDX image/label counts differ: " + std::to_string(images.dim(0)) + " vs " +
                      std::to_string(labels.dim(0)));
  }
  Dataset d;
  const int n = images.dim(0), h = images.dim(1), w = images.dim(2);
  d.images = images.reshaped({n, 1, h, w});
  d.labels.resize(static_cast<std::size_t>(n));
  int max_label = 0;
  for (int i = 0; i < n; ++i) {
    d.labels[static_cast<std::size_t>(i)] = static_cast<int>(labels[i]);
    max_label = std::max(max_label, d.labels[static_cast<std::size_t>(i)]);
  }
  d.num_classes = max_label + 1;
  return d;
}

Dataset load_cifar_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open CIFAR batch: " + path);
  in.seekg(0, std::ios::end);
  const std::int64_t bytes = in.tellg();
  in.seekg(0);
  constexpr std::int64_t kRecord = 1 + 3 * 32 * 32;
  if (bytes <= 0 || bytes % kRecord != 0) {
    throw IngestError(path + ": size " + std::to_string(bytes) + " is not a multiple of " +
                      std::to_string(kRecord));
  }
  const int n = static_cast<int>(bytes / kRecord);
  Dataset d;
  d.images = Tensor({n, 3, 32, 32});
  d.labels.resize(static_cast<std::size_t>(n));
  std::vector<unsigned char> rec(kRecord);
  for (int i = 0; i < n; ++i) {
    in.read(reinterpret_cast<char*>(rec.data()), kRecord);
    if (in.gcount() != kRecord) {
      throw IngestError(path + ": truncated record " + std::to_string(i));
    }
    d.labels[static_cast<std::size_t>(i)] = rec[0];
    double* img = d.images.data() + static_cast<std::int64_t>(i) * 3 * 32 * 32;
    for (std::int64_t p = 0; p < 3 * 32 * 32; ++p) img[p] = rec[static_cast<std::size_t>(1 + p)] / 255.0;
  }
  d.num_classes = 10;
  d.split = "cifar";
  return d;
}

double embed_coordinate(double v) { return std::clamp((v + 5.0) / 10.0, 0.0, 1.0); }

SyntheticKind synthetic_kind_from_string(const std::string& name) {
  if (name == "blobs") return SyntheticKind::blobs;
  if (name == "rings") return SyntheticKind::rings;
  if (name == "glyphs") return SyntheticKind::glyphs;
  throw ContractViolation("unknown synthetic kind: " + name);
}

namespace {

// 5x7 digit font, one row per digit, columns packed LSB-first.
constexpr unsigned char kFont[10][7] = {
    {0x0e, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0e},  // 0
    {0x04, 0x06, 0x04, 0x04, 0x04, 0x04, 0x0e},  // 1
    {0x0e, 0x11, 0x10, 0x08, 0x04, 0x02, 0x1f},  // 2
    {0x1f, 0x08, 0x04, 0x08, 0x10, 0x11, 0x0e},  // 3
    {0x08, 0x0c, 0x0a, 0x09, 0x1f, 0x08, 0x08},  // 4
    {0x1f, 0x01, 0x0f, 0x10, 0x10, 0x11, 0x0e},  // 5
    {0x0c, 0x02, 0x01, 0x0f, 0x11, 0x11, 0x0e},  // 6
    {0x1f, 0x10, 0x08, 0x04, 0x02, 0x02, 0x02},  // 7
    {0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e},  // 8
    {0x0e, 0x11, 0x11, 0x1e, 0x10, 0x08, 0x06},  // 9
};

void render_glyph(double* canvas, int hw, int digit, Rng& rng) {
  // Upscale the 5x7 bitmap to 8x11 by nearest neighbour, drop it at a random
  // offset, jitter the stroke intensity and add pixel noise.
  constexpr int gw = 8, gh = 11;
  const int ox = 1 + rng.uniform_int(hw - gw - 1);
  const int oy = 1 + rng.uniform_int(hw - gh - 1);
  const double intensity = 0.6 + 0.4 * rng.uniform();
  for (int v = 0; v < gh; ++v) {
    const int sv = std::min(6, v * 7 / gh);
    for (int u = 0; u < gw; ++u) {
      const int su = std::min(4, u * 5 / gw);
      if (kFont[digit][sv] >> su & 1) {
        canvas[(oy + v) * hw + (ox + u)] = intensity;
      }
    }
  }
  for (int p = 0; p < hw * hw; ++p) {
    canvas[p] = std::clamp(canvas[p] + 0.08 * rng.normal(), 0.0, 1.0);
  }
}

}  // namespace

Dataset make_synthetic(SyntheticKind kind, int n, std::uint64_t seed) {
  if (n < 2) throw ContractViolation("make_synthetic: need n >= 2");
  Rng rng(seed);
  Dataset d;
  d.split = "synthetic";
  if (kind == SyntheticKind::glyphs) {
    constexpr int hw = 14;
    d.images = Tensor({n, 1, hw, hw});
    d.labels.resize(static_cast<std::size_t>(n));
    d.num_classes = 10;
    for (int i = 0; i < n; ++i) {
      const int digit = i % 10;
      d.labels[static_cast<std::size_t>(i)] = digit;
      render_glyph(d.images.data() + static_cast<std::int64_t>(i) * hw * hw, hw, digit, rng);
    }
    return d;
  }

  d.images = Tensor({n, 1, 4, 4});
  d.labels.resize(static_cast<std::size_t>(n));
  d.num_classes = 2;
  for (int i = 0; i < n; ++i) {
    const int label = i % 2;
    d.labels[static_cast<std::size_t>(i)] = label;
    double x1 = 0.0, x2 = 0.0;
    if (kind == SyntheticKind::blobs) {
      const double cx = label == 0 ? -2.0 : 2.0;
      x1 = cx + rng.normal();
      x2 = rng.normal();
    } else {
      const double r = (label == 0 ? 1.0 : 2.0) + 0.1 * rng.normal();
      const double theta = rng.uniform(0.0, 2.0 * M_PI);
      x1 = r * std::cos(theta);
      x2 = r * std::sin(theta);
    }
    double* img = d.images.data() + static_cast<std::int64_t>(i) * 16;
    img[0] = embed_coordinate(x1);
    img[1] = embed_coordinate(x2);
  }
  return d;
}

Dataset downsample2x(const Dataset& src) {
  const auto& s = src.images.shape();
  const int n = s[0], c = s[1], h = s[2], w = s[3];
  if (h % 2 != 0 || w % 2 != 0) throw ContractViolation("downsample2x: extents must be even");
  Dataset d;
  d.images = Tensor({n, c, h / 2, w / 2});
  d.labels = src.labels;
  d.split = src.split;
  d.num_classes = src.num_classes;
  const int ho = h / 2, wo = w / 2;
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const double* in = src.images.data() + ((static_cast<std::int64_t>(i) * c + ch) * h) * w;
      double* out = d.images.data() + ((static_cast<std::int64_t>(i) * c + ch) * ho) * wo;
      for (int y = 0; y < ho; ++y) {
        for (int x = 0; x < wo; ++x) {
          out[y * wo + x] = 0.25 * (in[(2 * y) * w + 2 * x] + in[(2 * y) * w + 2 * x + 1] +
                                    in[(2 * y + 1) * w + 2 * x] + in[(2 * y + 1) * w + 2 * x + 1]);
        }
      }
    }
  }
  return d;
}

}  // namespace sonetlab::data
