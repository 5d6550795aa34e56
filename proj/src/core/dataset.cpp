#include "core/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <random>

#include "core/common.hpp"
#include "core/fetch.hpp"
#include "core/rng.hpp"
#include "core/sha256.hpp"

namespace bvo {

static_assert(std::endian::native == std::endian::little,
              "canonical digests assume a little-endian host");

namespace {

// third magic byte is the element type: 0x08 unsigned byte, 0x0D float32
constexpr uint32_t kIdxImagesMagic = 0x00000803;
constexpr uint32_t kIdxFloatImagesMagic = 0x00000D03;
constexpr uint32_t kIdxLabelsMagic = 0x00000801;

uint32_t read_u32_be(std::span<const unsigned char> b, size_t off, const char* what) {
  if (off + 4 > b.size())
    fail(Err::Length, std::string("IDX header truncated reading ") + what + ": need " +
                          std::to_string(off + 4) + " bytes, have " + std::to_string(b.size()));
  return (uint32_t(b[off]) << 24) | (uint32_t(b[off + 1]) << 16) | (uint32_t(b[off + 2]) << 8) |
         uint32_t(b[off + 3]);
}

void push_u32_be(std::vector<unsigned char>& out, uint32_t v) {
  out.push_back(static_cast<unsigned char>(v >> 24));
  out.push_back(static_cast<unsigned char>(v >> 16));
  out.push_back(static_cast<unsigned char>(v >> 8));
  out.push_back(static_cast<unsigned char>(v));
}

std::string hex32(uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "0x%08x", v);
  return buf;
}

}  // namespace

void ImageDataset::row(size_t i, std::vector<double>& out) const {
  const size_t d = static_cast<size_t>(dim());
  out.resize(d);
  const float* src = images.data() + i * d;
  for (size_t j = 0; j < d; ++j) out[j] = static_cast<double>(src[j]);
}

std::vector<double> ImageDataset::rows(std::span<const size_t> idx) const {
  const size_t d = static_cast<size_t>(dim());
  std::vector<double> out(idx.size() * d);
  for (size_t r = 0; r < idx.size(); ++r) {
    const float* src = images.data() + idx[r] * d;
    for (size_t j = 0; j < d; ++j) out[r * d + j] = static_cast<double>(src[j]);
  }
  return out;
}

void ImageDataset::validate() const {
  if (width <= 0 || height <= 0)
    fail(Err::Dimension, "dataset '" + name + "' has non-positive dims " +
                             std::to_string(width) + "x" + std::to_string(height));
  if (images.size() % static_cast<size_t>(dim()) != 0)
    fail(Err::Dimension, "dataset '" + name + "': " + std::to_string(images.size()) +
                             " values not divisible by dim " + std::to_string(dim()));
  if (!labels.empty() && labels.size() != count())
    fail(Err::Dimension, "dataset '" + name + "': " + std::to_string(labels.size()) +
                             " labels for " + std::to_string(count()) + " rows");
  for (size_t i = 0; i < images.size(); ++i)
    if (!std::isfinite(images[i]))
      fail(Err::Numeric, "dataset '" + name + "': non-finite value at flat index " +
                             std::to_string(i));
}

// ---- IDX -----------------------------------------------------------------------

ImageDataset parse_idx(std::span<const unsigned char> image_bytes,
                       std::span<const unsigned char> label_bytes) {
  uint32_t magic = read_u32_be(image_bytes, 0, "image magic");
  if (magic != kIdxImagesMagic && magic != kIdxFloatImagesMagic)
    fail(Err::Format, "bad IDX image magic " + hex32(magic) + ", expected " +
                          hex32(kIdxImagesMagic) + " or " + hex32(kIdxFloatImagesMagic));
  const bool as_float = magic == kIdxFloatImagesMagic;
  uint32_t n = read_u32_be(image_bytes, 4, "image count");
  uint32_t rows = read_u32_be(image_bytes, 8, "row count");
  uint32_t cols = read_u32_be(image_bytes, 12, "column count");
  size_t values = static_cast<size_t>(n) * rows * cols;
  size_t expect = 16 + values * (as_float ? 4 : 1);
  if (image_bytes.size() != expect)
    fail(Err::Length, "IDX image payload: expected " + std::to_string(expect) +
                          " bytes, got " + std::to_string(image_bytes.size()));
  if (rows == 0 || cols == 0)
    fail(Err::Dimension, "IDX image dims " + std::to_string(rows) + "x" + std::to_string(cols));

  ImageDataset ds;
  ds.width = static_cast<int>(cols);
  ds.height = static_cast<int>(rows);
  ds.images.resize(values);
  for (size_t i = 0; i < ds.images.size(); ++i) {
    if (as_float) {
      uint32_t bits = read_u32_be(image_bytes, 16 + i * 4, "image value");
      ds.images[i] = std::bit_cast<float>(bits);
    } else {
      ds.images[i] = static_cast<float>(image_bytes[16 + i]) / 255.0f;
    }
  }

  if (!label_bytes.empty()) {
    uint32_t lmagic = read_u32_be(label_bytes, 0, "label magic");
    if (lmagic != kIdxLabelsMagic)
      fail(Err::Format,
           "bad IDX label magic " + hex32(lmagic) + ", expected " + hex32(kIdxLabelsMagic));
    uint32_t ln = read_u32_be(label_bytes, 4, "label count");
    if (label_bytes.size() != 8 + static_cast<size_t>(ln))
      fail(Err::Length, "IDX label payload: expected " + std::to_string(8 + ln) + " bytes, got " +
                            std::to_string(label_bytes.size()));
    if (ln != n)
      fail(Err::Dimension,
           std::to_string(ln) + " labels for " + std::to_string(n) + " images");
    ds.labels.assign(label_bytes.begin() + 8, label_bytes.end());
  }
  return ds;
}

std::vector<unsigned char> write_idx_images(const ImageDataset& ds) {
  ds.validate();
  // bytes only when that encoding is lossless for every pixel (true for data
  // that came from a byte IDX file); anything else goes out as float32
  bool byte_exact = true;
  for (size_t i = 0; i < ds.images.size() && byte_exact; ++i) {
    float v = ds.images[i];
    byte_exact = v >= 0.0f && v <= 1.0f &&
                 static_cast<float>(std::lround(v * 255.0f)) / 255.0f == v;
  }
  std::vector<unsigned char> out;
  out.reserve(16 + ds.images.size() * (byte_exact ? 1 : 4));
  push_u32_be(out, byte_exact ? kIdxImagesMagic : kIdxFloatImagesMagic);
  push_u32_be(out, static_cast<uint32_t>(ds.count()));
  push_u32_be(out, static_cast<uint32_t>(ds.height));
  push_u32_be(out, static_cast<uint32_t>(ds.width));
  for (size_t i = 0; i < ds.images.size(); ++i) {
    if (byte_exact)
      out.push_back(static_cast<unsigned char>(std::lround(ds.images[i] * 255.0f)));
    else
      push_u32_be(out, std::bit_cast<uint32_t>(ds.images[i]));
  }
  return out;
}

std::vector<unsigned char> write_idx_labels(const ImageDataset& ds) {
  if (!ds.labeled()) fail(Err::InvalidArgument, "dataset '" + ds.name + "' has no labels");
  std::vector<unsigned char> out;
  out.reserve(8 + ds.labels.size());
  push_u32_be(out, kIdxLabelsMagic);
  push_u32_be(out, static_cast<uint32_t>(ds.labels.size()));
  out.insert(out.end(), ds.labels.begin(), ds.labels.end());
  return out;
}

ImageDataset load_idx(const std::string& images_path, const std::string& labels_path) {
  auto img = maybe_gunzip(read_file_bytes(images_path));
  std::vector<unsigned char> lab;
  if (!labels_path.empty()) lab = maybe_gunzip(read_file_bytes(labels_path));
  ImageDataset ds = parse_idx(img, lab);
  ds.name = images_path;
  return ds;
}

void save_idx(const ImageDataset& ds, const std::string& images_path,
              const std::string& labels_path) {
  write_file_bytes(images_path, write_idx_images(ds));
  if (!labels_path.empty()) write_file_bytes(labels_path, write_idx_labels(ds));
}

// ---- digest ---------------------------------------------------------------------

std::string ImageDataset::digest() const {
  std::vector<unsigned char> buf;
  buf.reserve(13 + images.size() * 4 + labels.size());
  const char* tag = "IMGD1";
  buf.insert(buf.end(), tag, tag + 5);
  auto push_u32 = [&](uint32_t v) {
    unsigned char b[4];
    std::memcpy(b, &v, 4);
    buf.insert(buf.end(), b, b + 4);
  };
  push_u32(static_cast<uint32_t>(width));
  push_u32(static_cast<uint32_t>(height));
  push_u32(static_cast<uint32_t>(count()));
  buf.push_back(labeled() ? 1 : 0);
  size_t pixel_off = buf.size();
  buf.resize(buf.size() + images.size() * 4);
  std::memcpy(buf.data() + pixel_off, images.data(), images.size() * 4);
  buf.insert(buf.end(), labels.begin(), labels.end());
  return sha256_hex(buf);
}

// ---- transforms -------------------------------------------------------------------

std::pair<ImageDataset, ImageDataset> split_classes(const ImageDataset& ds,
                                                    const std::vector<int>& held_out) {
  if (!ds.labeled())
    fail(Err::InvalidArgument, "split_classes on unlabeled dataset '" + ds.name + "'");
  bool in_held[256] = {};
  for (int c : held_out) {
    if (c < 0 || c > 255)
      fail(Err::Domain, "held-out class " + std::to_string(c) + " outside [0,255]");
    in_held[c] = true;
  }
  ImageDataset kept, held;
  kept.width = held.width = ds.width;
  kept.height = held.height = ds.height;
  kept.name = ds.name + "/kept";
  held.name = ds.name + "/held";
  const size_t d = static_cast<size_t>(ds.dim());
  for (size_t i = 0; i < ds.count(); ++i) {
    ImageDataset& dst = in_held[ds.labels[i]] ? held : kept;
    dst.images.insert(dst.images.end(), ds.images.begin() + static_cast<long>(i * d),
                      ds.images.begin() + static_cast<long>((i + 1) * d));
    dst.labels.push_back(ds.labels[i]);
  }
  return {std::move(kept), std::move(held)};
}

ImageDataset corrupt(const ImageDataset& ds, double mu, uint64_t seed) {
  if (!(mu >= 0.0 && mu <= 1.0))
    fail(Err::Domain, "corruption rate " + std::to_string(mu) + " outside [0,1]");
  ImageDataset out = ds;
  out.name = ds.name + "/corrupt";
  Rng rng(mix_seed(seed, "corrupt"));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_int_distribution<int> byte(0, 255);
  for (auto& v : out.images) {
    bool flip = u01(rng) < mu;
    int b = byte(rng);  // always drawn: keeps the stream aligned regardless of flips
    if (flip) v = static_cast<float>(b) / 255.0f;
  }
  return out;
}

ImageDataset take(const ImageDataset& ds, size_t n, uint64_t seed) {
  if (n > ds.count())
    fail(Err::InvalidArgument, "take(" + std::to_string(n) + ") from dataset of " +
                                   std::to_string(ds.count()) + " rows");
  auto perm = seeded_permutation(ds.count(), mix_seed(seed, "take"));
  ImageDataset out;
  out.width = ds.width;
  out.height = ds.height;
  out.name = ds.name + "/take" + std::to_string(n);
  const size_t d = static_cast<size_t>(ds.dim());
  out.images.reserve(n * d);
  for (size_t i = 0; i < n; ++i) {
    size_t src = perm[i];
    out.images.insert(out.images.end(), ds.images.begin() + static_cast<long>(src * d),
                      ds.images.begin() + static_cast<long>((src + 1) * d));
    if (ds.labeled()) out.labels.push_back(ds.labels[src]);
  }
  return out;
}

ImageDataset concat(const ImageDataset& a, const ImageDataset& b) {
  if (a.width != b.width || a.height != b.height)
    fail(Err::Dimension, "concat dims disagree: " + std::to_string(a.width) + "x" +
                             std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                             std::to_string(b.height));
  if (a.labeled() != b.labeled())
    fail(Err::InvalidArgument, "concat mixes labeled and unlabeled datasets");
  ImageDataset out = a;
  out.name = a.name + "+" + b.name;
  out.images.insert(out.images.end(), b.images.begin(), b.images.end());
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  return out;
}

std::vector<std::vector<size_t>> minibatch_indices(size_t n, size_t batch_size, uint64_t seed) {
  if (batch_size == 0) fail(Err::InvalidArgument, "batch_size must be positive");
  auto perm = seeded_permutation(n, seed);
  std::vector<std::vector<size_t>> batches;
  for (size_t start = 0; start < n; start += batch_size) {
    size_t end = std::min(n, start + batch_size);
    batches.emplace_back(perm.begin() + static_cast<long>(start),
                         perm.begin() + static_cast<long>(end));
  }
  return batches;
}

// ---- synthetic sources ---------------------------------------------------------------

ImageDataset synthetic_mixture(const std::vector<std::vector<double>>& centers, double stddev,
                               size_t n, uint64_t seed) {
  if (centers.empty()) fail(Err::InvalidArgument, "synthetic_mixture needs at least one center");
  if (centers.size() > 256)
    fail(Err::InvalidArgument, "synthetic_mixture supports at most 256 components");
  const size_t d = centers[0].size();
  for (const auto& c : centers)
    if (c.size() != d)
      fail(Err::Dimension, "mixture centers have inconsistent dimension " +
                               std::to_string(c.size()) + " vs " + std::to_string(d));
  if (!(stddev >= 0.0)) fail(Err::Domain, "stddev must be non-negative");

  ImageDataset ds;
  ds.width = static_cast<int>(d);
  ds.height = 1;
  ds.name = "synthetic_mixture";
  ds.images.resize(n * d);
  ds.labels.resize(n);
  Rng rng(mix_seed(seed, "mixture"));
  std::uniform_int_distribution<size_t> comp(0, centers.size() - 1);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (size_t i = 0; i < n; ++i) {
    size_t k = comp(rng);
    ds.labels[i] = static_cast<uint8_t>(k);
    for (size_t j = 0; j < d; ++j)
      ds.images[i * d + j] = static_cast<float>(centers[k][j] + stddev * noise(rng));
  }
  return ds;
}

namespace {

// One 28x28 shape image. Classes: 0 horizontal bars, 1 vertical bars,
// 2 filled disc, 3 ring, 4 filled rectangle, 5 cross, 6 diagonal stripes,
// 7 checkerboard.
void render_shape(int cls, Rng& rng, float* px) {
  constexpr int S = 28;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> n01(0.0, 1.0);
  auto ui = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

  double fg = 0.65 + 0.35 * u01(rng);
  double bg = 0.08 * u01(rng);
  for (int i = 0; i < S * S; ++i) px[i] = static_cast<float>(bg);
  auto put = [&](int r, int c, double v) {
    if (r >= 0 && r < S && c >= 0 && c < S) px[r * S + c] = static_cast<float>(v);
  };

  switch (cls) {
    case 0: {  // horizontal bars
      int period = ui(5, 8), thick = ui(2, period - 2), phase = ui(0, period - 1);
      for (int r = 0; r < S; ++r)
        if ((r + phase) % period < thick)
          for (int c = 0; c < S; ++c) put(r, c, fg);
      break;
    }
    case 1: {  // vertical bars
      int period = ui(5, 8), thick = ui(2, period - 2), phase = ui(0, period - 1);
      for (int c = 0; c < S; ++c)
        if ((c + phase) % period < thick)
          for (int r = 0; r < S; ++r) put(r, c, fg);
      break;
    }
    case 2: {  // filled disc
      double cr = 10 + 8 * u01(rng), cc = 10 + 8 * u01(rng), rad = 5 + 4 * u01(rng);
      for (int r = 0; r < S; ++r)
        for (int c = 0; c < S; ++c)
          if ((r - cr) * (r - cr) + (c - cc) * (c - cc) <= rad * rad) put(r, c, fg);
      break;
    }
    case 3: {  // ring
      double cr = 11 + 6 * u01(rng), cc = 11 + 6 * u01(rng);
      double ro = 7 + 4 * u01(rng), ri = ro - (2.0 + 2.0 * u01(rng));
      for (int r = 0; r < S; ++r)
        for (int c = 0; c < S; ++c) {
          double d2 = (r - cr) * (r - cr) + (c - cc) * (c - cc);
          if (d2 <= ro * ro && d2 >= ri * ri) put(r, c, fg);
        }
      break;
    }
    case 4: {  // filled rectangle
      int r0 = ui(2, 12), c0 = ui(2, 12);
      int r1 = r0 + ui(8, 14), c1 = c0 + ui(8, 14);
      for (int r = r0; r <= std::min(r1, S - 3); ++r)
        for (int c = c0; c <= std::min(c1, S - 3); ++c) put(r, c, fg);
      break;
    }
    case 5: {  // cross
      int cr = ui(10, 17), cc = ui(10, 17), arm = ui(7, 11), thick = ui(2, 4);
      for (int r = cr - arm; r <= cr + arm; ++r)
        for (int t = -thick / 2; t <= thick / 2; ++t) put(r, cc + t, fg);
      for (int c = cc - arm; c <= cc + arm; ++c)
        for (int t = -thick / 2; t <= thick / 2; ++t) put(cr + t, c, fg);
      break;
    }
    case 6: {  // diagonal stripes
      int period = ui(6, 9), thick = ui(2, period - 3), phase = ui(0, period - 1);
      int sign = ui(0, 1) ? 1 : -1;
      for (int r = 0; r < S; ++r)
        for (int c = 0; c < S; ++c)
          if (((r + sign * c) % period + period) % period < thick) put(r, c, fg);
      break;
    }
    case 7: {  // checkerboard
      int cell = ui(4, 7), pr = ui(0, cell - 1), pc = ui(0, cell - 1);
      for (int r = 0; r < S; ++r)
        for (int c = 0; c < S; ++c)
          if ((((r + pr) / cell) + ((c + pc) / cell)) % 2 == 0) put(r, c, fg);
      break;
    }
    default:
      fail(Err::Domain, "shape class " + std::to_string(cls) + " outside [0," +
                            std::to_string(kShapeClassCount) + ")");
  }

  // pixel noise, clipped back into [0,1]
  double sigma = 0.04 + 0.04 * u01(rng);
  for (int i = 0; i < S * S; ++i) {
    double v = px[i] + sigma * n01(rng);
    px[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
}

}  // namespace

ImageDataset synthetic_shapes(size_t n_per_class, const std::vector<int>& class_ids,
                              uint64_t seed) {
  if (class_ids.empty()) fail(Err::InvalidArgument, "synthetic_shapes needs class ids");
  for (int c : class_ids)
    if (c < 0 || c >= kShapeClassCount)
      fail(Err::Domain, "shape class " + std::to_string(c) + " outside [0," +
                            std::to_string(kShapeClassCount) + ")");
  ImageDataset ds;
  ds.width = ds.height = 28;
  ds.name = "synthetic_shapes";
  const size_t n = n_per_class * class_ids.size();
  ds.images.resize(n * 784);
  ds.labels.resize(n);
  Rng rng(mix_seed(seed, "shapes"));
  // interleave classes so any prefix is roughly balanced
  for (size_t i = 0; i < n; ++i) {
    int cls = class_ids[i % class_ids.size()];
    ds.labels[i] = static_cast<uint8_t>(cls);
    render_shape(cls, rng, ds.images.data() + i * 784);
  }
  return ds;
}

}  // namespace bvo
