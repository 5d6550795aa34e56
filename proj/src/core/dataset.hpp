#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace bvo {

// Row-major stack of flattened images plus optional class labels. Pixel data
// parsed from IDX or produced by corrupt() lies in [0,1]; synthetic point
// clouds may hold arbitrary finite floats.
struct ImageDataset {
  int width = 0;
  int height = 0;
  std::vector<float> images;    // count * dim
  std::vector<uint8_t> labels;  // count when labeled, else empty
  std::string name;

  size_t count() const { return dim() == 0 ? 0 : images.size() / static_cast<size_t>(dim()); }
  int dim() const { return width * height; }
  bool labeled() const { return !labels.empty(); }

  // Copies row i into out as doubles (resizes as needed).
  void row(size_t i, std::vector<double>& out) const;
  // Copies rows [given indices] into a dense n x dim double buffer.
  std::vector<double> rows(std::span<const size_t> idx) const;

  // Content digest over a canonical serialization of dims, pixels, labels.
  std::string digest() const;

  void validate() const;  // Err::Dimension / Err::Numeric on broken invariants
};

// ---- IDX container -----------------------------------------------------------
// Big-endian IDX as used by the classic digit/garment archives. Archive images
// are unsigned bytes scaled into [0,1]; the float32 element type (magic byte
// 0x0D) carries synthetic data whose values do not quantize losslessly.
// Labels are unsigned bytes either way.

ImageDataset parse_idx(std::span<const unsigned char> image_bytes,
                       std::span<const unsigned char> label_bytes = {});
std::vector<unsigned char> write_idx_images(const ImageDataset& ds);
std::vector<unsigned char> write_idx_labels(const ImageDataset& ds);

ImageDataset load_idx(const std::string& images_path, const std::string& labels_path = "");
void save_idx(const ImageDataset& ds, const std::string& images_path,
              const std::string& labels_path = "");

// ---- transforms ---------------------------------------------------------------

// Partitions by label: rows whose label is in held_out land in .second.
std::pair<ImageDataset, ImageDataset> split_classes(const ImageDataset& ds,
                                                    const std::vector<int>& held_out);

// Each pixel is independently replaced, with probability mu, by a uniform
// draw from {0/255, ..., 255/255}.
ImageDataset corrupt(const ImageDataset& ds, double mu, uint64_t seed);

// Random subsample without replacement (order follows the permutation).
ImageDataset take(const ImageDataset& ds, size_t n, uint64_t seed);

ImageDataset concat(const ImageDataset& a, const ImageDataset& b);

// Seeded epoch partition: a permutation of 0..n-1 cut into batches of
// batch_size, last batch short. Every index appears exactly once.
std::vector<std::vector<size_t>> minibatch_indices(size_t n, size_t batch_size, uint64_t seed);

// ---- synthetic sources ----------------------------------------------------------

// Isotropic Gaussian blobs around the given centers; labels = component.
// Values are unclamped.
ImageDataset synthetic_mixture(const std::vector<std::vector<double>>& centers, double stddev,
                               size_t n, uint64_t seed);

// Procedural 28x28 grayscale shape classes (bars, checker, disc, cross, ...)
// with geometry jitter and pixel noise; useful where the real archives are
// not reachable. class_ids selects which of the kShapeClassCount classes to
// emit; labels are the class ids.
inline constexpr int kShapeClassCount = 8;
ImageDataset synthetic_shapes(size_t n_per_class, const std::vector<int>& class_ids,
                              uint64_t seed);

}  // namespace bvo
