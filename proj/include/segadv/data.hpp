#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "segadv/tensor.hpp"

namespace segadv {

/// n images (n x H x W x 3, intensities in [0, 1]) with per-pixel labels in
/// [0, M) or kIgnoreLabel.
struct LabeledBatch {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t class_count = 0;
  std::uint64_t seed = 0;
  Tensor images;
  std::vector<std::uint8_t> labels;

  std::size_t size() const { return images.rank() ? images.shape()[0] : 0; }
  std::size_t pixels_per_image() const { return height * width; }
  Tensor image(std::size_t i) const;
  std::span<const std::uint8_t> label_map(std::size_t i) const;
  std::size_t labeled_pixel_count() const;

  /// Throws unless shapes agree, intensities lie in [0, 1], labels are valid
  /// and every image has at least one labeled pixel.
  void validate() const;
};

bool bit_identical(const LabeledBatch& a, const LabeledBatch& b);

/// Builds a batch from individual images and label maps.
LabeledBatch make_batch(const std::vector<Tensor>& images,
                        const std::vector<std::vector<std::uint8_t>>& labels,
                        std::size_t class_count);

enum class ShapeClass : std::uint8_t { kRectangle = 1, kDisk = 2, kStripe = 3 };

struct PlacedObject {
  ShapeClass shape = ShapeClass::kRectangle;
  /// Bounding box of the object's pixels, half-open.
  long top = 0, left = 0, bottom = 0, right = 0;
  std::size_t pixel_count = 0;
};

/// Placement record per image, for white-box checks of the generator.
struct GenerationLog {
  std::vector<std::vector<PlacedObject>> objects;
  std::vector<std::size_t> skipped;
};

inline constexpr double kColorNoise = 0.08;
inline constexpr int kPlacementTries = 100;

/// Base RGB color per class: background, rectangle, disk, stripe.
std::span<const std::array<double, 3>> shape_class_colors();

/// Synthetic segmentation set: noisy background (class 0) with 1-3
/// non-overlapping objects (rectangle 1, disk 2, diagonal stripe band 3),
/// each pixel its class color plus uniform noise of amplitude kColorNoise.
/// A 1-pixel IGNORE ring surrounds every object. Image i depends only on
/// (seed, i). Placement keeps background >= H*W/2 and IGNORE <= 20% of the
/// image; an object that cannot be placed in kPlacementTries is skipped.
LabeledBatch generate_shapes(std::uint64_t seed, std::size_t n, std::size_t height = 32,
                             std::size_t width = 32, std::size_t class_count = 4,
                             GenerationLog* log = nullptr);

/// Mirrors image and labels left-right in place.
void flip_horizontal(Tensor& image, std::vector<std::uint8_t>& labels);

/// SEGADVD1 dataset files: header (magic, n, H, W, M as u32, seed as u64),
/// then f64 images and u8 labels, all little-endian.
std::string encode_dataset(const LabeledBatch& batch);
/// The bytes after the header.
std::string dataset_payload(const LabeledBatch& batch);
LabeledBatch decode_dataset(std::string_view bytes);
void save_dataset(const LabeledBatch& batch, const std::string& path);
LabeledBatch load_dataset(const std::string& path);

}  // namespace segadv
