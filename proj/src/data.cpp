#include "segadv/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "binary_io.hpp"
#include "segadv/autodiff.hpp"
#include "segadv/error.hpp"
#include "segadv/parallel.hpp"
#include "segadv/rng.hpp"

namespace segadv {

namespace {

constexpr std::string_view kDatasetMagic = "SEGADVD1";
constexpr std::string_view kDatasetFamily = "SEGADVD";

constexpr std::array<std::array<double, 3>, 4> kClassColors{{
    {0.50, 0.50, 0.50},
    {0.78, 0.38, 0.34},
    {0.34, 0.74, 0.40},
    {0.38, 0.36, 0.78},
}};

struct Candidate {
  std::vector<std::size_t> pixels;
  PlacedObject placed;
};

Candidate sample_object(ShapeClass shape, Rng& rng, long height, long width) {
  Candidate c;
  c.placed.shape = shape;
  auto add = [&](long y, long x) {
    if (y >= 0 && y < height && x >= 0 && x < width) {
      c.pixels.push_back(static_cast<std::size_t>(y * width + x));
    }
  };
  switch (shape) {
    case ShapeClass::kRectangle: {
      const long h = rng.range(4, std::min(10L, height - 2));
      const long w = rng.range(4, std::min(10L, width - 2));
      const long top = rng.range(0, height - h);
      const long left = rng.range(0, width - w);
      for (long y = top; y < top + h; ++y)
        for (long x = left; x < left + w; ++x) add(y, x);
      break;
    }
    case ShapeClass::kDisk: {
      const long r = rng.range(3, std::min(6L, (std::min(height, width) - 1) / 2));
      const long cy = rng.range(r, height - 1 - r);
      const long cx = rng.range(r, width - 1 - r);
      for (long y = cy - r; y <= cy + r; ++y)
        for (long x = cx - r; x <= cx + r; ++x)
          if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r) add(y, x);
      break;
    }
    case ShapeClass::kStripe: {
      const long s = rng.range(8, std::min(14L, std::min(height, width)));
      const long half_width = rng.range(1, 2);
      const long offset = rng.range(-2, 2);
      const bool anti = rng.bernoulli(0.5);
      const long top = rng.range(0, height - s);
      const long left = rng.range(0, width - s);
      for (long dy = 0; dy < s; ++dy) {
        for (long dx = 0; dx < s; ++dx) {
          const long d = anti ? (dy + dx - (s - 1)) : (dy - dx);
          if (std::abs(d - offset) <= half_width) add(top + dy, left + dx);
        }
      }
      break;
    }
  }
  if (!c.pixels.empty()) {
    PlacedObject& p = c.placed;
    p.top = height;
    p.left = width;
    for (std::size_t idx : c.pixels) {
      const long y = static_cast<long>(idx) / width, x = static_cast<long>(idx) % width;
      p.top = std::min(p.top, y);
      p.left = std::min(p.left, x);
      p.bottom = std::max(p.bottom, y + 1);
      p.right = std::max(p.right, x + 1);
    }
    p.pixel_count = c.pixels.size();
  }
  return c;
}

// 8-neighbourhood ring just outside the object.
std::vector<std::size_t> ring_of(const std::vector<std::size_t>& pixels,
                                 const std::vector<std::uint8_t>& in_object, long height,
                                 long width) {
  std::vector<std::uint8_t> seen(in_object.size(), 0);
  std::vector<std::size_t> ring;
  for (std::size_t idx : pixels) {
    const long y = static_cast<long>(idx) / width, x = static_cast<long>(idx) % width;
    for (long dy = -1; dy <= 1; ++dy) {
      for (long dx = -1; dx <= 1; ++dx) {
        const long ny = y + dy, nx = x + dx;
        if (ny < 0 || ny >= height || nx < 0 || nx >= width) continue;
        const auto n = static_cast<std::size_t>(ny * width + nx);
        if (!in_object[n] && !seen[n]) {
          seen[n] = 1;
          ring.push_back(n);
        }
      }
    }
  }
  return ring;
}

void generate_one(std::uint64_t seed, std::size_t index, std::size_t height, std::size_t width,
                  double* image, std::uint8_t* labels, std::vector<PlacedObject>& placed,
                  std::size_t& skipped) {
  Rng rng = Rng::stream(seed, stream_tag::kDataGen, index);
  const long h = static_cast<long>(height), w = static_cast<long>(width);
  const std::size_t pixels = height * width;
  std::fill(labels, labels + pixels, std::uint8_t{0});
  std::vector<std::uint8_t> occupied(pixels, 0);  // object or ring
  std::size_t background = pixels;
  std::size_t ignored = 0;

  const long objects = rng.range(1, 3);
  for (long k = 0; k < objects; ++k) {
    const auto shape = static_cast<ShapeClass>(rng.range(1, 3));
    bool done = false;
    for (int attempt = 0; attempt < kPlacementTries && !done; ++attempt) {
      Candidate c = sample_object(shape, rng, h, w);
      if (c.pixels.empty()) continue;
      std::vector<std::uint8_t> in_object(pixels, 0);
      for (std::size_t idx : c.pixels) in_object[idx] = 1;
      const auto ring = ring_of(c.pixels, in_object, h, w);
      const bool clear =
          std::none_of(c.pixels.begin(), c.pixels.end(), [&](std::size_t i) { return occupied[i]; }) &&
          std::none_of(ring.begin(), ring.end(), [&](std::size_t i) { return occupied[i]; });
      if (!clear) continue;
      const std::size_t new_background = background - c.pixels.size() - ring.size();
      const std::size_t new_ignored = ignored + ring.size();
      if (2 * new_background < pixels || 5 * new_ignored > pixels) continue;
      for (std::size_t idx : c.pixels) {
        labels[idx] = static_cast<std::uint8_t>(shape);
        occupied[idx] = 1;
      }
      for (std::size_t idx : ring) {
        labels[idx] = kIgnoreLabel;
        occupied[idx] = 1;
      }
      background = new_background;
      ignored = new_ignored;
      placed.push_back(c.placed);
      done = true;
    }
    if (!done) ++skipped;
  }

  // Ring pixels are drawn in background colour; their label is what hides them.
  for (std::size_t p = 0; p < pixels; ++p) {
    const std::uint8_t y = labels[p];
    const auto& base = kClassColors[y == kIgnoreLabel ? 0 : y];
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = base[c] + rng.uniform(-kColorNoise, kColorNoise);
      image[p * 3 + c] = std::clamp(v, 0.0, 1.0);
    }
  }
}

}  // namespace

std::span<const std::array<double, 3>> shape_class_colors() { return kClassColors; }

Tensor LabeledBatch::image(std::size_t i) const {
  const std::size_t n = height * width * 3;
  const auto begin = images.values().begin() + static_cast<std::ptrdiff_t>(i * n);
  return Tensor(Shape{height, width, 3}, std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(n)));
}

std::span<const std::uint8_t> LabeledBatch::label_map(std::size_t i) const {
  return std::span<const std::uint8_t>(labels).subspan(i * height * width, height * width);
}

std::size_t LabeledBatch::labeled_pixel_count() const {
  return static_cast<std::size_t>(
      std::count_if(labels.begin(), labels.end(), [](std::uint8_t y) { return y != kIgnoreLabel; }));
}

void LabeledBatch::validate() const {
  const std::size_t n = size();
  if (images.shape() != Shape{n, height, width, 3} || labels.size() != n * height * width) {
    throw Error(ErrorKind::kShapeMismatch, "batch images " + shape_string(images.shape()) +
                                               " with " + std::to_string(labels.size()) + " labels");
  }
  if (class_count < 2 || class_count > kIgnoreLabel) {
    throw Error(ErrorKind::kInvalidArgument, "class count " + std::to_string(class_count));
  }
  for (double v : images.data()) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw Error(ErrorKind::kInvalidArgument, "intensity outside [0, 1]");
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t labeled = 0;
    for (std::uint8_t y : label_map(i)) {
      if (y == kIgnoreLabel) continue;
      if (y >= class_count) {
        throw Error(ErrorKind::kInvalidArgument, "label " + std::to_string(y) + " in image " +
                                                     std::to_string(i));
      }
      ++labeled;
    }
    if (labeled == 0) {
      throw Error(ErrorKind::kInvalidArgument, "image " + std::to_string(i) + " has no labeled pixel");
    }
  }
}

bool bit_identical(const LabeledBatch& a, const LabeledBatch& b) {
  return a.height == b.height && a.width == b.width && a.class_count == b.class_count &&
         a.seed == b.seed && bit_identical(a.images, b.images) && a.labels == b.labels;
}

LabeledBatch make_batch(const std::vector<Tensor>& images,
                        const std::vector<std::vector<std::uint8_t>>& labels,
                        std::size_t class_count) {
  if (images.empty() || images.size() != labels.size()) {
    throw Error(ErrorKind::kInvalidArgument, "need matching, non-empty images and labels");
  }
  LabeledBatch b;
  const Shape& s = images.front().shape();
  if (s.size() != 3 || s[2] != 3) {
    throw Error(ErrorKind::kShapeMismatch, "images must be HxWx3, got " + shape_string(s));
  }
  b.height = s[0];
  b.width = s[1];
  b.class_count = class_count;
  std::vector<double> data;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape() != s) {
      throw Error(ErrorKind::kShapeMismatch, "image " + std::to_string(i) + " is " +
                                                 shape_string(images[i].shape()));
    }
    data.insert(data.end(), images[i].data().begin(), images[i].data().end());
    b.labels.insert(b.labels.end(), labels[i].begin(), labels[i].end());
  }
  b.images = Tensor(Shape{images.size(), b.height, b.width, 3}, std::move(data));
  b.validate();
  return b;
}

LabeledBatch generate_shapes(std::uint64_t seed, std::size_t n, std::size_t height,
                             std::size_t width, std::size_t class_count, GenerationLog* log) {
  if (n < 1) throw Error(ErrorKind::kInvalidArgument, "n must be >= 1");
  if (height < 8 || width < 8) throw Error(ErrorKind::kInvalidArgument, "H and W must be >= 8");
  if (class_count != 4) {
    throw Error(ErrorKind::kInvalidArgument, "the shapes generator has exactly 4 classes");
  }
  LabeledBatch b;
  b.height = height;
  b.width = width;
  b.class_count = class_count;
  b.seed = seed;
  b.images = Tensor(Shape{n, height, width, 3});
  b.labels.assign(n * height * width, 0);
  std::vector<std::vector<PlacedObject>> placed(n);
  std::vector<std::size_t> skipped(n, 0);
  parallel_for(n, [&](std::size_t i) {
    generate_one(seed, i, height, width, b.images.data().data() + i * height * width * 3,
                 b.labels.data() + i * height * width, placed[i], skipped[i]);
  });
  if (log) {
    log->objects = std::move(placed);
    log->skipped = std::move(skipped);
  }
  return b;
}

void flip_horizontal(Tensor& image, std::vector<std::uint8_t>& labels) {
  const std::size_t height = image.shape()[0], width = image.shape()[1];
  const std::size_t c = image.shape()[2];
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width / 2; ++x) {
      const std::size_t a = y * width + x, b = y * width + (width - 1 - x);
      std::swap(labels[a], labels[b]);
      for (std::size_t ch = 0; ch < c; ++ch) std::swap(image[a * c + ch], image[b * c + ch]);
    }
  }
}

std::string dataset_payload(const LabeledBatch& batch) {
  detail::ByteWriter w;
  for (double v : batch.images.data()) w.f64(v);
  for (std::uint8_t y : batch.labels) w.u8(y);
  return w.buffer();
}

std::string encode_dataset(const LabeledBatch& batch) {
  batch.validate();
  detail::ByteWriter w;
  w.bytes(kDatasetMagic);
  w.u32(static_cast<std::uint32_t>(batch.size()));
  w.u32(static_cast<std::uint32_t>(batch.height));
  w.u32(static_cast<std::uint32_t>(batch.width));
  w.u32(static_cast<std::uint32_t>(batch.class_count));
  w.u64(batch.seed);
  return w.buffer() + dataset_payload(batch);
}

LabeledBatch decode_dataset(std::string_view bytes) {
  detail::ByteReader r(bytes);
  const std::string_view magic = r.bytes(kDatasetMagic.size(), "magic");
  if (magic != kDatasetMagic) {
    if (magic.substr(0, kDatasetFamily.size()) == kDatasetFamily) {
      throw Error(ErrorKind::kUnsupportedVersion, "dataset format " + std::string(magic));
    }
    throw Error(ErrorKind::kBadMagic, "not a SEGADVD1 dataset file");
  }
  const std::size_t n = r.u32("header");
  LabeledBatch b;
  b.height = r.u32("header");
  b.width = r.u32("header");
  b.class_count = r.u32("header");
  b.seed = r.u64("header");
  if (n == 0 || b.height == 0 || b.width == 0) {
    throw Error(ErrorKind::kCountMismatch, "header declares an empty dataset");
  }
  const std::size_t pixels = n * b.height * b.width;
  const std::size_t expected = pixels * (3 * 8 + 1);
  if (r.remaining() < expected) {
    throw Error(ErrorKind::kTruncated, "payload has " + std::to_string(r.remaining()) +
                                           " bytes, header declares " + std::to_string(expected));
  }
  if (r.remaining() > expected) {
    throw Error(ErrorKind::kCountMismatch, "payload has " + std::to_string(r.remaining()) +
                                               " bytes, header declares " + std::to_string(expected));
  }
  std::vector<double> data(pixels * 3);
  for (double& v : data) v = r.f64("images");
  b.images = Tensor(Shape{n, b.height, b.width, 3}, std::move(data));
  const std::string_view label_bytes = r.bytes(pixels, "labels");
  b.labels.assign(label_bytes.begin(), label_bytes.end());
  b.validate();
  return b;
}

void save_dataset(const LabeledBatch& batch, const std::string& path) {
  detail::write_file(path, encode_dataset(batch));
}

LabeledBatch load_dataset(const std::string& path) {
  return decode_dataset(detail::read_file(path));
}

}  // namespace segadv
