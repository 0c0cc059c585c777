#include <doctest.h>

#include <algorithm>
#include <bit>
#include <cstdlib>
#include <cstring>

#include "segadv/data.hpp"
#include "segadv/digest.hpp"
#include "support.hpp"

using namespace segadv;
using segadv::testing::TempDir;
using segadv::testing::thrown_kind;

namespace {

// generate_shapes(seed=42, n=4) payload digest; regenerate only on a deliberate
// generator change.
constexpr const char* kGoldenPayloadSha256 =
    "3e6538f1a4c120bafe1aa6f111b04557767f181af31ab57f48fd8c79f806ef0b";

std::uint32_t read_u32(const std::string& s, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[at + i]);
  return v;
}

std::uint64_t read_u64(const std::string& s, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[at + i]);
  return v;
}

}  // namespace

TEST_CASE("generation is deterministic per seed") {
  const LabeledBatch a = generate_shapes(3, 6);
  const LabeledBatch b = generate_shapes(3, 6);
  const LabeledBatch c = generate_shapes(4, 6);
  CHECK(bit_identical(a, b));
  CHECK_FALSE(bit_identical(a, c));
  CHECK(a.images.shape() == Shape{6, 32, 32, 3});
  CHECK(a.labels.size() == 6 * 32 * 32);
  CHECK(a.class_count == 4);
  CHECK(a.seed == 3);

  // Image i depends only on (seed, i).
  const LabeledBatch longer = generate_shapes(3, 9);
  for (std::size_t i = 0; i < 6; ++i) CHECK(bit_identical(longer.image(i), a.image(i)));
}

TEST_CASE("output does not depend on the worker count") {
  ::setenv("SEGADV_THREADS", "1", 1);
  const LabeledBatch serial = generate_shapes(12, 10);
  ::setenv("SEGADV_THREADS", "3", 1);
  const LabeledBatch threaded = generate_shapes(12, 10);
  ::unsetenv("SEGADV_THREADS");
  CHECK(bit_identical(serial, threaded));
}

TEST_CASE("golden digest of generate_shapes(42, 4)") {
  CHECK(sha256_hex(dataset_payload(generate_shapes(42, 4))) == kGoldenPayloadSha256);
}

TEST_CASE("sha256 reference vectors") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("background, ignore and range invariants over 1000 seeds") {
  const std::size_t pixels = 32 * 32;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const LabeledBatch b = generate_shapes(seed, 1);
    const auto labels = b.label_map(0);
    const auto background = std::count(labels.begin(), labels.end(), 0);
    const auto ignored = std::count(labels.begin(), labels.end(), kIgnoreLabel);
    REQUIRE(static_cast<std::size_t>(background) * 2 >= pixels);
    REQUIRE(static_cast<std::size_t>(ignored) * 5 <= pixels);
    const auto values = b.images.data();
    REQUIRE(std::all_of(values.begin(), values.end(), [](double v) { return v >= 0.0 && v <= 1.0; }));
    REQUIRE(std::any_of(labels.begin(), labels.end(), [](std::uint8_t y) { return y != kIgnoreLabel; }));
  }
}

TEST_CASE("labels agree with the placement log") {
  const std::size_t n = 200, h = 32, w = 32;
  GenerationLog log;
  const LabeledBatch b = generate_shapes(77, n, h, w, 4, &log);
  REQUIRE(log.objects.size() == n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto labels = b.label_map(i);
    const auto& objects = log.objects[i];
    const std::size_t attempted = objects.size() + log.skipped[i];
    CHECK(attempted >= 1);
    CHECK(attempted <= 3);

    for (int cls = 1; cls <= 3; ++cls) {
      std::size_t logged = 0;
      for (const PlacedObject& o : objects) {
        if (static_cast<int>(o.shape) == cls) logged += o.pixel_count;
      }
      CHECK(static_cast<std::size_t>(std::count(labels.begin(), labels.end(), cls)) == logged);
    }

    for (long y = 0; y < static_cast<long>(h); ++y) {
      for (long x = 0; x < static_cast<long>(w); ++x) {
        const std::uint8_t label = labels[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
        if (label == 0 || label == kIgnoreLabel) continue;
        const bool inside = std::any_of(objects.begin(), objects.end(), [&](const PlacedObject& o) {
          return static_cast<int>(o.shape) == label && y >= o.top && y < o.bottom && x >= o.left &&
                 x < o.right;
        });
        CHECK(inside);
        // Objects never touch background directly: the IGNORE ring separates them.
        for (long dy = -1; dy <= 1; ++dy) {
          for (long dx = -1; dx <= 1; ++dx) {
            const long yy = y + dy, xx = x + dx;
            if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) continue;
            const std::uint8_t nb = labels[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)];
            REQUIRE(nb != 0);
            REQUIRE((nb == label || nb == kIgnoreLabel));
          }
        }
      }
    }

    // Rectangles fill their bounding box exactly.
    for (const PlacedObject& o : objects) {
      if (o.shape == ShapeClass::kRectangle) {
        CHECK(o.pixel_count == static_cast<std::size_t>((o.bottom - o.top) * (o.right - o.left)));
      }
    }
  }
}

TEST_CASE("pixel intensities sit within the noise band of their class color") {
  const auto colors = shape_class_colors();
  REQUIRE(colors.size() == 4);
  const LabeledBatch b = generate_shapes(5, 20);
  for (std::size_t p = 0; p < b.labels.size(); ++p) {
    const std::uint8_t y = b.labels[p];
    const auto& base = colors[y == kIgnoreLabel ? 0 : y];
    for (std::size_t c = 0; c < 3; ++c) {
      REQUIRE(std::abs(b.images[p * 3 + c] - base[c]) <= kColorNoise + 1e-12);
    }
  }
  for (std::size_t a = 0; a < 4; ++a) {
    for (std::size_t c = a + 1; c < 4; ++c) CHECK(colors[a] != colors[c]);
  }
}

TEST_CASE("horizontal flip") {
  Tensor image(Shape{1, 3, 3}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9});
  std::vector<std::uint8_t> labels{0, 1, 2};
  flip_horizontal(image, labels);
  CHECK(bit_identical(image, Tensor(Shape{1, 3, 3}, std::vector<double>{7, 8, 9, 4, 5, 6, 1, 2, 3})));
  CHECK(labels == std::vector<std::uint8_t>{2, 1, 0});

  const LabeledBatch b = generate_shapes(2, 1);
  Tensor x = b.image(0);
  std::vector<std::uint8_t> y(b.label_map(0).begin(), b.label_map(0).end());
  flip_horizontal(x, y);
  flip_horizontal(x, y);
  CHECK(bit_identical(x, b.image(0)));
}

TEST_CASE("dataset file layout") {
  const LabeledBatch b = generate_shapes(42, 3, 8, 10);
  const std::string bytes = encode_dataset(b);
  CHECK(bytes.substr(0, 8) == "SEGADVD1");
  CHECK(read_u32(bytes, 8) == 3);
  CHECK(read_u32(bytes, 12) == 8);
  CHECK(read_u32(bytes, 16) == 10);
  CHECK(read_u32(bytes, 20) == 4);
  CHECK(read_u64(bytes, 24) == 42);
  const std::size_t header = 32;
  CHECK(bytes.size() == header + 3 * 8 * 10 * (3 * 8 + 1));
  CHECK(bytes.substr(header) == dataset_payload(b));

  const double first = std::bit_cast<double>(read_u64(bytes, header));
  CHECK(first == b.images[0]);
  CHECK(static_cast<std::uint8_t>(bytes[header + 3 * 8 * 10 * 3 * 8]) == b.labels[0]);
}

TEST_CASE("dataset round trip and decode errors") {
  TempDir dir("data");
  const LabeledBatch b = generate_shapes(8, 5, 12, 9);
  save_dataset(b, dir.file("d.bin"));
  CHECK(bit_identical(load_dataset(dir.file("d.bin")), b));

  const std::string good = encode_dataset(b);
  CHECK(thrown_kind([&] { decode_dataset(good.substr(0, good.size() - 1)); }) == ErrorKind::kTruncated);
  CHECK(thrown_kind([&] { decode_dataset(good.substr(0, 20)); }) == ErrorKind::kTruncated);
  CHECK(thrown_kind([&] { decode_dataset(good + '\0'); }) == ErrorKind::kCountMismatch);
  std::string v2 = good;
  v2[7] = '2';
  CHECK(thrown_kind([&] { decode_dataset(v2); }) == ErrorKind::kUnsupportedVersion);
  std::string junk = good;
  junk.replace(0, 8, "NOTADATA");
  CHECK(thrown_kind([&] { decode_dataset(junk); }) == ErrorKind::kBadMagic);
  CHECK(thrown_kind([&] { load_dataset(dir.file("absent.bin")); }) == ErrorKind::kIo);
}

TEST_CASE("generator preconditions and batch validation") {
  CHECK(thrown_kind([] { generate_shapes(1, 0); }) == ErrorKind::kInvalidArgument);
  CHECK(thrown_kind([] { generate_shapes(1, 1, 7, 32); }) == ErrorKind::kInvalidArgument);
  CHECK(thrown_kind([] { generate_shapes(1, 1, 32, 32, 5); }) == ErrorKind::kInvalidArgument);

  const Tensor image(Shape{2, 2, 3}, 0.5);
  CHECK_NOTHROW(make_batch({image}, {{0, 1, kIgnoreLabel, 0}}, 2));
  CHECK_THROWS_AS(make_batch({image}, {{kIgnoreLabel, kIgnoreLabel, kIgnoreLabel, kIgnoreLabel}}, 2), Error);
  CHECK_THROWS_AS(make_batch({image}, {{0, 2, 0, 0}}, 2), Error);
  CHECK_THROWS_AS(make_batch({Tensor(Shape{2, 2, 3}, 1.5)}, {{0, 0, 0, 0}}, 2), Error);
}
