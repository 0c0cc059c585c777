#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstring>

#include "segadv/models.hpp"
#include "support.hpp"

using namespace segadv;
using segadv::testing::random_tensor;
using segadv::testing::TempDir;
using segadv::testing::thrown_kind;

namespace {

// Byte-level writer for building weight files by hand, independent of the
// library's encoder.
struct Bytes {
  std::string s;
  void u8(std::uint8_t v) { s.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double d) {
    const auto bits = std::bit_cast<std::uint64_t>(d);
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  void layer(const std::string& name, const Shape& shape, double fill) {
    u16(static_cast<std::uint16_t>(name.size()));
    s += name;
    u8(static_cast<std::uint8_t>(shape.size()));
    for (auto e : shape) u32(static_cast<std::uint32_t>(e));
    for (std::size_t i = 0; i < shape_size(shape); ++i) f64(fill);
  }
};

Bytes hand_built(ArchitectureId id, std::size_t m, double fill, const char* magic = "SEGADVW1") {
  Bytes b;
  b.s = magic;
  const auto layout = layer_layout(id, m);
  b.u32(static_cast<std::uint32_t>(layout.size()));
  for (const auto& spec : layout) b.layer(spec.name, spec.shape, fill);
  return b;
}

Tensor relu_copy(Tensor t) {
  for (double& v : t.data()) v = std::max(v, 0.0);
  return t;
}

// Loop-nest same-padded convolution.
Tensor conv_oracle(const Tensor& x, const Tensor& k, const Tensor& b) {
  const std::size_t h = x.shape()[0], w = x.shape()[1], cin = x.shape()[2];
  const std::size_t cout = k.shape()[3];
  Tensor out(Shape{h, w, cout});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t o = 0; o < cout; ++o) {
        double s = b[o];
        for (std::size_t di = 0; di < 3; ++di)
          for (std::size_t dj = 0; dj < 3; ++dj) {
            const long yi = static_cast<long>(i + di) - 1, xj = static_cast<long>(j + dj) - 1;
            if (yi < 0 || xj < 0 || yi >= static_cast<long>(h) || xj >= static_cast<long>(w)) continue;
            for (std::size_t c = 0; c < cin; ++c) {
              s += x[(static_cast<std::size_t>(yi) * w + static_cast<std::size_t>(xj)) * cin + c] *
                   k[((di * 3 + dj) * cin + c) * cout + o];
            }
          }
        out[(i * w + j) * cout + o] = s;
      }
  return out;
}

}  // namespace

TEST_CASE("SegMini layout and parameter count") {
  const ModelWeights w = build(ArchitectureId::kSegMini, 4, 7);
  CHECK(w.parameter_count() == 6244);
  REQUIRE(w.layers.size() == 6);
  CHECK(w.layers[0].name == "conv1.weight");
  CHECK(w.layers[0].value.shape() == Shape{3, 3, 3, 16});
  CHECK(w.layers[2].value.shape() == Shape{3, 3, 16, 32});
  CHECK(w.layers[4].value.shape() == Shape{3, 3, 32, 4});
  CHECK(w.layers[5].value.shape() == Shape{4});
}

TEST_CASE("ClassMini layout") {
  const ModelWeights w = build(ArchitectureId::kClassMini, 3, 1);
  REQUIRE(w.layers.size() == 6);
  CHECK(w.layers[4].name == "dense.weight");
  CHECK(w.layers[4].value.shape() == Shape{16, 3});
  CHECK(w.parameter_count() == 3 * 3 * 3 * 8 + 8 + 3 * 3 * 8 * 16 + 16 + 16 * 3 + 3);
}

TEST_CASE("build is seeded, uniform within the fan bound, with zero biases") {
  const ModelWeights a = build(ArchitectureId::kSegMini, 4, 7);
  const ModelWeights b = build(ArchitectureId::kSegMini, 4, 7);
  const ModelWeights c = build(ArchitectureId::kSegMini, 4, 8);
  CHECK(bit_identical(a, b));
  CHECK_FALSE(bit_identical(a, c));
  for (const Layer& layer : a.layers) {
    const Shape& s = layer.value.shape();
    if (s.size() == 1) {
      CHECK(max_abs(layer.value) == 0.0);
      continue;
    }
    const double fan_in = static_cast<double>(s[0] * s[1] * s[2]);
    const double fan_out = static_cast<double>(s[0] * s[1] * s[3]);
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    CHECK(max_abs(layer.value) <= bound);
    // A uniform draw over thousands of values gets close to the bound.
    if (layer.value.size() > 1000) CHECK(max_abs(layer.value) > 0.95 * bound);
  }
  CHECK(thrown_kind([] { build(ArchitectureId::kSegMini, 1, 0); }) == ErrorKind::kInvalidArgument);
}

TEST_CASE("SegMini logits match a loop-nest forward pass") {
  Rng rng(21);
  const ModelWeights w = build(ArchitectureId::kSegMini, 4, 3);
  const Tensor x = random_tensor(rng, {7, 5, 3}, 0.0, 1.0);
  Tensor h = relu_copy(conv_oracle(x, w.layers[0].value, w.layers[1].value));
  h = relu_copy(conv_oracle(h, w.layers[2].value, w.layers[3].value));
  const Tensor expected = conv_oracle(h, w.layers[4].value, w.layers[5].value);
  const Tensor z = logits(w, x);
  CHECK(z.shape() == Shape{7, 5, 4});
  CHECK(max_abs_difference(z, expected) < 1e-12);
  CHECK(bit_identical(z, logits(w, x)));
}

TEST_CASE("logits shape contracts") {
  const ModelWeights seg = build(ArchitectureId::kSegMini, 4, 1);
  CHECK(logits(seg, Tensor(Shape{32, 32, 3}, 0.5)).shape() == Shape{32, 32, 4});
  const ModelWeights cls = build(ArchitectureId::kClassMini, 5, 1);
  CHECK(logits(cls, Tensor(Shape{9, 6, 3}, 0.5)).shape() == Shape{5});
  CHECK(thrown_kind([&] { logits(seg, Tensor(Shape{8, 8, 1})); }) == ErrorKind::kShapeMismatch);

  ModelWeights zero = seg;
  for (Layer& l : zero.layers) l.value = Tensor(l.value.shape());
  CHECK(max_abs(logits(zero, Tensor(Shape{6, 6, 3}, 0.7))) == 0.0);
}

TEST_CASE("same-padding preserves spatial extent") {
  const ModelWeights w = build(ArchitectureId::kSegMini, 3, 2);
  for (std::size_t h : {1u, 2u, 5u, 11u}) {
    for (std::size_t wd : {1u, 4u, 9u}) {
      const Tensor z = logits(w, Tensor(Shape{h, wd, 3}, 0.25));
      CHECK(z.shape() == Shape{h, wd, 3});
    }
  }
}

TEST_CASE("forward counter increments once per network evaluation") {
  const ModelWeights w = build(ArchitectureId::kSegMini, 4, 1);
  const auto before = forward_pass_count();
  logits(w, Tensor(Shape{4, 4, 3}));
  logits(w, Tensor(Shape{4, 4, 3}));
  CHECK(forward_pass_count() == before + 2);
}

TEST_CASE("affine models compute W^T x + b") {
  const Tensor weight(Shape{2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  const AffineClassifier cls(Shape{1, 1, 2}, weight, Tensor::vector({0.5, 0.0, -1.0}));
  const Tensor z = evaluate_logits(cls, Tensor(Shape{1, 1, 2}, std::vector<double>{1.0, 2.0}));
  CHECK(z[0] == 9.5);
  CHECK(z[1] == 12.0);
  CHECK(z[2] == 14.0);

  Tensor kernel(Shape{1, 1, 1, 2}, std::vector<double>{2.0, -1.0});
  const AffineSegmenter seg(kernel, Tensor::vector({0.0, 1.0}));
  const Tensor zs = evaluate_logits(seg, Tensor(Shape{1, 2, 1}, std::vector<double>{3.0, 4.0}));
  CHECK(zs.shape() == Shape{1, 2, 2});
  CHECK(zs[0] == 6.0);
  CHECK(zs[1] == -2.0);
  CHECK(zs[2] == 8.0);
  CHECK(zs[3] == -3.0);
}

TEST_CASE("weights file layout matches a hand-built encoding") {
  ModelWeights w = build(ArchitectureId::kClassMini, 2, 0);
  for (Layer& l : w.layers) l.value = Tensor(l.value.shape(), 0.25);
  CHECK(encode_weights(w) == hand_built(ArchitectureId::kClassMini, 2, 0.25).s);

  const ModelWeights decoded = decode_weights(hand_built(ArchitectureId::kSegMini, 3, -1.5).s);
  CHECK(decoded.architecture == ArchitectureId::kSegMini);
  CHECK(decoded.class_count == 3);
  CHECK(decoded.layers[4].value[0] == -1.5);
}

TEST_CASE("weights round-trip through a file bit-exactly") {
  TempDir dir("models");
  for (auto id : {ArchitectureId::kSegMini, ArchitectureId::kClassMini}) {
    const ModelWeights w = build(id, 4, 99);
    save_weights(w, dir.file("w.bin"));
    CHECK(bit_identical(load_weights(dir.file("w.bin")), w));
  }
  CHECK(thrown_kind([&] { load_weights(dir.file("missing.bin")); }) == ErrorKind::kIo);
}

TEST_CASE("weight decoding errors are distinct") {
  const std::string good = hand_built(ArchitectureId::kSegMini, 4, 0.1).s;

  std::string bad_magic = good;
  bad_magic[0] = 'X';
  CHECK(thrown_kind([&] { decode_weights(bad_magic); }) == ErrorKind::kBadMagic);
  CHECK(thrown_kind([&] { decode_weights(hand_built(ArchitectureId::kSegMini, 4, 0.1, "SEGADVW2").s); }) ==
        ErrorKind::kUnsupportedVersion);

  // Cut in the middle of the second layer's data.
  const std::size_t cut = 8 + 4 + (2 + 12 + 1 + 16 + 3 * 3 * 3 * 16 * 8) + 20;
  CHECK(thrown_kind([&] { decode_weights(good.substr(0, cut)); }) == ErrorKind::kTruncated);
  CHECK(thrown_kind([&] { decode_weights(good.substr(0, 5)); }) == ErrorKind::kTruncated);
  CHECK(thrown_kind([&] { decode_weights(good + "x"); }) == ErrorKind::kCountMismatch);

  Bytes wrong;
  wrong.s = "SEGADVW1";
  wrong.u32(6);
  wrong.layer("conv1.weight", {3, 3, 3, 16}, 0.0);
  wrong.layer("conv1.bias", {16}, 0.0);
  wrong.layer("conv2.weight", {3, 3, 16, 30}, 0.0);
  wrong.layer("conv2.bias", {32}, 0.0);
  wrong.layer("conv3.weight", {3, 3, 32, 4}, 0.0);
  wrong.layer("conv3.bias", {4}, 0.0);
  CHECK(thrown_kind([&] { decode_weights(wrong.s); }) == ErrorKind::kShapeMismatch);
}
