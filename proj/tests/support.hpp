#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "segadv/autodiff.hpp"
#include "segadv/error.hpp"
#include "segadv/rng.hpp"
#include "segadv/tensor.hpp"

namespace segadv::testing {

inline Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

inline std::vector<std::uint8_t> random_labels(Rng& rng, std::size_t n, std::size_t classes,
                                               double ignore_rate = 0.0) {
  std::vector<std::uint8_t> labels(n);
  for (auto& y : labels) {
    y = rng.bernoulli(ignore_rate) ? kIgnoreLabel : static_cast<std::uint8_t>(rng.below(classes));
  }
  return labels;
}

template <class F>
ErrorKind thrown_kind(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  throw std::logic_error("expected segadv::Error");
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("segadv-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace segadv::testing
