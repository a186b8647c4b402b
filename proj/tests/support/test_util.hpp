#pragma once

#include <unistd.h>

#include <atomic>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <system_error>
#include <vector>

#include "a2rnet/ops.hpp"
#include "a2rnet/rng.hpp"
#include "a2rnet/tensor.hpp"
#include "doctest.h"

namespace a2r::testing {

inline Tensor make_random(Shape shape, Rng& rng, Scalar lo = -1.0, Scalar hi = 1.0) {
  std::vector<Scalar> v(numel(shape));
  for (Scalar& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_values(std::move(shape), std::move(v));
}

// Non-degenerate scalar functional: fixed random weights avoid coordinates
// with identically zero gradient (e.g. sum over a softmax slice).
inline Tensor weighted_sum(const Tensor& y, Rng& rng) {
  std::vector<Scalar> w(y.size());
  Rng local(rng.next_u64());
  for (Scalar& x : w) x = local.uniform(-1.0, 1.0);
  return sum(mul(y, Tensor::from_values(y.shape(), std::move(w))));
}

inline void require_close(std::span<const Scalar> got, const std::vector<Scalar>& want,
                          Scalar tol = 1e-12) {
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i) {
    CAPTURE(i);
    REQUIRE(std::fabs(got[i] - want[i]) <= tol);
  }
}

inline void require_exact(std::span<const Scalar> got, const std::vector<Scalar>& want) {
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i) {
    CAPTURE(i);
    REQUIRE(got[i] == want[i]);
  }
}

inline void require_bitwise_equal(std::span<const Scalar> a, std::span<const Scalar> b) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CAPTURE(i);
    REQUIRE(std::memcmp(&a[i], &b[i], sizeof(Scalar)) == 0);
  }
}

// Per-test temporary directory, removed on destruction.
struct ScratchDir {
  std::filesystem::path dir;
  ScratchDir() {
    static std::atomic<int> counter{0};
    dir = std::filesystem::temp_directory_path() /
          ("a2r_t_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(dir);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(dir, ec);
  }
  std::string path(const std::string& name) const { return (dir / name).string(); }
};

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace a2r::testing
