#pragma once

#include <filesystem>
#include <random>
#include <string>

#include <gtest/gtest.h>

#include "hpl/random.hpp"
#include "hpl/tensor.hpp"

namespace hpl::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    std::string name = std::string("hpl_") + (info ? info->test_suite_name() : "x") + "_" + (info ? info->name() : "y");
    for (auto& c : name)
      if (c == '/') c = '_';
    path_ = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::vector<double> random_simplex(Rng& rng, std::size_t k) {
  std::vector<double> p(k);
  double s = 0.0;
  for (auto& v : p) {
    v = -std::log(1.0 - rng.uniform());
    s += v;
  }
  for (auto& v : p) v /= s;
  return p;
}

inline Tensor random_prob_map(Rng& rng, std::size_t k, std::size_t h, std::size_t w) {
  Tensor t({k, h, w});
  const std::size_t n = h * w;
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = random_simplex(rng, k);
    for (std::size_t c = 0; c < k; ++c) t[c * n + i] = p[c];
  }
  return t;
}

inline LabelMap random_label_map(Rng& rng, std::size_t k, std::size_t h, std::size_t w) {
  LabelMap l(h, w);
  for (auto& v : l.data) v = static_cast<std::uint8_t>(rng.below(k));
  return l;
}

}  // namespace hpl::testing
