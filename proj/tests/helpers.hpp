#pragma once

#include <cmath>
#include <vector>

#include "fedzo/model.hpp"
#include "fedzo/rng.hpp"
#include "fedzo/tensor.hpp"

namespace testing_helpers {

inline fedzo::Tensor gaussian_batch(std::vector<std::size_t> shape, std::uint64_t seed) {
  fedzo::Tensor t(std::move(shape));
  fedzo::gaussian_fill(fedzo::SeededRng{seed, 99}, 0, t.data());
  return t;
}

inline std::vector<int> labels_for(std::size_t n, int classes, std::uint64_t seed) {
  fedzo::RandomStream rs(fedzo::SeededRng{seed, 17});
  std::vector<int> y(n);
  for (auto& v : y) v = static_cast<int>(rs.below(static_cast<std::uint64_t>(classes)));
  return y;
}

// Init params plus small nonzero biases so bias paths are exercised.
inline fedzo::ModelParams random_params(const fedzo::ModelSpec& spec, std::uint64_t seed) {
  fedzo::ModelParams p = fedzo::init_params(spec, fedzo::SeededRng{seed, 1});
  std::vector<double> noise(p.size());
  fedzo::gaussian_fill(fedzo::SeededRng{seed, 2}, 0, noise);
  for (std::size_t i = 0; i < p.segments().size(); ++i) {
    const auto& s = p.segments()[i];
    if (s.role != fedzo::ParamRole::bias) continue;
    auto b = p.segment(i);
    for (std::size_t j = 0; j < b.size(); ++j) b[j] = 0.1 * noise[s.offset + j];
  }
  return p;
}

inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), floor});
}

}  // namespace testing_helpers
