#include <doctest.h>

#include <cmath>
#include <vector>

#include "fedzo/error.hpp"
#include "fedzo/ntk.hpp"
#include "helpers.hpp"

using namespace fedzo;
using namespace testing_helpers;

namespace {

ModelSpec linear_net(std::size_t in, std::size_t out) { return {"linear", {in}, {LayerSpec::dense(in, out)}}; }

ModelSpec small_mlp() {
  return {"mlp", {5}, {LayerSpec::dense(5, 4), LayerSpec::relu(), LayerSpec::dense(4, 3)}};
}

ModelSpec small_conv() {
  return {"conv",
          {1, 5, 5},
          {LayerSpec::conv2d(1, 2, 3, 1, 1), LayerSpec::relu(), LayerSpec::maxpool2d(2), LayerSpec::flatten(),
           LayerSpec::dense(8, 3)}};
}

}  // namespace

TEST_SUITE("ntk") {
  TEST_CASE("linear model trace is out * sum(|x|^2 + 1)") {
    const ModelSpec spec = linear_net(4, 3);
    const auto p = random_params(spec, 1);
    const Tensor x = gaussian_batch({6, 4}, 2);
    double expect = 0.0;
    for (std::size_t s = 0; s < 6; ++s) {
      double sq = 1.0;  // the bias coordinate
      for (std::size_t i = 0; i < 4; ++i) sq += x.data()[s * 4 + i] * x.data()[s * 4 + i];
      expect += 3.0 * sq;
    }
    const auto t = local_ntk_trace(spec, p, x, 7);
    CHECK(t.device == 7);
    CHECK(t.sample_count == 6);
    CHECK(rel_err(t.trace_norm, expect) < 1e-12);
  }

  TEST_CASE("zero inputs leave only the bias term") {
    const ModelSpec spec = linear_net(4, 3);
    const Tensor x({5, 4});
    CHECK(local_ntk_trace(spec, random_params(spec, 3), x).trace_norm == doctest::Approx(15.0));
  }

  TEST_CASE("trace equals the squared Frobenius norm of the explicit Jacobian") {
    for (const ModelSpec& spec : {small_mlp(), small_conv()}) {
      const auto p = random_params(spec, 4);
      const Tensor x = gaussian_batch([&] {
        std::vector<std::size_t> s{7};
        s.insert(s.end(), spec.input_shape.begin(), spec.input_shape.end());
        return s;
      }(), 5);
      const auto jac = parameter_jacobian(spec, p, x);
      CHECK(jac.size() == 7 * 3 * p.size());
      double fro = 0.0;
      for (double v : jac) fro += v * v;
      CHECK(rel_err(local_ntk_trace(spec, p, x).trace_norm, fro) < 1e-10);
    }
  }

  TEST_CASE("single device: both sides agree") {
    const ModelSpec spec = small_mlp();
    const auto p = random_params(spec, 6);
    const std::vector<Tensor> batches{gaussian_batch({8, 5}, 7)};
    const auto b = flntk_oracle(spec, p, batches);
    CHECK(rel_err(b.fl_nuclear, b.local_sum) < 1e-10);
    REQUIRE(b.local.size() == 1);
    CHECK(rel_err(b.local[0], local_ntk_trace(spec, p, batches[0]).trace_norm) < 1e-8);
  }

  TEST_CASE("federated nuclear norm never exceeds the local sum") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const ModelSpec spec = small_mlp();
      const auto p = random_params(spec, 100 + seed);
      std::vector<Tensor> batches;
      for (std::size_t i = 0; i < 3; ++i) batches.push_back(gaussian_batch({3 + (seed + i) % 5, 5}, seed * 10 + i));
      const auto b = flntk_oracle(spec, p, batches);
      CHECK(b.fl_nuclear <= b.local_sum * (1.0 + 1e-12));
      double sum = 0.0;
      for (double v : b.local) sum += v;
      CHECK(rel_err(sum, b.local_sum) < 1e-12);
    }
  }

  // m devices with the same data: [θ ... θ] has singular values sqrt(m)
  // times those of θ, so the ratio is exactly 1/sqrt(m).
  TEST_CASE("identical devices sit at ratio 1/sqrt(m)") {
    const ModelSpec spec = small_mlp();
    const auto p = random_params(spec, 8);
    const Tensor x = gaussian_batch({6, 5}, 9);
    for (std::size_t m : {2u, 3u, 4u}) {
      const std::vector<Tensor> batches(m, x);
      const auto b = flntk_oracle(spec, p, batches);
      CHECK(rel_err(b.fl_nuclear / b.local_sum, 1.0 / std::sqrt(static_cast<double>(m))) < 1e-9);
    }
  }

  TEST_CASE("size guards") {
    const ModelSpec big = linear_net(1000, 10);
    const auto p = random_params(big, 1);
    CHECK_THROWS_AS(local_ntk_trace(big, p, gaussian_batch({20, 1000}, 1)), SizeGuardError);
    CHECK_THROWS_AS(parameter_jacobian(big, p, gaussian_batch({20, 1000}, 1)), SizeGuardError);
    const ModelSpec spec = linear_net(2, 2);
    const std::vector<Tensor> many(3, gaussian_batch({100, 2}, 2));
    CHECK_THROWS_AS(flntk_oracle(spec, random_params(spec, 2), many), SizeGuardError);
    CHECK_THROWS_AS(flntk_oracle(spec, random_params(spec, 2), std::vector<Tensor>{}), ValidationError);
  }
}
