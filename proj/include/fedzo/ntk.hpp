#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fedzo/model.hpp"
#include "fedzo/tensor.hpp"

namespace fedzo {

struct LocalNtkSummary {
  std::size_t device = 0;
  double trace_norm = 0.0;  // ‖θ₀ⁱ‖_* = ‖∇_W f(X_i)‖_F²
  std::size_t sample_count = 0;
};

// Largest n · batch that the explicit-Jacobian routines accept.
inline constexpr std::size_t kNtkSizeGuard = 100000;

// Sum over samples and output coordinates of the squared norm of the
// parameter gradient of that output, one reverse sweep per coordinate.
LocalNtkSummary local_ntk_trace(const ModelSpec& spec, const ModelParams& params, const Tensor& batch,
                                std::size_t device = 0);

// Rows are (sample, output) pairs in sample-major order; n columns.
std::vector<double> parameter_jacobian(const ModelSpec& spec, const ModelParams& params, const Tensor& batch);

struct FlNtkBound {
  double fl_nuclear = 0.0;    // ‖θ₀^fl‖_*
  double local_sum = 0.0;     // Σ_i ‖θ₀ⁱ‖_*
  std::vector<double> local;  // ‖θ₀ⁱ‖_* per device
};

// Largest total sample count accepted by flntk_oracle.
inline constexpr std::size_t kFlNtkMaxSamples = 256;

// Builds each device's NTK block J_i J_iᵀ, pads the blocks to the tallest
// one and concatenates them horizontally, then takes nuclear norms by SVD.
FlNtkBound flntk_oracle(const ModelSpec& spec, const ModelParams& params, std::span<const Tensor> device_batches);

}  // namespace fedzo
