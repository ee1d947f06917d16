#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "fedzo/mask.hpp"
#include "fedzo/model.hpp"
#include "fedzo/rng.hpp"
#include "fedzo/tensor.hpp"

namespace fedzo {

enum class Difference { one_sided, central };

// Everything the server needs to regenerate a device's perturbations.
struct PerturbationSpec {
  SeededRng rng;
  double sigma = 1e-3;
  std::size_t k = 1;
  // central: value[k] = (L(W + d_k) - L(W - d_k)) / 2
  Difference difference = Difference::one_sided;

  void validate() const;
  friend bool operator==(const PerturbationSpec&, const PerturbationSpec&) = default;
};

struct DeltaLossVector {
  std::vector<double> values;  // L(W + d_k) - L(W)
  friend bool operator==(const DeltaLossVector&, const DeltaLossVector&) = default;
};

// d_k = sigma * z_k on the active coordinates and 0 elsewhere; z_k is the
// standard-normal stream pspec.rng.derive({k}), consumed in order by the
// active coordinates only. An empty `active` means every coordinate.
void fill_perturbation(const PerturbationSpec& pspec, std::size_t k, std::span<const std::uint8_t> active,
                       std::span<double> out);
std::vector<double> perturbation(const PerturbationSpec& pspec, std::size_t k, std::size_t n,
                                 std::span<const std::uint8_t> active = {});

using FlatLoss = std::function<double(std::span<const double>)>;

// Loss differences for an arbitrary loss on a flat vector; the K perturbed
// evaluations may run in parallel.
DeltaLossVector delta_losses(const FlatLoss& loss, std::span<const double> w, const PerturbationSpec& pspec,
                             std::span<const std::uint8_t> active = {});

// Mean cross-entropy of the network at W ⊙ m on (inputs, labels); only the
// surviving coordinates are perturbed.
DeltaLossVector delta_losses(const ModelSpec& spec, const ModelParams& params, const Mask& mask,
                             const Tensor& inputs, std::span<const int> labels, const PerturbationSpec& pspec);

// (1/K) sum_k (d_k / sigma^2) dlv[k], d_k regenerated from pspec.
std::vector<double> stein_estimate(const DeltaLossVector& dlv, const PerturbationSpec& pspec, std::size_t n,
                                   std::span<const std::uint8_t> active = {});

// ||(1/(K sigma^2)) sum_k d_k d_k^T - I||_2 over the active coordinates.
double covariance_deviation(const PerturbationSpec& pspec, std::size_t n, std::span<const std::uint8_t> active = {});

// Largest |eigenvalue| of the symmetric n x n row-major matrix `a` by power
// iteration on a^2; stops when the estimate moves by less than tol
// (relative).
double symmetric_spectral_norm(std::span<const double> a, std::size_t n, double tol = 1e-8);

// L(W + step * dir) - L(W)
double fd_directional(const FlatLoss& loss, std::span<const double> w, std::span<const double> direction,
                      double step);

}  // namespace fedzo
