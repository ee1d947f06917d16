#include "fedzo/zo.hpp"

#include <cmath>
#include <string>

#include "fedzo/error.hpp"
#include "fedzo/kernels.hpp"
#include "fedzo/loss.hpp"
#include "fedzo/parallel.hpp"

namespace fedzo {

void PerturbationSpec::validate() const {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ValidationError("perturbation sigma must be > 0");
  if (k < 1) throw ValidationError("perturbation count K must be >= 1");
}

namespace {

// Positions of the active coordinates; every position when `active` is empty.
std::vector<std::size_t> active_index(std::span<const std::uint8_t> active, std::size_t n) {
  if (!active.empty() && active.size() != n) {
    throw ShapeError("active set length " + std::to_string(active.size()) + " != " + std::to_string(n));
  }
  std::vector<std::size_t> idx;
  idx.reserve(n);
  for (std::size_t j = 0; j < n; ++j) {
    if (active.empty() || active[j] != 0) idx.push_back(j);
  }
  return idx;
}

// sigma * z_k for the live coordinates, in stream order.
void fill_live(const PerturbationSpec& pspec, std::size_t k, std::span<double> z) {
  gaussian_fill(pspec.rng.derive({k}), 0, z);
  for (double& v : z) v *= pspec.sigma;
}

}  // namespace

void fill_perturbation(const PerturbationSpec& pspec, std::size_t k, std::span<const std::uint8_t> active,
                       std::span<double> out) {
  const SeededRng stream = pspec.rng.derive({k});
  if (active.empty()) {
    gaussian_fill(stream, 0, out);
    for (double& v : out) v *= pspec.sigma;
    return;
  }
  if (active.size() != out.size()) {
    throw ShapeError("active set length " + std::to_string(active.size()) + " != " + std::to_string(out.size()));
  }
  // The i-th surviving coordinate takes the i-th normal of the stream, so a
  // sparse model draws only ||m||_0 numbers. Scatter runs backwards in place.
  std::size_t live = 0;
  for (std::uint8_t a : active) live += a != 0;
  gaussian_fill(stream, 0, out.first(live));
  std::size_t src = live;
  for (std::size_t j = out.size(); j-- > 0;) out[j] = active[j] ? pspec.sigma * out[--src] : 0.0;
}

std::vector<double> perturbation(const PerturbationSpec& pspec, std::size_t k, std::size_t n,
                                 std::span<const std::uint8_t> active) {
  std::vector<double> d(n);
  fill_perturbation(pspec, k, active, d);
  return d;
}

DeltaLossVector delta_losses(const FlatLoss& loss, std::span<const double> w, const PerturbationSpec& pspec,
                             std::span<const std::uint8_t> active) {
  pspec.validate();
  const bool central = pspec.difference == Difference::central;
  const double base = central ? 0.0 : loss(w);
  if (!std::isfinite(base)) throw NumericError("non-finite base loss");
  DeltaLossVector out;
  out.values.assign(pspec.k, 0.0);
  const std::vector<std::size_t> idx = active_index(active, w.size());
  parallel_for(pspec.k, [&](std::size_t k) {
    std::vector<double> z(idx.size());
    fill_live(pspec, k, z);
    std::vector<double> probe(w.begin(), w.end());
    if (central) {
      std::vector<double> minus(w.begin(), w.end());
      for (std::size_t i = 0; i < idx.size(); ++i) {
        minus[idx[i]] = w[idx[i]] - z[i];
        probe[idx[i]] = w[idx[i]] + z[i];
      }
      const double hi = loss(probe);
      out.values[k] = (hi - loss(minus)) / 2.0;
    } else {
      for (std::size_t i = 0; i < idx.size(); ++i) probe[idx[i]] = w[idx[i]] + z[i];
      out.values[k] = loss(probe) - base;
    }
    const double v = out.values[k];
    if (!std::isfinite(v)) throw NumericError("non-finite loss at perturbation sample " + std::to_string(k));
  });
  return out;
}

DeltaLossVector delta_losses(const ModelSpec& spec, const ModelParams& params, const Mask& mask,
                             const Tensor& inputs, std::span<const int> labels, const PerturbationSpec& pspec) {
  const std::vector<double> eff = effective_weights(params, mask);
  const FlatLoss loss = [&](std::span<const double> w) {
    return cross_entropy_loss(forward_effective(spec, w, inputs), labels);
  };
  return delta_losses(loss, eff, pspec, mask.bits());
}

std::vector<double> stein_estimate(const DeltaLossVector& dlv, const PerturbationSpec& pspec, std::size_t n,
                                   std::span<const std::uint8_t> active) {
  pspec.validate();
  if (dlv.values.size() != pspec.k) {
    throw ShapeError("delta-loss vector has " + std::to_string(dlv.values.size()) + " entries, K = " +
                     std::to_string(pspec.k));
  }
  const auto& kern = kernels::active();
  const double inv_var = 1.0 / (pspec.sigma * pspec.sigma);
  const std::vector<std::size_t> idx = active_index(active, n);
  std::vector<double> live(idx.size(), 0.0);
  std::vector<double> z(idx.size());
  for (std::size_t k = 0; k < pspec.k; ++k) {
    fill_live(pspec, k, z);
    kern.axpy(dlv.values[k] * inv_var, z.data(), live.data(), z.size());
  }
  const double kk = static_cast<double>(pspec.k);
  std::vector<double> acc(n, 0.0);
  for (std::size_t i = 0; i < idx.size(); ++i) acc[idx[i]] = live[i] / kk;
  return acc;
}

double symmetric_spectral_norm(std::span<const double> a, std::size_t n, double tol) {
  if (a.size() != n * n) throw ShapeError("matrix is not n x n");
  if (n == 0) return 0.0;
  const auto& kern = kernels::active();
  std::vector<double> v(n), av(n), bv(n);
  // Deterministic start with no special alignment to coordinate axes.
  for (std::size_t i = 0; i < n; ++i) v[i] = 1.0 + 0.5 * std::sin(1.0 + static_cast<double>(i));
  double prev = -1.0;
  for (int it = 0; it < 20000; ++it) {
    const double vn = std::sqrt(kern.dot(v.data(), v.data(), n));
    if (vn == 0.0) return 0.0;
    for (double& x : v) x /= vn;
    kern.gemv(a.data(), n, n, v.data(), av.data());
    const double est = std::sqrt(kern.dot(av.data(), av.data(), n));  // ||A v||
    if (est == 0.0) return 0.0;
    if (prev >= 0.0 && std::fabs(est - prev) <= tol * est) return est;
    prev = est;
    kern.gemv(a.data(), n, n, av.data(), bv.data());
    v.swap(bv);
  }
  return prev;
}

double covariance_deviation(const PerturbationSpec& pspec, std::size_t n, std::span<const std::uint8_t> active) {
  pspec.validate();
  const std::size_t a = active_index(active, n).size();
  if (a == 0) return 0.0;
  const auto& kern = kernels::active();
  std::vector<double> cov(a * a, 0.0);
  std::vector<double> u(a);
  for (std::size_t k = 0; k < pspec.k; ++k) {
    fill_live(pspec, k, u);
    for (double& v : u) v /= pspec.sigma;
    for (std::size_t i = 0; i < a; ++i) {
      if (u[i] != 0.0) kern.axpy(u[i], u.data(), cov.data() + i * a, a);
    }
  }
  const double kk = static_cast<double>(pspec.k);
  for (std::size_t i = 0; i < a; ++i) {
    for (std::size_t j = 0; j < a; ++j) cov[i * a + j] /= kk;
    cov[i * a + i] -= 1.0;
  }
  return symmetric_spectral_norm(cov, a);
}

double fd_directional(const FlatLoss& loss, std::span<const double> w, std::span<const double> direction,
                      double step) {
  if (step == 0.0) throw ValidationError("finite-difference step must be non-zero");
  if (direction.size() != w.size()) throw ShapeError("direction length does not match parameters");
  std::vector<double> probe(w.begin(), w.end());
  for (std::size_t j = 0; j < probe.size(); ++j) probe[j] += step * direction[j];
  return loss(probe) - loss(w);
}

}  // namespace fedzo
