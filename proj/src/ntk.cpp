#include "fedzo/ntk.hpp"

#include <Eigen/Dense>
#include <string>

#include "fedzo/error.hpp"

namespace fedzo {

namespace {

void guard(std::size_t n, std::size_t samples) {
  if (n * samples > kNtkSizeGuard) {
    throw SizeGuardError("explicit NTK of " + std::to_string(samples) + " samples x " + std::to_string(n) +
                         " parameters exceeds the guard of " + std::to_string(kNtkSizeGuard));
  }
}

// Calls visit(row, gradient) for every (sample, output) pair.
template <class Visit>
void jacobian_rows(const ModelSpec& spec, const ModelParams& params, const Tensor& batch, Visit visit) {
  const Mask ones = Mask::ones(params.size());
  const auto eff = effective_weights(params, ones);
  const auto fwd = forward_effective_traced(spec, eff, batch);
  const std::size_t b = fwd.logits.extent(0), c = fwd.logits.extent(1);
  Tensor up(fwd.logits.shape());
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t k = 0; k < c; ++k) {
      up[i * c + k] = 1.0;
      visit(i * c + k, backward_effective(spec, eff, fwd.trace, up));
      up[i * c + k] = 0.0;
    }
  }
}

}  // namespace

LocalNtkSummary local_ntk_trace(const ModelSpec& spec, const ModelParams& params, const Tensor& batch,
                                std::size_t device) {
  guard(params.size(), batch.rank() ? batch.extent(0) : 0);
  LocalNtkSummary s;
  s.device = device;
  s.sample_count = batch.extent(0);
  jacobian_rows(spec, params, batch, [&](std::size_t, const std::vector<double>& g) {
    for (double v : g) s.trace_norm += v * v;
  });
  return s;
}

std::vector<double> parameter_jacobian(const ModelSpec& spec, const ModelParams& params, const Tensor& batch) {
  guard(params.size(), batch.rank() ? batch.extent(0) : 0);
  std::vector<double> jac;
  jacobian_rows(spec, params, batch, [&](std::size_t, const std::vector<double>& g) {
    jac.insert(jac.end(), g.begin(), g.end());
  });
  return jac;
}

FlNtkBound flntk_oracle(const ModelSpec& spec, const ModelParams& params, std::span<const Tensor> device_batches) {
  if (device_batches.empty()) throw ValidationError("FL-NTK oracle needs at least one device");
  std::size_t total = 0;
  for (const Tensor& b : device_batches) total += b.extent(0);
  if (total > kFlNtkMaxSamples) {
    throw SizeGuardError("FL-NTK oracle limited to " + std::to_string(kFlNtkMaxSamples) + " samples, got " +
                         std::to_string(total));
  }
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const std::size_t n = params.size();
  std::vector<Mat> blocks;
  Eigen::Index tallest = 0, width = 0;
  FlNtkBound out;
  for (const Tensor& b : device_batches) {
    const auto jac = parameter_jacobian(spec, params, b);
    const auto rows = static_cast<Eigen::Index>(jac.size() / n);
    const Eigen::Map<const Mat> j(jac.data(), rows, static_cast<Eigen::Index>(n));
    Mat theta = j * j.transpose();
    const Eigen::JacobiSVD<Mat> svd(theta);
    out.local.push_back(svd.singularValues().sum());
    out.local_sum += out.local.back();
    tallest = std::max(tallest, rows);
    width += rows;
    blocks.push_back(std::move(theta));
  }
  Mat fl = Mat::Zero(tallest, width);
  Eigen::Index col = 0;
  for (const Mat& t : blocks) {
    fl.block(0, col, t.rows(), t.cols()) = t;
    col += t.cols();
  }
  out.fl_nuclear = Eigen::JacobiSVD<Mat>(fl).singularValues().sum();
  return out;
}

}  // namespace fedzo
