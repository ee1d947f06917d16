#include "fedzo/loss.hpp"

#include <cmath>
#include <string>

#include "fedzo/error.hpp"

namespace fedzo {

namespace {

void check(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw ShapeError("logits must be (batch, classes), got " + shape_string(logits.shape()));
  if (logits.extent(0) == 0 || labels.empty()) throw ValidationError("cross entropy of an empty batch");
  if (labels.size() != logits.extent(0)) {
    throw ShapeError(std::to_string(labels.size()) + " labels for " + std::to_string(logits.extent(0)) + " rows");
  }
  const std::size_t c = logits.extent(1);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw ValidationError("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                            " outside [0, " + std::to_string(c) + ")");
    }
  }
}

// log sum exp of one row, shifted by its max.
double row_lse(const double* row, std::size_t c) {
  double mx = row[0];
  for (std::size_t k = 1; k < c; ++k) mx = row[k] > mx ? row[k] : mx;
  double s = 0.0;
  for (std::size_t k = 0; k < c; ++k) s += std::exp(row[k] - mx);
  return mx + std::log(s);
}

}  // namespace

double cross_entropy_loss(const Tensor& logits, std::span<const int> labels) {
  check(logits, labels);
  const std::size_t b = logits.extent(0), c = logits.extent(1);
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const double* row = logits.raw() + i * c;
    total += row_lse(row, c) - row[labels[i]];
  }
  const double loss = total / static_cast<double>(b);
  if (!std::isfinite(loss)) throw NumericError("non-finite loss");
  return loss < 0.0 ? 0.0 : loss;
}

Tensor cross_entropy_grad(const Tensor& logits, std::span<const int> labels) {
  check(logits, labels);
  const std::size_t b = logits.extent(0), c = logits.extent(1);
  Tensor g(logits.shape());
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t i = 0; i < b; ++i) {
    const double* row = logits.raw() + i * c;
    double* gr = g.raw() + i * c;
    const double lse = row_lse(row, c);
    for (std::size_t k = 0; k < c; ++k) gr[k] = std::exp(row[k] - lse) * inv_b;
    gr[labels[i]] -= inv_b;
  }
  return g;
}

double accuracy(const Tensor& logits, std::span<const int> labels) {
  check(logits, labels);
  const std::size_t b = logits.extent(0), c = logits.extent(1);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < b; ++i) {
    const double* row = logits.raw() + i * c;
    std::size_t arg = 0;
    for (std::size_t k = 1; k < c; ++k) {
      if (row[k] > row[arg]) arg = k;
    }
    hit += static_cast<int>(arg) == labels[i];
  }
  return static_cast<double>(hit) / static_cast<double>(b);
}

}  // namespace fedzo
