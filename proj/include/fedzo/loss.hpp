#pragma once

#include <cstddef>
#include <span>

#include "fedzo/tensor.hpp"

namespace fedzo {

// Mean over the batch of -log softmax(logits)[label].
double cross_entropy_loss(const Tensor& logits, std::span<const int> labels);

// d loss / d logits for the mean loss above: (softmax - onehot) / batch.
Tensor cross_entropy_grad(const Tensor& logits, std::span<const int> labels);

// Fraction of rows whose argmax (lowest index on ties) equals the label.
double accuracy(const Tensor& logits, std::span<const int> labels);

}  // namespace fedzo
