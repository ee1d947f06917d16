#pragma once

#include "fedzo/mask.hpp"
#include "fedzo/model.hpp"

namespace fedzo {

// Per-sample forward cost. A weight op counts 2 (multiply + add) scaled by
// the density of that layer; bias adds, ReLU and pool comparisons are
// unscaled. Unprunable layers always run at density 1.
double count_forward_flops(const ModelSpec& spec, double density);

// Same count with each layer's density read off `mask`.
double count_forward_flops(const ModelSpec& spec, const Mask& mask);

}  // namespace fedzo
