#include "fedzo/flops.hpp"

#include <string>

#include "fedzo/error.hpp"

namespace fedzo {

namespace {

template <class DensityOf>
double forward_cost(const ModelSpec& spec, DensityOf density_of) {
  const auto shapes = infer_shapes(spec);
  double total = 0.0;
  std::vector<std::size_t> in_shape = spec.input_shape;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const double out_elems = static_cast<double>(shape_product(shapes[i]));
    switch (l.kind) {
      case LayerKind::dense:
      case LayerKind::conv2d: {
        const double fan_in = l.kind == LayerKind::dense ? static_cast<double>(l.in)
                                                         : static_cast<double>(l.in * l.kernel * l.kernel);
        const double d = l.prunable ? density_of(i) : 1.0;
        total += 2.0 * fan_in * out_elems * d + out_elems;
        break;
      }
      case LayerKind::maxpool2d:
        total += out_elems * static_cast<double>(l.kernel * l.kernel);
        break;
      case LayerKind::relu:
        total += out_elems;
        break;
      case LayerKind::flatten:
        break;
    }
    in_shape = shapes[i];
  }
  return total;
}

}  // namespace

double count_forward_flops(const ModelSpec& spec, double density) {
  if (!(density > 0.0 && density <= 1.0)) {
    throw ValidationError("density must lie in (0, 1], got " + std::to_string(density));
  }
  return forward_cost(spec, [&](std::size_t) { return density; });
}

double count_forward_flops(const ModelSpec& spec, const Mask& mask) {
  validate_mask(spec, mask);
  const auto segs = param_layout(spec);
  return forward_cost(spec, [&](std::size_t layer) {
    for (const auto& s : segs) {
      if (s.layer != layer || s.role != ParamRole::weight) continue;
      std::size_t kept = 0;
      for (std::size_t j = s.offset; j < s.offset + s.length; ++j) kept += mask.test(j);
      return static_cast<double>(kept) / static_cast<double>(s.length);
    }
    return 1.0;
  });
}

}  // namespace fedzo
