#include "fedzo/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "fedzo/error.hpp"
#include "fedzo/kernels.hpp"

namespace fedzo {

LayerSpec LayerSpec::dense(std::size_t in, std::size_t out) {
  LayerSpec l;
  l.kind = LayerKind::dense;
  l.in = in;
  l.out = out;
  return l;
}

LayerSpec LayerSpec::conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                            std::size_t stride, std::size_t padding) {
  LayerSpec l;
  l.kind = LayerKind::conv2d;
  l.in = in_channels;
  l.out = out_channels;
  l.kernel = kernel;
  l.stride = stride;
  l.padding = padding;
  return l;
}

LayerSpec LayerSpec::maxpool2d(std::size_t window) {
  LayerSpec l;
  l.kind = LayerKind::maxpool2d;
  l.kernel = window;
  l.stride = window;
  l.prunable = false;
  return l;
}

LayerSpec LayerSpec::relu() {
  LayerSpec l;
  l.kind = LayerKind::relu;
  l.prunable = false;
  return l;
}

LayerSpec LayerSpec::flatten() {
  LayerSpec l;
  l.kind = LayerKind::flatten;
  l.prunable = false;
  return l;
}

namespace {

std::string layer_label(std::size_t i, const LayerSpec& l) {
  static const char* names[] = {"dense", "conv2d", "maxpool2d", "relu", "flatten"};
  return "layer " + std::to_string(i) + " (" + names[static_cast<int>(l.kind)] + ")";
}

}  // namespace

std::vector<std::vector<std::size_t>> infer_shapes(const ModelSpec& spec) {
  if (spec.input_shape.empty() || shape_product(spec.input_shape) == 0) {
    throw ShapeError("model input shape must be non-empty with positive extents");
  }
  std::vector<std::vector<std::size_t>> shapes;
  std::vector<std::size_t> cur = spec.input_shape;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const std::string where = layer_label(i, l);
    switch (l.kind) {
      case LayerKind::dense:
        if (l.in == 0 || l.out == 0) throw ShapeError(where + ": features must be positive");
        if (cur.size() != 1 || cur[0] != l.in) {
          throw ShapeError(where + ": expects (" + std::to_string(l.in) + ") input, got " + shape_string(cur));
        }
        cur = {l.out};
        break;
      case LayerKind::conv2d: {
        if (l.in == 0 || l.out == 0 || l.kernel == 0 || l.stride == 0) {
          throw ShapeError(where + ": channels, kernel and stride must be positive");
        }
        if (cur.size() != 3 || cur[0] != l.in) {
          throw ShapeError(where + ": expects (" + std::to_string(l.in) + ",H,W) input, got " + shape_string(cur));
        }
        const std::size_t h = cur[1] + 2 * l.padding;
        const std::size_t w = cur[2] + 2 * l.padding;
        if (h < l.kernel || w < l.kernel) throw ShapeError(where + ": kernel larger than input");
        cur = {l.out, (h - l.kernel) / l.stride + 1, (w - l.kernel) / l.stride + 1};
        break;
      }
      case LayerKind::maxpool2d:
        if (l.kernel == 0) throw ShapeError(where + ": window must be positive");
        if (cur.size() != 3 || cur[1] < l.kernel || cur[2] < l.kernel) {
          throw ShapeError(where + ": expects (C,H,W) input of at least the window, got " + shape_string(cur));
        }
        cur = {cur[0], cur[1] / l.kernel, cur[2] / l.kernel};
        break;
      case LayerKind::relu:
        break;
      case LayerKind::flatten:
        cur = {shape_product(cur)};
        break;
    }
    shapes.push_back(cur);
  }
  return shapes;
}

std::size_t num_classes(const ModelSpec& spec) {
  const auto shapes = infer_shapes(spec);
  const auto& last = shapes.empty() ? spec.input_shape : shapes.back();
  if (last.size() != 1) throw ShapeError("model output must be a vector, got " + shape_string(last));
  return last[0];
}

std::string describe(const ModelSpec& spec) {
  std::string s = "input=";
  for (std::size_t i = 0; i < spec.input_shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(spec.input_shape[i]);
  }
  for (const LayerSpec& l : spec.layers) {
    s += ";";
    switch (l.kind) {
      case LayerKind::dense:
        s += "dense(" + std::to_string(l.in) + "," + std::to_string(l.out) + ")";
        break;
      case LayerKind::conv2d:
        s += "conv2d(" + std::to_string(l.in) + "," + std::to_string(l.out) + ",k" + std::to_string(l.kernel) +
             ",s" + std::to_string(l.stride) + ",p" + std::to_string(l.padding) + ")";
        break;
      case LayerKind::maxpool2d:
        s += "maxpool2d(" + std::to_string(l.kernel) + ")";
        break;
      case LayerKind::relu:
        s += "relu";
        break;
      case LayerKind::flatten:
        s += "flatten";
        break;
    }
    if (l.has_params() && !l.prunable) s += "!fixed";
  }
  return s;
}

std::vector<ParamSegment> param_layout(const ModelSpec& spec) {
  infer_shapes(spec);
  std::vector<ParamSegment> segs;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    if (!l.has_params()) continue;
    ParamSegment w;
    w.layer = i;
    w.role = ParamRole::weight;
    w.offset = offset;
    w.shape = l.kind == LayerKind::dense ? std::vector<std::size_t>{l.out, l.in}
                                         : std::vector<std::size_t>{l.out, l.in, l.kernel, l.kernel};
    w.length = shape_product(w.shape);
    w.prunable = l.prunable;
    offset += w.length;
    ParamSegment b;
    b.layer = i;
    b.role = ParamRole::bias;
    b.offset = offset;
    b.shape = {l.out};
    b.length = l.out;
    offset += b.length;
    segs.push_back(std::move(w));
    segs.push_back(std::move(b));
  }
  return segs;
}

std::size_t param_count(const ModelSpec& spec) {
  const auto segs = param_layout(spec);
  return segs.empty() ? 0 : segs.back().offset + segs.back().length;
}

std::vector<std::uint8_t> prunable_flags(const ModelSpec& spec) {
  const auto segs = param_layout(spec);
  std::vector<std::uint8_t> flags(param_count(spec), 0);
  for (const auto& s : segs) {
    if (s.prunable) std::fill_n(flags.begin() + static_cast<std::ptrdiff_t>(s.offset), s.length, 1);
  }
  return flags;
}

ModelParams::ModelParams(const ModelSpec& spec) : segments_(param_layout(spec)), flat_(param_count(spec), 0.0) {}

ModelParams::ModelParams(const ModelSpec& spec, std::vector<double> flat)
    : segments_(param_layout(spec)), flat_(std::move(flat)) {
  if (flat_.size() != param_count(spec)) {
    throw ShapeError("parameter vector length " + std::to_string(flat_.size()) + " does not match model (" +
                     std::to_string(param_count(spec)) + ")");
  }
}

ModelParams init_params(const ModelSpec& spec, const SeededRng& rng) {
  ModelParams p(spec);
  for (std::size_t i = 0; i < p.segments().size(); ++i) {
    const ParamSegment& s = p.segments()[i];
    if (s.role != ParamRole::weight) continue;
    const std::size_t fan_in = s.length / s.shape[0];
    const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
    auto w = p.segment(i);
    gaussian_fill(rng.derive({s.layer}), 0, w);
    for (double& v : w) v *= std_dev;
  }
  return p;
}

Mask full_mask(const ModelSpec& spec) { return Mask::ones(param_count(spec)); }

void validate_mask(const ModelSpec& spec, const Mask& mask) {
  const auto flags = prunable_flags(spec);
  if (mask.size() != flags.size()) {
    throw ValidationError("mask length " + std::to_string(mask.size()) + " does not match parameter count " +
                          std::to_string(flags.size()));
  }
  for (std::size_t j = 0; j < flags.size(); ++j) {
    if (!flags[j] && !mask.test(j)) {
      throw ValidationError("mask clears unprunable coordinate " + std::to_string(j));
    }
  }
}

std::vector<double> effective_weights(const ModelParams& params, const Mask& mask) {
  if (mask.size() != params.size()) {
    throw ShapeError("mask length " + std::to_string(mask.size()) + " != parameter count " +
                     std::to_string(params.size()));
  }
  std::vector<double> eff(params.size());
  const auto w = params.flat();
  const auto m = mask.bits();
  for (std::size_t j = 0; j < eff.size(); ++j) eff[j] = m[j] ? w[j] : 0.0;
  return eff;
}

std::uint64_t fingerprint(std::span<const double> values) {
  std::uint64_t h = 0xCBF29CE484222325ull ^ values.size();
  for (double v : values) h = mix64(h ^ std::bit_cast<std::uint64_t>(v));
  return h;
}

// ---- layer kernels ----------------------------------------------------------

namespace {

struct ConvGeom {
  std::size_t cin, h, w, cout, k, stride, pad, ho, wo;
  std::size_t ckk() const { return cin * k * k; }
  std::size_t positions() const { return ho * wo; }
};

ConvGeom conv_geom(const LayerSpec& l, const std::vector<std::size_t>& in_shape,
                   const std::vector<std::size_t>& out_shape) {
  return {l.in, in_shape[1], in_shape[2], l.out, l.kernel, l.stride, l.padding, out_shape[1], out_shape[2]};
}

// col[(c*k + ky)*k + kx][p]
void im2col(const ConvGeom& g, const double* x, double* col) {
  const std::size_t P = g.positions();
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        double* row = col + ((c * g.k + ky) * g.k + kx) * P;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.h) &&
                                ix < static_cast<std::ptrdiff_t>(g.w);
            row[oy * g.wo + ox] = inside ? x[(c * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeom& g, const double* col, double* dx) {
  const std::size_t P = g.positions();
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const double* row = col + ((c * g.k + ky) * g.k + kx) * P;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            dx[(c * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] += row[oy * g.wo + ox];
          }
        }
      }
    }
  }
}

Tensor dense_forward(const LayerSpec& l, const double* w, const double* b, const Tensor& x) {
  const auto& k = kernels::active();
  const std::size_t batch = x.extent(0);
  Tensor y({batch, l.out});
  for (std::size_t n = 0; n < batch; ++n) {
    double* yn = y.raw() + n * l.out;
    k.gemv(w, l.out, l.in, x.raw() + n * l.in, yn);
    for (std::size_t o = 0; o < l.out; ++o) yn[o] += b[o];
  }
  return y;
}

Tensor conv_forward(const ConvGeom& g, const double* w, const double* b, const Tensor& x) {
  const auto& k = kernels::active();
  const std::size_t batch = x.extent(0);
  const std::size_t P = g.positions();
  const std::size_t Q = g.ckk();
  Tensor y({batch, g.cout, g.ho, g.wo});
  std::vector<double> col(Q * P);
  for (std::size_t n = 0; n < batch; ++n) {
    im2col(g, x.raw() + n * g.cin * g.h * g.w, col.data());
    double* yn = y.raw() + n * g.cout * P;
    for (std::size_t o = 0; o < g.cout; ++o) {
      double* yo = yn + o * P;
      std::fill_n(yo, P, b[o]);
      const double* wo = w + o * Q;
      for (std::size_t q = 0; q < Q; ++q) {
        if (wo[q] != 0.0) k.axpy(wo[q], col.data() + q * P, yo, P);
      }
    }
  }
  return y;
}

Tensor pool_forward(std::size_t win, const Tensor& x) {
  const std::size_t batch = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
  const std::size_t ho = h / win, wo = w / win;
  Tensor y({batch, c, ho, wo});
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* plane = x.raw() + (n * c + ch) * h * w;
      double* out = y.raw() + (n * c + ch) * ho * wo;
      for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox) {
          double best = plane[(oy * win) * w + ox * win];
          for (std::size_t dy = 0; dy < win; ++dy) {
            for (std::size_t dx = 0; dx < win; ++dx) {
              const double v = plane[(oy * win + dy) * w + ox * win + dx];
              if (v > best) best = v;
            }
          }
          out[oy * wo + ox] = best;
        }
      }
    }
  }
  return y;
}

void check_batch(const ModelSpec& spec, std::span<const double> effective, const Tensor& batch) {
  if (batch.rank() != spec.input_shape.size() + 1 ||
      !std::equal(spec.input_shape.begin(), spec.input_shape.end(), batch.shape().begin() + 1)) {
    throw ShapeError("batch shape " + shape_string(batch.shape()) + " does not match model input " +
                     shape_string(spec.input_shape));
  }
  if (batch.extent(0) == 0) throw ShapeError("empty batch");
  if (effective.size() != param_count(spec)) {
    throw ShapeError("effective weight vector has length " + std::to_string(effective.size()) + ", model needs " +
                     std::to_string(param_count(spec)));
  }
}

std::vector<std::size_t> batched(std::size_t batch, const std::vector<std::size_t>& shape) {
  std::vector<std::size_t> s{batch};
  s.insert(s.end(), shape.begin(), shape.end());
  return s;
}

Tensor run_forward(const ModelSpec& spec, std::span<const double> eff, const Tensor& batch, ForwardTrace* trace) {
  check_batch(spec, eff, batch);
  const auto shapes = infer_shapes(spec);
  const auto segs = param_layout(spec);
  const std::size_t bsz = batch.extent(0);
  std::size_t seg = 0;
  Tensor cur = batch;
  std::vector<std::size_t> in_shape = spec.input_shape;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    Tensor next;
    switch (l.kind) {
      case LayerKind::dense: {
        const double* w = eff.data() + segs[seg].offset;
        const double* b = eff.data() + segs[seg + 1].offset;
        seg += 2;
        next = dense_forward(l, w, b, cur);
        break;
      }
      case LayerKind::conv2d: {
        const double* w = eff.data() + segs[seg].offset;
        const double* b = eff.data() + segs[seg + 1].offset;
        seg += 2;
        next = conv_forward(conv_geom(l, in_shape, shapes[i]), w, b, cur);
        break;
      }
      case LayerKind::maxpool2d:
        next = pool_forward(l.kernel, cur);
        break;
      case LayerKind::relu:
        if (!cur.all_finite()) throw NumericError("non-finite activation entering " + layer_label(i, l));
        next = trace != nullptr ? cur : std::move(cur);
        for (double& v : next.data()) v = v > 0.0 ? v : 0.0;
        break;
      case LayerKind::flatten:
        next = cur.reshaped(batched(bsz, shapes[i]));
        break;
    }
    if (!next.all_finite()) throw NumericError("non-finite activation at " + layer_label(i, l));
    if (trace != nullptr) trace->layer_inputs.push_back(std::move(cur));
    cur = std::move(next);
    in_shape = shapes[i];
  }
  return cur;
}

}  // namespace

Tensor forward_effective(const ModelSpec& spec, std::span<const double> effective, const Tensor& batch) {
  return run_forward(spec, effective, batch, nullptr);
}

TracedForward forward_effective_traced(const ModelSpec& spec, std::span<const double> effective,
                                       const Tensor& batch) {
  TracedForward out;
  out.logits = run_forward(spec, effective, batch, &out.trace);
  out.trace.logits = out.logits;
  out.trace.fingerprint = fingerprint(effective);
  return out;
}

Tensor model_forward(const ModelSpec& spec, const ModelParams& params, const Mask& mask, const Tensor& batch) {
  const auto eff = effective_weights(params, mask);
  return forward_effective(spec, eff, batch);
}

TracedForward model_forward_traced(const ModelSpec& spec, const ModelParams& params, const Mask& mask,
                                   const Tensor& batch) {
  const auto eff = effective_weights(params, mask);
  return forward_effective_traced(spec, eff, batch);
}

std::vector<double> backward_effective(const ModelSpec& spec, std::span<const double> effective,
                                       const ForwardTrace& trace, const Tensor& dlogits) {
  if (trace.layer_inputs.size() != spec.layers.size()) {
    throw StaleTraceError("trace does not belong to this model");
  }
  if (fingerprint(effective) != trace.fingerprint) {
    throw StaleTraceError("parameters or mask changed since the traced forward");
  }
  if (dlogits.shape() != trace.logits.shape()) {
    throw ShapeError("upstream gradient shape " + shape_string(dlogits.shape()) + " != logits shape " +
                     shape_string(trace.logits.shape()));
  }
  const auto& k = kernels::active();
  const auto shapes = infer_shapes(spec);
  const auto segs = param_layout(spec);
  std::vector<double> grad(effective.size(), 0.0);
  std::size_t seg = segs.size();
  Tensor g = dlogits;
  for (std::size_t ii = spec.layers.size(); ii-- > 0;) {
    const LayerSpec& l = spec.layers[ii];
    const Tensor& x = trace.layer_inputs[ii];
    const std::size_t bsz = x.extent(0);
    const bool need_dx = ii > 0;
    Tensor dx;
    switch (l.kind) {
      case LayerKind::dense: {
        seg -= 2;
        const double* w = effective.data() + segs[seg].offset;
        double* dw = grad.data() + segs[seg].offset;
        double* db = grad.data() + segs[seg + 1].offset;
        if (need_dx) dx = Tensor(x.shape());
        for (std::size_t n = 0; n < bsz; ++n) {
          const double* xn = x.raw() + n * l.in;
          const double* gn = g.raw() + n * l.out;
          for (std::size_t o = 0; o < l.out; ++o) {
            const double go = gn[o];
            db[o] += go;
            if (go == 0.0) continue;
            k.axpy(go, xn, dw + o * l.in, l.in);
            if (need_dx) k.axpy(go, w + o * l.in, dx.raw() + n * l.in, l.in);
          }
        }
        break;
      }
      case LayerKind::conv2d: {
        seg -= 2;
        const double* w = effective.data() + segs[seg].offset;
        double* dw = grad.data() + segs[seg].offset;
        double* db = grad.data() + segs[seg + 1].offset;
        const std::vector<std::size_t> in_shape(x.shape().begin() + 1, x.shape().end());
        const ConvGeom geo = conv_geom(l, in_shape, shapes[ii]);
        const std::size_t P = geo.positions();
        const std::size_t Q = geo.ckk();
        const std::size_t in_size = geo.cin * geo.h * geo.w;
        std::vector<double> col(Q * P);
        std::vector<double> dcol(need_dx ? Q * P : 0);
        if (need_dx) dx = Tensor(x.shape());
        for (std::size_t n = 0; n < bsz; ++n) {
          im2col(geo, x.raw() + n * in_size, col.data());
          if (need_dx) std::fill(dcol.begin(), dcol.end(), 0.0);
          const double* gn = g.raw() + n * geo.cout * P;
          for (std::size_t o = 0; o < geo.cout; ++o) {
            const double* go = gn + o * P;
            double s = 0.0;
            for (std::size_t p = 0; p < P; ++p) s += go[p];
            db[o] += s;
            const double* wo = w + o * Q;
            for (std::size_t q = 0; q < Q; ++q) {
              dw[o * Q + q] += k.dot(go, col.data() + q * P, P);
              if (need_dx && wo[q] != 0.0) k.axpy(wo[q], go, dcol.data() + q * P, P);
            }
          }
          if (need_dx) col2im_add(geo, dcol.data(), dx.raw() + n * in_size);
        }
        break;
      }
      case LayerKind::maxpool2d: {
        const std::size_t win = l.kernel;
        const std::size_t c = x.extent(1), h = x.extent(2), w = x.extent(3);
        const std::size_t ho = h / win, wo = w / win;
        dx = Tensor(x.shape());
        for (std::size_t n = 0; n < bsz; ++n) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            const double* plane = x.raw() + (n * c + ch) * h * w;
            double* dplane = dx.raw() + (n * c + ch) * h * w;
            const double* gp = g.raw() + (n * c + ch) * ho * wo;
            for (std::size_t oy = 0; oy < ho; ++oy) {
              for (std::size_t ox = 0; ox < wo; ++ox) {
                std::size_t arg = (oy * win) * w + ox * win;
                double best = plane[arg];
                for (std::size_t dy = 0; dy < win; ++dy) {
                  for (std::size_t dxx = 0; dxx < win; ++dxx) {
                    const std::size_t idx = (oy * win + dy) * w + ox * win + dxx;
                    if (plane[idx] > best) {
                      best = plane[idx];
                      arg = idx;
                    }
                  }
                }
                dplane[arg] += gp[oy * wo + ox];
              }
            }
          }
        }
        break;
      }
      case LayerKind::relu:
        dx = std::move(g);
        for (std::size_t j = 0; j < dx.size(); ++j) {
          if (!(x[j] > 0.0)) dx[j] = 0.0;
        }
        break;
      case LayerKind::flatten:
        dx = std::move(g).reshaped(x.shape());
        break;
    }
    if (!need_dx) break;
    g = std::move(dx);
  }
  return grad;
}

std::vector<double> backward_params(const ModelSpec& spec, const ModelParams& params, const Mask& mask,
                                    const ForwardTrace& trace, const Tensor& dlogits) {
  const auto eff = effective_weights(params, mask);
  return backward_effective(spec, eff, trace, dlogits);
}

}  // namespace fedzo
