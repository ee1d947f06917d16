#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedzo/mask.hpp"
#include "fedzo/rng.hpp"
#include "fedzo/tensor.hpp"

namespace fedzo {

enum class LayerKind { dense, conv2d, maxpool2d, relu, flatten };

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t in = 0;   // features (dense) or channels (conv2d)
  std::size_t out = 0;
  std::size_t kernel = 0;  // conv kernel side, or pool window
  std::size_t stride = 1;
  std::size_t padding = 0;
  // Weights of an unprunable layer are forced to 1 in every mask.
  bool prunable = true;

  static LayerSpec dense(std::size_t in, std::size_t out);
  static LayerSpec conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                          std::size_t stride = 1, std::size_t padding = 0);
  static LayerSpec maxpool2d(std::size_t window);
  static LayerSpec relu();
  static LayerSpec flatten();

  LayerSpec& unprunable() {
    prunable = false;
    return *this;
  }
  bool has_params() const noexcept { return kind == LayerKind::dense || kind == LayerKind::conv2d; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct ModelSpec {
  std::string name;
  std::vector<std::size_t> input_shape;  // per sample
  std::vector<LayerSpec> layers;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

// Per-sample output shape of every layer; throws ShapeError when adjacent
// layers are incompatible.
std::vector<std::vector<std::size_t>> infer_shapes(const ModelSpec& spec);
std::size_t num_classes(const ModelSpec& spec);

// Canonical text of the spec; its SHA-256 is the descriptor hash used by
// the mask and checkpoint files.
std::string describe(const ModelSpec& spec);

enum class ParamRole { weight, bias };

struct ParamSegment {
  std::size_t layer = 0;
  ParamRole role = ParamRole::weight;
  std::size_t offset = 0;
  std::size_t length = 0;
  std::vector<std::size_t> shape;
  bool prunable = false;  // weights of prunable layers only
};

std::vector<ParamSegment> param_layout(const ModelSpec& spec);
std::size_t param_count(const ModelSpec& spec);

// 1 where the coordinate may be pruned.
std::vector<std::uint8_t> prunable_flags(const ModelSpec& spec);

// Flat parameter vector W with its per-layer segmentation.
class ModelParams {
 public:
  ModelParams() = default;
  explicit ModelParams(const ModelSpec& spec);  // zero-filled
  ModelParams(const ModelSpec& spec, std::vector<double> flat);

  const std::vector<ParamSegment>& segments() const noexcept { return segments_; }
  std::size_t size() const noexcept { return flat_.size(); }
  std::span<double> flat() noexcept { return flat_; }
  std::span<const double> flat() const noexcept { return flat_; }
  std::span<double> segment(std::size_t i) { return flat().subspan(segments_[i].offset, segments_[i].length); }
  std::span<const double> segment(std::size_t i) const {
    return flat().subspan(segments_[i].offset, segments_[i].length);
  }

  friend bool operator==(const ModelParams& a, const ModelParams& b) { return a.flat_ == b.flat_; }

 private:
  std::vector<ParamSegment> segments_;
  std::vector<double> flat_;
};

// He-normal weights (std sqrt(2 / fan_in)), zero biases.
ModelParams init_params(const ModelSpec& spec, const SeededRng& rng);

// Mask with unprunable coordinates (biases, unprunable layers) forced on.
Mask full_mask(const ModelSpec& spec);
// Throws ValidationError when `mask` has the wrong length or clears an
// unprunable coordinate.
void validate_mask(const ModelSpec& spec, const Mask& mask);

// W ⊙ m
std::vector<double> effective_weights(const ModelParams& params, const Mask& mask);

// Layer inputs retained for the reverse sweep. Only the traced forward
// builds one; device-side code calls the inference forward.
struct ForwardTrace {
  std::vector<Tensor> layer_inputs;
  Tensor logits;
  std::uint64_t fingerprint = 0;  // of the effective weights
};

// Logits of the network evaluated at W ⊙ m. Holds only the live layer's
// input and output.
Tensor model_forward(const ModelSpec& spec, const ModelParams& params, const Mask& mask, const Tensor& batch);

struct TracedForward {
  Tensor logits;
  ForwardTrace trace;
};
TracedForward model_forward_traced(const ModelSpec& spec, const ModelParams& params, const Mask& mask,
                                   const Tensor& batch);

// Same forwards on an explicit effective weight vector.
Tensor forward_effective(const ModelSpec& spec, std::span<const double> effective, const Tensor& batch);
TracedForward forward_effective_traced(const ModelSpec& spec, std::span<const double> effective,
                                       const Tensor& batch);

// Gradient of sum(dlogits ⊙ logits) with respect to the effective weights
// W ⊙ m. Equals dL/dW at unmasked coordinates; at masked coordinates it is
// the derivative of the masked forward with respect to that (zero) entry.
std::vector<double> backward_effective(const ModelSpec& spec, std::span<const double> effective,
                                       const ForwardTrace& trace, const Tensor& dlogits);

std::vector<double> backward_params(const ModelSpec& spec, const ModelParams& params, const Mask& mask,
                                    const ForwardTrace& trace, const Tensor& dlogits);

std::uint64_t fingerprint(std::span<const double> values);

}  // namespace fedzo
