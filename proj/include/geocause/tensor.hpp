#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "geocause/common.hpp"

namespace geocause {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_to_string(const Shape& s);

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

/// Dense row-major float32 tensor. Gradients live in a parallel buffer that
/// is lazily allocated; reverse passes accumulate into it, so callers zero it
/// between optimisation steps (or let the optimiser do so).
class Tensor {
 public:
  Shape shape;
  std::vector<float> values;
  std::vector<float> grad;
  bool requires_grad = false;
  std::string name;  // non-empty for parameters; used in checkpoints and diagnostics

  static TensorPtr create(Shape shape, std::vector<float> values,
                          bool requires_grad = false, std::string name = "");
  static TensorPtr zeros(Shape shape, bool requires_grad = false,
                         std::string name = "");
  static TensorPtr full(Shape shape, float fill, bool requires_grad = false);
  static TensorPtr scalar(float v, bool requires_grad = false);

  std::size_t numel() const { return values.size(); }
  std::size_t rank() const { return shape.size(); }

  /// Row/column accessors for rank-2 tensors.
  std::size_t rows() const;
  std::size_t cols() const;
  float& at(std::size_t r, std::size_t c);
  float at(std::size_t r, std::size_t c) const;

  /// Value of a rank-0 (or single-element) tensor.
  float item() const;

  void ensure_grad();
  void zero_grad();

  /// Throws NumericError if any value is NaN or infinite.
  void check_finite(const std::string& context) const;
};

/// One recorded differentiable operation: the op name (for diagnostics), the
/// produced tensor, and a closure that pulls the output's gradient back into
/// the inputs' gradient buffers.
struct TapeNode {
  const char* op;
  TensorPtr output;
  std::function<void()> pull;
};

/// Reverse-mode tape. Operations append nodes in execution order, so the
/// record is topologically sorted by construction; backward() walks it once
/// in reverse, visiting every node exactly once. Re-running backward on the
/// same tape without zeroing gradients accumulates, which batch loops exploit.
class Tape {
 public:
  void record(const char* op, TensorPtr output, std::function<void()> pull);

  /// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. The loss must
  /// be a scalar produced by an operation recorded on this tape.
  void backward(const TensorPtr& loss);

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  std::vector<TapeNode> nodes_;
};

// ---------------------------------------------------------------------------
// Operations. Each takes the tape first; passing nullptr runs the forward
// computation without recording (inference mode). Shapes are validated and
// mismatches raise ValidationError. Reductions accumulate in double before
// rounding back to float32.
// ---------------------------------------------------------------------------

/// C = A @ B for rank-2 inputs, [m x k] @ [k x n] -> [m x n].
TensorPtr matmul(Tape* tape, const TensorPtr& a, const TensorPtr& b);

/// Elementwise sum. If b is rank-1 with length equal to a's trailing
/// dimension it broadcasts across a's leading dimensions (bias addition).
TensorPtr add(Tape* tape, const TensorPtr& a, const TensorPtr& b);

/// Elementwise difference, same broadcast rule as add.
TensorPtr sub(Tape* tape, const TensorPtr& a, const TensorPtr& b);

/// Elementwise (Hadamard) product of same-shape tensors.
TensorPtr mul(Tape* tape, const TensorPtr& a, const TensorPtr& b);

/// y = c * x for a compile-time-known constant c (the constant is not a
/// differentiable input).
TensorPtr scale(Tape* tape, const TensorPtr& x, float c);

TensorPtr relu(Tape* tape, const TensorPtr& x);

/// Exact Gaussian-error-function GELU.
TensorPtr gelu(Tape* tape, const TensorPtr& x);

TensorPtr sigmoid(Tape* tape, const TensorPtr& x);

/// Numerically stable softmax along `axis` (negative counts from the back).
/// Each slice subtracts its maximum before exponentiating; the normaliser is
/// accumulated in double.
TensorPtr softmax(Tape* tape, const TensorPtr& x, int axis);

/// Layer normalisation over the last axis with learned gain and bias
/// (rank-1, length = trailing dimension). Uses population variance.
TensorPtr layer_norm(Tape* tape, const TensorPtr& x, const TensorPtr& gain,
                     const TensorPtr& bias, float eps = 1e-5f);

/// Sum of all elements -> rank-0 scalar.
TensorPtr sum_all(Tape* tape, const TensorPtr& x);

/// Mean over axis 0 of a rank-2 tensor -> rank-1 row of column means.
TensorPtr mean_rows(Tape* tape, const TensorPtr& x);

/// Rank-2 transpose.
TensorPtr transpose(Tape* tape, const TensorPtr& x);

/// Row/column slices of rank-2 tensors, half-open ranges.
TensorPtr slice_rows(Tape* tape, const TensorPtr& x, std::size_t r0, std::size_t r1);
TensorPtr slice_cols(Tape* tape, const TensorPtr& x, std::size_t c0, std::size_t c1);

/// Stack rank-2 tensors with equal column counts vertically.
TensorPtr concat_rows(Tape* tape, const std::vector<TensorPtr>& parts);

/// Concatenate rank-2 tensors with equal row counts horizontally.
TensorPtr concat_cols(Tape* tape, const TensorPtr& a, const TensorPtr& b);

/// Copy-reshape to a new shape with the same element count.
TensorPtr reshape(Tape* tape, const TensorPtr& x, Shape shape);

/// Inverted dropout: keeps elements with probability (1 - rate) and scales
/// them by 1/(1 - rate) so expectations match inference. rate = 0 is an
/// exact identity (no mask is drawn, the stream is untouched).
TensorPtr dropout(Tape* tape, const TensorPtr& x, float rate, SplitMix& rng);

/// Binary cross-entropy evaluated from the logit in a fused, numerically
/// stable form: max(z,0) - z*y + log(1 + exp(-|z|)). Scalar logit, label in
/// [0, 1]. Returns a rank-0 scalar.
TensorPtr bce_with_logits(Tape* tape, const TensorPtr& logit, float label);

// ---------------------------------------------------------------------------
// Optimiser
// ---------------------------------------------------------------------------

struct SgdConfig {
  float learning_rate = 1e-3f;
  float momentum = 0.9f;
  float weight_decay = 0.0f;
};

/// SGD with classical momentum: v <- momentum * v + g, p <- p - lr * v.
/// Weight decay adds wd * p to the raw gradient before the momentum update.
/// A non-finite gradient aborts the step with a NumericError naming the
/// parameter and step index.
class SgdOptimizer {
 public:
  explicit SgdOptimizer(SgdConfig cfg) : cfg_(cfg) {}

  void step(std::span<const TensorPtr> params);
  void zero_grad(std::span<const TensorPtr> params);

  std::size_t steps_taken() const { return step_count_; }
  const SgdConfig& config() const { return cfg_; }

 private:
  SgdConfig cfg_;
  std::size_t step_count_ = 0;
  std::vector<std::vector<float>> velocity_;  // parallel to params by position
};

// ---------------------------------------------------------------------------
// Checkpoint format: binary, little-endian, magic "GCTN".
//   magic[4] | version u32 | param_count u64 |
//   per param: name_len u64 | name bytes | rank u64 | dims u64[rank] |
//              values float32[numel]
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, std::span<const TensorPtr> params);
std::vector<TensorPtr> load_checkpoint(const std::string& path);

}  // namespace geocause
