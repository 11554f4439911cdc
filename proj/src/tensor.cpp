#include "geocause/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace geocause {

namespace {

using EigenRowMat =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<EigenRowMat>;
using ConstMapMat = Eigen::Map<const EigenRowMat>;

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

void require(bool ok, const std::string& msg) {
  if (!ok) throw ValidationError(msg);
}

}  // namespace

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

std::string shape_to_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += " x ";
    out += std::to_string(s[i]);
  }
  out += "]";
  return out;
}

TensorPtr Tensor::create(Shape shape, std::vector<float> values,
                         bool requires_grad, std::string name) {
  if (shape_numel(shape) != values.size()) {
    throw ValidationError("tensor literal: shape " + shape_to_string(shape) +
                          " wants " + std::to_string(shape_numel(shape)) +
                          " elements, got " + std::to_string(values.size()));
  }
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->values = std::move(values);
  t->requires_grad = requires_grad;
  t->name = std::move(name);
  if (t->requires_grad) t->ensure_grad();
  return t;
}

TensorPtr Tensor::zeros(Shape shape, bool requires_grad, std::string name) {
  std::size_t n = shape_numel(shape);
  return create(std::move(shape), std::vector<float>(n, 0.0f), requires_grad,
                std::move(name));
}

TensorPtr Tensor::full(Shape shape, float fill, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return create(std::move(shape), std::vector<float>(n, fill), requires_grad);
}

TensorPtr Tensor::scalar(float v, bool requires_grad) {
  return create(Shape{}, std::vector<float>{v}, requires_grad);
}

std::size_t Tensor::rows() const {
  require(rank() == 2, "rows(): tensor is rank " + std::to_string(rank()) +
                           ", expected rank 2");
  return shape[0];
}

std::size_t Tensor::cols() const {
  require(rank() == 2, "cols(): tensor is rank " + std::to_string(rank()) +
                           ", expected rank 2");
  return shape[1];
}

float& Tensor::at(std::size_t r, std::size_t c) {
  return values[r * cols() + c];
}

float Tensor::at(std::size_t r, std::size_t c) const {
  return values[r * cols() + c];
}

float Tensor::item() const {
  require(numel() == 1, "item(): tensor has " + std::to_string(numel()) +
                            " elements, expected exactly 1");
  return values[0];
}

void Tensor::ensure_grad() {
  requires_grad = true;
  if (grad.size() != values.size()) grad.assign(values.size(), 0.0f);
}

void Tensor::zero_grad() {
  std::fill(grad.begin(), grad.end(), 0.0f);
}

void Tensor::check_finite(const std::string& context) const {
  for (float v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(context + ": non-finite value in tensor" +
                         (name.empty() ? "" : " '" + name + "'") + " of shape " +
                         shape_to_string(shape));
    }
  }
}

void Tape::record(const char* op, TensorPtr output, std::function<void()> pull) {
  nodes_.push_back(TapeNode{op, std::move(output), std::move(pull)});
}

void Tape::backward(const TensorPtr& loss) {
  require(loss != nullptr, "backward: null loss");
  require(loss->numel() == 1,
          "backward: loss must be scalar, got shape " +
              shape_to_string(loss->shape));
  if (nodes_.empty() || nodes_.back().output.get() != loss.get()) {
    // The loss must be the most recent recorded output; anything else means
    // the caller mixed tapes or re-used a stale graph.
    bool found = false;
    for (const auto& n : nodes_)
      if (n.output.get() == loss.get()) found = true;
    require(found, "backward: loss tensor was not produced on this tape");
  }
  loss->ensure_grad();
  loss->grad[0] += 1.0f;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->pull) it->pull();
  }
}

// ---------------------------------------------------------------------------
// Helpers shared by the op implementations
// ---------------------------------------------------------------------------

namespace {

TensorPtr make_output(Shape shape) {
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->values.assign(shape_numel(t->shape), 0.0f);
  return t;
}

// Decompose a shape around `axis` into (outer, n, inner) strides.
struct AxisView {
  std::size_t outer, n, inner;
};

AxisView axis_view(const Shape& shape, int axis) {
  int r = static_cast<int>(shape.size());
  if (axis < 0) axis += r;
  require(axis >= 0 && axis < r,
          "softmax: axis out of range for shape " + shape_to_string(shape));
  AxisView v{1, shape[static_cast<std::size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) v.outer *= shape[static_cast<std::size_t>(i)];
  for (int i = axis + 1; i < r; ++i) v.inner *= shape[static_cast<std::size_t>(i)];
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

TensorPtr matmul(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
  require(a->rank() == 2 && b->rank() == 2,
          "matmul: expects rank-2 operands, got " + shape_to_string(a->shape) +
              " and " + shape_to_string(b->shape));
  if (a->shape[1] != b->shape[0]) {
    throw ValidationError("matmul: inner dimensions disagree, " +
                          shape_to_string(a->shape) + " @ " +
                          shape_to_string(b->shape));
  }
  const std::size_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
  auto out = make_output(Shape{m, n});
  {
    ConstMapMat ma(a->values.data(), static_cast<Eigen::Index>(m),
                   static_cast<Eigen::Index>(k));
    ConstMapMat mb(b->values.data(), static_cast<Eigen::Index>(k),
                   static_cast<Eigen::Index>(n));
    MapMat mo(out->values.data(), static_cast<Eigen::Index>(m),
              static_cast<Eigen::Index>(n));
    mo.noalias() = ma * mb;
  }
  if (tape) {
    tape->record("matmul", out, [a, b, out, m, k, n]() {
      ConstMapMat go(out->grad.data(), static_cast<Eigen::Index>(m),
                     static_cast<Eigen::Index>(n));
      ConstMapMat ma(a->values.data(), static_cast<Eigen::Index>(m),
                     static_cast<Eigen::Index>(k));
      ConstMapMat mb(b->values.data(), static_cast<Eigen::Index>(k),
                     static_cast<Eigen::Index>(n));
      a->ensure_grad();
      b->ensure_grad();
      MapMat ga(a->grad.data(), static_cast<Eigen::Index>(m),
                static_cast<Eigen::Index>(k));
      MapMat gb(b->grad.data(), static_cast<Eigen::Index>(k),
                static_cast<Eigen::Index>(n));
      ga.noalias() += go * mb.transpose();
      gb.noalias() += ma.transpose() * go;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// add / sub / mul / scale
// ---------------------------------------------------------------------------

namespace {

enum class Combine { Add, Sub };

TensorPtr add_like(Tape* tape, const TensorPtr& a, const TensorPtr& b,
                   Combine mode) {
  const char* opname = mode == Combine::Add ? "add" : "sub";
  const float sign = mode == Combine::Add ? 1.0f : -1.0f;
  const bool broadcast =
      b->rank() == 1 && !a->shape.empty() && b->shape[0] == a->shape.back() &&
      a->shape != b->shape;
  if (!broadcast) {
    require(a->shape == b->shape,
            std::string(opname) + ": shape mismatch " +
                shape_to_string(a->shape) + " vs " + shape_to_string(b->shape));
  }
  auto out = make_output(a->shape);
  const std::size_t n = b->values.size();
  for (std::size_t i = 0; i < a->values.size(); ++i) {
    out->values[i] = a->values[i] + sign * b->values[i % n];
  }
  if (tape) {
    tape->record(opname, out, [a, b, out, sign, n]() {
      a->ensure_grad();
      b->ensure_grad();
      for (std::size_t i = 0; i < out->grad.size(); ++i) {
        a->grad[i] += out->grad[i];
        b->grad[i % n] += sign * out->grad[i];
      }
    });
  }
  return out;
}

}  // namespace

TensorPtr add(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
  return add_like(tape, a, b, Combine::Add);
}

TensorPtr sub(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
  return add_like(tape, a, b, Combine::Sub);
}

TensorPtr mul(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
  require(a->shape == b->shape, "mul: shape mismatch " +
                                    shape_to_string(a->shape) + " vs " +
                                    shape_to_string(b->shape));
  auto out = make_output(a->shape);
  for (std::size_t i = 0; i < out->values.size(); ++i)
    out->values[i] = a->values[i] * b->values[i];
  if (tape) {
    tape->record("mul", out, [a, b, out]() {
      a->ensure_grad();
      b->ensure_grad();
      for (std::size_t i = 0; i < out->grad.size(); ++i) {
        a->grad[i] += out->grad[i] * b->values[i];
        b->grad[i] += out->grad[i] * a->values[i];
      }
    });
  }
  return out;
}

TensorPtr scale(Tape* tape, const TensorPtr& x, float c) {
  auto out = make_output(x->shape);
  for (std::size_t i = 0; i < out->values.size(); ++i)
    out->values[i] = c * x->values[i];
  if (tape) {
    tape->record("scale", out, [x, out, c]() {
      x->ensure_grad();
      for (std::size_t i = 0; i < out->grad.size(); ++i)
        x->grad[i] += c * out->grad[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pointwise nonlinearities
// ---------------------------------------------------------------------------

TensorPtr relu(Tape* tape, const TensorPtr& x) {
  auto out = make_output(x->shape);
  for (std::size_t i = 0; i < out->values.size(); ++i)
    out->values[i] = x->values[i] > 0.0f ? x->values[i] : 0.0f;
  if (tape) {
    tape->record("relu", out, [x, out]() {
      x->ensure_grad();
      for (std::size_t i = 0; i < out->grad.size(); ++i)
        if (x->values[i] > 0.0f) x->grad[i] += out->grad[i];
    });
  }
  return out;
}

TensorPtr gelu(Tape* tape, const TensorPtr& x) {
  auto out = make_output(x->shape);
  for (std::size_t i = 0; i < out->values.size(); ++i) {
    double v = x->values[i];
    out->values[i] =
        static_cast<float>(0.5 * v * (1.0 + std::erf(v * kInvSqrt2)));
  }
  if (tape) {
    tape->record("gelu", out, [x, out]() {
      x->ensure_grad();
      for (std::size_t i = 0; i < out->grad.size(); ++i) {
        double v = x->values[i];
        double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        x->grad[i] += out->grad[i] * static_cast<float>(cdf + v * pdf);
      }
    });
  }
  return out;
}

TensorPtr sigmoid(Tape* tape, const TensorPtr& x) {
  auto out = make_output(x->shape);
  for (std::size_t i = 0; i < out->values.size(); ++i) {
    double v = x->values[i];
    double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                        : std::exp(v) / (1.0 + std::exp(v));
    out->values[i] = static_cast<float>(s);
  }
  if (tape) {
    tape->record("sigmoid", out, [x, out]() {
      x->ensure_grad();
      for (std::size_t i = 0; i < out->grad.size(); ++i) {
        float s = out->values[i];
        x->grad[i] += out->grad[i] * s * (1.0f - s);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// softmax / layer_norm
// ---------------------------------------------------------------------------

TensorPtr softmax(Tape* tape, const TensorPtr& x, int axis) {
  AxisView v = axis_view(x->shape, axis);
  auto out = make_output(x->shape);
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t in = 0; in < v.inner; ++in) {
      const std::size_t base = o * v.n * v.inner + in;
      float mx = -std::numeric_limits<float>::infinity();
      for (std::size_t k = 0; k < v.n; ++k)
        mx = std::max(mx, x->values[base + k * v.inner]);
      double denom = 0.0;
      for (std::size_t k = 0; k < v.n; ++k) {
        double e = std::exp(static_cast<double>(x->values[base + k * v.inner] - mx));
        out->values[base + k * v.inner] = static_cast<float>(e);
        denom += e;
      }
      for (std::size_t k = 0; k < v.n; ++k)
        out->values[base + k * v.inner] =
            static_cast<float>(out->values[base + k * v.inner] / denom);
    }
  }
  if (tape) {
    tape->record("softmax", out, [x, out, v]() {
      x->ensure_grad();
      for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t in = 0; in < v.inner; ++in) {
          const std::size_t base = o * v.n * v.inner + in;
          double dot = 0.0;
          for (std::size_t k = 0; k < v.n; ++k) {
            const std::size_t idx = base + k * v.inner;
            dot += static_cast<double>(out->grad[idx]) * out->values[idx];
          }
          for (std::size_t k = 0; k < v.n; ++k) {
            const std::size_t idx = base + k * v.inner;
            x->grad[idx] += static_cast<float>(
                out->values[idx] * (static_cast<double>(out->grad[idx]) - dot));
          }
        }
      }
    });
  }
  return out;
}

TensorPtr layer_norm(Tape* tape, const TensorPtr& x, const TensorPtr& gain,
                     const TensorPtr& bias, float eps) {
  require(x->rank() >= 1, "layer_norm: input must have rank >= 1");
  const std::size_t n = x->shape.back();
  require(gain->rank() == 1 && gain->shape[0] == n,
          "layer_norm: gain shape " + shape_to_string(gain->shape) +
              " does not match trailing dimension " + std::to_string(n));
  require(bias->rank() == 1 && bias->shape[0] == n,
          "layer_norm: bias shape " + shape_to_string(bias->shape) +
              " does not match trailing dimension " + std::to_string(n));
  const std::size_t slices = x->numel() / n;
  auto out = make_output(x->shape);
  // Cache per-slice normalised values and inverse stddev for the pull.
  auto xhat = std::make_shared<std::vector<float>>(x->numel());
  auto inv_sd = std::make_shared<std::vector<float>>(slices);
  for (std::size_t s = 0; s < slices; ++s) {
    const std::size_t base = s * n;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x->values[base + i];
    const double mean = acc / static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double d = x->values[base + i] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double isd = 1.0 / std::sqrt(var + eps);
    (*inv_sd)[s] = static_cast<float>(isd);
    for (std::size_t i = 0; i < n; ++i) {
      float h = static_cast<float>((x->values[base + i] - mean) * isd);
      (*xhat)[base + i] = h;
      out->values[base + i] = gain->values[i] * h + bias->values[i];
    }
  }
  if (tape) {
    tape->record("layer_norm", out, [x, gain, bias, out, xhat, inv_sd, n,
                                     slices]() {
      x->ensure_grad();
      gain->ensure_grad();
      bias->ensure_grad();
      for (std::size_t s = 0; s < slices; ++s) {
        const std::size_t base = s * n;
        double mean_g = 0.0, mean_gh = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double gdy = static_cast<double>(gain->values[i]) *
                             out->grad[base + i];
          mean_g += gdy;
          mean_gh += gdy * (*xhat)[base + i];
        }
        mean_g /= static_cast<double>(n);
        mean_gh /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
          const double gdy = static_cast<double>(gain->values[i]) *
                             out->grad[base + i];
          x->grad[base + i] += static_cast<float>(
              ((gdy - mean_g - (*xhat)[base + i] * mean_gh)) * (*inv_sd)[s]);
          gain->grad[i] += out->grad[base + i] * (*xhat)[base + i];
          bias->grad[i] += out->grad[base + i];
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions and shape ops
// ---------------------------------------------------------------------------

TensorPtr sum_all(Tape* tape, const TensorPtr& x) {
  double acc = 0.0;
  for (float v : x->values) acc += v;
  auto out = make_output(Shape{});
  out->values[0] = static_cast<float>(acc);
  if (tape) {
    tape->record("sum", out, [x, out]() {
      x->ensure_grad();
      const float g = out->grad[0];
      for (std::size_t i = 0; i < x->grad.size(); ++i) x->grad[i] += g;
    });
  }
  return out;
}

TensorPtr mean_rows(Tape* tape, const TensorPtr& x) {
  const std::size_t m = x->rows(), n = x->cols();
  require(m > 0, "mean_rows: empty input");
  auto out = make_output(Shape{n});
  for (std::size_t j = 0; j < n; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) acc += x->values[i * n + j];
    out->values[j] = static_cast<float>(acc / static_cast<double>(m));
  }
  if (tape) {
    tape->record("mean_rows", out, [x, out, m, n]() {
      x->ensure_grad();
      const float inv = 1.0f / static_cast<float>(m);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
          x->grad[i * n + j] += out->grad[j] * inv;
    });
  }
  return out;
}

TensorPtr transpose(Tape* tape, const TensorPtr& x) {
  const std::size_t m = x->rows(), n = x->cols();
  auto out = make_output(Shape{n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out->values[j * m + i] = x->values[i * n + j];
  if (tape) {
    tape->record("transpose", out, [x, out, m, n]() {
      x->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
          x->grad[i * n + j] += out->grad[j * m + i];
    });
  }
  return out;
}

TensorPtr slice_rows(Tape* tape, const TensorPtr& x, std::size_t r0,
                     std::size_t r1) {
  const std::size_t m = x->rows(), n = x->cols();
  require(r0 <= r1 && r1 <= m, "slice_rows: range [" + std::to_string(r0) +
                                   ", " + std::to_string(r1) +
                                   ") outside " + shape_to_string(x->shape));
  auto out = make_output(Shape{r1 - r0, n});
  std::copy(x->values.begin() + static_cast<std::ptrdiff_t>(r0 * n),
            x->values.begin() + static_cast<std::ptrdiff_t>(r1 * n),
            out->values.begin());
  if (tape) {
    tape->record("slice_rows", out, [x, out, r0, n]() {
      x->ensure_grad();
      for (std::size_t i = 0; i < out->grad.size(); ++i)
        x->grad[r0 * n + i] += out->grad[i];
    });
  }
  return out;
}

TensorPtr slice_cols(Tape* tape, const TensorPtr& x, std::size_t c0,
                     std::size_t c1) {
  const std::size_t m = x->rows(), n = x->cols();
  require(c0 <= c1 && c1 <= n, "slice_cols: range [" + std::to_string(c0) +
                                   ", " + std::to_string(c1) +
                                   ") outside " + shape_to_string(x->shape));
  const std::size_t w = c1 - c0;
  auto out = make_output(Shape{m, w});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j)
      out->values[i * w + j] = x->values[i * n + c0 + j];
  if (tape) {
    tape->record("slice_cols", out, [x, out, m, n, c0, w]() {
      x->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j)
          x->grad[i * n + c0 + j] += out->grad[i * w + j];
    });
  }
  return out;
}

TensorPtr concat_rows(Tape* tape, const std::vector<TensorPtr>& parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const std::size_t n = parts[0]->cols();
  std::size_t m = 0;
  for (const auto& p : parts) {
    require(p->cols() == n, "concat_rows: column counts differ (" +
                                std::to_string(n) + " vs " +
                                std::to_string(p->cols()) + ")");
    m += p->rows();
  }
  auto out = make_output(Shape{m, n});
  std::size_t row = 0;
  for (const auto& p : parts) {
    std::copy(p->values.begin(), p->values.end(),
              out->values.begin() + static_cast<std::ptrdiff_t>(row * n));
    row += p->rows();
  }
  if (tape) {
    tape->record("concat_rows", out, [parts, out, n]() {
      std::size_t row = 0;
      for (const auto& p : parts) {
        p->ensure_grad();
        const std::size_t cnt = p->values.size();
        for (std::size_t i = 0; i < cnt; ++i)
          p->grad[i] += out->grad[row * n + i];
        row += p->rows();
      }
    });
  }
  return out;
}

TensorPtr concat_cols(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
  const std::size_t m = a->rows();
  require(b->rows() == m, "concat_cols: row counts differ (" +
                              std::to_string(m) + " vs " +
                              std::to_string(b->rows()) + ")");
  const std::size_t na = a->cols(), nb = b->cols();
  auto out = make_output(Shape{m, na + nb});
  for (std::size_t i = 0; i < m; ++i) {
    std::copy(a->values.begin() + static_cast<std::ptrdiff_t>(i * na),
              a->values.begin() + static_cast<std::ptrdiff_t>((i + 1) * na),
              out->values.begin() + static_cast<std::ptrdiff_t>(i * (na + nb)));
    std::copy(b->values.begin() + static_cast<std::ptrdiff_t>(i * nb),
              b->values.begin() + static_cast<std::ptrdiff_t>((i + 1) * nb),
              out->values.begin() +
                  static_cast<std::ptrdiff_t>(i * (na + nb) + na));
  }
  if (tape) {
    tape->record("concat_cols", out, [a, b, out, m, na, nb]() {
      a->ensure_grad();
      b->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < na; ++j)
          a->grad[i * na + j] += out->grad[i * (na + nb) + j];
        for (std::size_t j = 0; j < nb; ++j)
          b->grad[i * nb + j] += out->grad[i * (na + nb) + na + j];
      }
    });
  }
  return out;
}

TensorPtr reshape(Tape* tape, const TensorPtr& x, Shape shape) {
  require(shape_numel(shape) == x->numel(),
          "reshape: cannot view " + shape_to_string(x->shape) + " as " +
              shape_to_string(shape));
  auto out = make_output(std::move(shape));
  out->values = x->values;
  if (tape) {
    tape->record("reshape", out, [x, out]() {
      x->ensure_grad();
      for (std::size_t i = 0; i < out->grad.size(); ++i)
        x->grad[i] += out->grad[i];
    });
  }
  return out;
}

TensorPtr dropout(Tape* tape, const TensorPtr& x, float rate, SplitMix& rng) {
  require(rate >= 0.0f && rate < 1.0f,
          "dropout: rate must be in [0, 1), got " + format_float(rate));
  if (rate == 0.0f) return x;  // exact identity, stream untouched
  const float keep = 1.0f - rate;
  const float inv_keep = 1.0f / keep;
  auto mask = std::make_shared<std::vector<float>>(x->numel());
  auto out = make_output(x->shape);
  for (std::size_t i = 0; i < x->numel(); ++i) {
    const float m = rng.next_double() < keep ? inv_keep : 0.0f;
    (*mask)[i] = m;
    out->values[i] = x->values[i] * m;
  }
  if (tape) {
    tape->record("dropout", out, [x, out, mask]() {
      x->ensure_grad();
      for (std::size_t i = 0; i < out->grad.size(); ++i)
        x->grad[i] += out->grad[i] * (*mask)[i];
    });
  }
  return out;
}

TensorPtr bce_with_logits(Tape* tape, const TensorPtr& logit, float label) {
  require(logit->numel() == 1, "bce_with_logits: logit must be scalar, got " +
                                   shape_to_string(logit->shape));
  require(label >= 0.0f && label <= 1.0f,
          "bce_with_logits: label must lie in [0, 1], got " +
              format_float(label));
  const double z = logit->values[0];
  const double loss =
      std::max(z, 0.0) - z * label + std::log1p(std::exp(-std::abs(z)));
  auto out = make_output(Shape{});
  out->values[0] = static_cast<float>(loss);
  if (tape) {
    tape->record("bce_with_logits", out, [logit, out, label]() {
      logit->ensure_grad();
      const double z = logit->values[0];
      const double s = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                                : std::exp(z) / (1.0 + std::exp(z));
      logit->grad[0] += out->grad[0] * static_cast<float>(s - label);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimiser
// ---------------------------------------------------------------------------

void SgdOptimizer::step(std::span<const TensorPtr> params) {
  if (velocity_.size() != params.size()) {
    velocity_.clear();
    velocity_.resize(params.size());
    for (std::size_t p = 0; p < params.size(); ++p)
      velocity_[p].assign(params[p]->values.size(), 0.0f);
  }
  ++step_count_;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& t = *params[p];
    if (t.grad.empty()) t.ensure_grad();
    auto& vel = velocity_[p];
    for (std::size_t i = 0; i < t.values.size(); ++i) {
      float g = t.grad[i];
      if (!std::isfinite(g)) {
        throw NumericError(
            "sgd step " + std::to_string(step_count_) +
            ": non-finite gradient in parameter '" +
            (t.name.empty() ? "<unnamed>" : t.name) + "' at element " +
            std::to_string(i));
      }
      g += cfg_.weight_decay * t.values[i];
      vel[i] = cfg_.momentum * vel[i] + g;
      t.values[i] -= cfg_.learning_rate * vel[i];
    }
  }
}

void SgdOptimizer::zero_grad(std::span<const TensorPtr> params) {
  for (const auto& p : params) p->zero_grad();
}

// ---------------------------------------------------------------------------
// Checkpoint I/O (magic "GCTN", little-endian)
// ---------------------------------------------------------------------------

namespace {

template <typename T>
void write_raw(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_raw(std::istream& is, T& v, const std::string& path) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DataError("checkpoint '" + path + "' is truncated");
}

}  // namespace

void save_checkpoint(const std::string& path,
                     std::span<const TensorPtr> params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  os.write("GCTN", 4);
  write_raw(os, kCheckpointVersion);
  write_raw(os, static_cast<std::uint64_t>(params.size()));
  for (const auto& p : params) {
    write_raw(os, static_cast<std::uint64_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    write_raw(os, static_cast<std::uint64_t>(p->shape.size()));
    for (std::size_t d : p->shape) write_raw(os, static_cast<std::uint64_t>(d));
    os.write(reinterpret_cast<const char*>(p->values.data()),
             static_cast<std::streamsize>(p->values.size() * sizeof(float)));
  }
  if (!os) throw DataError("failed writing checkpoint '" + path + "'");
}

std::vector<TensorPtr> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "GCTN", 4) != 0)
    throw DataError("'" + path + "' is not a model checkpoint (bad magic)");
  std::uint32_t version = 0;
  read_raw(is, version, path);
  if (version != kCheckpointVersion)
    throw DataError("checkpoint '" + path + "' has unsupported version " +
                    std::to_string(version));
  std::uint64_t count = 0;
  read_raw(is, count, path);
  std::vector<TensorPtr> params;
  params.reserve(count);
  for (std::uint64_t p = 0; p < count; ++p) {
    std::uint64_t name_len = 0;
    read_raw(is, name_len, path);
    std::string name(name_len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(name_len));
    if (!is) throw DataError("checkpoint '" + path + "' is truncated");
    std::uint64_t rank = 0;
    read_raw(is, rank, path);
    Shape shape(rank);
    for (auto& d : shape) {
      std::uint64_t dim = 0;
      read_raw(is, dim, path);
      d = static_cast<std::size_t>(dim);
    }
    std::vector<float> values(shape_numel(shape));
    is.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(float)));
    if (!is) throw DataError("checkpoint '" + path + "' is truncated");
    params.push_back(Tensor::create(std::move(shape), std::move(values),
                                    /*requires_grad=*/true, std::move(name)));
  }
  return params;
}

}  // namespace geocause
