#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <memory>
#include <unordered_map>
#include <vector>

#include "uhn/common.hpp"

// Dense-tensor engine with reverse-mode automatic differentiation.
//
// A Tensor is a cheap shared handle to (shape, value, grad). A Tape records
// the primitives applied to tensors and replays their adjoints in reverse.
// Tapes are single-writer; forward primitives are pure, so independent tapes
// may be evaluated concurrently. Tensors participating in a tape are never
// mutated in place; optimizers update leaf values between tapes.
//
// Matrix products use a fixed i-k-j accumulation order, so the result of a
// row block does not depend on how the rows are batched. Chunked evaluation
// is therefore bitwise identical to single-batch evaluation.

namespace uhn {

// ---------------------------------------------------------------------------
// gemm kernels (row-major, fixed accumulation order)

// C[m x n] += A[m x k] * B[k x n]
template <class T>
void gemm_acc(T* c, const T* a, const T* b, long m, long k, long n) {
  for (long i = 0; i < m; ++i) {
    T* ci = c + i * n;
    const T* ai = a + i * k;
    for (long p = 0; p < k; ++p) {
      T av = ai[p];
      const T* bp = b + p * n;
      for (long j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[k x n] += A^T * B  with A[m x k], B[m x n]
template <class T>
void gemm_at_b_acc(T* c, const T* a, const T* b, long m, long k, long n) {
  for (long i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    const T* bi = b + i * n;
    for (long p = 0; p < k; ++p) {
      T av = ai[p];
      T* cp = c + p * n;
      for (long j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

// C[m x k] += A * B^T  with A[m x n], B[k x n]. B is transposed into a local
// buffer so the inner loop runs the same contiguous-axpy pattern as gemm_acc
// (per-element accumulation order along n is unchanged).
template <class T>
void gemm_a_bt_acc(T* c, const T* a, const T* b, long m, long k, long n) {
  std::vector<T> bt(n * k);
  for (long p = 0; p < k; ++p)
    for (long j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  for (long i = 0; i < m; ++i) {
    const T* ai = a + i * n;
    T* ci = c + i * k;
    for (long j = 0; j < n; ++j) {
      T av = ai[j];
      const T* bj = bt.data() + j * k;
      for (long p = 0; p < k; ++p) ci[p] += av * bj[p];
    }
  }
}

// ---------------------------------------------------------------------------
// Tensor

namespace detail {
inline int next_tensor_id() {
  static int counter = 0;
  return counter++;
}
}  // namespace detail

template <class T>
struct TensorNode {
  std::vector<int> shape;
  std::vector<T> value;
  std::vector<T> grad;  // sized during backward
  bool requires_grad = false;
  bool is_leaf = false;
  int id = detail::next_tensor_id();
};

template <class T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode<T>> n) : n_(std::move(n)) {}

  // Pointer-like handle: const methods hand out mutable views of the node.
  bool defined() const { return n_ != nullptr; }
  const std::vector<int>& shape() const { return n_->shape; }
  long numel() const { return static_cast<long>(n_->value.size()); }
  int dim(int i) const { return n_->shape[i]; }
  int rank() const { return static_cast<int>(n_->shape.size()); }
  std::vector<T>& value() const { return n_->value; }
  std::vector<T>& grad() const { return n_->grad; }
  bool requires_grad() const { return n_ && n_->requires_grad; }
  bool is_leaf() const { return n_ && n_->is_leaf; }
  int id() const { return n_->id; }
  TensorNode<T>* node() const { return n_.get(); }

  T scalar_value() const {
    check(numel() == 1, "scalar_value on tensor of shape ", shape_str(n_->shape));
    return n_->value[0];
  }

 private:
  std::shared_ptr<TensorNode<T>> n_;
};

template <class T>
Tensor<T> make_tensor(std::vector<int> shape, std::vector<T> data, bool requires_grad, bool leaf) {
  auto n = std::make_shared<TensorNode<T>>();
  long ne = shape_numel(shape);
  check(static_cast<long>(data.size()) == ne, "tensor data size ", data.size(),
        " does not match shape ", shape_str(shape));
  n->shape = std::move(shape);
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  n->is_leaf = leaf;
  return Tensor<T>(std::move(n));
}

// ---------------------------------------------------------------------------
// Tape

template <class T>
class Tape {
 public:
  using GradMap = std::unordered_map<int, std::vector<T>>;

  /// Trainable input; shows up in the gradient map returned by backward.
  Tensor<T> leaf(std::vector<int> shape, std::vector<T> data) {
    auto t = make_tensor<T>(std::move(shape), std::move(data), true, true);
    leaves_.push_back(t);
    return t;
  }

  /// Registers an externally owned leaf (e.g. persistent model parameters)
  /// so backward reports its gradient even when the output ignores it.
  void watch(const Tensor<T>& t) {
    check(t.is_leaf() && t.requires_grad(), "watch: tensor is not a trainable leaf");
    leaves_.push_back(t);
  }
  Tensor<T> constant(std::vector<int> shape, std::vector<T> data) {
    return make_tensor<T>(std::move(shape), std::move(data), false, false);
  }
  Tensor<T> scalar_constant(T v) { return constant({}, {v}); }

  Tensor<T> result(std::vector<int> shape, std::vector<T> data, bool requires_grad) {
    return make_tensor<T>(std::move(shape), std::move(data), requires_grad, false);
  }

  void record(std::vector<Tensor<T>> inputs, Tensor<T> output, std::function<void()> pull) {
    steps_.push_back(Step{std::move(inputs), std::move(output), std::move(pull)});
  }

  size_t num_nodes() const { return steps_.size(); }

  /// Reverse pass from a scalar output. Returns one gradient per leaf that
  /// the output depends on; a detached output yields an empty map.
  GradMap backward(const Tensor<T>& out) {
    check(out.defined(), "backward on undefined tensor");
    check(out.numel() == 1, "backward requires a scalar output, got shape ",
          shape_str(out.shape()));
    GradMap grads;
    if (!out.requires_grad()) return grads;

    // Zero all gradient buffers touched by this tape, then seed the output.
    for (auto& s : steps_) {
      prepare(s.output);
      for (auto& in : s.inputs) prepare(in);
    }
    for (auto& l : leaves_) prepare(l);
    prepare(out);
    out.grad()[0] = T(1);

    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) it->pull();

    for (auto& l : leaves_)
      if (!grads.count(l.id())) grads.emplace(l.id(), l.grad());
    for (auto& s : steps_) {
      for (auto& in : s.inputs) {
        if (in.is_leaf() && in.requires_grad() && !grads.count(in.id()))
          grads.emplace(in.id(), in.grad());
      }
    }
    if (out.is_leaf() && out.requires_grad()) grads.emplace(out.id(), out.grad());
    return grads;
  }

 private:
  struct Step {
    std::vector<Tensor<T>> inputs;
    Tensor<T> output;
    std::function<void()> pull;
  };
  static void prepare(const Tensor<T>& t) {
    if (!t.requires_grad()) return;
    auto& g = t.node()->grad;
    g.assign(t.numel(), T(0));
  }
  std::vector<Step> steps_;
  std::vector<Tensor<T>> leaves_;
};

namespace detail {
template <class T>
bool any_grad(std::initializer_list<Tensor<T>> ts) {
  for (auto& t : ts)
    if (t.defined() && t.requires_grad()) return true;
  return false;
}
}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise and scalar ops

template <class T, class FwdFn, class PullFn>
Tensor<T> unary_op(Tape<T>& tp, const Tensor<T>& x, FwdFn fwd, PullFn mk_pull) {
  std::vector<T> out(x.numel());
  fwd(out.data(), x.value().data(), x.numel());
  auto y = tp.result(x.shape(), std::move(out), x.requires_grad());
  if (x.requires_grad()) tp.record({x}, y, mk_pull(x, y));
  return y;
}

template <class T>
Tensor<T> add(Tape<T>& tp, const Tensor<T>& a, const Tensor<T>& b) {
  check(a.shape() == b.shape(), "add: shape mismatch ", shape_str(a.shape()), " vs ",
        shape_str(b.shape()));
  std::vector<T> out(a.numel());
  for (long i = 0; i < a.numel(); ++i) out[i] = a.value()[i] + b.value()[i];
  auto y = tp.result(a.shape(), std::move(out), a.requires_grad() || b.requires_grad());
  if (y.requires_grad())
    tp.record({a, b}, y, [a, b, y] {
      const auto& g = y.grad();
      if (a.requires_grad())
        for (size_t i = 0; i < g.size(); ++i) a.grad()[i] += g[i];
      if (b.requires_grad())
        for (size_t i = 0; i < g.size(); ++i) b.grad()[i] += g[i];
    });
  return y;
}

template <class T>
Tensor<T> sub(Tape<T>& tp, const Tensor<T>& a, const Tensor<T>& b) {
  check(a.shape() == b.shape(), "sub: shape mismatch");
  std::vector<T> out(a.numel());
  for (long i = 0; i < a.numel(); ++i) out[i] = a.value()[i] - b.value()[i];
  auto y = tp.result(a.shape(), std::move(out), a.requires_grad() || b.requires_grad());
  if (y.requires_grad())
    tp.record({a, b}, y, [a, b, y] {
      const auto& g = y.grad();
      if (a.requires_grad())
        for (size_t i = 0; i < g.size(); ++i) a.grad()[i] += g[i];
      if (b.requires_grad())
        for (size_t i = 0; i < g.size(); ++i) b.grad()[i] -= g[i];
    });
  return y;
}

template <class T>
Tensor<T> mul(Tape<T>& tp, const Tensor<T>& a, const Tensor<T>& b) {
  check(a.shape() == b.shape(), "mul: shape mismatch");
  std::vector<T> out(a.numel());
  for (long i = 0; i < a.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  auto y = tp.result(a.shape(), std::move(out), a.requires_grad() || b.requires_grad());
  if (y.requires_grad())
    tp.record({a, b}, y, [a, b, y] {
      const auto& g = y.grad();
      if (a.requires_grad())
        for (size_t i = 0; i < g.size(); ++i) a.grad()[i] += g[i] * b.value()[i];
      if (b.requires_grad())
        for (size_t i = 0; i < g.size(); ++i) b.grad()[i] += g[i] * a.value()[i];
    });
  return y;
}

template <class T>
Tensor<T> div(Tape<T>& tp, const Tensor<T>& a, const Tensor<T>& b) {
  check(a.shape() == b.shape(), "div: shape mismatch");
  std::vector<T> out(a.numel());
  for (long i = 0; i < a.numel(); ++i) out[i] = a.value()[i] / b.value()[i];
  auto y = tp.result(a.shape(), std::move(out), a.requires_grad() || b.requires_grad());
  if (y.requires_grad())
    tp.record({a, b}, y, [a, b, y] {
      const auto& g = y.grad();
      for (size_t i = 0; i < g.size(); ++i) {
        T bi = b.value()[i];
        if (a.requires_grad()) a.grad()[i] += g[i] / bi;
        if (b.requires_grad()) b.grad()[i] -= g[i] * a.value()[i] / (bi * bi);
      }
    });
  return y;
}

template <class T>
Tensor<T> add_scalar(Tape<T>& tp, const Tensor<T>& x, T c) {
  return unary_op(
      tp, x,
      [c](T* o, const T* v, long n) {
        for (long i = 0; i < n; ++i) o[i] = v[i] + c;
      },
      [](const Tensor<T>& x, const Tensor<T>& y) {
        return [x, y] {
          for (size_t i = 0; i < y.grad().size(); ++i) x.grad()[i] += y.grad()[i];
        };
      });
}

template <class T>
Tensor<T> mul_scalar(Tape<T>& tp, const Tensor<T>& x, T c) {
  return unary_op(
      tp, x,
      [c](T* o, const T* v, long n) {
        for (long i = 0; i < n; ++i) o[i] = v[i] * c;
      },
      [c](const Tensor<T>& x, const Tensor<T>& y) {
        return [x, y, c] {
          for (size_t i = 0; i < y.grad().size(); ++i) x.grad()[i] += y.grad()[i] * c;
        };
      });
}

template <class T>
Tensor<T> neg(Tape<T>& tp, const Tensor<T>& x) {
  return mul_scalar(tp, x, T(-1));
}

template <class T>
Tensor<T> exp_op(Tape<T>& tp, const Tensor<T>& x) {
  return unary_op(
      tp, x,
      [](T* o, const T* v, long n) {
        for (long i = 0; i < n; ++i) o[i] = std::exp(v[i]);
      },
      [](const Tensor<T>& x, const Tensor<T>& y) {
        return [x, y] {
          for (size_t i = 0; i < y.grad().size(); ++i)
            x.grad()[i] += y.grad()[i] * y.value()[i];
        };
      });
}

template <class T>
Tensor<T> log_op(Tape<T>& tp, const Tensor<T>& x) {
  return unary_op(
      tp, x,
      [](T* o, const T* v, long n) {
        for (long i = 0; i < n; ++i) o[i] = std::log(v[i]);
      },
      [](const Tensor<T>& x, const Tensor<T>& y) {
        return [x, y] {
          for (size_t i = 0; i < y.grad().size(); ++i)
            x.grad()[i] += y.grad()[i] / x.value()[i];
        };
      });
}

template <class T>
Tensor<T> cos_op(Tape<T>& tp, const Tensor<T>& x) {
  return unary_op(
      tp, x,
      [](T* o, const T* v, long n) {
        for (long i = 0; i < n; ++i) o[i] = std::cos(v[i]);
      },
      [](const Tensor<T>& x, const Tensor<T>& y) {
        return [x, y] {
          for (size_t i = 0; i < y.grad().size(); ++i)
            x.grad()[i] -= y.grad()[i] * std::sin(x.value()[i]);
        };
      });
}

template <class T>
Tensor<T> sin_op(Tape<T>& tp, const Tensor<T>& x) {
  return unary_op(
      tp, x,
      [](T* o, const T* v, long n) {
        for (long i = 0; i < n; ++i) o[i] = std::sin(v[i]);
      },
      [](const Tensor<T>& x, const Tensor<T>& y) {
        return [x, y] {
          for (size_t i = 0; i < y.grad().size(); ++i)
            x.grad()[i] += y.grad()[i] * std::cos(x.value()[i]);
        };
      });
}

template <class T>
Tensor<T> rsqrt(Tape<T>& tp, const Tensor<T>& x) {
  return unary_op(
      tp, x,
      [](T* o, const T* v, long n) {
        for (long i = 0; i < n; ++i) o[i] = T(1) / std::sqrt(v[i]);
      },
      [](const Tensor<T>& x, const Tensor<T>& y) {
        return [x, y] {
          for (size_t i = 0; i < y.grad().size(); ++i) {
            T yi = y.value()[i];
            x.grad()[i] += y.grad()[i] * (T(-0.5) * yi * yi * yi);
          }
        };
      });
}

template <class T>
Tensor<T> reciprocal(Tape<T>& tp, const Tensor<T>& x) {
  return unary_op(
      tp, x,
      [](T* o, const T* v, long n) {
        for (long i = 0; i < n; ++i) o[i] = T(1) / v[i];
      },
      [](const Tensor<T>& x, const Tensor<T>& y) {
        return [x, y] {
          for (size_t i = 0; i < y.grad().size(); ++i) {
            T yi = y.value()[i];
            x.grad()[i] -= y.grad()[i] * yi * yi;
          }
        };
      });
}

template <class T>
Tensor<T> relu(Tape<T>& tp, const Tensor<T>& x) {
  return unary_op(
      tp, x,
      [](T* o, const T* v, long n) {
        for (long i = 0; i < n; ++i) o[i] = v[i] > T(0) ? v[i] : T(0);
      },
      [](const Tensor<T>& x, const Tensor<T>& y) {
        return [x, y] {
          for (size_t i = 0; i < y.grad().size(); ++i)
            if (x.value()[i] > T(0)) x.grad()[i] += y.grad()[i];
        };
      });
}

template <class T>
Tensor<T> leaky_relu(Tape<T>& tp, const Tensor<T>& x, T slope) {
  return unary_op(
      tp, x,
      [slope](T* o, const T* v, long n) {
        for (long i = 0; i < n; ++i) o[i] = v[i] > T(0) ? v[i] : slope * v[i];
      },
      [slope](const Tensor<T>& x, const Tensor<T>& y) {
        return [x, y, slope] {
          for (size_t i = 0; i < y.grad().size(); ++i)
            x.grad()[i] += y.grad()[i] * (x.value()[i] > T(0) ? T(1) : slope);
        };
      });
}

template <class T>
Tensor<T> elu(Tape<T>& tp, const Tensor<T>& x, T alpha = T(1)) {
  return unary_op(
      tp, x,
      [alpha](T* o, const T* v, long n) {
        for (long i = 0; i < n; ++i)
          o[i] = v[i] > T(0) ? v[i] : alpha * (std::exp(v[i]) - T(1));
      },
      [alpha](const Tensor<T>& x, const Tensor<T>& y) {
        return [x, y, alpha] {
          for (size_t i = 0; i < y.grad().size(); ++i)
            x.grad()[i] += y.grad()[i] * (x.value()[i] > T(0) ? T(1) : y.value()[i] + alpha);
        };
      });
}

template <class T>
Tensor<T> silu(Tape<T>& tp, const Tensor<T>& x) {
  // y = x * sigmoid(x)
  auto sig = std::make_shared<std::vector<T>>(x.numel());
  std::vector<T> out(x.numel());
  for (long i = 0; i < x.numel(); ++i) {
    T s = T(1) / (T(1) + std::exp(-x.value()[i]));
    (*sig)[i] = s;
    out[i] = x.value()[i] * s;
  }
  auto y = tp.result(x.shape(), std::move(out), x.requires_grad());
  if (x.requires_grad())
    tp.record({x}, y, [x, y, sig] {
      for (size_t i = 0; i < y.grad().size(); ++i) {
        T s = (*sig)[i];
        x.grad()[i] += y.grad()[i] * (s + x.value()[i] * s * (T(1) - s));
      }
    });
  return y;
}

// ---------------------------------------------------------------------------
// broadcast over the last axis: x[..., n] (op) v[n]

template <class T>
void check_row_broadcast(const Tensor<T>& x, const Tensor<T>& v, const char* name) {
  check(v.rank() == 1 && x.rank() >= 1 && x.shape().back() == v.dim(0), name,
        ": cannot broadcast ", shape_str(v.shape()), " over ", shape_str(x.shape()));
}

template <class T>
Tensor<T> add_rowvec(Tape<T>& tp, const Tensor<T>& x, const Tensor<T>& v) {
  check_row_broadcast(x, v, "add_rowvec");
  long n = v.numel(), rows = x.numel() / n;
  std::vector<T> out(x.numel());
  for (long r = 0; r < rows; ++r)
    for (long j = 0; j < n; ++j) out[r * n + j] = x.value()[r * n + j] + v.value()[j];
  auto y = tp.result(x.shape(), std::move(out), x.requires_grad() || v.requires_grad());
  if (y.requires_grad())
    tp.record({x, v}, y, [x, v, y, rows, n] {
      const auto& g = y.grad();
      if (x.requires_grad())
        for (size_t i = 0; i < g.size(); ++i) x.grad()[i] += g[i];
      if (v.requires_grad())
        for (long r = 0; r < rows; ++r)
          for (long j = 0; j < n; ++j) v.grad()[j] += g[r * n + j];
    });
  return y;
}

template <class T>
Tensor<T> sub_rowvec(Tape<T>& tp, const Tensor<T>& x, const Tensor<T>& v) {
  check_row_broadcast(x, v, "sub_rowvec");
  long n = v.numel(), rows = x.numel() / n;
  std::vector<T> out(x.numel());
  for (long r = 0; r < rows; ++r)
    for (long j = 0; j < n; ++j) out[r * n + j] = x.value()[r * n + j] - v.value()[j];
  auto y = tp.result(x.shape(), std::move(out), x.requires_grad() || v.requires_grad());
  if (y.requires_grad())
    tp.record({x, v}, y, [x, v, y, rows, n] {
      const auto& g = y.grad();
      if (x.requires_grad())
        for (size_t i = 0; i < g.size(); ++i) x.grad()[i] += g[i];
      if (v.requires_grad())
        for (long r = 0; r < rows; ++r)
          for (long j = 0; j < n; ++j) v.grad()[j] -= g[r * n + j];
    });
  return y;
}

template <class T>
Tensor<T> mul_rowvec(Tape<T>& tp, const Tensor<T>& x, const Tensor<T>& v) {
  check_row_broadcast(x, v, "mul_rowvec");
  long n = v.numel(), rows = x.numel() / n;
  std::vector<T> out(x.numel());
  for (long r = 0; r < rows; ++r)
    for (long j = 0; j < n; ++j) out[r * n + j] = x.value()[r * n + j] * v.value()[j];
  auto y = tp.result(x.shape(), std::move(out), x.requires_grad() || v.requires_grad());
  if (y.requires_grad())
    tp.record({x, v}, y, [x, v, y, rows, n] {
      const auto& g = y.grad();
      for (long r = 0; r < rows; ++r)
        for (long j = 0; j < n; ++j) {
          long i = r * n + j;
          if (x.requires_grad()) x.grad()[i] += g[i] * v.value()[j];
          if (v.requires_grad()) v.grad()[j] += g[i] * x.value()[i];
        }
    });
  return y;
}

// ---------------------------------------------------------------------------
// matmul / batched matmul

template <class T>
Tensor<T> matmul(Tape<T>& tp, const Tensor<T>& a, const Tensor<T>& b) {
  check(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
        "matmul: incompatible shapes ", shape_str(a.shape()), " x ", shape_str(b.shape()));
  long m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n, T(0));
  gemm_acc(out.data(), a.value().data(), b.value().data(), m, k, n);
  auto y = tp.result({(int)m, (int)n}, std::move(out), a.requires_grad() || b.requires_grad());
  if (y.requires_grad())
    tp.record({a, b}, y, [a, b, y, m, k, n] {
      const T* g = y.grad().data();
      if (a.requires_grad()) gemm_a_bt_acc(a.grad().data(), g, b.value().data(), m, k, n);
      if (b.requires_grad()) gemm_at_b_acc(b.grad().data(), a.value().data(), g, m, k, n);
    });
  return y;
}

template <class T>
Tensor<T> bmm(Tape<T>& tp, const Tensor<T>& a, const Tensor<T>& b) {
  check(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(1),
        "bmm: incompatible shapes ", shape_str(a.shape()), " x ", shape_str(b.shape()));
  long bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<T> out(bs * m * n, T(0));
  for (long q = 0; q < bs; ++q)
    gemm_acc(out.data() + q * m * n, a.value().data() + q * m * k,
             b.value().data() + q * k * n, m, k, n);
  auto y = tp.result({(int)bs, (int)m, (int)n}, std::move(out),
                     a.requires_grad() || b.requires_grad());
  if (y.requires_grad())
    tp.record({a, b}, y, [a, b, y, bs, m, k, n] {
      for (long q = 0; q < bs; ++q) {
        const T* g = y.grad().data() + q * m * n;
        if (a.requires_grad())
          gemm_a_bt_acc(a.grad().data() + q * m * k, g, b.value().data() + q * k * n, m, k, n);
        if (b.requires_grad())
          gemm_at_b_acc(b.grad().data() + q * k * n, a.value().data() + q * m * k, g, m, k, n);
      }
    });
  return y;
}

// ---------------------------------------------------------------------------
// softmax family (last axis)

template <class T>
Tensor<T> softmax_last(Tape<T>& tp, const Tensor<T>& x) {
  check(x.rank() >= 1, "softmax_last: rank >= 1 required");
  long n = x.shape().back(), rows = x.numel() / n;
  std::vector<T> out(x.numel());
  for (long r = 0; r < rows; ++r) {
    const T* v = x.value().data() + r * n;
    T* o = out.data() + r * n;
    T mx = v[0];
    for (long j = 1; j < n; ++j) mx = std::max(mx, v[j]);
    T s = 0;
    for (long j = 0; j < n; ++j) {
      o[j] = std::exp(v[j] - mx);
      s += o[j];
    }
    for (long j = 0; j < n; ++j) o[j] /= s;
  }
  auto y = tp.result(x.shape(), std::move(out), x.requires_grad());
  if (x.requires_grad())
    tp.record({x}, y, [x, y, rows, n] {
      for (long r = 0; r < rows; ++r) {
        const T* g = y.grad().data() + r * n;
        const T* o = y.value().data() + r * n;
        T dot = 0;
        for (long j = 0; j < n; ++j) dot += g[j] * o[j];
        for (long j = 0; j < n; ++j) x.grad()[r * n + j] += o[j] * (g[j] - dot);
      }
    });
  return y;
}

template <class T>
Tensor<T> log_softmax_last(Tape<T>& tp, const Tensor<T>& x) {
  check(x.rank() >= 1, "log_softmax_last: rank >= 1 required");
  long n = x.shape().back(), rows = x.numel() / n;
  std::vector<T> out(x.numel());
  for (long r = 0; r < rows; ++r) {
    const T* v = x.value().data() + r * n;
    T* o = out.data() + r * n;
    T mx = v[0];
    for (long j = 1; j < n; ++j) mx = std::max(mx, v[j]);
    T s = 0;
    for (long j = 0; j < n; ++j) s += std::exp(v[j] - mx);
    T lse = mx + std::log(s);
    for (long j = 0; j < n; ++j) o[j] = v[j] - lse;
  }
  auto y = tp.result(x.shape(), std::move(out), x.requires_grad());
  if (x.requires_grad())
    tp.record({x}, y, [x, y, rows, n] {
      for (long r = 0; r < rows; ++r) {
        const T* g = y.grad().data() + r * n;
        const T* o = y.value().data() + r * n;
        T gs = 0;
        for (long j = 0; j < n; ++j) gs += g[j];
        for (long j = 0; j < n; ++j) x.grad()[r * n + j] += g[j] - std::exp(o[j]) * gs;
      }
    });
  return y;
}

// ---------------------------------------------------------------------------
// normalization

/// LayerNorm over the last axis. Pass undefined gamma/beta for the
/// parameter-free (non-affine) variant.
template <class T>
Tensor<T> layer_norm(Tape<T>& tp, const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps = T(1e-5)) {
  long n = x.shape().back(), rows = x.numel() / n;
  bool affine = gamma.defined();
  if (affine) {
    check(gamma.numel() == n && beta.defined() && beta.numel() == n,
          "layer_norm: affine parameter size mismatch");
  }
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  std::vector<T> out(x.numel());
  for (long r = 0; r < rows; ++r) {
    const T* v = x.value().data() + r * n;
    T mu = 0;
    for (long j = 0; j < n; ++j) mu += v[j];
    mu /= T(n);
    T var = 0;
    for (long j = 0; j < n; ++j) var += (v[j] - mu) * (v[j] - mu);
    var /= T(n);
    T rs = T(1) / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (long j = 0; j < n; ++j) {
      T h = (v[j] - mu) * rs;
      (*xhat)[r * n + j] = h;
      out[r * n + j] = affine ? gamma.value()[j] * h + beta.value()[j] : h;
    }
  }
  bool rg = x.requires_grad() || (affine && (gamma.requires_grad() || beta.requires_grad()));
  auto y = tp.result(x.shape(), std::move(out), rg);
  if (rg) {
    std::vector<Tensor<T>> ins = affine ? std::vector<Tensor<T>>{x, gamma, beta}
                                        : std::vector<Tensor<T>>{x};
    tp.record(std::move(ins), y, [x, gamma, beta, y, xhat, rstd, rows, n, affine] {
      for (long r = 0; r < rows; ++r) {
        const T* g = y.grad().data() + r * n;
        const T* h = xhat->data() + r * n;
        if (affine) {
          if (gamma.requires_grad())
            for (long j = 0; j < n; ++j) gamma.grad()[j] += g[j] * h[j];
          if (beta.requires_grad())
            for (long j = 0; j < n; ++j) beta.grad()[j] += g[j];
        }
        if (!x.requires_grad()) continue;
        T m1 = 0, m2 = 0;
        for (long j = 0; j < n; ++j) {
          T dh = affine ? g[j] * gamma.value()[j] : g[j];
          m1 += dh;
          m2 += dh * h[j];
        }
        m1 /= T(n);
        m2 /= T(n);
        T rs = (*rstd)[r];
        for (long j = 0; j < n; ++j) {
          T dh = affine ? g[j] * gamma.value()[j] : g[j];
          x.grad()[r * n + j] += rs * (dh - m1 - h[j] * m2);
        }
      }
    });
  }
  return y;
}

template <class T>
Tensor<T> layer_norm(Tape<T>& tp, const Tensor<T>& x, T eps = T(1e-5)) {
  return layer_norm(tp, x, Tensor<T>(), Tensor<T>(), eps);
}

/// GroupNorm on [n, c, h, w]; normalizes each (sample, group) block.
/// Optional per-channel affine parameters.
template <class T>
Tensor<T> group_norm(Tape<T>& tp, const Tensor<T>& x, int groups, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps = T(1e-5)) {
  check(x.rank() == 4, "group_norm: expected [n,c,h,w], got ", shape_str(x.shape()));
  long n = x.dim(0), c = x.dim(1), hw = (long)x.dim(2) * x.dim(3);
  check(groups > 0 && c % groups == 0, "group_norm: ", c, " channels not divisible by ",
        groups, " groups");
  long cg = c / groups, blk = cg * hw;
  bool affine = gamma.defined();
  if (affine)
    check(gamma.numel() == c && beta.defined() && beta.numel() == c,
          "group_norm: affine parameter size mismatch");
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto rstd = std::make_shared<std::vector<T>>(n * groups);
  std::vector<T> out(x.numel());
  for (long s = 0; s < n * groups; ++s) {
    const T* v = x.value().data() + s * blk;
    T mu = 0;
    for (long j = 0; j < blk; ++j) mu += v[j];
    mu /= T(blk);
    T var = 0;
    for (long j = 0; j < blk; ++j) var += (v[j] - mu) * (v[j] - mu);
    var /= T(blk);
    T rs = T(1) / std::sqrt(var + eps);
    (*rstd)[s] = rs;
    long ch0 = (s % groups) * cg;
    for (long j = 0; j < blk; ++j) {
      T h = (v[j] - mu) * rs;
      (*xhat)[s * blk + j] = h;
      long ch = ch0 + j / hw;
      out[s * blk + j] = affine ? gamma.value()[ch] * h + beta.value()[ch] : h;
    }
  }
  bool rg = x.requires_grad() || (affine && (gamma.requires_grad() || beta.requires_grad()));
  auto y = tp.result(x.shape(), std::move(out), rg);
  if (rg) {
    std::vector<Tensor<T>> ins = affine ? std::vector<Tensor<T>>{x, gamma, beta}
                                        : std::vector<Tensor<T>>{x};
    tp.record(std::move(ins), y,
              [x, gamma, beta, y, xhat, rstd, n, groups, cg, hw, blk, affine] {
                for (long s = 0; s < n * groups; ++s) {
                  const T* g = y.grad().data() + s * blk;
                  const T* h = xhat->data() + s * blk;
                  long ch0 = (s % groups) * cg;
                  if (affine) {
                    for (long j = 0; j < blk; ++j) {
                      long ch = ch0 + j / hw;
                      if (gamma.requires_grad()) gamma.grad()[ch] += g[j] * h[j];
                      if (beta.requires_grad()) beta.grad()[ch] += g[j];
                    }
                  }
                  if (!x.requires_grad()) continue;
                  T m1 = 0, m2 = 0;
                  for (long j = 0; j < blk; ++j) {
                    T dh = affine ? g[j] * gamma.value()[ch0 + j / hw] : g[j];
                    m1 += dh;
                    m2 += dh * h[j];
                  }
                  m1 /= T(blk);
                  m2 /= T(blk);
                  T rs = (*rstd)[s];
                  for (long j = 0; j < blk; ++j) {
                    T dh = affine ? g[j] * gamma.value()[ch0 + j / hw] : g[j];
                    x.grad()[s * blk + j] += rs * (dh - m1 - h[j] * m2);
                  }
                }
              });
  }
  return y;
}

template <class T>
Tensor<T> group_norm(Tape<T>& tp, const Tensor<T>& x, int groups, T eps = T(1e-5)) {
  return group_norm(tp, x, groups, Tensor<T>(), Tensor<T>(), eps);
}

// ---------------------------------------------------------------------------
// 2-D cross-correlation and pooling (NCHW)

template <class T>
Tensor<T> conv2d(Tape<T>& tp, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 int stride, int pad) {
  check(x.rank() == 4 && w.rank() == 4, "conv2d: need 4-D input and kernel");
  long n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  long co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  check(w.dim(1) == ci, "conv2d: channel mismatch");
  check(stride >= 1, "conv2d: stride >= 1");
  long oh = (h + 2 * pad - kh) / stride + 1;
  long ow = (wd + 2 * pad - kw) / stride + 1;
  check(oh >= 1 && ow >= 1, "conv2d: empty output");
  long ckk = ci * kh * kw, ohw = oh * ow;

  auto im2col = [=](const T* img, T* col) {
    // col is [ckk x ohw]
    for (long cc = 0; cc < ci; ++cc)
      for (long u = 0; u < kh; ++u)
        for (long v = 0; v < kw; ++v) {
          T* dst = col + ((cc * kh + u) * kw + v) * ohw;
          for (long oy = 0; oy < oh; ++oy) {
            long iy = oy * stride + u - pad;
            for (long ox = 0; ox < ow; ++ox) {
              long ix = ox * stride + v - pad;
              dst[oy * ow + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < wd)
                                      ? img[(cc * h + iy) * wd + ix]
                                      : T(0);
            }
          }
        }
  };

  std::vector<T> out(n * co * ohw, T(0));
  std::vector<T> col(ckk * ohw);
  for (long s = 0; s < n; ++s) {
    im2col(x.value().data() + s * ci * h * wd, col.data());
    gemm_acc(out.data() + s * co * ohw, w.value().data(), col.data(), co, ckk, ohw);
  }
  if (b.defined()) {
    check(b.numel() == co, "conv2d: bias size mismatch");
    for (long s = 0; s < n; ++s)
      for (long q = 0; q < co; ++q) {
        T bv = b.value()[q];
        T* o = out.data() + (s * co + q) * ohw;
        for (long j = 0; j < ohw; ++j) o[j] += bv;
      }
  }
  bool rg = x.requires_grad() || w.requires_grad() || (b.defined() && b.requires_grad());
  auto y = tp.result({(int)n, (int)co, (int)oh, (int)ow}, std::move(out), rg);
  if (rg) {
    std::vector<Tensor<T>> ins{x, w};
    if (b.defined()) ins.push_back(b);
    tp.record(std::move(ins), y, [=] {
      std::vector<T> col(ckk * ohw), dcol(ckk * ohw);
      for (long s = 0; s < n; ++s) {
        const T* g = y.grad().data() + s * co * ohw;
        if (w.requires_grad() || x.requires_grad())
          im2col(x.value().data() + s * ci * h * wd, col.data());
        if (w.requires_grad())
          gemm_a_bt_acc(w.grad().data(), g, col.data(), co, ckk, ohw);
        if (b.defined() && b.requires_grad())
          for (long q = 0; q < co; ++q) {
            T s2 = 0;
            for (long j = 0; j < ohw; ++j) s2 += g[q * ohw + j];
            b.grad()[q] += s2;
          }
        if (x.requires_grad()) {
          std::fill(dcol.begin(), dcol.end(), T(0));
          gemm_at_b_acc(dcol.data(), w.value().data(), g, co, ckk, ohw);
          T* dx = x.grad().data() + s * ci * h * wd;
          for (long cc = 0; cc < ci; ++cc)
            for (long u = 0; u < kh; ++u)
              for (long v = 0; v < kw; ++v) {
                const T* src = dcol.data() + ((cc * kh + u) * kw + v) * ohw;
                for (long oy = 0; oy < oh; ++oy) {
                  long iy = oy * stride + u - pad;
                  if (iy < 0 || iy >= h) continue;
                  for (long ox = 0; ox < ow; ++ox) {
                    long ix = ox * stride + v - pad;
                    if (ix >= 0 && ix < wd) dx[(cc * h + iy) * wd + ix] += src[oy * ow + ox];
                  }
                }
              }
        }
      }
    });
  }
  return y;
}

template <class T>
Tensor<T> avg_pool2d(Tape<T>& tp, const Tensor<T>& x, int k, int stride) {
  check(x.rank() == 4, "avg_pool2d: need 4-D input");
  long n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  long oh = (h - k) / stride + 1, ow = (w - k) / stride + 1;
  check(oh >= 1 && ow >= 1, "avg_pool2d: empty output");
  std::vector<T> out(n * c * oh * ow);
  T inv = T(1) / T(k * k);
  for (long sc = 0; sc < n * c; ++sc) {
    const T* v = x.value().data() + sc * h * w;
    T* o = out.data() + sc * oh * ow;
    for (long oy = 0; oy < oh; ++oy)
      for (long ox = 0; ox < ow; ++ox) {
        T s = 0;
        for (int u = 0; u < k; ++u)
          for (int q = 0; q < k; ++q) s += v[(oy * stride + u) * w + ox * stride + q];
        o[oy * ow + ox] = s * inv;
      }
  }
  auto y = tp.result({(int)n, (int)c, (int)oh, (int)ow}, std::move(out), x.requires_grad());
  if (x.requires_grad())
    tp.record({x}, y, [x, y, n, c, h, w, oh, ow, k, stride, inv] {
      for (long sc = 0; sc < n * c; ++sc) {
        const T* g = y.grad().data() + sc * oh * ow;
        T* dx = x.grad().data() + sc * h * w;
        for (long oy = 0; oy < oh; ++oy)
          for (long ox = 0; ox < ow; ++ox) {
            T gv = g[oy * ow + ox] * inv;
            for (int u = 0; u < k; ++u)
              for (int q = 0; q < k; ++q) dx[(oy * stride + u) * w + ox * stride + q] += gv;
          }
      }
    });
  return y;
}

template <class T>
Tensor<T> max_pool2d(Tape<T>& tp, const Tensor<T>& x, int k, int stride) {
  check(x.rank() == 4, "max_pool2d: need 4-D input");
  long n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  long oh = (h - k) / stride + 1, ow = (w - k) / stride + 1;
  check(oh >= 1 && ow >= 1, "max_pool2d: empty output");
  std::vector<T> out(n * c * oh * ow);
  auto arg = std::make_shared<std::vector<long>>(n * c * oh * ow);
  for (long sc = 0; sc < n * c; ++sc) {
    const T* v = x.value().data() + sc * h * w;
    for (long oy = 0; oy < oh; ++oy)
      for (long ox = 0; ox < ow; ++ox) {
        long best = (oy * stride) * w + ox * stride;
        T bv = v[best];
        for (int u = 0; u < k; ++u)
          for (int q = 0; q < k; ++q) {
            long idx = (oy * stride + u) * w + ox * stride + q;
            if (v[idx] > bv) {
              bv = v[idx];
              best = idx;
            }
          }
        out[sc * oh * ow + oy * ow + ox] = bv;
        (*arg)[sc * oh * ow + oy * ow + ox] = best;
      }
  }
  auto y = tp.result({(int)n, (int)c, (int)oh, (int)ow}, std::move(out), x.requires_grad());
  if (x.requires_grad())
    tp.record({x}, y, [x, y, arg, n, c, h, w, oh, ow] {
      for (long sc = 0; sc < n * c; ++sc) {
        const T* g = y.grad().data() + sc * oh * ow;
        T* dx = x.grad().data() + sc * h * w;
        for (long j = 0; j < oh * ow; ++j) dx[(*arg)[sc * oh * ow + j]] += g[j];
      }
    });
  return y;
}

template <class T>
Tensor<T> adaptive_avg_pool2d(Tape<T>& tp, const Tensor<T>& x, int oh, int ow) {
  check(x.rank() == 4, "adaptive_avg_pool2d: need 4-D input");
  long n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  check(oh >= 1 && ow >= 1, "adaptive_avg_pool2d: output extents >= 1");
  auto lo = [](long o, long i, long n) { return (o * i) / n; };
  auto hi = [](long o, long i, long n) { return ((o + 1) * i + n - 1) / n; };
  std::vector<T> out((long)n * c * oh * ow);
  for (long sc = 0; sc < n * c; ++sc) {
    const T* v = x.value().data() + sc * h * w;
    T* o = out.data() + sc * oh * ow;
    for (long oy = 0; oy < oh; ++oy)
      for (long ox = 0; ox < ow; ++ox) {
        long y0 = lo(oy, h, oh), y1 = hi(oy, h, oh);
        long x0 = lo(ox, w, ow), x1 = hi(ox, w, ow);
        T s = 0;
        for (long iy = y0; iy < y1; ++iy)
          for (long ix = x0; ix < x1; ++ix) s += v[iy * w + ix];
        o[oy * ow + ox] = s / T((y1 - y0) * (x1 - x0));
      }
  }
  auto y = tp.result({(int)n, (int)c, oh, ow}, std::move(out), x.requires_grad());
  if (x.requires_grad())
    tp.record({x}, y, [x, y, n, c, h, w, oh, ow, lo, hi] {
      for (long sc = 0; sc < n * c; ++sc) {
        const T* g = y.grad().data() + sc * oh * ow;
        T* dx = x.grad().data() + sc * h * w;
        for (long oy = 0; oy < oh; ++oy)
          for (long ox = 0; ox < ow; ++ox) {
            long y0 = lo(oy, h, oh), y1 = hi(oy, h, oh);
            long x0 = lo(ox, w, ow), x1 = hi(ox, w, ow);
            T gv = g[oy * ow + ox] / T((y1 - y0) * (x1 - x0));
            for (long iy = y0; iy < y1; ++iy)
              for (long ix = x0; ix < x1; ++ix) dx[iy * w + ix] += gv;
          }
      }
    });
  return y;
}

// ---------------------------------------------------------------------------
// gather / scatter / slicing / reshaping

/// y[i] = table[ids[i]] for a [V, d] table; ids index rows.
template <class T>
Tensor<T> gather_rows(Tape<T>& tp, const Tensor<T>& table, const std::vector<int>& ids) {
  check(table.rank() == 2, "gather_rows: table must be 2-D");
  long v = table.dim(0), d = table.dim(1);
  for (int i : ids) check(i >= 0 && i < v, "gather_rows: id ", i, " out of range [0,", v, ")");
  std::vector<T> out(ids.size() * d);
  for (size_t i = 0; i < ids.size(); ++i)
    std::copy_n(table.value().data() + (long)ids[i] * d, d, out.data() + i * d);
  auto y = tp.result({(int)ids.size(), (int)d}, std::move(out), table.requires_grad());
  if (table.requires_grad())
    tp.record({table}, y, [table, y, ids, d] {
      for (size_t i = 0; i < ids.size(); ++i) {
        const T* g = y.grad().data() + i * d;
        T* dt = table.grad().data() + (long)ids[i] * d;
        for (long j = 0; j < d; ++j) dt[j] += g[j];
      }
    });
  return y;
}

/// out = base with updates[i] added into row ids[i].
template <class T>
Tensor<T> scatter_add_rows(Tape<T>& tp, const Tensor<T>& base, const std::vector<int>& ids,
                           const Tensor<T>& updates) {
  check(base.rank() == 2 && updates.rank() == 2 && base.dim(1) == updates.dim(1),
        "scatter_add_rows: shape mismatch");
  check((long)ids.size() == updates.dim(0), "scatter_add_rows: ids/updates mismatch");
  long v = base.dim(0), d = base.dim(1);
  std::vector<T> out = base.value();
  for (size_t i = 0; i < ids.size(); ++i) {
    check(ids[i] >= 0 && ids[i] < v, "scatter_add_rows: id out of range");
    for (long j = 0; j < d; ++j) out[(long)ids[i] * d + j] += updates.value()[i * d + j];
  }
  auto y = tp.result(base.shape(), std::move(out),
                     base.requires_grad() || updates.requires_grad());
  if (y.requires_grad())
    tp.record({base, updates}, y, [base, updates, y, ids, d] {
      const auto& g = y.grad();
      if (base.requires_grad())
        for (size_t i = 0; i < g.size(); ++i) base.grad()[i] += g[i];
      if (updates.requires_grad())
        for (size_t i = 0; i < ids.size(); ++i)
          for (long j = 0; j < d; ++j)
            updates.grad()[i * d + j] += g[(long)ids[i] * d + j];
    });
  return y;
}

/// Contiguous range of the flattened tensor as a 1-D tensor.
template <class T>
Tensor<T> slice_flat(Tape<T>& tp, const Tensor<T>& x, long offset, long len) {
  check(offset >= 0 && len >= 1 && offset + len <= x.numel(), "slice_flat: range [",
        offset, ",", offset + len, ") out of bounds for ", x.numel(), " elements");
  std::vector<T> out(x.value().begin() + offset, x.value().begin() + offset + len);
  auto y = tp.result({(int)len}, std::move(out), x.requires_grad());
  if (x.requires_grad())
    tp.record({x}, y, [x, y, offset, len] {
      for (long i = 0; i < len; ++i) x.grad()[offset + i] += y.grad()[i];
    });
  return y;
}

template <class T>
Tensor<T> reshape(Tape<T>& tp, const Tensor<T>& x, std::vector<int> shape) {
  check(shape_numel(shape) == x.numel(), "reshape: ", shape_str(x.shape()), " -> ",
        shape_str(shape), " changes element count");
  auto y = tp.result(std::move(shape), x.value(), x.requires_grad());
  if (x.requires_grad())
    tp.record({x}, y, [x, y] {
      for (size_t i = 0; i < y.grad().size(); ++i) x.grad()[i] += y.grad()[i];
    });
  return y;
}

namespace detail {
inline std::vector<long> row_major_strides(const std::vector<int>& shape) {
  std::vector<long> s(shape.size(), 1);
  for (int i = (int)shape.size() - 2; i >= 0; --i) s[i] = s[i + 1] * shape[i + 1];
  return s;
}
}  // namespace detail

/// General axis permutation (copying).
template <class T>
Tensor<T> permute(Tape<T>& tp, const Tensor<T>& x, const std::vector<int>& perm) {
  int r = x.rank();
  check((int)perm.size() == r, "permute: perm size mismatch");
  std::vector<int> oshape(r);
  for (int i = 0; i < r; ++i) oshape[i] = x.dim(perm[i]);
  auto istr = detail::row_major_strides(x.shape());
  auto ostr = detail::row_major_strides(oshape);
  std::vector<T> out(x.numel());
  std::vector<int> idx(r, 0);
  for (long o = 0; o < x.numel(); ++o) {
    long rem = o, src = 0;
    for (int a = 0; a < r; ++a) {
      long q = rem / ostr[a];
      rem -= q * ostr[a];
      src += q * istr[perm[a]];
    }
    out[o] = x.value()[src];
  }
  auto y = tp.result(oshape, std::move(out), x.requires_grad());
  if (x.requires_grad())
    tp.record({x}, y, [x, y, perm, istr, ostr, r] {
      for (long o = 0; o < y.numel(); ++o) {
        long rem = o, src = 0;
        for (int a = 0; a < r; ++a) {
          long q = rem / ostr[a];
          rem -= q * ostr[a];
          src += q * istr[perm[a]];
        }
        x.grad()[src] += y.grad()[o];
      }
    });
  return y;
}

template <class T>
Tensor<T> transpose2d(Tape<T>& tp, const Tensor<T>& x) {
  check(x.rank() == 2, "transpose2d: need 2-D");
  return permute(tp, x, {1, 0});
}

/// Concatenate same-rank tensors along axis 0.
template <class T>
Tensor<T> concat_dim0(Tape<T>& tp, const std::vector<Tensor<T>>& parts) {
  check(!parts.empty(), "concat_dim0: empty input");
  auto base = parts[0].shape();
  check(!base.empty(), "concat_dim0: rank >= 1 required");
  long total = 0;
  bool rg = false;
  for (auto& p : parts) {
    check(p.rank() == (int)base.size(), "concat_dim0: rank mismatch");
    for (size_t i = 1; i < base.size(); ++i)
      check(p.dim(i) == base[i], "concat_dim0: trailing shape mismatch");
    total += p.dim(0);
    rg = rg || p.requires_grad();
  }
  std::vector<int> oshape = base;
  oshape[0] = (int)total;
  std::vector<T> out;
  out.reserve(shape_numel(oshape));
  for (auto& p : parts) out.insert(out.end(), p.value().begin(), p.value().end());
  auto y = tp.result(std::move(oshape), std::move(out), rg);
  if (rg)
    tp.record(parts, y, [parts, y] {
      long off = 0;
      for (auto& p : parts) {
        if (p.requires_grad())
          for (long i = 0; i < p.numel(); ++i) p.grad()[i] += y.grad()[off + i];
        off += p.numel();
      }
    });
  return y;
}

/// Stack same-shape tensors along a new leading axis.
template <class T>
Tensor<T> stack0(Tape<T>& tp, const std::vector<Tensor<T>>& parts) {
  check(!parts.empty(), "stack0: empty input");
  std::vector<int> oshape;
  oshape.push_back((int)parts.size());
  for (int e : parts[0].shape()) oshape.push_back(e);
  bool rg = false;
  std::vector<T> out;
  out.reserve(shape_numel(oshape));
  for (auto& p : parts) {
    check(p.shape() == parts[0].shape(), "stack0: shape mismatch");
    out.insert(out.end(), p.value().begin(), p.value().end());
    rg = rg || p.requires_grad();
  }
  auto y = tp.result(std::move(oshape), std::move(out), rg);
  if (rg)
    tp.record(parts, y, [parts, y] {
      long off = 0;
      for (auto& p : parts) {
        if (p.requires_grad())
          for (long i = 0; i < p.numel(); ++i) p.grad()[i] += y.grad()[off + i];
        off += p.numel();
      }
    });
  return y;
}

// ---------------------------------------------------------------------------
// reductions

template <class T>
Tensor<T> sum_all(Tape<T>& tp, const Tensor<T>& x) {
  T s = 0;
  for (T v : x.value()) s += v;
  auto y = tp.result({}, {s}, x.requires_grad());
  if (x.requires_grad())
    tp.record({x}, y, [x, y] {
      T g = y.grad()[0];
      for (auto& d : x.grad()) d += g;
    });
  return y;
}

template <class T>
Tensor<T> mean_all(Tape<T>& tp, const Tensor<T>& x) {
  check(x.numel() > 0, "mean_all: empty tensor");
  T s = 0;
  for (T v : x.value()) s += v;
  T inv = T(1) / T(x.numel());
  auto y = tp.result({}, {s * inv}, x.requires_grad());
  if (x.requires_grad())
    tp.record({x}, y, [x, y, inv] {
      T g = y.grad()[0] * inv;
      for (auto& d : x.grad()) d += g;
    });
  return y;
}

/// Population standard deviation over all elements. A single-element tensor
/// (or an exactly constant one) has sigma 0 with zero subgradient.
template <class T>
Tensor<T> std_all(Tape<T>& tp, const Tensor<T>& x) {
  check(x.numel() > 0, "std_all: empty tensor");
  long n = x.numel();
  T mu = 0;
  for (T v : x.value()) mu += v;
  mu /= T(n);
  T var = 0;
  for (T v : x.value()) var += (v - mu) * (v - mu);
  var /= T(n);
  T sd = std::sqrt(var);
  auto y = tp.result({}, {sd}, x.requires_grad());
  if (x.requires_grad())
    tp.record({x}, y, [x, y, mu, sd, n] {
      if (sd <= T(0)) return;
      T g = y.grad()[0] / (T(n) * sd);
      for (long i = 0; i < n; ++i) x.grad()[i] += g * (x.value()[i] - mu);
    });
  return y;
}

template <class T>
Tensor<T> reduce_axis(Tape<T>& tp, const Tensor<T>& x, int axis, bool mean) {
  int r = x.rank();
  check(axis >= 0 && axis < r, "reduce_axis: axis out of range");
  long outer = 1, inner = 1, ext = x.dim(axis);
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < r; ++i) inner *= x.dim(i);
  std::vector<int> oshape;
  for (int i = 0; i < r; ++i)
    if (i != axis) oshape.push_back(x.dim(i));
  T scale = mean ? T(1) / T(ext) : T(1);
  std::vector<T> out(outer * inner, T(0));
  for (long o = 0; o < outer; ++o)
    for (long e = 0; e < ext; ++e) {
      const T* v = x.value().data() + (o * ext + e) * inner;
      T* dst = out.data() + o * inner;
      for (long i = 0; i < inner; ++i) dst[i] += v[i];
    }
  if (mean)
    for (auto& v : out) v *= scale;
  auto y = tp.result(std::move(oshape), std::move(out), x.requires_grad());
  if (x.requires_grad())
    tp.record({x}, y, [x, y, outer, inner, ext, scale] {
      for (long o = 0; o < outer; ++o)
        for (long e = 0; e < ext; ++e) {
          T* dx = x.grad().data() + (o * ext + e) * inner;
          const T* g = y.grad().data() + o * inner;
          for (long i = 0; i < inner; ++i) dx[i] += g[i] * scale;
        }
    });
  return y;
}

template <class T>
Tensor<T> reduce_mean_axis(Tape<T>& tp, const Tensor<T>& x, int axis) {
  return reduce_axis(tp, x, axis, true);
}
template <class T>
Tensor<T> reduce_sum_axis(Tape<T>& tp, const Tensor<T>& x, int axis) {
  return reduce_axis(tp, x, axis, false);
}

template <class T>
Tensor<T> cumsum_last(Tape<T>& tp, const Tensor<T>& x) {
  long n = x.shape().back(), rows = x.numel() / n;
  std::vector<T> out(x.numel());
  for (long r = 0; r < rows; ++r) {
    T acc = 0;
    for (long j = 0; j < n; ++j) {
      acc += x.value()[r * n + j];
      out[r * n + j] = acc;
    }
  }
  auto y = tp.result(x.shape(), std::move(out), x.requires_grad());
  if (x.requires_grad())
    tp.record({x}, y, [x, y, rows, n] {
      for (long r = 0; r < rows; ++r) {
        T acc = 0;
        for (long j = n - 1; j >= 0; --j) {
          acc += y.grad()[r * n + j];
          x.grad()[r * n + j] += acc;
        }
      }
    });
  return y;
}

/// Mean negative log-likelihood of per-row log-probabilities at the labels.
template <class T>
Tensor<T> nll_loss(Tape<T>& tp, const Tensor<T>& logp, const std::vector<int>& labels) {
  check(logp.rank() == 2, "nll_loss: need [n, classes]");
  long n = logp.dim(0), c = logp.dim(1);
  check((long)labels.size() == n, "nll_loss: labels size mismatch");
  T s = 0;
  for (long i = 0; i < n; ++i) {
    check(labels[i] >= 0 && labels[i] < c, "nll_loss: label out of range");
    s -= logp.value()[i * c + labels[i]];
  }
  auto y = tp.result({}, {s / T(n)}, logp.requires_grad());
  if (logp.requires_grad())
    tp.record({logp}, y, [logp, y, labels, n, c] {
      T g = y.grad()[0] / T(n);
      for (long i = 0; i < n; ++i) logp.grad()[i * c + labels[i]] -= g;
    });
  return y;
}

// ---------------------------------------------------------------------------
// gradient checking

template <class T>
struct GradCheckReport {
  T max_rel_err = 0;   // over coordinates with max(|analytic|, |numeric|) > atol
  T max_tiny_abs = 0;  // |analytic - numeric| over the remaining coordinates
  long worst_input = -1;
  long worst_coord = -1;
  bool finite = true;
};

// Coordinates whose analytic and numeric derivatives are both below this
// floor carry no relative information (central differences bottom out at
// eps*|f|/h); they are compared absolutely instead. Structurally-zero
// gradients (softmax shift invariances and the like) land here.
inline constexpr double kGradCheckAtol = 1e-8;

/// Compares analytic gradients of `f` (a callable building a scalar from leaf
/// tensors on a fresh tape) against central finite differences
/// (f(x+h)-f(x-h))/(2h), coordinate-wise. The relative error denominator is
/// max(|analytic|, |numeric|, 1e-12).
template <class T, class F>
GradCheckReport<T> grad_check(F&& f, const std::vector<std::vector<T>>& points,
                              const std::vector<std::vector<int>>& shapes, T h) {
  check(h > T(0), "grad_check: step must be > 0");
  check(points.size() == shapes.size(), "grad_check: points/shapes mismatch");

  auto eval = [&](const std::vector<std::vector<T>>& vals, bool with_grad,
                  std::vector<std::vector<T>>* grads_out) -> T {
    Tape<T> tape;
    std::vector<Tensor<T>> leaves;
    leaves.reserve(vals.size());
    for (size_t i = 0; i < vals.size(); ++i)
      leaves.push_back(with_grad ? tape.leaf(shapes[i], vals[i])
                                 : tape.constant(shapes[i], vals[i]));
    Tensor<T> out = f(tape, leaves);
    check(out.numel() == 1, "grad_check: function must return a scalar");
    T v = out.value()[0];
    if (with_grad) {
      tape.backward(out);
      grads_out->clear();
      for (auto& l : leaves) grads_out->push_back(l.grad());
    }
    return v;
  };

  std::vector<std::vector<T>> analytic;
  T f0 = eval(points, true, &analytic);
  GradCheckReport<T> rep;
  if (!std::isfinite((double)f0)) {
    rep.finite = false;
    rep.max_rel_err = std::numeric_limits<T>::infinity();
    return rep;
  }

  auto work = points;
  for (size_t t = 0; t < points.size(); ++t) {
    for (size_t i = 0; i < points[t].size(); ++i) {
      T orig = work[t][i];
      work[t][i] = orig + h;
      T fp = eval(work, false, nullptr);
      work[t][i] = orig - h;
      T fm = eval(work, false, nullptr);
      work[t][i] = orig;
      if (!std::isfinite((double)fp) || !std::isfinite((double)fm)) {
        rep.finite = false;
        rep.max_rel_err = std::numeric_limits<T>::infinity();
        rep.worst_input = (long)t;
        rep.worst_coord = (long)i;
        return rep;
      }
      T num = (fp - fm) / (2 * h);
      T ana = analytic[t].empty() ? T(0) : analytic[t][i];
      if (std::max(std::abs(ana), std::abs(num)) <= (T)kGradCheckAtol) {
        rep.max_tiny_abs = std::max(rep.max_tiny_abs, std::abs(ana - num));
        continue;
      }
      T denom = std::max({std::abs(ana), std::abs(num), T(1e-12)});
      T rel = std::abs(ana - num) / denom;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_input = (long)t;
        rep.worst_coord = (long)i;
      }
    }
  }
  return rep;
}

/// Variant for persistent parameter tensors: `build` constructs the scalar on
/// a fresh tape from the same leaf tensors each call; their values are
/// perturbed in place for the finite differences.
template <class T, class F>
GradCheckReport<T> grad_check_params(F&& build, const std::vector<Tensor<T>>& params, T h) {
  check(h > T(0), "grad_check: step must be > 0");
  std::vector<std::vector<T>> analytic;
  T f0;
  {
    Tape<T> tape;
    for (auto& p : params) tape.watch(p);
    Tensor<T> out = build(tape);
    check(out.numel() == 1, "grad_check: function must return a scalar");
    f0 = out.value()[0];
    auto grads = tape.backward(out);
    for (auto& p : params) analytic.push_back(grads.at(p.id()));
  }
  GradCheckReport<T> rep;
  if (!std::isfinite((double)f0)) {
    rep.finite = false;
    rep.max_rel_err = std::numeric_limits<T>::infinity();
    return rep;
  }
  auto eval = [&]() -> T {
    Tape<T> tape;
    return build(tape).value()[0];
  };
  for (size_t t = 0; t < params.size(); ++t) {
    auto& vals = params[t].value();
    for (size_t i = 0; i < vals.size(); ++i) {
      T orig = vals[i];
      vals[i] = orig + h;
      T fp = eval();
      vals[i] = orig - h;
      T fm = eval();
      vals[i] = orig;
      if (!std::isfinite((double)fp) || !std::isfinite((double)fm)) {
        rep.finite = false;
        rep.max_rel_err = std::numeric_limits<T>::infinity();
        rep.worst_input = (long)t;
        rep.worst_coord = (long)i;
        return rep;
      }
      T num = (fp - fm) / (2 * h);
      T ana = analytic[t][i];
      if (std::max(std::abs(ana), std::abs(num)) <= (T)kGradCheckAtol) {
        rep.max_tiny_abs = std::max(rep.max_tiny_abs, std::abs(ana - num));
        continue;
      }
      T denom = std::max({std::abs(ana), std::abs(num), T(1e-12)});
      T rel = std::abs(ana - num) / denom;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_input = (long)t;
        rep.worst_coord = (long)i;
      }
    }
  }
  return rep;
}

}  // namespace uhn
