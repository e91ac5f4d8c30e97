#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pqda::ad {

using ParamVector = std::vector<double>;

/// Dot product with four interleaved partial sums, so the compiler can keep
/// the loop in vector registers without reassociating. Every matrix-vector
/// product in the library goes through here, which keeps the tape and the
/// plain forward pass bit-identical.
inline double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

enum class Op : std::uint8_t {
  param,
  input,
  affine,
  add,
  sub,
  mul,
  scale,
  tanh,
  sigmoid,
  concat,
  norm,
  pow_abs,
  sum,
};

const char* op_name(Op op);

class UnsupportedPrimitive : public std::invalid_argument {
public:
  explicit UnsupportedPrimitive(const std::string& name)
      : std::invalid_argument("unsupported primitive: " + name), primitive(name) {}
  std::string primitive;
};

// Handle to a node on a tape.
struct Var {
  std::uint32_t index = 0;
};

/// Reverse-mode tape over vector-valued nodes.
///
/// Nodes are evaluated eagerly as they are appended, so operand indices are
/// always smaller than the node's own index. Parameters are bound once per
/// recording; affine nodes read their weights and biases directly from the
/// bound parameter vector by offset, and `backward` accumulates into a
/// gradient of the same length.
///
/// clear() keeps all allocations, so a tape can be reused across many
/// recordings on the same thread.
class Tape {
public:
  static constexpr std::size_t no_bias = static_cast<std::size_t>(-1);

  void bind(std::span<const double> params);
  void clear();

  Var param(std::size_t offset, std::size_t size);
  Var input(std::span<const double> values);
  Var constant(double value);

  /// y = W x + b, W row-major rows x cols at params[w_offset], b at params[b_offset].
  Var affine(std::size_t w_offset, std::size_t b_offset, std::size_t rows, std::size_t cols, Var x);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double factor);
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var concat(std::span<const Var> parts);
  Var norm(Var a);
  /// |a|^beta of a scalar node; the base is clamped at 1e-12.
  Var pow_abs(Var a, double beta);
  /// Sum of scalar nodes.
  Var sum(std::span<const Var> terms);

  std::span<const double> value(Var v) const;
  double scalar(Var v) const;
  std::size_t size(Var v) const { return nodes_[v.index].size; }
  std::size_t node_count() const { return nodes_.size(); }

  /// Gradient of the scalar node `out` with respect to the bound parameters.
  /// Writes into `grad` (overwritten, length = bound parameter count).
  void backward(Var out, std::span<double> grad);

  /// Same, but adds `weight * d out / d params` into `grad`.
  void accumulate_gradient(Var out, double weight, std::span<double> grad);

  /// Number of nodes visited by the most recent backward sweep.
  std::size_t last_sweep_visits() const { return last_visits_; }

private:
  struct Node {
    Op op;
    std::uint32_t size;
    std::uint32_t first_arg;
    std::uint32_t n_args;
    std::size_t value_offset;
    std::size_t w_offset;
    std::size_t b_offset;
    std::uint32_t rows;
    std::uint32_t cols;
    double coef;
  };

  Var push(Op op, std::size_t size, std::span<const std::uint32_t> args);
  double* val(std::uint32_t i) { return values_.data() + nodes_[i].value_offset; }
  const double* val(std::uint32_t i) const { return values_.data() + nodes_[i].value_offset; }
  void check_finite(std::uint32_t i) const;
  void require_same(Var a, Var b, const char* what) const;

  std::span<const double> params_;
  std::vector<Node> nodes_;
  std::vector<std::uint32_t> args_;
  std::vector<double> values_;
  std::vector<double> adjoints_;
  std::size_t last_visits_ = 0;
};

// ---------------------------------------------------------------------------
// Instruction-list programs, interpreted onto a tape.

struct Instruction {
  std::string op;               // primitive name
  std::vector<int> args;        // operand instruction indices
  std::size_t offset = 0;       // param: start; affine: weight start
  std::size_t size = 0;         // param: length; input: index into inputs
  std::size_t bias_offset = Tape::no_bias;
  std::size_t rows = 0, cols = 0;
  double coef = 0.0;            // scale factor or exponent
};

// The last instruction is the program's scalar output.
using Program = std::vector<Instruction>;

struct ValueAndGradient {
  double value = 0.0;
  ParamVector grad;
};

ValueAndGradient forward_backward(const Program& program, std::span<const double> params,
                                  std::span<const std::vector<double>> inputs);

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
double grad_check(const Program& program, std::span<const double> params,
                  std::span<const std::vector<double>> inputs, double step);

} // namespace pqda::ad
