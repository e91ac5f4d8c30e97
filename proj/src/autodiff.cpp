#include "pqda/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pqda/errors.hpp"

namespace pqda::ad {

namespace {

// y += a x over non-overlapping ranges.
inline void axpy(double a, const double* __restrict x, double* __restrict y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

constexpr double kPowFloor = 1e-12;

double sigmoid_of(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

} // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::param: return "param";
    case Op::input: return "input";
    case Op::affine: return "affine";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::scale: return "scale";
    case Op::tanh: return "tanh";
    case Op::sigmoid: return "sigmoid";
    case Op::concat: return "concat";
    case Op::norm: return "norm";
    case Op::pow_abs: return "pow_abs";
    case Op::sum: return "sum";
  }
  return "?";
}

void Tape::bind(std::span<const double> params) {
  clear();
  params_ = params;
}

void Tape::clear() {
  nodes_.clear();
  args_.clear();
  values_.clear();
}

Var Tape::push(Op op, std::size_t size, std::span<const std::uint32_t> args) {
  Node n{};
  n.op = op;
  n.size = static_cast<std::uint32_t>(size);
  n.first_arg = static_cast<std::uint32_t>(args_.size());
  n.n_args = static_cast<std::uint32_t>(args.size());
  n.value_offset = values_.size();
  n.b_offset = no_bias;
  args_.insert(args_.end(), args.begin(), args.end());
  values_.resize(values_.size() + size);
  nodes_.push_back(n);
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

void Tape::check_finite(std::uint32_t i) const {
  const double* v = val(i);
  for (std::size_t k = 0; k < nodes_[i].size; ++k) {
    if (!std::isfinite(v[k])) {
      throw NumericalError("non-finite value at tape node " + std::to_string(i) + " (" +
                           op_name(nodes_[i].op) + ")");
    }
  }
}

void Tape::require_same(Var a, Var b, const char* what) const {
  if (nodes_[a.index].size != nodes_[b.index].size) {
    throw std::invalid_argument(std::string(what) + ": operand sizes differ (" +
                                std::to_string(nodes_[a.index].size) + " vs " +
                                std::to_string(nodes_[b.index].size) + ")");
  }
}

Var Tape::param(std::size_t offset, std::size_t size) {
  if (offset + size > params_.size()) throw std::out_of_range("param slice outside bound parameters");
  Var v = push(Op::param, size, {});
  nodes_[v.index].w_offset = offset;
  std::copy_n(params_.data() + offset, size, val(v.index));
  check_finite(v.index);
  return v;
}

Var Tape::input(std::span<const double> values) {
  Var v = push(Op::input, values.size(), {});
  std::copy(values.begin(), values.end(), val(v.index));
  check_finite(v.index);
  return v;
}

Var Tape::constant(double value) { return input(std::span<const double>(&value, 1)); }

Var Tape::affine(std::size_t w_offset, std::size_t b_offset, std::size_t rows, std::size_t cols, Var x) {
  if (nodes_[x.index].size != cols) throw std::invalid_argument("affine: input size does not match columns");
  if (w_offset + rows * cols > params_.size() || (b_offset != no_bias && b_offset + rows > params_.size())) {
    throw std::out_of_range("affine: weights outside bound parameters");
  }
  const std::uint32_t arg = x.index;
  Var v = push(Op::affine, rows, std::span<const std::uint32_t>(&arg, 1));
  Node& n = nodes_[v.index];
  n.w_offset = w_offset;
  n.b_offset = b_offset;
  n.rows = static_cast<std::uint32_t>(rows);
  n.cols = static_cast<std::uint32_t>(cols);
  const double* w = params_.data() + w_offset;
  const double* xv = val(x.index);
  double* out = val(v.index);
  for (std::size_t r = 0; r < rows; ++r) {
    const double bias = b_offset == no_bias ? 0.0 : params_[b_offset + r];
    out[r] = bias + dot(w + r * cols, xv, cols);
  }
  check_finite(v.index);
  return v;
}

Var Tape::add(Var a, Var b) {
  require_same(a, b, "add");
  const std::uint32_t args[2] = {a.index, b.index};
  Var v = push(Op::add, size(a), args);
  const double *x = val(a.index), *y = val(b.index);
  double* out = val(v.index);
  for (std::size_t i = 0; i < size(a); ++i) out[i] = x[i] + y[i];
  check_finite(v.index);
  return v;
}

Var Tape::sub(Var a, Var b) {
  require_same(a, b, "sub");
  const std::uint32_t args[2] = {a.index, b.index};
  Var v = push(Op::sub, size(a), args);
  const double *x = val(a.index), *y = val(b.index);
  double* out = val(v.index);
  for (std::size_t i = 0; i < size(a); ++i) out[i] = x[i] - y[i];
  check_finite(v.index);
  return v;
}

Var Tape::mul(Var a, Var b) {
  require_same(a, b, "mul");
  const std::uint32_t args[2] = {a.index, b.index};
  Var v = push(Op::mul, size(a), args);
  const double *x = val(a.index), *y = val(b.index);
  double* out = val(v.index);
  for (std::size_t i = 0; i < size(a); ++i) out[i] = x[i] * y[i];
  check_finite(v.index);
  return v;
}

Var Tape::scale(Var a, double factor) {
  const std::uint32_t arg = a.index;
  Var v = push(Op::scale, size(a), std::span<const std::uint32_t>(&arg, 1));
  nodes_[v.index].coef = factor;
  const double* x = val(a.index);
  double* out = val(v.index);
  for (std::size_t i = 0; i < size(a); ++i) out[i] = factor * x[i];
  check_finite(v.index);
  return v;
}

Var Tape::tanh(Var a) {
  const std::uint32_t arg = a.index;
  Var v = push(Op::tanh, size(a), std::span<const std::uint32_t>(&arg, 1));
  const double* x = val(a.index);
  double* out = val(v.index);
  for (std::size_t i = 0; i < size(a); ++i) out[i] = std::tanh(x[i]);
  return v;
}

Var Tape::sigmoid(Var a) {
  const std::uint32_t arg = a.index;
  Var v = push(Op::sigmoid, size(a), std::span<const std::uint32_t>(&arg, 1));
  const double* x = val(a.index);
  double* out = val(v.index);
  for (std::size_t i = 0; i < size(a); ++i) out[i] = sigmoid_of(x[i]);
  return v;
}

Var Tape::concat(std::span<const Var> parts) {
  std::size_t total = 0;
  std::vector<std::uint32_t> args;
  args.reserve(parts.size());
  for (Var p : parts) {
    total += size(p);
    args.push_back(p.index);
  }
  Var v = push(Op::concat, total, args);
  double* out = val(v.index);
  for (Var p : parts) {
    const double* x = val(p.index);
    out = std::copy_n(x, size(p), out);
  }
  return v;
}

Var Tape::norm(Var a) {
  const std::uint32_t arg = a.index;
  Var v = push(Op::norm, 1, std::span<const std::uint32_t>(&arg, 1));
  const double* x = val(a.index);
  double acc = 0.0;
  for (std::size_t i = 0; i < size(a); ++i) acc += x[i] * x[i];
  *val(v.index) = std::sqrt(acc);
  check_finite(v.index);
  return v;
}

Var Tape::pow_abs(Var a, double beta) {
  if (size(a) != 1) throw std::invalid_argument("pow_abs: operand must be scalar");
  const std::uint32_t arg = a.index;
  Var v = push(Op::pow_abs, 1, std::span<const std::uint32_t>(&arg, 1));
  nodes_[v.index].coef = beta;
  const double base = std::max(std::abs(*val(a.index)), kPowFloor);
  *val(v.index) = std::pow(base, beta);
  check_finite(v.index);
  return v;
}

Var Tape::sum(std::span<const Var> terms) {
  std::vector<std::uint32_t> args;
  args.reserve(terms.size());
  double acc = 0.0;
  for (Var t : terms) {
    if (size(t) != 1) throw std::invalid_argument("sum: terms must be scalar");
    args.push_back(t.index);
    acc += *val(t.index);
  }
  Var v = push(Op::sum, 1, args);
  *val(v.index) = acc;
  check_finite(v.index);
  return v;
}

std::span<const double> Tape::value(Var v) const { return {val(v.index), nodes_[v.index].size}; }

double Tape::scalar(Var v) const {
  if (nodes_[v.index].size != 1) throw std::invalid_argument("node is not scalar");
  return *val(v.index);
}

void Tape::backward(Var out, std::span<double> grad) {
  std::fill(grad.begin(), grad.end(), 0.0);
  accumulate_gradient(out, 1.0, grad);
}

void Tape::accumulate_gradient(Var out, double weight, std::span<double> grad) {
  if (grad.size() != params_.size()) throw std::invalid_argument("gradient length differs from parameter count");
  if (nodes_[out.index].size != 1) throw std::invalid_argument("backward: output must be scalar");
  adjoints_.assign(values_.size(), 0.0);
  adjoints_[nodes_[out.index].value_offset] = weight;
  last_visits_ = 0;

  for (std::int64_t i = out.index; i >= 0; --i) {
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    ++last_visits_;
    const double* dy = adjoints_.data() + n.value_offset;
    const double* y = values_.data() + n.value_offset;
    const std::uint32_t* args = args_.data() + n.first_arg;
    auto adj = [&](std::uint32_t k) { return adjoints_.data() + nodes_[k].value_offset; };

    switch (n.op) {
      case Op::param:
        for (std::size_t k = 0; k < n.size; ++k) grad[n.w_offset + k] += dy[k];
        break;
      case Op::input:
        break;
      case Op::affine: {
        const double* x = val(args[0]);
        double* dx = adj(args[0]);
        const double* w = params_.data() + n.w_offset;
        double* dw = grad.data() + n.w_offset;
        // Inputs are constants, so their adjoints are never read.
        const bool need_dx = nodes_[args[0]].op != Op::input;
        for (std::size_t r = 0; r < n.rows; ++r) {
          const double d = dy[r];
          if (d == 0.0) continue;
          axpy(d, x, dw + r * n.cols, n.cols);
          if (need_dx) axpy(d, w + r * n.cols, dx, n.cols);
          if (n.b_offset != no_bias) grad[n.b_offset + r] += d;
        }
        break;
      }
      case Op::add: {
        double *da = adj(args[0]), *db = adj(args[1]);
        for (std::size_t k = 0; k < n.size; ++k) {
          da[k] += dy[k];
          db[k] += dy[k];
        }
        break;
      }
      case Op::sub: {
        double *da = adj(args[0]), *db = adj(args[1]);
        for (std::size_t k = 0; k < n.size; ++k) {
          da[k] += dy[k];
          db[k] -= dy[k];
        }
        break;
      }
      case Op::mul: {
        const double *a = val(args[0]), *b = val(args[1]);
        double *da = adj(args[0]), *db = adj(args[1]);
        for (std::size_t k = 0; k < n.size; ++k) {
          da[k] += dy[k] * b[k];
          db[k] += dy[k] * a[k];
        }
        break;
      }
      case Op::scale: {
        double* da = adj(args[0]);
        for (std::size_t k = 0; k < n.size; ++k) da[k] += n.coef * dy[k];
        break;
      }
      case Op::tanh: {
        double* da = adj(args[0]);
        for (std::size_t k = 0; k < n.size; ++k) da[k] += dy[k] * (1.0 - y[k] * y[k]);
        break;
      }
      case Op::sigmoid: {
        double* da = adj(args[0]);
        for (std::size_t k = 0; k < n.size; ++k) da[k] += dy[k] * y[k] * (1.0 - y[k]);
        break;
      }
      case Op::concat: {
        std::size_t pos = 0;
        for (std::uint32_t a = 0; a < n.n_args; ++a) {
          double* da = adj(args[a]);
          const std::size_t len = nodes_[args[a]].size;
          for (std::size_t k = 0; k < len; ++k) da[k] += dy[pos + k];
          pos += len;
        }
        break;
      }
      case Op::norm: {
        // The subgradient at the origin is taken as zero.
        if (y[0] > 0.0) {
          const double* x = val(args[0]);
          double* dx = adj(args[0]);
          const std::size_t len = nodes_[args[0]].size;
          for (std::size_t k = 0; k < len; ++k) dx[k] += dy[0] * x[k] / y[0];
        }
        break;
      }
      case Op::pow_abs: {
        const double x = *val(args[0]);
        const double base = std::max(std::abs(x), kPowFloor);
        const double sign = x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0);
        *adj(args[0]) += dy[0] * n.coef * std::pow(base, n.coef - 1.0) * sign;
        break;
      }
      case Op::sum:
        for (std::uint32_t a = 0; a < n.n_args; ++a) *adj(args[a]) += dy[0];
        break;
    }
  }
}

// ---------------------------------------------------------------------------

namespace {

Var emit(Tape& tape, const Instruction& ins, const std::vector<Var>& done,
         std::span<const std::vector<double>> inputs) {
  auto arg = [&](std::size_t k) {
    if (k >= ins.args.size()) throw std::invalid_argument(ins.op + ": missing operand");
    const int idx = ins.args[k];
    if (idx < 0 || static_cast<std::size_t>(idx) >= done.size()) {
      throw std::invalid_argument(ins.op + ": operand must refer to an earlier instruction");
    }
    return done[static_cast<std::size_t>(idx)];
  };
  auto all_args = [&] {
    std::vector<Var> out;
    for (std::size_t k = 0; k < ins.args.size(); ++k) out.push_back(arg(k));
    return out;
  };

  const std::string& op = ins.op;
  if (op == "param") return tape.param(ins.offset, ins.size);
  if (op == "input") {
    if (ins.size >= inputs.size()) throw std::invalid_argument("input: index out of range");
    return tape.input(inputs[ins.size]);
  }
  if (op == "affine") return tape.affine(ins.offset, ins.bias_offset, ins.rows, ins.cols, arg(0));
  if (op == "add") return tape.add(arg(0), arg(1));
  if (op == "sub") return tape.sub(arg(0), arg(1));
  if (op == "mul") return tape.mul(arg(0), arg(1));
  if (op == "scale") return tape.scale(arg(0), ins.coef);
  if (op == "tanh") return tape.tanh(arg(0));
  if (op == "sigmoid") return tape.sigmoid(arg(0));
  if (op == "concat") {
    auto parts = all_args();
    return tape.concat(parts);
  }
  if (op == "norm") return tape.norm(arg(0));
  if (op == "pow_abs") {
    // The unit exponent goes through the norm path.
    if (ins.coef == 1.0) return tape.norm(arg(0));
    return tape.pow_abs(arg(0), ins.coef);
  }
  if (op == "sum") {
    auto terms = all_args();
    return tape.sum(terms);
  }
  throw UnsupportedPrimitive(op);
}

double evaluate_only(const Program& program, std::span<const double> params,
                     std::span<const std::vector<double>> inputs, Tape& tape) {
  tape.bind(params);
  std::vector<Var> done;
  done.reserve(program.size());
  for (const auto& ins : program) done.push_back(emit(tape, ins, done, inputs));
  return tape.scalar(done.back());
}

} // namespace

ValueAndGradient forward_backward(const Program& program, std::span<const double> params,
                                  std::span<const std::vector<double>> inputs) {
  if (program.empty()) throw std::invalid_argument("empty program");
  Tape tape;
  tape.bind(params);
  std::vector<Var> done;
  done.reserve(program.size());
  for (const auto& ins : program) done.push_back(emit(tape, ins, done, inputs));
  ValueAndGradient out;
  out.value = tape.scalar(done.back());
  out.grad.assign(params.size(), 0.0);
  tape.backward(done.back(), out.grad);
  for (std::size_t i = 0; i < out.grad.size(); ++i) {
    if (!std::isfinite(out.grad[i])) throw NumericalError("non-finite gradient at parameter " + std::to_string(i));
  }
  return out;
}

double grad_check(const Program& program, std::span<const double> params,
                  std::span<const std::vector<double>> inputs, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("grad_check: step must be positive");
  const auto analytic = forward_backward(program, params, inputs);
  std::vector<double> probe(params.begin(), params.end());
  Tape tape;
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + step;
    const double up = evaluate_only(program, probe, inputs, tape);
    probe[i] = saved - step;
    const double down = evaluate_only(program, probe, inputs, tape);
    probe[i] = saved;
    const double fd = (up - down) / (2.0 * step);
    const double err = std::abs(analytic.grad[i] - fd) / std::max(1.0, std::abs(analytic.grad[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

} // namespace pqda::ad
