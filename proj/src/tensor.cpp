#include "partmem/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "partmem/errors.hpp"

namespace partmem::ad {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

[[noreturn]] void shape_error(const std::string& op, const std::string& detail) {
  throw std::invalid_argument(op + ": " + detail);
}

void require_same_tape(const std::string& op, const Var& a, const Var& b) {
  if (a.tape() == nullptr || b.tape() == nullptr)
    shape_error(op, "operand not bound to a tape");
  if (a.tape() != b.tape()) shape_error(op, "operands on different tapes");
}

}  // namespace

std::size_t Var::size() const { return numel(shape_); }

const std::vector<double>& Var::values() const {
  return tape_->node_values(node_);
}

double Var::scalar() const {
  const auto& v = values();
  if (v.size() != 1)
    throw std::invalid_argument("scalar: tensor has " + std::to_string(v.size()) +
                                " elements");
  return v[0];
}

bool Var::requires_grad() const { return tape_->node_requires_grad(node_); }

Var Var::reshape(Shape shape) const {
  if (numel(shape) != size())
    shape_error("reshape", "cannot view " + shape_str(shape_) + " as " + shape_str(shape));
  return Var(tape_, node_, std::move(shape));
}

Var Tape::leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  if (numel(shape) != values.size())
    shape_error("leaf", "shape " + shape_str(shape) + " does not match " +
                            std::to_string(values.size()) + " values");
  Node n;
  n.kind = "leaf";
  n.values = std::move(values);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1, std::move(shape));
}

Var Tape::constant(Shape shape, std::vector<double> values) {
  return leaf(std::move(shape), std::move(values), false);
}

Var Tape::scalar_constant(double value) { return constant({1}, {value}); }

Var Tape::record(std::string kind, const std::vector<int>& parents, Shape out_shape,
                 std::vector<double> out_values, BackwardFn backward) {
  if (numel(out_shape) != out_values.size())
    shape_error(kind, "output shape " + shape_str(out_shape) + " does not match " +
                          std::to_string(out_values.size()) + " values");
  bool needs_grad = false;
  for (int p : parents) {
    if (p < 0 || p >= static_cast<int>(nodes_.size()))
      shape_error(kind, "parent node out of range");
    needs_grad = needs_grad || nodes_[p].requires_grad;
  }
  Node n;
  n.kind = std::move(kind);
  n.parents = parents;
  n.values = std::move(out_values);
  n.requires_grad = needs_grad;
  if (needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1, std::move(out_shape));
}

void Tape::backward(const Var& output, std::vector<double> seed) {
  if (output.tape() != this)
    throw std::invalid_argument("backward: output not on this tape");
  const auto& out_node = nodes_[output.node()];
  if (seed.size() != out_node.values.size())
    shape_error("backward", "seed has " + std::to_string(seed.size()) +
                                " values, output has " +
                                std::to_string(out_node.values.size()));
  grads_.assign(nodes_.size(), {});
  if (!out_node.requires_grad) return;
  grads_[output.node()] = std::move(seed);
  for (int i = output.node(); i >= 0; --i) {
    if (grads_[i].empty()) continue;
    const Node& n = nodes_[i];
    if (n.backward) n.backward(grads_[i], *this);
  }
}

std::vector<double> Tape::grad(const Var& v) const {
  if (v.tape() != this) throw std::invalid_argument("grad: var not on this tape");
  if (static_cast<std::size_t>(v.node()) < grads_.size() && !grads_[v.node()].empty())
    return grads_[v.node()];
  return std::vector<double>(nodes_[v.node()].values.size(), 0.0);
}

std::vector<double>& Tape::grad_buffer(int node) {
  if (grads_.size() < nodes_.size()) grads_.resize(nodes_.size());
  if (grads_[node].empty()) grads_[node].assign(nodes_[node].values.size(), 0.0);
  return grads_[node];
}

const std::vector<double>& Tape::node_values(int node) const {
  return nodes_[node].values;
}

bool Tape::node_requires_grad(int node) const { return nodes_[node].requires_grad; }

const std::string& Tape::node_kind(int node) const { return nodes_[node].kind; }

void Tape::clear() {
  nodes_.clear();
  grads_.clear();
}

Var add(const Var& a, const Var& b) {
  require_same_tape("add", a, b);
  if (a.shape() != b.shape())
    shape_error("add", "shape mismatch " + shape_str(a.shape()) + " vs " +
                           shape_str(b.shape()));
  Tape& t = *a.tape();
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  int pa = a.node(), pb = b.node();
  return t.record("add", {pa, pb}, a.shape(), std::move(out),
                  [pa, pb](const std::vector<double>& g, Tape& tape) {
                    if (tape.node_requires_grad(pa)) {
                      auto& ga = tape.grad_buffer(pa);
                      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                    }
                    if (tape.node_requires_grad(pb)) {
                      auto& gb = tape.grad_buffer(pb);
                      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                    }
                  });
}

Var scale(const Var& a, double k) {
  if (a.tape() == nullptr) shape_error("scale", "operand not bound to a tape");
  Tape& t = *a.tape();
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * k;
  int pa = a.node();
  return t.record("scale", {pa}, a.shape(), std::move(out),
                  [pa, k](const std::vector<double>& g, Tape& tape) {
                    if (!tape.node_requires_grad(pa)) return;
                    auto& ga = tape.grad_buffer(pa);
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * k;
                  });
}

Var matmul(const Var& a, const Var& b) {
  require_same_tape("matmul", a, b);
  if (a.rank() != 2)
    shape_error("matmul", "left operand must be rank 2, got " + shape_str(a.shape()));
  const std::size_t m = a.shape()[0], k = a.shape()[1];
  const bool vec = b.rank() == 1;
  if (!vec && b.rank() != 2)
    shape_error("matmul", "right operand must be rank 1 or 2, got " + shape_str(b.shape()));
  const std::size_t bk = b.shape()[0];
  const std::size_t n = vec ? 1 : b.shape()[1];
  if (bk != k)
    shape_error("matmul", "inner dimensions differ: " + shape_str(a.shape()) + " x " +
                              shape_str(b.shape()));
  Tape& t = *a.tape();
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
    }
  Shape out_shape = vec ? Shape{m} : Shape{m, n};
  int pa = a.node(), pb = b.node();
  return t.record(
      "matmul", {pa, pb}, std::move(out_shape), std::move(out),
      [pa, pb, m, k, n](const std::vector<double>& g, Tape& tape) {
        const auto& av = tape.node_values(pa);
        const auto& bv = tape.node_values(pb);
        if (tape.node_requires_grad(pa)) {
          auto& ga = tape.grad_buffer(pa);  // dA = G B^T
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double s = 0.0;
              for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * bv[p * n + j];
              ga[i * k + p] += s;
            }
        }
        if (tape.node_requires_grad(pb)) {
          auto& gb = tape.grad_buffer(pb);  // dB = A^T G
          for (std::size_t p = 0; p < k; ++p)
            for (std::size_t j = 0; j < n; ++j) {
              double s = 0.0;
              for (std::size_t i = 0; i < m; ++i) s += av[i * k + p] * g[i * n + j];
              gb[p * n + j] += s;
            }
        }
      });
}

Var relu(const Var& a) {
  if (a.tape() == nullptr) shape_error("relu", "operand not bound to a tape");
  Tape& t = *a.tape();
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
  int pa = a.node();
  return t.record("relu", {pa}, a.shape(), std::move(out),
                  [pa](const std::vector<double>& g, Tape& tape) {
                    if (!tape.node_requires_grad(pa)) return;
                    const auto& xv = tape.node_values(pa);
                    auto& ga = tape.grad_buffer(pa);
                    for (std::size_t i = 0; i < g.size(); ++i)
                      if (xv[i] > 0.0) ga[i] += g[i];
                  });
}

Var mean_over_region(const Var& a, std::vector<std::size_t> axes) {
  if (a.tape() == nullptr) shape_error("mean_over_region", "operand not bound to a tape");
  if (axes.empty()) shape_error("mean_over_region", "no axes given");
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  const Shape& in = a.shape();
  for (std::size_t ax : axes)
    if (ax >= in.size())
      shape_error("mean_over_region", "axis " + std::to_string(ax) + " out of range for " +
                                          shape_str(in));
  std::vector<bool> reduced(in.size(), false);
  for (std::size_t ax : axes) reduced[ax] = true;
  Shape out_shape;
  for (std::size_t i = 0; i < in.size(); ++i)
    if (!reduced[i]) out_shape.push_back(in[i]);
  if (out_shape.empty()) out_shape = {1};

  // Map each input index to its output index once; reused by the backward.
  const std::size_t total = numel(in);
  const std::size_t out_total = numel(out_shape);
  std::vector<std::size_t> out_index(total);
  {
    std::vector<std::size_t> idx(in.size(), 0);
    for (std::size_t flat = 0; flat < total; ++flat) {
      std::size_t o = 0;
      for (std::size_t d = 0; d < in.size(); ++d)
        if (!reduced[d]) o = o * in[d] + idx[d];
      out_index[flat] = o;
      for (std::size_t d = in.size(); d-- > 0;) {
        if (++idx[d] < in[d]) break;
        idx[d] = 0;
      }
    }
  }
  const double group = static_cast<double>(total / out_total);
  const auto& av = a.values();
  std::vector<double> out(out_total, 0.0);
  for (std::size_t i = 0; i < total; ++i) out[out_index[i]] += av[i];
  for (double& v : out) v /= group;

  Tape& t = *a.tape();
  int pa = a.node();
  return t.record("mean_over_region", {pa}, std::move(out_shape), std::move(out),
                  [pa, group, out_index = std::move(out_index)](
                      const std::vector<double>& g, Tape& tape) {
                    if (!tape.node_requires_grad(pa)) return;
                    auto& ga = tape.grad_buffer(pa);
                    for (std::size_t i = 0; i < out_index.size(); ++i)
                      ga[i] += g[out_index[i]] / group;
                  });
}

Var l2_normalize(const Var& a) {
  if (a.tape() == nullptr) shape_error("l2_normalize", "operand not bound to a tape");
  Tape& t = *a.tape();
  const auto& av = a.values();
  double sq = 0.0;
  for (double v : av) sq += v * v;
  const double norm = std::sqrt(sq);
  std::vector<double> out(av.size(), 0.0);
  const bool degenerate = norm < kNormalizeGuard;
  if (!degenerate)
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] / norm;
  int pa = a.node();
  return t.record("l2_normalize", {pa}, a.shape(), std::move(out),
                  [pa, norm, degenerate](const std::vector<double>& g, Tape& tape) {
                    if (!tape.node_requires_grad(pa) || degenerate) return;
                    const auto& xv = tape.node_values(pa);
                    auto& ga = tape.grad_buffer(pa);
                    double ydotg = 0.0;
                    for (std::size_t i = 0; i < g.size(); ++i)
                      ydotg += (xv[i] / norm) * g[i];
                    for (std::size_t i = 0; i < g.size(); ++i)
                      ga[i] += (g[i] - (xv[i] / norm) * ydotg) / norm;
                  });
}

Var dot(const Var& a, const Var& b) {
  require_same_tape("dot", a, b);
  if (a.shape() != b.shape())
    shape_error("dot", "shape mismatch " + shape_str(a.shape()) + " vs " +
                           shape_str(b.shape()));
  Tape& t = *a.tape();
  const auto& av = a.values();
  const auto& bv = b.values();
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
  int pa = a.node(), pb = b.node();
  return t.record("dot", {pa, pb}, {1}, {s},
                  [pa, pb](const std::vector<double>& g, Tape& tape) {
                    const double g0 = g[0];
                    const auto& av = tape.node_values(pa);
                    const auto& bv = tape.node_values(pb);
                    if (tape.node_requires_grad(pa)) {
                      auto& ga = tape.grad_buffer(pa);
                      for (std::size_t i = 0; i < av.size(); ++i) ga[i] += g0 * bv[i];
                    }
                    if (tape.node_requires_grad(pb)) {
                      auto& gb = tape.grad_buffer(pb);
                      for (std::size_t i = 0; i < bv.size(); ++i) gb[i] += g0 * av[i];
                    }
                  });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) shape_error("concat", "no inputs");
  Tape& t = *parts[0].tape();
  const Shape& first = parts[0].shape();
  if (axis >= first.size())
    shape_error("concat", "axis " + std::to_string(axis) + " out of range for " +
                              shape_str(first));
  std::size_t axis_total = 0;
  for (const Var& p : parts) {
    require_same_tape("concat", parts[0], p);
    if (p.rank() != first.size())
      shape_error("concat", "rank mismatch " + shape_str(first) + " vs " +
                                shape_str(p.shape()));
    for (std::size_t d = 0; d < first.size(); ++d)
      if (d != axis && p.shape()[d] != first[d])
        shape_error("concat", "shape mismatch " + shape_str(first) + " vs " +
                                  shape_str(p.shape()));
    axis_total += p.shape()[axis];
  }
  Shape out_shape = first;
  out_shape[axis] = axis_total;

  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];

  std::vector<double> out(numel(out_shape));
  std::vector<int> parent_ids;
  std::vector<std::size_t> axis_sizes;
  parent_ids.reserve(parts.size());
  axis_sizes.reserve(parts.size());
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const std::size_t pa = p.shape()[axis];
    const auto& pv = p.values();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy(pv.begin() + o * pa * inner, pv.begin() + (o + 1) * pa * inner,
                out.begin() + (o * axis_total + offset) * inner);
    parent_ids.push_back(p.node());
    axis_sizes.push_back(pa);
    offset += pa;
  }
  return t.record(
      "concat", parent_ids, std::move(out_shape), std::move(out),
      [parent_ids, axis_sizes, outer, inner, axis_total](const std::vector<double>& g,
                                                         Tape& tape) {
        std::size_t offset = 0;
        for (std::size_t pi = 0; pi < parent_ids.size(); ++pi) {
          const std::size_t pa = axis_sizes[pi];
          if (tape.node_requires_grad(parent_ids[pi])) {
            auto& gp = tape.grad_buffer(parent_ids[pi]);
            for (std::size_t o = 0; o < outer; ++o) {
              const double* src = g.data() + (o * axis_total + offset) * inner;
              double* dst = gp.data() + o * pa * inner;
              for (std::size_t i = 0; i < pa * inner; ++i) dst[i] += src[i];
            }
          }
          offset += pa;
        }
      });
}

Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end) {
  if (a.tape() == nullptr) shape_error("slice", "operand not bound to a tape");
  const Shape& in = a.shape();
  if (axis >= in.size())
    shape_error("slice", "axis " + std::to_string(axis) + " out of range for " +
                             shape_str(in));
  if (begin >= end || end > in[axis])
    shape_error("slice", "range [" + std::to_string(begin) + "," + std::to_string(end) +
                             ") invalid for axis " + std::to_string(axis) + " of " +
                             shape_str(in));
  Shape out_shape = in;
  out_shape[axis] = end - begin;
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= in[d];
  for (std::size_t d = axis + 1; d < in.size(); ++d) inner *= in[d];
  const std::size_t span = end - begin;
  const std::size_t in_axis = in[axis];

  const auto& av = a.values();
  std::vector<double> out(numel(out_shape));
  for (std::size_t o = 0; o < outer; ++o)
    std::copy(av.begin() + (o * in_axis + begin) * inner,
              av.begin() + (o * in_axis + end) * inner, out.begin() + o * span * inner);
  Tape& t = *a.tape();
  int pa = a.node();
  return t.record("slice", {pa}, std::move(out_shape), std::move(out),
                  [pa, outer, inner, span, in_axis, begin](const std::vector<double>& g,
                                                           Tape& tape) {
                    if (!tape.node_requires_grad(pa)) return;
                    auto& ga = tape.grad_buffer(pa);
                    for (std::size_t o = 0; o < outer; ++o) {
                      const double* src = g.data() + o * span * inner;
                      double* dst = ga.data() + (o * in_axis + begin) * inner;
                      for (std::size_t i = 0; i < span * inner; ++i) dst[i] += src[i];
                    }
                  });
}

double finite_diff_check(const ScalarFn& fn, const Shape& shape,
                         const std::vector<double>& x, double step) {
  if (step <= 0.0) throw std::invalid_argument("finite_diff_check: step must be > 0");
  if (numel(shape) != x.size())
    throw std::invalid_argument("finite_diff_check: shape " + shape_str(shape) +
                                " does not match " + std::to_string(x.size()) + " values");

  auto eval = [&](const std::vector<double>& point, std::size_t coord) {
    Tape tape;
    Var in = tape.leaf(shape, point, false);
    double y = fn(tape, in).scalar();
    if (!std::isfinite(y))
      throw NumericError("finite_diff_check: non-finite value while perturbing coordinate " +
                         std::to_string(coord));
    return y;
  };

  Tape tape;
  Var in = tape.leaf(shape, x, true);
  Var out = fn(tape, in);
  if (out.size() != 1)
    throw std::invalid_argument("finite_diff_check: function output is not scalar");
  if (!std::isfinite(out.scalar()))
    throw NumericError("finite_diff_check: non-finite value at the base point");
  tape.backward(out, {1.0});
  const std::vector<double> analytic = tape.grad(in);

  double max_rel = 0.0;
  std::vector<double> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(analytic[i]))
      throw NumericError("finite_diff_check: non-finite gradient at coordinate " +
                         std::to_string(i));
    probe[i] = x[i] + step;
    const double fp = eval(probe, i);
    probe[i] = x[i] - step;
    const double fm = eval(probe, i);
    probe[i] = x[i];
    const double central = (fp - fm) / (2.0 * step);
    const double rel = std::abs(analytic[i] - central) / std::max(1.0, std::abs(analytic[i]));
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace partmem::ad
