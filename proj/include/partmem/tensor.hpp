#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace partmem::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

// Handle to a value recorded on a tape. The flat double array lives in the
// tape node; the shape is view metadata carried by the handle, so reshape
// never touches the tape.
class Var {
 public:
  Var() = default;

  const Shape& shape() const { return shape_; }
  std::size_t size() const;
  std::size_t rank() const { return shape_.size(); }
  const std::vector<double>& values() const;
  double scalar() const;
  bool requires_grad() const;
  bool valid() const { return tape_ != nullptr; }

  // Same node, new shape; element counts must match.
  Var reshape(Shape shape) const;

  Tape* tape() const { return tape_; }
  int node() const { return node_; }

 private:
  friend class Tape;
  Var(Tape* tape, int node, Shape shape)
      : tape_(tape), node_(node), shape_(std::move(shape)) {}

  Tape* tape_ = nullptr;
  int node_ = -1;
  Shape shape_;
};

// Reverse-mode tape. Nodes are appended in evaluation order, so creation
// order is a topological order and one reverse sweep visits each node once.
// A tape belongs to a single training step and a single thread.
class Tape {
 public:
  using BackwardFn = std::function<void(const std::vector<double>& out_grad, Tape& tape)>;

  Var leaf(Shape shape, std::vector<double> values, bool requires_grad = false);
  Var constant(Shape shape, std::vector<double> values);
  Var scalar_constant(double value);

  // Records one operation. `backward` pulls `out_grad` into the parents'
  // buffers via grad_buffer(); it is dropped when no parent needs gradients.
  Var record(std::string kind, const std::vector<int>& parents, Shape out_shape,
             std::vector<double> out_values, BackwardFn backward);

  // Seeds the output with `seed` and sweeps the tape in reverse. Gradients
  // from a previous backward call are discarded.
  void backward(const Var& output, std::vector<double> seed);

  // Gradient of a var after backward(); zeros if it never received one.
  std::vector<double> grad(const Var& v) const;

  std::vector<double>& grad_buffer(int node);
  const std::vector<double>& node_values(int node) const;
  bool node_requires_grad(int node) const;
  const std::string& node_kind(int node) const;

  std::size_t node_count() const { return nodes_.size(); }
  void clear();

 private:
  struct Node {
    std::string kind;
    std::vector<int> parents;
    std::vector<double> values;
    bool requires_grad = false;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
};

// Supported op kinds. Shape mismatches throw std::invalid_argument naming
// the op and the offending shapes.
Var add(const Var& a, const Var& b);
Var scale(const Var& a, double k);
Var matmul(const Var& a, const Var& b);  // [m,k]x[k,n] -> [m,n], [m,k]x[k] -> [m]
Var relu(const Var& a);
Var mean_over_region(const Var& a, std::vector<std::size_t> axes);
Var l2_normalize(const Var& a);  // zero vector (zero gradient) below norm 1e-12
Var dot(const Var& a, const Var& b);
Var concat(std::span<const Var> parts, std::size_t axis);
Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end);

inline constexpr double kNormalizeGuard = 1e-12;

// Scalar-valued function of one tensor input, built on a caller-supplied tape.
using ScalarFn = std::function<Var(Tape&, const Var&)>;

// Compares the tape gradient of `fn` at `x` against central differences.
// Returns max over coordinates of |analytic - central| / max(1, |analytic|).
// Throws NumericError naming the coordinate if an evaluation is non-finite.
double finite_diff_check(const ScalarFn& fn, const Shape& shape,
                         const std::vector<double>& x, double step);

}  // namespace partmem::ad
