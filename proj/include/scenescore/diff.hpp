#pragma once

// Minimal reverse-mode differentiation over a static tape of tensor ops.
//
// A Tape records structure only. Leaf values are supplied per evaluation
// through Bindings, so a tape built once can be evaluated repeatedly (and
// concurrently) with different inputs. There is no broadcasting: every op
// checks its input shapes at evaluation time and throws ShapeError naming
// the offending op index.

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scenescore/errors.hpp"

namespace scenescore::diff {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);

// Dense row-major tensor of rank 1 or 2.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor vector(std::vector<double> v);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  // Rank-1 tensors are treated as a single row.
  std::size_t rows() const noexcept { return shape_.size() == 2 ? shape_[0] : 1; }
  std::size_t cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }

  bool all_finite() const noexcept;
  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Handle to a node recorded on a tape.
struct NodeRef {
  std::size_t index = 0;
  bool operator==(const NodeRef&) const = default;
};

enum class OpKind : std::uint8_t {
  Leaf,
  Constant,
  MatMul,
  BiasAdd,
  Add,
  Sub,
  Mul,
  Scale,
  LeakyRelu,
  Concat,
  SumSets,
  LogSumExp,
  Neg,
  Sin,
  Cos,
};

const char* op_name(OpKind kind);

class Tape {
 public:
  // Differentiable input bound at evaluation time.
  NodeRef leaf(std::string name);
  NodeRef constant(Tensor value);

  // [m,k]x[k,n] -> [m,n]; a rank-1 lhs [k] yields [n]; a rank-1 rhs [k] yields [m].
  NodeRef matmul(NodeRef a, NodeRef b);
  // x [m,n] or [n] plus bias [n] added to every row.
  NodeRef bias_add(NodeRef x, NodeRef bias);
  NodeRef add(NodeRef a, NodeRef b);
  NodeRef sub(NodeRef a, NodeRef b);
  NodeRef mul(NodeRef a, NodeRef b);
  NodeRef scale(NodeRef x, double factor);
  NodeRef leaky_relu(NodeRef x, double negative_slope);
  // Rank-1 inputs are joined end to end; rank-2 inputs with equal row
  // counts are joined column-wise.
  NodeRef concat(std::vector<NodeRef> parts);
  // Sum of all rows: [m,n] -> [n], [m] -> [1].
  NodeRef sum_rows(NodeRef x);
  // Row k of the result is the sum of the rows of x listed in sets[k]:
  // [m,n] -> [sets.size(), n]. Summation order is canonical (values are
  // sorted per column), so the result does not depend on set order.
  NodeRef sum_sets(NodeRef x, std::vector<std::vector<std::size_t>> sets);
  // log(sum(exp(x))) over all entries -> [1].
  NodeRef log_sum_exp(NodeRef x);
  NodeRef neg(NodeRef x);
  NodeRef sin(NodeRef x);
  NodeRef cos(NodeRef x);

  std::size_t size() const noexcept { return records_.size(); }
  NodeRef root() const;
  OpKind kind(NodeRef n) const { return records_.at(n.index).kind; }
  bool is_leaf(NodeRef n) const;
  std::size_t leaf_count() const noexcept { return leaf_nodes_.size(); }
  const std::string& leaf_name(NodeRef n) const;
  std::optional<NodeRef> find_leaf(const std::string& name) const;

  struct Record {
    OpKind kind;
    std::vector<std::size_t> inputs;
    double scalar = 0.0;
    std::size_t aux = 0;  // leaf slot, constant index or set-table index
  };
  const Record& record(std::size_t i) const { return records_[i]; }
  const Tensor& constant_value(std::size_t aux) const { return constants_[aux]; }
  const std::vector<std::vector<std::size_t>>& set_table(std::size_t aux) const {
    return set_tables_[aux];
  }

 private:
  NodeRef push(Record r);
  void check_input(NodeRef n) const;

  std::vector<Record> records_;
  std::vector<Tensor> constants_;
  std::vector<std::vector<std::vector<std::size_t>>> set_tables_;
  std::vector<std::size_t> leaf_nodes_;
  std::vector<std::string> leaf_names_;
};

// Non-owning association of leaf nodes to values. Bound tensors must
// outlive every evaluation that uses them.
class Bindings {
 public:
  explicit Bindings(const Tape& tape);
  Bindings& bind(NodeRef leaf, const Tensor& value);
  const Tensor* slot(std::size_t s) const { return slots_[s]; }

 private:
  const Tape* tape_;
  std::vector<const Tensor*> slots_;
};

// Forward values of every node, kept for a subsequent backward pass.
class Evaluation {
 public:
  Evaluation(std::vector<Tensor> owned, std::vector<const Tensor*> view)
      : owned_(std::move(owned)), view_(std::move(view)) {}
  const Tensor& value(NodeRef n) const { return *view_[n.index]; }
  const Tensor& root() const { return *view_.back(); }

 private:
  std::vector<Tensor> owned_;
  std::vector<const Tensor*> view_;
};

Evaluation forward(const Tape& tape, const Bindings& bindings);

// Root value. Throws ShapeError / NumericError / InvalidArgument (unbound leaf).
Tensor evaluate(const Tape& tape, const Bindings& bindings);

// d(root)/d(target) for each target, scaled by `seed`. The root must hold a
// single value. Targets must be leaves.
std::vector<Tensor> backward(const Tape& tape, const Evaluation& eval,
                             std::span<const NodeRef> targets, double seed = 1.0);

std::vector<Tensor> gradient(const Tape& tape, const Bindings& bindings,
                             std::span<const NodeRef> targets);

}  // namespace scenescore::diff
