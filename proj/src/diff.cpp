#include "scenescore/diff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace scenescore::diff {

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

std::size_t product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

}  // namespace

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.empty() || shape_.size() > 2)
    throw InvalidArgument("tensor rank must be 1 or 2, got shape " + to_string(shape_));
  if (product(shape_) != data_.size())
    throw InvalidArgument("tensor shape " + to_string(shape_) + " does not match " +
                          std::to_string(data_.size()) + " values");
}

Tensor Tensor::zeros(Shape shape) {
  const std::size_t n = product(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::vector(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
  return Tensor({rows, cols}, std::move(data));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  std::vector<double> data;
  const std::size_t cols = rows.size() ? rows.begin()->size() : 0;
  for (const auto& r : rows) {
    if (r.size() != cols) throw InvalidArgument("ragged matrix literal");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), cols}, std::move(data));
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Constant: return "constant";
    case OpKind::MatMul: return "matmul";
    case OpKind::BiasAdd: return "bias_add";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::LeakyRelu: return "leaky_relu";
    case OpKind::Concat: return "concat";
    case OpKind::SumSets: return "sum_sets";
    case OpKind::LogSumExp: return "log_sum_exp";
    case OpKind::Neg: return "neg";
    case OpKind::Sin: return "sin";
    case OpKind::Cos: return "cos";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Tape construction

NodeRef Tape::push(Record r) {
  for (std::size_t in : r.inputs) check_input(NodeRef{in});
  records_.push_back(std::move(r));
  return NodeRef{records_.size() - 1};
}

void Tape::check_input(NodeRef n) const {
  if (n.index >= records_.size())
    throw InvalidArgument("node " + std::to_string(n.index) + " is not on this tape");
}

NodeRef Tape::leaf(std::string name) {
  if (find_leaf(name)) throw InvalidArgument("duplicate leaf name '" + name + "'");
  Record r{OpKind::Leaf, {}, 0.0, leaf_nodes_.size()};
  leaf_nodes_.push_back(records_.size());
  leaf_names_.push_back(std::move(name));
  return push(std::move(r));
}

NodeRef Tape::constant(Tensor value) {
  constants_.push_back(std::move(value));
  return push({OpKind::Constant, {}, 0.0, constants_.size() - 1});
}

NodeRef Tape::matmul(NodeRef a, NodeRef b) { return push({OpKind::MatMul, {a.index, b.index}}); }
NodeRef Tape::bias_add(NodeRef x, NodeRef bias) {
  return push({OpKind::BiasAdd, {x.index, bias.index}});
}
NodeRef Tape::add(NodeRef a, NodeRef b) { return push({OpKind::Add, {a.index, b.index}}); }
NodeRef Tape::sub(NodeRef a, NodeRef b) { return push({OpKind::Sub, {a.index, b.index}}); }
NodeRef Tape::mul(NodeRef a, NodeRef b) { return push({OpKind::Mul, {a.index, b.index}}); }
NodeRef Tape::scale(NodeRef x, double factor) {
  return push({OpKind::Scale, {x.index}, factor});
}
NodeRef Tape::leaky_relu(NodeRef x, double negative_slope) {
  return push({OpKind::LeakyRelu, {x.index}, negative_slope});
}
NodeRef Tape::concat(std::vector<NodeRef> parts) {
  if (parts.empty()) throw InvalidArgument("concat of zero tensors");
  Record r{OpKind::Concat, {}};
  for (auto p : parts) r.inputs.push_back(p.index);
  return push(std::move(r));
}
NodeRef Tape::sum_rows(NodeRef x) {
  set_tables_.push_back({});
  // scalar = 1 marks the flattening single-set form; the table is filled at
  // evaluation time because the row count is only known then.
  return push({OpKind::SumSets, {x.index}, 1.0, set_tables_.size() - 1});
}
NodeRef Tape::sum_sets(NodeRef x, std::vector<std::vector<std::size_t>> sets) {
  set_tables_.push_back(std::move(sets));
  return push({OpKind::SumSets, {x.index}, 0.0, set_tables_.size() - 1});
}
NodeRef Tape::log_sum_exp(NodeRef x) { return push({OpKind::LogSumExp, {x.index}}); }
NodeRef Tape::neg(NodeRef x) { return push({OpKind::Neg, {x.index}}); }
NodeRef Tape::sin(NodeRef x) { return push({OpKind::Sin, {x.index}}); }
NodeRef Tape::cos(NodeRef x) { return push({OpKind::Cos, {x.index}}); }

NodeRef Tape::root() const {
  if (records_.empty()) throw InvalidArgument("empty tape has no root");
  return NodeRef{records_.size() - 1};
}

bool Tape::is_leaf(NodeRef n) const {
  return n.index < records_.size() && records_[n.index].kind == OpKind::Leaf;
}

const std::string& Tape::leaf_name(NodeRef n) const {
  if (!is_leaf(n)) throw InvalidArgument("node " + std::to_string(n.index) + " is not a leaf");
  return leaf_names_[records_[n.index].aux];
}

std::optional<NodeRef> Tape::find_leaf(const std::string& name) const {
  for (std::size_t i = 0; i < leaf_names_.size(); ++i)
    if (leaf_names_[i] == name) return NodeRef{leaf_nodes_[i]};
  return std::nullopt;
}

Bindings::Bindings(const Tape& tape) : tape_(&tape), slots_(tape.leaf_count(), nullptr) {}

Bindings& Bindings::bind(NodeRef leaf, const Tensor& value) {
  if (!tape_->is_leaf(leaf))
    throw InvalidArgument("cannot bind node " + std::to_string(leaf.index) + ": not a leaf");
  slots_[tape_->record(leaf.index).aux] = &value;
  return *this;
}

// ---------------------------------------------------------------------------
// Kernels

namespace {

struct MatView {
  std::size_t rows, cols;
};

MatView lhs_view(const Tensor& t) { return {t.rows(), t.cols()}; }
MatView rhs_view(const Tensor& t) {
  return t.rank() == 1 ? MatView{t.size(), 1} : MatView{t.shape()[0], t.shape()[1]};
}

// c[m,n] += a[m,k] * b[k,n]. Each output entry accumulates over k in order,
// independent of its row position.
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
              std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// da[m,k] += dc[m,n] * b[k,n]^T, via a transposed copy of b so the inner
// loop runs over contiguous memory.
void gemm_acc_bt(const double* dc, const double* b, double* da, std::size_t m, std::size_t k,
                 std::size_t n) {
  std::vector<double> bt(k * n);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  gemm_acc(dc, bt.data(), da, m, n, k);
}

// db[k,n] += a[m,k]^T * dc[m,n]
void gemm_acc_at(const double* a, const double* dc, double* db, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* drow = dc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* dbrow = db + p * n;
      for (std::size_t j = 0; j < n; ++j) dbrow[j] += av * drow[j];
    }
  }
}

std::vector<std::vector<std::size_t>> all_rows(std::size_t m) {
  std::vector<std::size_t> s(m);
  std::iota(s.begin(), s.end(), std::size_t{0});
  return {std::move(s)};
}

const std::vector<std::vector<std::size_t>>& sets_for(
    const Tape& tape, const Tape::Record& r, std::size_t rows,
    std::vector<std::vector<std::size_t>>& scratch) {
  if (r.scalar != 0.0) {
    scratch = all_rows(rows);
    return scratch;
  }
  return tape.set_table(r.aux);
}

Tensor compute(const Tape& tape, std::size_t idx, const Tape::Record& r,
               const std::vector<const Tensor*>& v) {
  auto in = [&](std::size_t k) -> const Tensor& { return *v[r.inputs[k]]; };
  auto fail = [&](const std::string& msg) { return ShapeError(idx, std::string(op_name(r.kind)) + ": " + msg); };

  switch (r.kind) {
    case OpKind::MatMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (a.rank() == 1 && b.rank() == 1) throw fail("both operands are rank 1");
      const MatView av = lhs_view(a);
      const MatView bv = rhs_view(b);
      if (av.cols != bv.rows)
        throw fail("inner dimensions differ: " + to_string(a.shape()) + " x " +
                   to_string(b.shape()));
      Shape out;
      if (a.rank() == 1) out = {bv.cols};
      else if (b.rank() == 1) out = {av.rows};
      else out = {av.rows, bv.cols};
      Tensor c = Tensor::zeros(out);
      gemm_acc(a.data().data(), b.data().data(), c.data().data(), av.rows, av.cols, bv.cols);
      return c;
    }
    case OpKind::BiasAdd: {
      const Tensor& x = in(0);
      const Tensor& b = in(1);
      if (b.rank() != 1 || b.size() != x.cols())
        throw fail("bias " + to_string(b.shape()) + " does not match " + to_string(x.shape()));
      Tensor y = x;
      const std::size_t n = x.cols();
      for (std::size_t i = 0; i < y.size(); ++i) y[i] += b[i % n];
      return y;
    }
    case OpKind::Add:
    case OpKind::Sub:
    case OpKind::Mul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (a.shape() != b.shape())
        throw fail("shapes differ: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
      Tensor y = a;
      if (r.kind == OpKind::Add)
        for (std::size_t i = 0; i < y.size(); ++i) y[i] += b[i];
      else if (r.kind == OpKind::Sub)
        for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b[i];
      else
        for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b[i];
      return y;
    }
    case OpKind::Scale: {
      Tensor y = in(0);
      for (double& e : y.data()) e *= r.scalar;
      return y;
    }
    case OpKind::LeakyRelu: {
      Tensor y = in(0);
      for (double& e : y.data()) e = e > 0.0 ? e : r.scalar * e;
      return y;
    }
    case OpKind::Neg: {
      Tensor y = in(0);
      for (double& e : y.data()) e = -e;
      return y;
    }
    case OpKind::Sin: {
      Tensor y = in(0);
      for (double& e : y.data()) e = std::sin(e);
      return y;
    }
    case OpKind::Cos: {
      Tensor y = in(0);
      for (double& e : y.data()) e = std::cos(e);
      return y;
    }
    case OpKind::Concat: {
      const Tensor& first = in(0);
      if (first.rank() == 1) {
        std::vector<double> out;
        for (std::size_t k = 0; k < r.inputs.size(); ++k) {
          if (in(k).rank() != 1) throw fail("mixed ranks");
          out.insert(out.end(), in(k).data().begin(), in(k).data().end());
        }
        return Tensor::vector(std::move(out));
      }
      const std::size_t rows = first.shape()[0];
      std::size_t cols = 0;
      for (std::size_t k = 0; k < r.inputs.size(); ++k) {
        if (in(k).rank() != 2 || in(k).shape()[0] != rows)
          throw fail("part " + std::to_string(k) + " has shape " + to_string(in(k).shape()) +
                     ", expected " + std::to_string(rows) + " rows");
        cols += in(k).shape()[1];
      }
      Tensor y = Tensor::zeros({rows, cols});
      std::size_t offset = 0;
      for (std::size_t k = 0; k < r.inputs.size(); ++k) {
        const Tensor& p = in(k);
        const std::size_t pc = p.shape()[1];
        for (std::size_t i = 0; i < rows; ++i)
          std::copy_n(p.data().data() + i * pc, pc, y.data().data() + i * cols + offset);
        offset += pc;
      }
      return y;
    }
    case OpKind::SumSets: {
      const Tensor& x = in(0);
      const std::size_t rows = x.rank() == 2 ? x.shape()[0] : x.size();
      const std::size_t cols = x.rank() == 2 ? x.shape()[1] : 1;
      std::vector<std::vector<std::size_t>> scratch;
      const auto& sets = sets_for(tape, r, rows, scratch);
      Tensor y = r.scalar != 0.0 ? Tensor::zeros({cols}) : Tensor::zeros({sets.size(), cols});
      std::vector<double> buf;
      for (std::size_t s = 0; s < sets.size(); ++s) {
        for (std::size_t row : sets[s])
          if (row >= rows) throw fail("set references row " + std::to_string(row) + " of " + std::to_string(rows));
        for (std::size_t c = 0; c < cols; ++c) {
          buf.clear();
          for (std::size_t row : sets[s]) buf.push_back(x.data()[row * cols + c]);
          std::sort(buf.begin(), buf.end());
          double acc = 0.0;
          for (double e : buf) acc += e;
          y[s * cols + c] = acc;
        }
      }
      return y;
    }
    case OpKind::LogSumExp: {
      const Tensor& x = in(0);
      if (x.size() == 0) throw fail("empty input");
      const double m = *std::max_element(x.data().begin(), x.data().end());
      if (!std::isfinite(m)) throw NumericError("op " + std::to_string(idx) + " log_sum_exp: non-finite input");
      double s = 0.0;
      for (double e : x.data()) s += std::exp(e - m);
      return Tensor::scalar(m + std::log(s));
    }
    case OpKind::Leaf:
    case OpKind::Constant:
      break;
  }
  throw fail("unexpected op");
}

}  // namespace

Evaluation forward(const Tape& tape, const Bindings& bindings) {
  const std::size_t n = tape.size();
  std::vector<Tensor> owned(n);
  std::vector<const Tensor*> view(n, nullptr);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = tape.record(i);
    if (r.kind == OpKind::Leaf) {
      const Tensor* t = bindings.slot(r.aux);
      if (!t) throw InvalidArgument("leaf '" + tape.leaf_name(NodeRef{i}) + "' is not bound");
      view[i] = t;
    } else if (r.kind == OpKind::Constant) {
      view[i] = &tape.constant_value(r.aux);
    } else {
      owned[i] = compute(tape, i, r, view);
      if (!owned[i].all_finite())
        throw NumericError("op " + std::to_string(i) + " (" + op_name(r.kind) +
                           ") produced a non-finite value");
      view[i] = &owned[i];
    }
  }
  return Evaluation(std::move(owned), std::move(view));
}

Tensor evaluate(const Tape& tape, const Bindings& bindings) {
  return forward(tape, bindings).root();
}

std::vector<Tensor> backward(const Tape& tape, const Evaluation& eval,
                             std::span<const NodeRef> targets, double seed) {
  const std::size_t n = tape.size();
  const NodeRef root = tape.root();
  if (eval.root().size() != 1)
    throw InvalidArgument("gradient requires a single-valued root, got shape " +
                          to_string(eval.root().shape()));

  std::vector<char> needs(n, 0);
  for (NodeRef t : targets) {
    if (!tape.is_leaf(t))
      throw InvalidArgument("gradient target node " + std::to_string(t.index) + " is not a leaf");
    needs[t.index] = 1;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = tape.record(i);
    for (std::size_t in : r.inputs)
      if (needs[in]) needs[i] = 1;
  }

  std::vector<Tensor> adj(n);
  auto adjoint_of = [&](std::size_t i) -> Tensor& {
    if (adj[i].size() == 0 && eval.value(NodeRef{i}).size() != 0)
      adj[i] = Tensor::zeros(eval.value(NodeRef{i}).shape());
    return adj[i];
  };

  if (needs[root.index]) {
    adjoint_of(root.index)[0] = seed;
  }

  for (std::size_t ii = n; ii-- > 0;) {
    if (!needs[ii] || adj[ii].size() == 0) continue;
    const auto& r = tape.record(ii);
    if (r.kind == OpKind::Leaf || r.kind == OpKind::Constant) continue;
    const Tensor& g = adj[ii];
    auto x = [&](std::size_t k) -> const Tensor& { return eval.value(NodeRef{r.inputs[k]}); };
    auto want = [&](std::size_t k) { return needs[r.inputs[k]] != 0; };

    switch (r.kind) {
      case OpKind::MatMul: {
        const Tensor& a = x(0);
        const Tensor& b = x(1);
        const MatView av = lhs_view(a);
        const MatView bv = rhs_view(b);
        if (want(0))
          gemm_acc_bt(g.data().data(), b.data().data(), adjoint_of(r.inputs[0]).data().data(),
                      av.rows, av.cols, bv.cols);
        if (want(1))
          gemm_acc_at(a.data().data(), g.data().data(), adjoint_of(r.inputs[1]).data().data(),
                      av.rows, av.cols, bv.cols);
        break;
      }
      case OpKind::BiasAdd: {
        if (want(0)) {
          Tensor& d = adjoint_of(r.inputs[0]);
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
        }
        if (want(1)) {
          Tensor& d = adjoint_of(r.inputs[1]);
          const std::size_t c = d.size();
          for (std::size_t i = 0; i < g.size(); ++i) d[i % c] += g[i];
        }
        break;
      }
      case OpKind::Add:
      case OpKind::Sub: {
        const double sign = r.kind == OpKind::Add ? 1.0 : -1.0;
        if (want(0)) {
          Tensor& d = adjoint_of(r.inputs[0]);
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
        }
        if (want(1)) {
          Tensor& d = adjoint_of(r.inputs[1]);
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += sign * g[i];
        }
        break;
      }
      case OpKind::Mul: {
        if (want(0)) {
          Tensor& d = adjoint_of(r.inputs[0]);
          const Tensor& b = x(1);
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * b[i];
        }
        if (want(1)) {
          Tensor& d = adjoint_of(r.inputs[1]);
          const Tensor& a = x(0);
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * a[i];
        }
        break;
      }
      case OpKind::Scale: {
        Tensor& d = adjoint_of(r.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += r.scalar * g[i];
        break;
      }
      case OpKind::LeakyRelu: {
        // At x == 0 the negative-slope branch is used.
        Tensor& d = adjoint_of(r.inputs[0]);
        const Tensor& a = x(0);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += (a[i] > 0.0 ? 1.0 : r.scalar) * g[i];
        break;
      }
      case OpKind::Neg: {
        Tensor& d = adjoint_of(r.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
        break;
      }
      case OpKind::Sin: {
        Tensor& d = adjoint_of(r.inputs[0]);
        const Tensor& a = x(0);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += std::cos(a[i]) * g[i];
        break;
      }
      case OpKind::Cos: {
        Tensor& d = adjoint_of(r.inputs[0]);
        const Tensor& a = x(0);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] -= std::sin(a[i]) * g[i];
        break;
      }
      case OpKind::Concat: {
        const bool flat = x(0).rank() == 1;
        const std::size_t rows = flat ? 1 : x(0).shape()[0];
        const std::size_t cols = g.size() / std::max<std::size_t>(rows, 1);
        std::size_t offset = 0;
        for (std::size_t k = 0; k < r.inputs.size(); ++k) {
          const std::size_t pc = flat ? x(k).size() : x(k).shape()[1];
          if (want(k)) {
            Tensor& d = adjoint_of(r.inputs[k]);
            for (std::size_t i = 0; i < rows; ++i)
              for (std::size_t c = 0; c < pc; ++c) d[i * pc + c] += g[i * cols + offset + c];
          }
          offset += pc;
        }
        break;
      }
      case OpKind::SumSets: {
        const Tensor& a = x(0);
        const std::size_t rows = a.rank() == 2 ? a.shape()[0] : a.size();
        const std::size_t cols = a.rank() == 2 ? a.shape()[1] : 1;
        std::vector<std::vector<std::size_t>> scratch;
        const auto& sets = sets_for(tape, r, rows, scratch);
        Tensor& d = adjoint_of(r.inputs[0]);
        for (std::size_t s = 0; s < sets.size(); ++s)
          for (std::size_t row : sets[s])
            for (std::size_t c = 0; c < cols; ++c) d[row * cols + c] += g[s * cols + c];
        break;
      }
      case OpKind::LogSumExp: {
        const Tensor& a = x(0);
        const double lse = eval.value(NodeRef{ii})[0];
        Tensor& d = adjoint_of(r.inputs[0]);
        for (std::size_t i = 0; i < a.size(); ++i) d[i] += std::exp(a[i] - lse) * g[0];
        break;
      }
      case OpKind::Leaf:
      case OpKind::Constant:
        break;
    }
  }

  std::vector<Tensor> out;
  out.reserve(targets.size());
  for (NodeRef t : targets) {
    if (adj[t.index].size() == 0 && eval.value(t).size() != 0)
      out.push_back(Tensor::zeros(eval.value(t).shape()));
    else
      out.push_back(adj[t.index]);
  }
  return out;
}

std::vector<Tensor> gradient(const Tape& tape, const Bindings& bindings,
                             std::span<const NodeRef> targets) {
  for (NodeRef t : targets)
    if (!tape.is_leaf(t))
      throw InvalidArgument("gradient target node " + std::to_string(t.index) + " is not a leaf");
  return backward(tape, forward(tape, bindings), targets);
}

}  // namespace scenescore::diff
