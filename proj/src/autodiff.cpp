#include "ci4gi/autodiff.hpp"

#include <atomic>
#include <string>

#include "ci4gi/errors.hpp"

namespace ci4gi {

namespace {

std::atomic<int> g_fault_kind{-1};

}  // namespace

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Constant: return "constant";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Div: return "div";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::LeakyRelu: return "leaky_relu";
    case OpKind::Softplus: return "softplus";
    case OpKind::Scale: return "scale";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::MatMul: return "matmul";
    case OpKind::SpMM: return "spmm";
    case OpKind::Transpose: return "transpose";
    case OpKind::RowSum: return "row_sum";
    case OpKind::RowMean: return "row_mean";
    case OpKind::L2NormalizeRows: return "l2_normalize_rows";
    case OpKind::SegmentSoftmax: return "segment_softmax";
    case OpKind::SegmentSum: return "segment_sum";
    case OpKind::GatherRows: return "gather_rows";
    case OpKind::ConcatRows: return "concat_rows";
    case OpKind::SliceRows: return "slice_rows";
    case OpKind::AddBias: return "add_bias";
    case OpKind::ScaleRows: return "scale_rows";
    case OpKind::Sum: return "sum";
    case OpKind::Cosine: return "cosine";
  }
  return "unknown";
}

const Tensor& Var::value() const {
  if (!valid()) throw UsageError("value() on an unbound Var");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return valid() && tape_->requires_grad(id_); }

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{OpKind::Leaf, std::move(value), {}, false, recording_, {}, {}});
  return Var(this, static_cast<NodeId>(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{OpKind::Constant, std::move(value), {}, false, false, {}, {}});
  return Var(this, static_cast<NodeId>(nodes_.size() - 1));
}

Var Tape::record(OpKind kind, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(kind, std::move(value), std::vector<Var>(inputs), std::move(backward));
}

Var Tape::record(OpKind kind, Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
  Node node{kind, std::move(value), {}, false, false, {}, {}};
  for (const Var& v : inputs) {
    if (v.tape() != this) throw UsageError(std::string(op_name(kind)) + ": input recorded on a different tape");
    node.inputs.push_back(v.id());
    node.requires_grad = node.requires_grad || requires_grad(v.id());
  }
  node.requires_grad = node.requires_grad && recording_;
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<NodeId>(nodes_.size() - 1));
}

void Tape::accumulate(NodeId id, const Tensor& g) {
  Node& n = nodes_.at(static_cast<std::size_t>(id));
  if (!n.requires_grad) return;
  if (g.size() != n.value.size()) {
    throw DimensionError(std::string("gradient shape ") + shape_string(g.shape()) + " does not match value " +
                         shape_string(n.value.shape()) + " of " + std::string(op_name(n.kind)));
  }
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape(), std::vector<double>(g.data().begin(), g.data().end()));
    n.has_grad = true;
    return;
  }
  auto dst = n.grad.data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void Tape::backward(Var loss) {
  if (loss.tape() != this || !loss.valid()) throw UsageError("backward: loss not recorded on this tape");
  if (!requires_grad(loss.id())) throw UsageError("backward on an untracked node");
  if (loss.value().size() != 1) {
    throw UsageError("backward requires a scalar loss, got " + shape_string(loss.value().shape()));
  }
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  accumulate(loss.id(), Tensor(loss.value().shape(), 1.0));
  const int fault = g_fault_kind.load();
  for (NodeId id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.has_grad || !n.backward) continue;
    if (fault >= 0 && static_cast<int>(n.kind) == fault) {
      Tensor flipped = n.grad;
      for (auto& v : flipped.data()) v = -v;
      n.backward(*this, flipped);
    } else {
      n.backward(*this, n.grad);
    }
  }
  for (auto& n : nodes_) {
    if (n.kind == OpKind::Leaf && n.requires_grad && !n.has_grad) {
      n.grad = Tensor(n.value.shape());
      n.has_grad = true;
    }
  }
}

const Tensor* Tape::grad(Var v) const {
  if (v.tape() != this || !v.valid()) return nullptr;
  const Node& n = nodes_.at(static_cast<std::size_t>(v.id()));
  return n.has_grad ? &n.grad : nullptr;
}

namespace testing {
void inject_backward_sign_fault(OpKind kind) { g_fault_kind.store(static_cast<int>(kind)); }
void clear_backward_faults() { g_fault_kind.store(-1); }
}  // namespace testing

}  // namespace ci4gi
