#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "ci4gi/tensor.hpp"

namespace ci4gi {

enum class OpKind : std::uint8_t {
  Leaf,
  Constant,
  Add,
  Sub,
  Mul,
  Div,
  Exp,
  Log,
  Sigmoid,
  LeakyRelu,
  Softplus,
  Scale,
  AddScalar,
  MatMul,
  SpMM,
  Transpose,
  RowSum,
  RowMean,
  L2NormalizeRows,
  SegmentSoftmax,
  SegmentSum,
  GatherRows,
  ConcatRows,
  SliceRows,
  AddBias,
  ScaleRows,
  Sum,
  Cosine,
};

std::string_view op_name(OpKind kind);

using NodeId = std::int32_t;
inline constexpr NodeId kNoNode = -1;

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  NodeId id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr && id_ != kNoNode; }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  NodeId id_ = kNoNode;
};

/// Ordered record of operations. Nodes are appended in evaluation order, so the
/// record is topologically sorted by construction. Each backward closure captures
/// only what its rule needs (input ids, index arrays, constants); forward values
/// are read back from the tape.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  explicit Tape(bool record = true) : recording_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return recording_; }

  Var leaf(Tensor value);
  Var constant(Tensor value);

  // Appends an op result. The closure is dropped when no input requires grad or
  // the tape is not recording.
  Var record(OpKind kind, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(OpKind kind, Tensor value, const std::vector<Var>& inputs, BackwardFn backward);

  const Tensor& value(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
  bool requires_grad(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)).requires_grad; }
  OpKind kind(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)).kind; }
  std::span<const NodeId> inputs(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)).inputs; }
  std::size_t size() const noexcept { return nodes_.size(); }
  // Id the next recorded node will receive.
  NodeId next_id() const noexcept { return static_cast<NodeId>(nodes_.size()); }

  // Seeds d(loss)/d(loss) = 1 and propagates in reverse order. Every tracked leaf
  // ends with a gradient of its own shape (zero when unreachable).
  void backward(Var loss);

  // nullptr for untracked nodes or nodes the loss does not depend on.
  const Tensor* grad(Var v) const;

  // Used by backward closures.
  void accumulate(NodeId id, const Tensor& g);

 private:
  struct Node {
    OpKind kind;
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<NodeId> inputs;
    BackwardFn backward;
  };

  bool recording_;
  // deque keeps references to earlier values stable while new nodes are appended
  std::deque<Node> nodes_;
};

using IndexArray = std::shared_ptr<const std::vector<std::size_t>>;
inline IndexArray make_index(std::vector<std::size_t> idx) {
  return std::make_shared<const std::vector<std::size_t>>(std::move(idx));
}

// Elementwise. Binary ops require equal shapes, except that a single-element
// rank-0 operand is broadcast against the other.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var exp(Var a);
Var log(Var a);
Var sigmoid(Var a);
Var leaky_relu(Var a, double slope = 0.2);
Var softplus(Var a);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);

// Matrix algebra.
Var matmul(Var a, Var b);
Var spmm(std::shared_ptr<const SparseMatrix> s, Var b);
Var transpose(Var a);

// Row-wise reductions and normalizers.
Var row_sum(Var a);   // [n x d] -> [n x 1]
Var row_mean(Var a);  // [n x d] -> [n x 1]
Var l2_normalize_rows(Var a);
// Softmax of a column of logits within each segment. Every segment in
// [0, n_segments) must be non-empty.
Var segment_softmax(Var logits, IndexArray segment_ids, std::size_t n_segments);
// out[s] = sum of rows with segment id s.
Var segment_sum(Var a, IndexArray segment_ids, std::size_t n_segments);

// Structural.
Var gather_rows(Var a, IndexArray rows);
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(Var a, std::size_t begin, std::size_t end);
Var add_bias(Var a, Var bias);     // bias has a.cols() elements, added to every row
Var scale_rows(Var a, Var weights);  // weights [n x 1]; row i multiplied by weights[i]
Var sum(Var a);                      // scalar
Var cosine(Var a, Var b);            // vectors of equal length -> scalar

namespace testing {
// Flips the sign of the gradient flowing through every node of the given kind
// during backward. Used by mutation tests of the gradient checker.
void inject_backward_sign_fault(OpKind kind);
void clear_backward_faults();
}  // namespace testing

}  // namespace ci4gi
