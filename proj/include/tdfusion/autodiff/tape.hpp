#pragma once

#include <cstdint>
#include <functional>
#include <string_view>
#include <vector>

#include "tdfusion/autodiff/tensor.hpp"

namespace tdfusion::autodiff {

enum class OpKind : std::uint8_t {
  Leaf,
  Add,
  Sub,
  Mul,
  Scale,
  Shift,
  Square,
  Abs,
  Maximum,
  Relu,
  Sigmoid,
  Sum,
  Expand,
  Reshape,
  MatMul,
  Transpose,
  ReflectPad,
  ReflectPadAdjoint,
  Conv,
  ConvInputGrad,
  ConvWeightGrad,
  BiasBroadcast,
  BiasReduce,
  ChannelSum,
  ChannelBroadcast,
  Concat,
  SliceChannels,
  EmbedChannels,
  Softmax,
  CrossEntropy,
};

inline std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::Shift: return "shift";
    case OpKind::Square: return "square";
    case OpKind::Abs: return "abs";
    case OpKind::Maximum: return "maximum";
    case OpKind::Relu: return "relu";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Sum: return "sum";
    case OpKind::Expand: return "expand";
    case OpKind::Reshape: return "reshape";
    case OpKind::MatMul: return "matmul";
    case OpKind::Transpose: return "transpose";
    case OpKind::ReflectPad: return "reflect_pad";
    case OpKind::ReflectPadAdjoint: return "reflect_pad_adjoint";
    case OpKind::Conv: return "conv";
    case OpKind::ConvInputGrad: return "conv_input_grad";
    case OpKind::ConvWeightGrad: return "conv_weight_grad";
    case OpKind::BiasBroadcast: return "bias_broadcast";
    case OpKind::BiasReduce: return "bias_reduce";
    case OpKind::ChannelSum: return "channel_sum";
    case OpKind::ChannelBroadcast: return "channel_broadcast";
    case OpKind::Concat: return "concat";
    case OpKind::SliceChannels: return "slice_channels";
    case OpKind::EmbedChannels: return "embed_channels";
    case OpKind::Softmax: return "softmax";
    case OpKind::CrossEntropy: return "cross_entropy";
  }
  return "unknown";
}

/// Maps the upstream gradient of a node to one gradient per parent.
/// Entries may be undefined tensors when a parent receives nothing.
using BackwardFn = std::function<std::vector<Tensor>(const Tensor& upstream)>;

struct Node {
  OpKind kind = OpKind::Leaf;
  std::vector<NodeId> parents;  // kNoNode for constant inputs
  BackwardFn backward;
  bool retain = false;  // backward through this node was itself recorded
};

namespace detail {
inline thread_local int no_record_depth = 0;
}

inline bool recording_enabled() { return detail::no_record_depth == 0; }

/// While alive, ops produce constants even when their inputs sit on a tape.
class NoRecordGuard {
 public:
  NoRecordGuard() { ++detail::no_record_depth; }
  ~NoRecordGuard() { --detail::no_record_depth; }
  NoRecordGuard(const NoRecordGuard&) = delete;
  NoRecordGuard& operator=(const NoRecordGuard&) = delete;
};

/// Append-only record of operations. Parents always precede children.
///
/// Tensors keep a raw pointer to their tape, so a tape must outlive every
/// tensor recorded on it and is neither copyable nor movable.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)); }

  /// Registers a leaf holding the same values as `value`.
  Tensor watch(const Tensor& value) {
    if (!value.defined()) throw TapeError("cannot watch an undefined tensor");
    Tensor t = value.detach();
    nodes_.push_back(Node{OpKind::Leaf, {}, nullptr, false});
    t.tape_ = this;
    t.node_ = static_cast<NodeId>(nodes_.size() - 1);
    return t;
  }

  /// Appends an op node for `result`. The backward rule is built after the
  /// node exists so it may capture the recorded output.
  Tensor record(OpKind kind, const Tensor& result, const std::vector<Tensor>& inputs,
                const std::function<BackwardFn(const Tensor& output)>& make_backward) {
    Node n;
    n.kind = kind;
    n.parents.reserve(inputs.size());
    for (const Tensor& in : inputs) {
      if (in.on_tape() && in.tape() != this) throw TapeError("inputs recorded on different tapes");
      n.parents.push_back(in.on_tape() ? in.node() : kNoNode);
    }
    nodes_.push_back(std::move(n));
    Tensor out = result.detach();
    out.tape_ = this;
    out.node_ = static_cast<NodeId>(nodes_.size() - 1);
    nodes_.back().backward = make_backward(out);
    return out;
  }

  void mark_retained(NodeId id) { nodes_.at(static_cast<std::size_t>(id)).retain = true; }

 private:
  std::vector<Node> nodes_;
};

}  // namespace tdfusion::autodiff
