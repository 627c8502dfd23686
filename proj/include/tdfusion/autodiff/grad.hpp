#pragma once

#include <optional>
#include <span>
#include <vector>

#include "tdfusion/autodiff/ops.hpp"
#include "tdfusion/autodiff/tape.hpp"

namespace tdfusion::autodiff {

/// Reverse-mode gradients of a scalar `output` with respect to `wrt`.
///
/// Inputs not reachable from `output` get zeros. With `retain` set the
/// backward pass is recorded on the tape, so every returned gradient is a
/// differentiable function of the tape's leaves. Without it the tape is left
/// untouched and the results are constants.
inline std::vector<Tensor> grad(const Tensor& output, std::span<const Tensor> wrt, bool retain) {
  if (!output.defined() || output.numel() != 1) {
    throw ShapeError("grad: output must be a scalar, got " + to_string(output.shape()));
  }
  if (!output.on_tape()) throw TapeError("grad: output is not recorded on a tape");

  Tape& tape = *output.tape();
  const NodeId root = output.node();
  const auto count = static_cast<std::size_t>(root) + 1;

  std::vector<bool> needed(count, false);
  needed[count - 1] = true;
  for (NodeId id = root; id >= 0; --id) {
    if (!needed[static_cast<std::size_t>(id)]) continue;
    for (NodeId p : tape.node(id).parents) {
      if (p != kNoNode) needed[static_cast<std::size_t>(p)] = true;
    }
  }

  std::vector<bool> wanted(count, false);
  for (const Tensor& w : wrt) {
    if (w.on_tape() && w.tape() == &tape && w.node() <= root) wanted[static_cast<std::size_t>(w.node())] = true;
  }

  std::optional<NoRecordGuard> guard;
  if (!retain) guard.emplace();

  std::vector<Tensor> acc(count);
  acc[count - 1] = Tensor::ones(output.shape());
  for (NodeId id = root; id >= 0; --id) {
    const auto slot = static_cast<std::size_t>(id);
    if (!needed[slot] || !acc[slot].defined()) continue;
    // copies: the backward call may append to the tape and move its nodes
    const Node node = tape.node(id);
    if (node.kind == OpKind::Leaf) continue;
    const std::vector<Tensor> parent_grads = node.backward(acc[slot]);
    if (retain) tape.mark_retained(id);
    for (std::size_t i = 0; i < node.parents.size(); ++i) {
      const NodeId p = node.parents[i];
      if (p == kNoNode || i >= parent_grads.size() || !parent_grads[i].defined()) continue;
      Tensor& dst = acc[static_cast<std::size_t>(p)];
      dst = dst.defined() ? add(dst, parent_grads[i]) : parent_grads[i];
    }
    if (!wanted[slot]) acc[slot] = Tensor();
  }

  std::vector<Tensor> result;
  result.reserve(wrt.size());
  for (const Tensor& w : wrt) {
    const bool reachable = w.on_tape() && w.tape() == &tape && w.node() <= root &&
                           acc[static_cast<std::size_t>(w.node())].defined();
    result.push_back(reachable ? acc[static_cast<std::size_t>(w.node())] : Tensor::zeros(w.shape()));
  }
  return result;
}

inline std::vector<Tensor> grad(const Tensor& output, std::initializer_list<Tensor> wrt, bool retain) {
  return grad(output, std::span<const Tensor>(wrt.begin(), wrt.size()), retain);
}

}  // namespace tdfusion::autodiff
