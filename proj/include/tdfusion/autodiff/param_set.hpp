#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tdfusion/autodiff/grad.hpp"
#include "tdfusion/autodiff/ops.hpp"

namespace tdfusion {

enum class NetworkKind : std::uint8_t { Fusion = 0, Task = 1, LossGen = 2 };

inline std::string_view network_name(NetworkKind kind) {
  switch (kind) {
    case NetworkKind::Fusion: return "fusion";
    case NetworkKind::Task: return "task";
    case NetworkKind::LossGen: return "lossgen";
  }
  return "unknown";
}

/// Ordered, named trainable tensors of one network.
class ParamSet {
 public:
  using Entry = std::pair<std::string, autodiff::Tensor>;

  ParamSet() = default;
  explicit ParamSet(NetworkKind kind) : kind_(kind) {}

  NetworkKind kind() const { return kind_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  void add(std::string name, autodiff::Tensor value) {
    for (const auto& [existing, _] : entries_) {
      if (existing == name) throw std::invalid_argument("duplicate parameter name '" + name + "'");
    }
    entries_.emplace_back(std::move(name), std::move(value));
  }

  const Entry& entry(std::size_t i) const { return entries_.at(i); }
  const std::string& name(std::size_t i) const { return entries_.at(i).first; }
  const autodiff::Tensor& operator[](std::size_t i) const { return entries_.at(i).second; }

  bool contains(std::string_view name) const {
    for (const auto& e : entries_) {
      if (e.first == name) return true;
    }
    return false;
  }

  const autodiff::Tensor& at(std::string_view name) const {
    for (const auto& [n, t] : entries_) {
      if (n == name) return t;
    }
    throw std::out_of_range("no parameter named '" + std::string(name) + "'");
  }

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::vector<autodiff::Tensor> tensors() const {
    std::vector<autodiff::Tensor> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.second);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.numel();
    return n;
  }

  /// Copy whose tensors are leaves on `tape`.
  ParamSet watched(autodiff::Tape& tape) const {
    ParamSet out(kind_);
    for (const auto& [n, t] : entries_) out.entries_.emplace_back(n, tape.watch(t));
    return out;
  }

  ParamSet detached() const {
    ParamSet out(kind_);
    for (const auto& [n, t] : entries_) out.entries_.emplace_back(n, t.detach());
    return out;
  }

  /// Same names and shapes, new values.
  ParamSet with_tensors(std::vector<autodiff::Tensor> values) const {
    if (values.size() != entries_.size()) throw std::invalid_argument("parameter count mismatch");
    ParamSet out(kind_);
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (values[i].shape() != entries_[i].second.shape()) {
        throw ShapeError("parameter '" + entries_[i].first + "' shape mismatch");
      }
      out.entries_.emplace_back(entries_[i].first, std::move(values[i]));
    }
    return out;
  }

  bool bitwise_equal(const ParamSet& other) const {
    if (kind_ != other.kind_ || entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].first != other.entries_[i].first) return false;
      if (!entries_[i].second.bitwise_equal(other.entries_[i].second)) return false;
    }
    return true;
  }

  /// Flattened copy of every value in entry order.
  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    for (const auto& e : entries_) out.insert(out.end(), e.second.data().begin(), e.second.data().end());
    return out;
  }

  /// Inverse of flatten(): constants with this set's names and shapes.
  ParamSet unflatten(std::span<const double> flat) const {
    if (flat.size() != parameter_count()) throw std::invalid_argument("flat parameter length mismatch");
    ParamSet out(kind_);
    std::size_t offset = 0;
    for (const auto& [n, t] : entries_) {
      std::vector<double> v(flat.begin() + static_cast<std::ptrdiff_t>(offset),
                            flat.begin() + static_cast<std::ptrdiff_t>(offset + t.numel()));
      offset += t.numel();
      out.entries_.emplace_back(n, autodiff::Tensor(t.shape(), std::move(v)));
    }
    return out;
  }

 private:
  NetworkKind kind_ = NetworkKind::Fusion;
  std::vector<Entry> entries_;
};

namespace autodiff {

inline std::vector<Tensor> grad(const Tensor& output, const ParamSet& wrt, bool retain) {
  const std::vector<Tensor> ts = wrt.tensors();
  return grad(output, std::span<const Tensor>(ts), retain);
}

}  // namespace autodiff

/// One plain gradient-descent step, θ - η·g.
///
/// With `differentiable` set the result stays on the tape as a function of
/// both the parameters and the gradients; otherwise it is detached.
inline ParamSet sgd_step(const ParamSet& params, const std::vector<autodiff::Tensor>& grads, double step,
                         bool differentiable) {
  if (grads.size() != params.size()) {
    throw std::invalid_argument("sgd_step: " + std::to_string(grads.size()) + " gradients for " +
                                std::to_string(params.size()) + " parameters");
  }
  std::vector<autodiff::Tensor> next;
  next.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].shape()) {
      throw ShapeError("sgd_step: gradient for '" + params.name(i) + "' has shape " +
                       to_string(grads[i].shape()) + ", expected " + to_string(params[i].shape()));
    }
    if (differentiable) {
      next.push_back(autodiff::sub(params[i], autodiff::scale(grads[i], step)));
    } else {
      autodiff::NoRecordGuard guard;
      next.push_back(autodiff::sub(params[i], autodiff::scale(grads[i], step)).detach());
    }
  }
  return params.with_tensors(std::move(next));
}

}  // namespace tdfusion
