#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "lldiff/core/rng.hpp"
#include "lldiff/nn/tape.hpp"

namespace lldiff::nn {

enum class Init { fan_in_uniform, constant };

struct ParamEntry {
  std::string name;
  Shape shape;
  std::size_t offset = 0;
  Init init = Init::fan_in_uniform;
  double init_value = 0.0;  // fan-in for fan_in_uniform, the value for constant
};

/// Ordered registry of parameter tensors inside one flat vector. The order of
/// registration is the payload layout; it is a pure function of the config.
class ParamLayout {
 public:
  std::size_t add(std::string name, Shape shape, Init init, double init_value) {
    ParamEntry e{std::move(name), shape, total_, init, init_value};
    total_ += shape.count();
    entries_.push_back(std::move(e));
    return entries_.size() - 1;
  }

  const std::vector<ParamEntry>& entries() const { return entries_; }
  const ParamEntry& entry(std::size_t i) const { return entries_.at(i); }
  std::size_t total() const { return total_; }

  /// PyTorch-style default init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  template <class T>
  std::vector<T> initialize(Rng& rng) const {
    std::vector<T> out(total_);
    for (const auto& e : entries_) {
      T* dst = out.data() + e.offset;
      if (e.init == Init::constant) {
        std::fill_n(dst, e.shape.count(), static_cast<T>(e.init_value));
        continue;
      }
      const double bound = 1.0 / std::sqrt(std::max(1.0, e.init_value));
      for (std::size_t i = 0; i < e.shape.count(); ++i) dst[i] = static_cast<T>(draw_uniform(rng, -bound, bound));
    }
    return out;
  }

 private:
  std::vector<ParamEntry> entries_;
  std::size_t total_ = 0;
};

/// Parameters of one layout placed on a tape.
template <class T>
struct BoundParams {
  const ParamLayout* layout = nullptr;
  std::vector<Var> vars;

  Var operator[](std::size_t entry) const { return vars.at(entry); }
};

template <class T>
BoundParams<T> bind(Tape<T>& tape, const ParamLayout& layout, std::span<const T> flat, bool trainable) {
  require(flat.size() == layout.total(), ErrorCode::shape_mismatch,
          "parameter payload has " + std::to_string(flat.size()) + " values, layout expects " +
              std::to_string(layout.total()));
  BoundParams<T> bound;
  bound.layout = &layout;
  bound.vars.reserve(layout.entries().size());
  for (const auto& e : layout.entries()) {
    ImagePlanes<T> v(e.shape);
    std::copy_n(flat.data() + e.offset, e.shape.count(), v.data());
    bound.vars.push_back(trainable ? tape.variable(std::move(v)) : tape.constant(std::move(v)));
  }
  return bound;
}

/// Writes d(root)/d(theta) into out (zeros where no gradient reached).
template <class T>
void gather_grads(Tape<T>& tape, const BoundParams<T>& bound, std::span<T> out) {
  require(out.size() == bound.layout->total(), ErrorCode::shape_mismatch, "gradient buffer size");
  for (std::size_t i = 0; i < bound.vars.size(); ++i) {
    const auto& e = bound.layout->entry(i);
    T* dst = out.data() + e.offset;
    const Var v = bound.vars[i];
    if (tape.requires_grad(v) && tape.has_grad(v)) {
      const auto& g = tape.grad(v);
      std::copy(g.data(), g.data() + g.size(), dst);
    } else {
      std::fill_n(dst, e.shape.count(), T(0));
    }
  }
}

}  // namespace lldiff::nn
