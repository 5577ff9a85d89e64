#pragma once

#include "koopman/types.hpp"

#include <functional>
#include <utility>

namespace koopman {

// Vector-valued function of the state, h : R^n -> R^dim. The lifted predictor
// reconstructs h(x) linearly from the learned eigenfunctions.
struct Observable {
  int dim = 0;
  std::function<RVec(const RVec&)> eval;

  RVec operator()(const RVec& x) const { return eval(x); }
};

// h(x) = x.
inline Observable state_observable(int n) {
  Observable h;
  h.dim = n;
  h.eval = [](const RVec& x) { return x; };
  return h;
}

// h(x) = c, the same constant vector everywhere.
inline Observable constant_observable(RVec c) {
  Observable h;
  h.dim = static_cast<int>(c.size());
  h.eval = [c = std::move(c)](const RVec&) { return c; };
  return h;
}

// [a; b] stacked.
inline Observable stack(const Observable& a, const Observable& b) {
  Observable h;
  h.dim = a.dim + b.dim;
  h.eval = [a, b](const RVec& x) {
    RVec out(a.dim + b.dim);
    out.head(a.dim) = a.eval(x);
    out.tail(b.dim) = b.eval(x);
    return out;
  };
  return h;
}

}  // namespace koopman
