#ifndef BDLAB_AUTOGRAD_ADAM_H_
#define BDLAB_AUTOGRAD_ADAM_H_

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "bdlab/autograd/tensor.h"

namespace bdlab::ag {

template <typename T>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
};

// One bias-corrected Adam update applied in place to every tensor in
// `params`.
template <typename T>
void adam_step(std::span<Tensor<T>* const> params,
               std::span<const Tensor<T>* const> grads, AdamState<T>& state,
               double alpha) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("adam_step: params/grads count mismatch");
  }
  if (state.m.empty()) {
    for (const Tensor<T>* p : params) {
      state.m.emplace_back(p->shape());
      state.v.emplace_back(p->shape());
    }
  }
  if (state.m.size() != params.size()) {
    throw std::invalid_argument("adam_step: state does not match params");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i]->shape() ||
        state.m[i].shape() != params[i]->shape()) {
      throw std::invalid_argument("adam_step: shape mismatch at param " +
                                  std::to_string(i));
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    T* p = params[i]->ptr();
    const T* g = grads[i]->ptr();
    T* m = state.m[i].ptr();
    T* v = state.v[i].ptr();
    const std::size_t n = params[i]->size();
    for (std::size_t j = 0; j < n; ++j) {
      const double gj = g[j];
      const double mj = state.beta1 * m[j] + (1.0 - state.beta1) * gj;
      const double vj = state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double mhat = mj / c1;
      const double vhat = vj / c2;
      p[j] = static_cast<T>(p[j] - alpha * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

}  // namespace bdlab::ag

#endif  // BDLAB_AUTOGRAD_ADAM_H_
