#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "albf/neural/tensor.hpp"

namespace albf::nn {

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 1;

  void validate() const {
    require(learning_rate > 0, ErrorKind::Configuration, "learning rate must be positive");
    require(batch_size == 1, ErrorKind::Configuration, "only batch size 1 is supported");
  }
};

/// Adam moments for a fixed parameter list, bias-corrected.
template <typename S>
struct AdamState {
  std::vector<std::vector<S>> m;
  std::vector<std::vector<S>> v;
  std::uint64_t step = 0;

  void bind(const std::vector<Param<S>*>& params) {
    m.clear();
    v.clear();
    for (auto* p : params) {
      m.emplace_back(p->value.size(), S{});
      v.emplace_back(p->value.size(), S{});
    }
    step = 0;
  }

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

template <typename S>
void adam_update(const std::vector<Param<S>*>& params, AdamState<S>& st, const TrainConfig& cfg) {
  require(st.m.size() == params.size(), ErrorKind::Contract, "optimizer state not bound to these parameters");
  ++st.step;
  const double t = static_cast<double>(st.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    auto& m = st.m[k];
    auto& v = st.v[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = static_cast<S>(cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g);
      v[i] = static_cast<S>(cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g);
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p.value[i] = static_cast<S>(p.value[i] - cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

}  // namespace albf::nn
