#pragma once
// Finite-difference oracles for the analytic gradients. The builder callback
// must be a deterministic function of the parameter store (fix any noise by
// seeding inside), and must bind every parameter through the supplied
// ParamBinding so analytic gradients can be read back by name.

#include <functional>
#include <string>

#include "slotvae/ops.hpp"
#include "slotvae/params.hpp"

namespace slotvae {

template <typename S>
using BuildFn = std::function<Var<S>(Graph<S>&, const ParamStore<S>&, ParamBinding<S>&)>;

struct GradCheckReport {
  double max_rel = 0.0;
  std::string worst;  // "param[flat_index]"
  int checked = 0;
};

namespace detail {
inline double rel_err(double a, double b) {
  const double denom = std::max({1e-6, std::abs(a), std::abs(b)});
  return std::abs(a - b) / denom;
}
}  // namespace detail

template <typename S>
double eval_loss(const BuildFn<S>& build, const ParamStore<S>& params) {
  Graph<S> g;
  ParamBinding<S> pb;
  Var<S> loss = build(g, params, pb);
  return static_cast<double>(loss.val()[0]);
}

// Central differences on randomly sampled parameter elements (all elements
// when a tensor has <= samples_per_param of them).
template <typename S>
GradCheckReport grad_check(const BuildFn<S>& build, ParamStore<S> params,
                           int samples_per_param, double h, Rng rng) {
  GradCheckReport rep;
  GradMap<S> analytic;
  {
    Graph<S> g;
    ParamBinding<S> pb;
    Var<S> loss = build(g, params, pb);
    g.backward(loss.id);
    pb.accumulate_grads(g, analytic, S(1));
  }
  for (auto& [name, grad] : analytic) {
    const std::int64_t n = grad.numel();
    std::vector<std::int64_t> idx;
    if (n <= samples_per_param) {
      idx.resize(n);
      for (std::int64_t i = 0; i < n; ++i) idx[i] = i;
    } else {
      for (int i = 0; i < samples_per_param; ++i)
        idx.push_back(static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n))));
    }
    Tensor<S>& p = params.at(name);
    for (std::int64_t i : idx) {
      const S keep = p[i];
      p[i] = keep + static_cast<S>(h);
      const double fp = eval_loss(build, params);
      p[i] = keep - static_cast<S>(h);
      const double fm = eval_loss(build, params);
      p[i] = keep;
      const double fd = (fp - fm) / (2.0 * h);
      const double re = detail::rel_err(static_cast<double>(grad[i]), fd);
      ++rep.checked;
      if (re > rep.max_rel) {
        rep.max_rel = re;
        rep.worst = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return rep;
}

// Directional probe: FD of the loss along random unit directions in the full
// parameter space vs. the inner product with the analytic gradient.
template <typename S>
double grad_check_directional(const BuildFn<S>& build, ParamStore<S> params, int ndirs,
                              double h, Rng rng) {
  GradMap<S> analytic;
  {
    Graph<S> g;
    ParamBinding<S> pb;
    Var<S> loss = build(g, params, pb);
    g.backward(loss.id);
    pb.accumulate_grads(g, analytic, S(1));
  }
  double max_rel = 0.0;
  for (int d = 0; d < ndirs; ++d) {
    GradMap<S> dir;
    double ss = 0;
    for (const auto& [name, p] : params.values) {
      Tensor<S> v(p.shape);
      rng.fill_normal(v);
      for (S x : v.data) ss += static_cast<double>(x) * static_cast<double>(x);
      dir.emplace(name, std::move(v));
    }
    const double inv = 1.0 / std::sqrt(ss);
    double dot = 0;
    for (auto& [name, v] : dir) {
      const Tensor<S>& gr = analytic.at(name);
      for (std::int64_t i = 0; i < v.numel(); ++i) {
        v[i] = static_cast<S>(static_cast<double>(v[i]) * inv);
        dot += static_cast<double>(gr[i]) * static_cast<double>(v[i]);
      }
    }
    ParamStore<S> plus = params, minus = params;
    for (auto& [name, v] : dir) {
      Tensor<S>& pp = plus.at(name);
      Tensor<S>& pm = minus.at(name);
      for (std::int64_t i = 0; i < v.numel(); ++i) {
        pp[i] += static_cast<S>(h) * v[i];
        pm[i] -= static_cast<S>(h) * v[i];
      }
    }
    const double fd = (eval_loss(build, plus) - eval_loss(build, minus)) / (2.0 * h);
    max_rel = std::max(max_rel, detail::rel_err(dot, fd));
  }
  return max_rel;
}

}  // namespace slotvae
