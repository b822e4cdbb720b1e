#pragma once

// Adam with bias correction, a reduce-on-plateau learning-rate schedule, and
// the central finite-difference gradient estimator used as a test oracle.

#include "hgrl/common.hpp"

#include <cmath>
#include <functional>
#include <limits>

namespace hgrl {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  Vector first_moment;
  Vector second_moment;
  long step_count = 0;
  AdamConfig cfg;

  AdamState(Eigen::Index n, AdamConfig c = {})
      : first_moment(Vector::Zero(n)), second_moment(Vector::Zero(n)), cfg(c) {
    if (cfg.beta1 < 0 || cfg.beta1 >= 1 || cfg.beta2 < 0 || cfg.beta2 >= 1)
      throw Error("adam betas must lie in [0, 1)");
    if (cfg.epsilon <= 0) throw Error("adam epsilon must be > 0");
  }
};

inline void adam_step(AdamState& st, Vector& params, const Vector& grads) {
  if (params.size() != grads.size() || params.size() != st.first_moment.size())
    throw Error("adam_step: length mismatch");
  ++st.step_count;
  st.first_moment = st.cfg.beta1 * st.first_moment + (1 - st.cfg.beta1) * grads;
  st.second_moment = st.cfg.beta2 * st.second_moment +
                     (1 - st.cfg.beta2) * grads.cwiseProduct(grads);
  double bc1 = 1 - std::pow(st.cfg.beta1, static_cast<double>(st.step_count));
  double bc2 = 1 - std::pow(st.cfg.beta2, static_cast<double>(st.step_count));
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    double mhat = st.first_moment[i] / bc1;
    double vhat = st.second_moment[i] / bc2;
    params[i] -= st.cfg.lr * mhat / (std::sqrt(vhat) + st.cfg.epsilon);
  }
}

struct PlateauState {
  double best_metric = std::numeric_limits<double>::infinity();
  int bad_epochs = 0;
  int patience = 10;
  double factor = 0.5;
  double min_lr = 1e-6;
  double current_lr = 1e-3;
};

// Lower metric is better. After more than `patience` epochs without
// improvement the learning rate is multiplied by `factor` (floored at min_lr).
inline void plateau_step(PlateauState& st, double metric) {
  if (metric < st.best_metric) {
    st.best_metric = metric;
    st.bad_epochs = 0;
    return;
  }
  ++st.bad_epochs;
  if (st.bad_epochs > st.patience) {
    st.current_lr = std::max(st.current_lr * st.factor, st.min_lr);
    st.bad_epochs = 0;
  }
}

inline Vector finite_diff_grad(const std::function<double(const Vector&)>& f,
                               Vector x, double h) {
  if (h <= 0) throw Error("finite_diff_grad: h must be > 0");
  Vector g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    double orig = x[i];
    x[i] = orig + h;
    double fp = f(x);
    x[i] = orig - h;
    double fm = f(x);
    x[i] = orig;
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

inline double relative_grad_error(const Vector& analytic, const Vector& fd) {
  double denom = std::max(analytic.norm(), fd.norm());
  if (denom < 1e-12) return 0.0;
  return (analytic - fd).norm() / denom;
}

}  // namespace hgrl
