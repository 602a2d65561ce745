#ifndef ALIGNFLOW_OPTIM_HPP
#define ALIGNFLOW_OPTIM_HPP

#include <cmath>

#include <Eigen/Core>

namespace alignflow {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam direction m_hat / (sqrt(v_hat) + eps) after folding
/// `grad` into the moments. `step` is the 1-based update count.
template <typename Param, typename Grad, typename Moment>
void adam_apply(Eigen::DenseBase<Param>& param, const Eigen::DenseBase<Grad>& grad,
                Eigen::DenseBase<Moment>& m, Eigen::DenseBase<Moment>& v, long step,
                double lr, const AdamConfig& cfg, double sign) {
  m.derived() = cfg.beta1 * m.derived().array() + (1.0 - cfg.beta1) * grad.derived().array();
  v.derived() = cfg.beta2 * v.derived().array() +
                (1.0 - cfg.beta2) * grad.derived().array().square();
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  param.derived().array() += sign * lr * (m.derived().array() / c1) /
                             ((v.derived().array() / c2).sqrt() + cfg.eps);
}

}  // namespace alignflow

#endif  // ALIGNFLOW_OPTIM_HPP
