#pragma once

// Binary cross-entropy and focal binary cross-entropy (FBce) for multi-label
// targets. Both take probabilities (not logits) and reduce by the mean over
// all sample x class cells. FBce is the alpha-balanced focal form
//
//   alpha * (1-p)^gamma * (-ln p) * y  +  (1-alpha) * p^gamma * (-ln(1-p)) * (1-y)
//
// whose modulation factors down-weight easily classified cells as gamma
// grows; at gamma = 0 it reduces to alpha-weighted BCE (exactly 0.5 * BCE at
// alpha = 0.5).

#include <cmath>
#include <string>
#include <vector>

#include "tcs3d/tensor.hpp"

namespace tcs3d {

struct FocalParams {
  double alpha = 0.5;  // positive-class weighting factor in [0,1]
  double gamma = 0.0;  // focusing parameter, >= 0 (sweeps go up to 10)
  double eps = 1e-7;   // probability clamp applied before logs
};

inline void check_focal_params(const FocalParams& p) {
  check(p.alpha >= 0.0 && p.alpha <= 1.0, "FocalParams: alpha must lie in [0,1]");
  check(p.gamma >= 0.0, "FocalParams: gamma must be >= 0");
  check(p.eps > 0.0 && p.eps < 0.5, "FocalParams: eps must lie in (0, 0.5)");
}

// Binary targets y and predicted probabilities y_hat of identical shape.
// For a batch of S samples over M classes use shape (S, M, 1, 1, 1).
struct LabelBatch {
  Tensor y_hat;
  Tensor y;
};

inline void check_label_batch(const LabelBatch& b) {
  check(b.y_hat.defined() && b.y.defined(), "LabelBatch: undefined tensors");
  check(b.y_hat.shape() == b.y.shape(), "LabelBatch: y_hat shape " + shape_str(b.y_hat.shape()) +
                                            " does not match y shape " + shape_str(b.y.shape()));
  check(b.y.size() > 0, "LabelBatch: empty batch");
  for (double v : b.y.values())
    check(v == 0.0 || v == 1.0, "LabelBatch: targets must be exactly 0 or 1");
}

namespace detail_loss {

inline double clamp_prob(double p, double eps) {
  return p < eps ? eps : (p > 1.0 - eps ? 1.0 - eps : p);
}

// pow with an exact gamma = 0 case so the BCE reduction is an identity, not
// an approximation
inline double pow_gamma(double base, double gamma) {
  return gamma == 0.0 ? 1.0 : std::pow(base, gamma);
}

}  // namespace detail_loss

// Mean over all cells of -[y ln p + (1-y) ln(1-p)], p clamped to
// [eps, 1-eps]. Differentiable w.r.t. y_hat; y is treated as a constant.
inline Tensor bce(const LabelBatch& batch, double eps = 1e-7) {
  check_label_batch(batch);
  check(eps > 0.0 && eps < 0.5, "bce: eps must lie in (0, 0.5)");
  const auto ph = batch.y_hat.values();
  const auto yv = batch.y.values();
  const std::size_t n = ph.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  double acc = 0.0;
  std::vector<double> dldp(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = detail_loss::clamp_prob(ph[i], eps);
    const double y = yv[i];
    acc += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
    const bool interior = ph[i] > eps && ph[i] < 1.0 - eps;
    dldp[i] = interior ? (-y / p + (1.0 - y) / (1.0 - p)) * inv_n : 0.0;
  }
  return Tensor::make_op({1, 1, 1, 1, 1}, {acc * inv_n}, {batch.y_hat},
                         [dldp = std::move(dldp)](detail::Node& self) {
                           detail::Node& yh = *self.parents[0];
                           if (!yh.requires_grad) return;
                           yh.ensure_grad();
                           const double g = self.grad[0];
                           for (std::size_t i = 0; i < dldp.size(); ++i)
                             yh.grad[i] += g * dldp[i];
                         });
}

// Focal BCE, mean-reduced. Loss is >= 0 and non-increasing in gamma per cell.
inline Tensor fbce(const LabelBatch& batch, const FocalParams& fp) {
  check_label_batch(batch);
  check_focal_params(fp);
  const auto ph = batch.y_hat.values();
  const auto yv = batch.y.values();
  const std::size_t n = ph.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  const double a = fp.alpha;
  const double g = fp.gamma;
  double acc = 0.0;
  std::vector<double> dldp(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = detail_loss::clamp_prob(ph[i], fp.eps);
    const double y = yv[i];
    const double q = 1.0 - p;
    const double lp = std::log(p);
    const double lq = std::log(q);
    acc += a * detail_loss::pow_gamma(q, g) * (-lp) * y +
           (1.0 - a) * detail_loss::pow_gamma(p, g) * (-lq) * (1.0 - y);
    double d = 0.0;
    const bool interior = ph[i] > fp.eps && ph[i] < 1.0 - fp.eps;
    if (interior) {
      if (y != 0.0)
        d += a * y * (g == 0.0 ? -1.0 / p
                               : g * detail_loss::pow_gamma(q, g - 1.0) * lp -
                                     detail_loss::pow_gamma(q, g) / p);
      if (y != 1.0)
        d += (1.0 - a) * (1.0 - y) *
             (g == 0.0 ? 1.0 / q
                       : detail_loss::pow_gamma(p, g) / q -
                             g * detail_loss::pow_gamma(p, g - 1.0) * lq);
    }
    dldp[i] = d * inv_n;
  }
  return Tensor::make_op({1, 1, 1, 1, 1}, {acc * inv_n}, {batch.y_hat},
                         [dldp = std::move(dldp)](detail::Node& self) {
                           detail::Node& yh = *self.parents[0];
                           if (!yh.requires_grad) return;
                           yh.ensure_grad();
                           const double gr = self.grad[0];
                           for (std::size_t i = 0; i < dldp.size(); ++i)
                             yh.grad[i] += gr * dldp[i];
                         });
}

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t worst_cell = 0;
  bool pass = false;
};

// Verifies the analytic d(loss)/d(y_hat) against central finite differences
// of the loss value, cell by cell. y_hat values must be strictly inside
// (eps, 1-eps).
inline GradCheckReport fbce_grad_check(const LabelBatch& batch, const FocalParams& fp,
                                       double step = 1e-6, double tolerance = 1e-6) {
  check_label_batch(batch);
  for (double p : batch.y_hat.values())
    check(p > fp.eps + 2 * step && p < 1.0 - fp.eps - 2 * step,
          "fbce_grad_check: y_hat cells must be strictly inside the clamp interval");

  Tensor yh = Tensor::from_values(batch.y_hat.shape(),
                                  {batch.y_hat.values().begin(), batch.y_hat.values().end()}, true);
  LabelBatch b{yh, batch.y};
  Tensor loss = fbce(b, fp);
  backward(loss);
  const auto analytic = yh.grad();

  auto eval = [&](std::size_t i, double delta) {
    std::vector<double> vals{batch.y_hat.values().begin(), batch.y_hat.values().end()};
    vals[i] += delta;
    LabelBatch probe{Tensor::from_values(batch.y_hat.shape(), std::move(vals)), batch.y};
    return fbce(probe, fp).values()[0];
  };

  GradCheckReport report;
  for (std::size_t i = 0; i < yh.size(); ++i) {
    const double fd = (eval(i, step) - eval(i, -step)) / (2.0 * step);
    const double a = analytic[i];
    const double denom = std::max(std::abs(a), std::abs(fd));
    const double err = denom < 1e-12 ? 0.0 : std::abs(a - fd) / denom;
    if (err > report.max_rel_err) {
      report.max_rel_err = err;
      report.worst_cell = i;
    }
  }
  report.pass = report.max_rel_err <= tolerance;
  return report;
}

}  // namespace tcs3d
