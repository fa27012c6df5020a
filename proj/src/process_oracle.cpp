#include <Eigen/Dense>

#include <cmath>
#include <numbers>

#include "slicemap/error.hpp"
#include "slicemap/process.hpp"

namespace slicemap {

namespace {

Eigen::MatrixXd compound_symmetric(const ScalarProcess& p, std::size_t n) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Constant(Eigen::Index(n), Eigen::Index(n), p.cov);
  m.diagonal().setConstant(p.var);
  return m;
}

Eigen::LLT<Eigen::MatrixXd> factor(const Eigen::MatrixXd& m) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) throw NumericError("oracle: covariance is not positive definite");
  return llt;
}

Eigen::VectorXd centred(const ScalarProcess& p, const std::vector<double>& obs) {
  Eigen::VectorXd x(Eigen::Index(obs.size()));
  for (std::size_t i = 0; i < obs.size(); ++i) x(Eigen::Index(i)) = obs[i] - p.mu;
  return x;
}

}  // namespace

ScalarPredictive oracle_conditioning(const ScalarProcess& p, const std::vector<double>& observations) {
  const std::size_t n = observations.size();
  ScalarPredictive out{p.mu, p.var, p.student_t() ? p.dof : 0.0};
  if (n == 0) return out;
  const auto llt = factor(compound_symmetric(p, n));
  const Eigen::VectorXd x = centred(p, observations);
  const Eigen::VectorXd k = Eigen::VectorXd::Constant(Eigen::Index(n), p.cov);
  const Eigen::VectorXd w = llt.solve(k);  // Sigma11^-1 Sigma12
  out.loc = p.mu + w.dot(x);
  out.scale2 = p.var - k.dot(w);
  if (p.student_t()) {
    const double d = x.dot(llt.solve(x));
    out.scale2 *= (p.dof + d) / (p.dof + double(n));
    out.dof = p.dof + double(n);
  }
  return out;
}

double joint_logpdf_oracle(const ScalarProcess& p, const std::vector<double>& observations) {
  const std::size_t n = observations.size();
  if (n == 0) return 0.0;
  const auto llt = factor(compound_symmetric(p, n));
  const Eigen::VectorXd x = centred(p, observations);
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double d = x.dot(llt.solve(x));
  const double dn = double(n);
  if (!p.student_t()) return -0.5 * (dn * std::log(2.0 * std::numbers::pi) + logdet + d);
  const double nu = p.dof;
  return std::lgamma(0.5 * (nu + dn)) - std::lgamma(0.5 * nu) - 0.5 * dn * std::log(nu * std::numbers::pi) -
         0.5 * logdet - 0.5 * (nu + dn) * std::log1p(d / nu);
}

}  // namespace slicemap
