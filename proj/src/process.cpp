#include "slicemap/process.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "slicemap/error.hpp"

namespace slicemap {

std::string to_string(ProcessMode mode) { return mode == ProcessMode::gaussian ? "gaussian" : "student-t"; }

ProcessMode parse_process_mode(const std::string& name) {
  if (name == "gaussian") return ProcessMode::gaussian;
  if (name == "student-t") return ProcessMode::student_t;
  throw ConfigError("unknown process mode '" + name + "' (expected gaussian or student-t)");
}

namespace {

double inverse_softplus(double y) { return y > 30.0 ? y + std::log(-std::expm1(-y)) : std::log(std::expm1(y)); }

double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace

template <typename T>
ExchangeableProcess<T>::ExchangeableProcess(std::size_t dims, ProcessMode mode) : dims_(dims), mode_(mode) {
  if (dims == 0) throw ConfigError("process: dimension must be positive");
  mu_ = Tensor<T>::zeros({dims}, true);
  var_raw_ = Tensor<T>::zeros({dims}, true);
  cov_raw_ = Tensor<T>::zeros({dims}, true);
  dof_raw_ = Tensor<T>::zeros({dims}, true);
  set_constrained(0.0, 1.0, 0.1, 1000.0);
}

template <typename T>
void ExchangeableProcess<T>::set_constrained(double mu, double var, double cov, double dof) {
  if (!(var > 1e-6) || !(cov >= 0.0) || !(cov < var)) throw ConfigError("process: need 0 <= cov < var");
  if (mode_ == ProcessMode::student_t && !(dof > 2.0)) throw ConfigError("process: dof must exceed 2");
  const double b = cov == 0.0 ? -40.0 : logit(cov / var);
  for (std::size_t d = 0; d < dims_; ++d) {
    mu_.mutable_data()[d] = static_cast<T>(mu);
    var_raw_.mutable_data()[d] = static_cast<T>(inverse_softplus(var - 1e-6));
    cov_raw_.mutable_data()[d] = static_cast<T>(b);
    if (mode_ == ProcessMode::student_t) dof_raw_.mutable_data()[d] = static_cast<T>(inverse_softplus(dof - 2.0));
  }
}

template <typename T>
ProcessParams<T> ExchangeableProcess<T>::params() const {
  ProcessParams<T> p;
  p.mu = mu_;
  p.var = softplus(var_raw_) + T(1e-6);
  p.cov = p.var * sigmoid(cov_raw_);
  p.var_minus_cov = p.var * sigmoid(-cov_raw_);
  if (mode_ == ProcessMode::student_t) p.dof = softplus(dof_raw_) + T(2);
  return p;
}

template <typename T>
std::vector<NamedTensor<T>> ExchangeableProcess<T>::parameters() const {
  std::vector<NamedTensor<T>> out{{"process.mu", mu_}, {"process.var_raw", var_raw_}, {"process.cov_raw", cov_raw_}};
  if (mode_ == ProcessMode::student_t) out.push_back({"process.dof_raw", dof_raw_});
  return out;
}

template <typename T>
ProcessState<T> ExchangeableProcess<T>::init_state(std::size_t batch) const {
  return {0, Tensor<T>::zeros({batch, dims_}), Tensor<T>::zeros({batch, dims_})};
}

template <typename T>
ProcessState<T> ExchangeableProcess<T>::update_state(const ProcessState<T>& state, const Tensor<T>& z) const {
  if (z.shape() != state.sum.shape()) {
    throw ShapeError("process update: expected z " + to_string(state.sum.shape()) + ", got " + to_string(z.shape()));
  }
  for (T v : z.data())
    if (!std::isfinite(v)) throw NumericError("process update: non-finite latent");
  const Tensor<T> centred = z - mu_;
  return {state.count + 1, state.sum + centred, state.sumsq + square(centred)};
}

template <typename T>
Predictive<T> ExchangeableProcess<T>::predictive(const ProcessState<T>& state) const {
  const ProcessParams<T> p = params();
  for (std::size_t d = 0; d < dims_; ++d) {
    if (!(p.var_minus_cov[d] > T(0))) throw NumericError("process: covariance reached the variance");
  }
  const T n = static_cast<T>(state.count);
  // c_n = rho / (v + (n-1) rho); sigma^2 = v - n rho c_n = (v - rho)(1 + c_n)
  const Tensor<T> c = p.cov / (p.var_minus_cov + n * p.cov);
  Predictive<T> out;
  out.loc = p.mu + c * state.sum;
  const Tensor<T> gaussian_scale2 = p.var_minus_cov * (c + T(1));
  if (mode_ == ProcessMode::gaussian) {
    out.scale2 = gaussian_scale2 + Tensor<T>::zeros(state.sum.shape());
    return out;
  }
  const Tensor<T> quad = (state.sumsq - c * square(state.sum)) / p.var_minus_cov;
  out.dof = p.dof + n;
  out.scale2 = (p.dof + quad) / out.dof * gaussian_scale2;
  return out;
}

template <typename T>
Tensor<T> ExchangeableProcess<T>::predictive_logpdf(const Tensor<T>& z, const ProcessState<T>& state) const {
  if (z.shape() != state.sum.shape()) {
    throw ShapeError("process logpdf: expected z " + to_string(state.sum.shape()) + ", got " + to_string(z.shape()));
  }
  const Predictive<T> pred = predictive(state);
  const Tensor<T> r2 = square(z - pred.loc) / pred.scale2;
  const T half_log_2pi = static_cast<T>(0.5 * std::log(2.0 * std::numbers::pi));
  Tensor<T> per_dim;
  if (mode_ == ProcessMode::gaussian) {
    per_dim = -(T(0.5) * (log(pred.scale2) + r2)) - half_log_2pi;
  } else {
    const Tensor<T>& nu = pred.dof;
    const Tensor<T> norm = lgamma((nu + T(1)) * T(0.5)) - lgamma(nu * T(0.5)) -
                           T(0.5) * log(nu * static_cast<T>(std::numbers::pi));
    per_dim = norm - T(0.5) * log(pred.scale2) - (nu + T(1)) * T(0.5) * log(r2 / nu + T(1));
  }
  const Tensor<T> out = row_sum(per_dim);
  for (T v : out.data())
    if (!std::isfinite(v)) throw NumericError("process logpdf: non-finite density");
  return out;
}

template <typename T>
Tensor<T> ExchangeableProcess<T>::sample(const ProcessState<T>& state, Rng& rng) const {
  NoGradGuard no_grad;
  const Predictive<T> pred = predictive(state);
  const std::size_t b = state.sum.dim(0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<T> out(b * dims_);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t d = 0; d < dims_; ++d) {
      const std::size_t j = i * dims_ + d;
      double eps = normal(rng);
      if (mode_ == ProcessMode::student_t) {
        const double nu = static_cast<double>(pred.dof[d]);
        std::chi_squared_distribution<double> chi2(nu);
        eps /= std::sqrt(chi2(rng) / nu);
      }
      out[j] = static_cast<T>(static_cast<double>(pred.loc[j]) + std::sqrt(static_cast<double>(pred.scale2[j])) * eps);
    }
  }
  return Tensor<T>::from({b, dims_}, std::move(out));
}

template class ExchangeableProcess<float>;
template class ExchangeableProcess<double>;

double scalar_logpdf(double z, const ScalarPredictive& pred) {
  const double r2 = (z - pred.loc) * (z - pred.loc) / pred.scale2;
  if (pred.dof <= 0.0) return -0.5 * (std::log(2.0 * std::numbers::pi * pred.scale2) + r2);
  const double nu = pred.dof;
  return std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) - 0.5 * std::log(nu * std::numbers::pi * pred.scale2) -
         0.5 * (nu + 1.0) * std::log1p(r2 / nu);
}

}  // namespace slicemap
