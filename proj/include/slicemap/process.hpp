#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "slicemap/flow.hpp"
#include "slicemap/random.hpp"
#include "slicemap/tensor.hpp"

namespace slicemap {

enum class ProcessMode { gaussian, student_t };

std::string to_string(ProcessMode mode);
// Accepts "gaussian" and "student-t"; throws ConfigError otherwise.
ProcessMode parse_process_mode(const std::string& name);

// Constrained per-dimension parameters, each [D].
template <typename T>
struct ProcessParams {
  Tensor<T> mu;
  Tensor<T> var;
  Tensor<T> cov;
  Tensor<T> var_minus_cov;  // v - rho, computed without cancellation
  Tensor<T> dof;            // undefined in Gaussian mode
};

// Running sufficient statistics for B independent sequences. All sequences
// in a batch share the same count.
template <typename T>
struct ProcessState {
  std::size_t count = 0;
  Tensor<T> sum;     // [B, D], sum of (z - mu)
  Tensor<T> sumsq;   // [B, D], sum of (z - mu)^2
};

template <typename T>
struct Predictive {
  Tensor<T> loc;     // [B, D]
  Tensor<T> scale2;  // [B, D]
  Tensor<T> dof;     // [D]; undefined in Gaussian mode
};

// Exchangeable latent process with compound-symmetric covariance: every
// latent dimension d has mean mu_d, variance v_d and common covariance
// rho_d between any two sequence elements. Student-t mode adds per-dimension
// degrees of freedom nu_d.
//
//   v = softplus(a) + 1e-6,  rho = v * sigmoid(b),  nu = 2 + softplus(c)
template <typename T>
class ExchangeableProcess {
 public:
  ExchangeableProcess(std::size_t dims, ProcessMode mode);

  std::size_t dims() const { return dims_; }
  ProcessMode mode() const { return mode_; }

  ProcessParams<T> params() const;
  // Gaussian mode omits the degrees-of-freedom parameter.
  std::vector<NamedTensor<T>> parameters() const;

  // Sets the unconstrained parameters so the constrained values are the
  // given ones (broadcast to every dimension).
  void set_constrained(double mu, double var, double cov, double dof);

  ProcessState<T> init_state(std::size_t batch = 1) const;
  // z [B, D]. Throws NumericError for non-finite z.
  ProcessState<T> update_state(const ProcessState<T>& state, const Tensor<T>& z) const;

  Predictive<T> predictive(const ProcessState<T>& state) const;
  // Log density of z [B, D] under the predictive, summed over dimensions: [B].
  Tensor<T> predictive_logpdf(const Tensor<T>& z, const ProcessState<T>& state) const;
  // [B, D] draw from the predictive. Not recorded on the tape.
  Tensor<T> sample(const ProcessState<T>& state, Rng& rng) const;

 private:
  std::size_t dims_;
  ProcessMode mode_;
  Tensor<T> mu_;       // [D]
  Tensor<T> var_raw_;  // [D]
  Tensor<T> cov_raw_;  // [D]
  Tensor<T> dof_raw_;  // [D]
};

// --- brute-force reference for one latent dimension ------------------------

struct ScalarProcess {
  double mu = 0.0;
  double var = 1.0;
  double cov = 0.0;
  double dof = 0.0;  // <= 0 selects Gaussian
  bool student_t() const { return dof > 0.0; }
};

struct ScalarPredictive {
  double loc = 0.0;
  double scale2 = 0.0;
  double dof = 0.0;  // 0 in Gaussian mode
};

// Conditions element n+1 on `observations` by solving with the full n x n
// compound-symmetric matrix. Throws NumericError if it is not positive
// definite.
ScalarPredictive oracle_conditioning(const ScalarProcess& p, const std::vector<double>& observations);

// Exact multivariate Gaussian / multivariate-t log density of the sequence.
double joint_logpdf_oracle(const ScalarProcess& p, const std::vector<double>& observations);

// Univariate Gaussian or location-scale t log density.
double scalar_logpdf(double z, const ScalarPredictive& pred);

}  // namespace slicemap
