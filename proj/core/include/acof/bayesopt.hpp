#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "acof/rng.hpp"
#include "acof/types.hpp"

namespace acof::bo {

/// Squared-exponential ARD kernel hyperparameters.
struct Kernel {
  double signal_variance = 1.0;
  std::vector<double> lengthscales;
  double noise_variance = 1e-6;
};

/// sigma_f^2 * exp(-1/2 sum_i (a_i - b_i)^2 / l_i^2)
double kernel_eval(std::span<const double> a, std::span<const double> b, const Kernel& kernel);

struct Observation {
  std::vector<double> z;  // normalized input
  double value = 0.0;     // fom
};

struct FitOptions {
  std::size_t max_points = 600;   // subset-of-data cap
  std::size_t keep_best = 300;
  std::size_t keep_recent = 300;
  std::size_t hyper_subset = 128;  // points used for the likelihood search
  int steps_per_start = 60;
};

struct Posterior {
  double mean = 0.0;
  double variance = 0.0;
};

/// Gaussian-process regression model. Immutable after fitting.
class GpModel {
 public:
  /// Hyperparameters by maximizing the log marginal likelihood from eight
  /// fixed starts with coordinate ascent in log space. Targets are centered
  /// and scaled to unit variance first; the kernel lives in those units.
  /// Inputs must share one dimension; at least two observations are required.
  static GpModel fit(std::span<const Observation> observations, const FitOptions& options = {});
  /// Fit with fixed hyperparameters in raw target units (no search, no
  /// subsetting, target_scale 1).
  static GpModel fit_with_kernel(std::span<const Observation> observations, const Kernel& kernel);

  Posterior predict(std::span<const double> z) const;

  std::size_t dimension() const { return dim_; }
  std::size_t size() const { return inputs_.size(); }
  const Kernel& kernel() const { return kernel_; }
  double target_mean() const { return target_mean_; }
  /// Divisor applied to centered targets; predictions are scaled back.
  double target_scale() const { return target_scale_; }
  /// Best raw target among the training observations.
  double best_target() const { return best_target_; }
  double log_marginal_likelihood() const { return lml_; }
  const std::vector<std::vector<double>>& train_inputs() const { return inputs_; }
  /// Centered targets divided by target_scale.
  const std::vector<double>& train_targets() const { return targets_; }
  /// Row-major lower-triangular factor of K + sigma_n^2 I.
  const std::vector<double>& cholesky_factor() const { return chol_; }
  const std::vector<double>& alpha() const { return alpha_; }

 private:
  GpModel() = default;
  static GpModel build(std::vector<std::vector<double>> inputs, std::vector<double> raw_targets,
                       Kernel kernel, double scale);

  std::size_t dim_ = 0;
  std::vector<std::vector<double>> inputs_;
  std::vector<double> targets_;
  Kernel kernel_;
  std::vector<double> chol_;
  std::vector<double> alpha_;
  double target_mean_ = 0.0;
  double target_scale_ = 1.0;
  double best_target_ = 0.0;
  double lml_ = 0.0;
};

/// Free-function spellings of the model operations.
inline GpModel fit_gp(std::span<const Observation> obs, const FitOptions& options = {}) {
  return GpModel::fit(obs, options);
}
inline Posterior posterior(const GpModel& model, std::span<const double> z) {
  return model.predict(z);
}

/// Indices kept when a training set exceeds the cap: the keep_best best by
/// value (earlier index wins ties) united with the keep_recent last ones,
/// returned in ascending order.
std::vector<std::size_t> select_training_subset(std::span<const Observation> obs,
                                                std::size_t max_points, std::size_t keep_best,
                                                std::size_t keep_recent);

/// Expected improvement over f_best + xi for a maximization problem.
double expected_improvement(double mean, double variance, double f_best, double xi);

double normal_pdf(double u);
double normal_cdf(double u);

struct AcquisitionParams {
  std::size_t pool_size = 1024;
  std::size_t batch_size = 10;
  double xi = 0.0;
  double min_pairwise_distance = 0.05;  // normalized units

  void validate() const;
};

/// Greedy descending-score selection with a minimum pairwise distance that
/// is halved until `count` points qualify. Returns pool indices.
std::vector<std::size_t> select_batch(std::span<const std::vector<double>> pool,
                                      std::span<const double> scores, std::size_t count,
                                      double min_pairwise_distance);

/// Samples a uniform pool inside the region (normalized coordinates),
/// scores it by expected improvement and returns batch_size points, all
/// inside the region. Throws DegenerateRegionError on zero-width ranges.
std::vector<DesignPoint> propose_batch(const GpModel& model, const Region& region,
                                       const ParameterSpace& space,
                                       const AcquisitionParams& params, RandomStream& rng);

/// Uniform samples inside a legal region (used before a model exists).
std::vector<DesignPoint> sample_uniform(const Region& region, const ParameterSpace& space,
                                        std::size_t count, RandomStream& rng);

}  // namespace acof::bo
