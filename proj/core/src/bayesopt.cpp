#include "acof/bayesopt.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include "acof/errors.hpp"

namespace acof::bo {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr double kLengthscaleMin = 0.05;
constexpr double kLengthscaleMax = 5.0;
constexpr double kSignalMin = 0.01;
constexpr double kSignalMax = 25.0;
constexpr double kNoiseMin = 1e-8;
constexpr double kNoiseMax = 1.0;
constexpr std::array<double, 4> kStartLengthscales{0.2, 0.5, 1.0, 2.0};
constexpr std::array<double, 2> kStartNoise{1e-6, 1e-2};
constexpr double kLog2Pi = 1.8378770664093453;

void check_observations(std::span<const Observation> obs) {
  if (obs.size() < 2) {
    throw InsufficientDataError("GP fit needs at least 2 observations, got " +
                                std::to_string(obs.size()));
  }
  const std::size_t d = obs.front().z.size();
  if (d == 0) throw StructuralError("GP observations have zero dimension");
  for (const auto& o : obs) {
    if (o.z.size() != d) throw StructuralError("GP observations have mixed dimensions");
    if (!std::isfinite(o.value)) throw DomainError("GP observation with non-finite target");
  }
}

/// Per-dimension squared differences, reused across likelihood evaluations.
struct PairwiseDiffs {
  std::size_t n = 0;
  std::size_t d = 0;
  std::vector<Eigen::MatrixXd> sq;  // one n x n matrix per dimension

  explicit PairwiseDiffs(const std::vector<std::vector<double>>& x)
      : n(x.size()), d(x.front().size()), sq(d, Eigen::MatrixXd::Zero(n, n)) {
    for (std::size_t k = 0; k < d; ++k) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
          const double diff = x[i][k] - x[j][k];
          sq[k](i, j) = sq[k](j, i) = diff * diff;
        }
      }
    }
  }
};

/// Log marginal likelihood for log-space hyperparameters
/// theta = (log l_1..d, log sf2, log sn2); -inf when factorization fails.
double log_likelihood(const PairwiseDiffs& diffs, const Eigen::VectorXd& y,
                      const std::vector<double>& theta) {
  const std::size_t d = diffs.d;
  Eigen::MatrixXd scaled = Eigen::MatrixXd::Zero(diffs.n, diffs.n);
  for (std::size_t k = 0; k < d; ++k) {
    const double inv_l2 = std::exp(-2.0 * theta[k]);
    scaled.noalias() += inv_l2 * diffs.sq[k];
  }
  const double sf2 = std::exp(theta[d]);
  const double sn2 = std::exp(theta[d + 1]);
  Eigen::MatrixXd K = sf2 * (-0.5 * scaled.array()).exp().matrix();
  K.diagonal().array() += sn2;
  Eigen::LLT<Eigen::MatrixXd> llt(K);
  if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
  const Eigen::VectorXd alpha = llt.solve(y);
  const auto& L = llt.matrixLLT();
  double log_det = 0.0;
  for (Eigen::Index i = 0; i < L.rows(); ++i) log_det += std::log(L(i, i));
  const double value = -0.5 * y.dot(alpha) - log_det - 0.5 * static_cast<double>(diffs.n) * kLog2Pi;
  return std::isfinite(value) ? value : -std::numeric_limits<double>::infinity();
}

Kernel search_hyperparameters(const std::vector<std::vector<double>>& x,
                              const std::vector<double>& raw_y, int steps_per_start) {
  const std::size_t n = x.size();
  const std::size_t d = x.front().size();
  const double mean = std::accumulate(raw_y.begin(), raw_y.end(), 0.0) / static_cast<double>(n);
  Eigen::VectorXd y(n);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    y[static_cast<Eigen::Index>(i)] = raw_y[i] - mean;
    var += (raw_y[i] - mean) * (raw_y[i] - mean);
  }
  var /= static_cast<double>(n);
  const double sf2_start = std::clamp(var, kSignalMin, kSignalMax);

  const PairwiseDiffs diffs(x);
  std::vector<double> lo(d + 2, std::log(kLengthscaleMin)), hi(d + 2, std::log(kLengthscaleMax));
  lo[d] = std::log(kSignalMin);
  hi[d] = std::log(kSignalMax);
  lo[d + 1] = std::log(kNoiseMin);
  hi[d + 1] = std::log(kNoiseMax);

  std::vector<double> best_theta;
  double best_value = -std::numeric_limits<double>::infinity();

  for (double l0 : kStartLengthscales) {
    for (double n0 : kStartNoise) {
      std::vector<double> theta(d + 2, std::log(l0));
      theta[d] = std::log(sf2_start);
      theta[d + 1] = std::log(n0);
      double value = log_likelihood(diffs, y, theta);
      std::vector<double> step(d + 2, 1.0);

      for (int t = 0; t < steps_per_start; ++t) {
        const std::size_t j = static_cast<std::size_t>(t) % (d + 2);
        bool moved = false;
        for (double dir : {1.0, -1.0}) {
          auto trial = theta;
          trial[j] = std::clamp(theta[j] + dir * step[j], lo[j], hi[j]);
          if (trial[j] == theta[j]) continue;
          const double v = log_likelihood(diffs, y, trial);
          if (v > value) {
            theta = std::move(trial);
            value = v;
            moved = true;
            break;
          }
        }
        step[j] = moved ? std::min(step[j] * 1.5, 2.0) : step[j] * 0.5;
      }
      if (best_theta.empty() || value > best_value) {
        best_value = value;
        best_theta = theta;
      }
    }
  }

  Kernel k;
  k.lengthscales.resize(d);
  for (std::size_t i = 0; i < d; ++i) k.lengthscales[i] = std::exp(best_theta[i]);
  k.signal_variance = std::exp(best_theta[d]);
  k.noise_variance = std::exp(best_theta[d + 1]);
  return k;
}

}  // namespace

double kernel_eval(std::span<const double> a, std::span<const double> b, const Kernel& kernel) {
  if (a.size() != b.size() || a.size() != kernel.lengthscales.size()) {
    throw StructuralError("kernel_eval: dimension mismatch");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double r = (a[i] - b[i]) / kernel.lengthscales[i];
    s += r * r;
  }
  return kernel.signal_variance * std::exp(-0.5 * s);
}

std::vector<std::size_t> select_training_subset(std::span<const Observation> obs,
                                                std::size_t max_points, std::size_t keep_best,
                                                std::size_t keep_recent) {
  const std::size_t n = obs.size();
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  if (n <= max_points) return all;

  std::vector<std::size_t> by_value = all;
  std::stable_sort(by_value.begin(), by_value.end(),
                   [&](std::size_t a, std::size_t b) { return obs[a].value > obs[b].value; });
  std::vector<char> keep(n, 0);
  for (std::size_t i = 0; i < std::min(keep_best, n); ++i) keep[by_value[i]] = 1;
  for (std::size_t i = n - std::min(keep_recent, n); i < n; ++i) keep[i] = 1;

  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; ++i) {
    if (keep[i]) out.push_back(i);
  }
  return out;
}

GpModel GpModel::fit(std::span<const Observation> observations, const FitOptions& options) {
  check_observations(observations);
  const auto idx = select_training_subset(observations, options.max_points, options.keep_best,
                                          options.keep_recent);
  std::vector<std::vector<double>> x;
  std::vector<double> y;
  x.reserve(idx.size());
  y.reserve(idx.size());
  for (auto i : idx) {
    x.push_back(observations[i].z);
    y.push_back(observations[i].value);
  }

  // The likelihood search runs on unit-variance targets so the fixed
  // hyperparameter bounds suit objectives of any amplitude.
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  double var = 0.0;
  for (double v : y) var += (v - mean) * (v - mean);
  var /= static_cast<double>(y.size());
  const double scale = var > 1e-24 ? std::sqrt(var) : 1.0;
  std::vector<double> ys(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) ys[i] = (y[i] - mean) / scale;

  Kernel kernel;
  if (x.size() > options.hyper_subset && options.hyper_subset >= 2) {
    std::vector<Observation> subset_obs;
    subset_obs.reserve(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) subset_obs.push_back({x[i], ys[i]});
    const auto h = select_training_subset(subset_obs, options.hyper_subset,
                                          options.hyper_subset / 2,
                                          options.hyper_subset - options.hyper_subset / 2);
    std::vector<std::vector<double>> hx;
    std::vector<double> hy;
    for (auto i : h) {
      hx.push_back(x[i]);
      hy.push_back(ys[i]);
    }
    kernel = search_hyperparameters(hx, hy, options.steps_per_start);
  } else {
    kernel = search_hyperparameters(x, ys, options.steps_per_start);
  }
  return build(std::move(x), std::move(y), std::move(kernel), scale);
}

GpModel GpModel::fit_with_kernel(std::span<const Observation> observations, const Kernel& kernel) {
  check_observations(observations);
  if (kernel.lengthscales.size() != observations.front().z.size()) {
    throw StructuralError("kernel lengthscales do not match observation dimension");
  }
  std::vector<std::vector<double>> x;
  std::vector<double> y;
  for (const auto& o : observations) {
    x.push_back(o.z);
    y.push_back(o.value);
  }
  return build(std::move(x), std::move(y), kernel, 1.0);
}

GpModel GpModel::build(std::vector<std::vector<double>> inputs, std::vector<double> raw_targets,
                       Kernel kernel, double scale) {
  if (!(kernel.signal_variance > 0.0)) throw DomainError("signal variance must be > 0");
  for (double l : kernel.lengthscales) {
    if (!(l > 0.0)) throw DomainError("lengthscales must be > 0");
  }
  kernel.noise_variance = std::max(kernel.noise_variance, 1e-10);

  GpModel m;
  const std::size_t n = inputs.size();
  m.dim_ = inputs.front().size();
  m.target_mean_ = std::accumulate(raw_targets.begin(), raw_targets.end(), 0.0) / static_cast<double>(n);
  m.best_target_ = *std::max_element(raw_targets.begin(), raw_targets.end());
  m.target_scale_ = scale;

  Eigen::MatrixXd K(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    K(i, i) = kernel.signal_variance;
    for (std::size_t j = 0; j < i; ++j) {
      K(i, j) = K(j, i) = kernel_eval(inputs[i], inputs[j], kernel);
    }
  }

  Eigen::LLT<Eigen::MatrixXd> llt;
  double jitter = 0.0;
  for (;;) {
    Eigen::MatrixXd A = K;
    A.diagonal().array() += kernel.noise_variance + jitter;
    llt.compute(A);
    if (llt.info() == Eigen::Success) break;
    jitter = jitter == 0.0 ? 1e-10 : jitter * 10.0;
    if (jitter > 1e-6 * (1.0 + 1e-9)) {
      throw NumericalError("Cholesky factorization failed after jitter escalation to 1e-6");
    }
  }
  kernel.noise_variance += jitter;

  Eigen::VectorXd y(n);
  m.targets_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    m.targets_[i] = (raw_targets[i] - m.target_mean_) / scale;
    y[static_cast<Eigen::Index>(i)] = m.targets_[i];
  }
  const Eigen::VectorXd alpha = llt.solve(y);
  const Eigen::MatrixXd L = llt.matrixL();

  double log_det = 0.0;
  for (std::size_t i = 0; i < n; ++i) log_det += std::log(L(i, i));
  m.lml_ = -0.5 * y.dot(alpha) - log_det - 0.5 * static_cast<double>(n) * kLog2Pi;

  m.chol_.resize(n * n);
  Eigen::Map<RowMatrix>(m.chol_.data(), n, n) = L;
  m.alpha_.assign(alpha.data(), alpha.data() + n);
  m.inputs_ = std::move(inputs);
  m.kernel_ = std::move(kernel);
  return m;
}

Posterior GpModel::predict(std::span<const double> z) const {
  if (z.size() != dim_) throw StructuralError("posterior: dimension mismatch");
  const std::size_t n = inputs_.size();
  Eigen::VectorXd k(n);
  for (std::size_t i = 0; i < n; ++i) k[static_cast<Eigen::Index>(i)] = kernel_eval(z, inputs_[i], kernel_);
  const Eigen::Map<const RowMatrix> L(chol_.data(), n, n);
  const Eigen::Map<const Eigen::VectorXd> a(alpha_.data(), n);
  const Eigen::VectorXd v = L.triangularView<Eigen::Lower>().solve(k);
  Posterior p;
  p.mean = target_mean_ + target_scale_ * k.dot(a);
  p.variance = target_scale_ * target_scale_ * std::max(0.0, kernel_.signal_variance - v.squaredNorm());
  return p;
}

double normal_pdf(double u) { return std::exp(-0.5 * u * u) / std::sqrt(2.0 * std::numbers::pi); }

double normal_cdf(double u) { return 0.5 * std::erfc(-u / std::numbers::sqrt2); }

double expected_improvement(double mean, double variance, double f_best, double xi) {
  const double sigma = std::sqrt(std::max(variance, 0.0));
  const double delta = mean - f_best - xi;
  if (sigma == 0.0) return std::max(delta, 0.0);
  const double u = delta / sigma;
  return std::max(0.0, delta * normal_cdf(u) + sigma * normal_pdf(u));
}

void AcquisitionParams::validate() const {
  if (batch_size < 1) throw ValidationError("acquisition.batch_size must be >= 1");
  if (pool_size < batch_size) throw ValidationError("acquisition.pool_size must be >= batch size");
  if (!(xi >= 0.0)) throw ValidationError("acquisition.xi must be >= 0");
  if (!(min_pairwise_distance >= 0.0)) {
    throw ValidationError("acquisition.min_pairwise_distance must be >= 0");
  }
}

std::vector<std::size_t> select_batch(std::span<const std::vector<double>> pool,
                                      std::span<const double> scores, std::size_t count,
                                      double min_pairwise_distance) {
  if (pool.size() != scores.size()) throw StructuralError("select_batch: pool/score size mismatch");
  count = std::min(count, pool.size());
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  double min_d2 = min_pairwise_distance * min_pairwise_distance;
  for (;;) {
    std::vector<std::size_t> chosen;
    for (auto idx : order) {
      if (chosen.size() == count) break;
      bool ok = true;
      for (auto c : chosen) {
        double d2 = 0.0;
        for (std::size_t j = 0; j < pool[idx].size(); ++j) {
          const double diff = pool[idx][j] - pool[c][j];
          d2 += diff * diff;
        }
        if (d2 < min_d2) {
          ok = false;
          break;
        }
      }
      if (ok) chosen.push_back(idx);
    }
    if (chosen.size() == count || min_d2 == 0.0) return chosen;
    min_d2 *= 0.25;  // halve the distance
    if (min_d2 < 1e-24) min_d2 = 0.0;
  }
}

namespace {

std::vector<Interval> unit_bounds(const Region& region, const ParameterSpace& space) {
  space.check_dimension(region.size(), "region");
  if (!is_legal(region, space)) throw DegenerateRegionError("region is not within the legal bounds");
  std::vector<Interval> u(region.size());
  for (std::size_t i = 0; i < region.size(); ++i) {
    u[i] = space.unit_interval(i, region.ranges[i]);
    if (!(u[i].hi > u[i].lo)) {
      throw DegenerateRegionError("zero-width range for parameter " + space[i].name);
    }
  }
  return u;
}

DesignPoint to_point(const std::vector<double>& z, const Region& region, const ParameterSpace& space) {
  DesignPoint p;
  p.values.resize(z.size());
  for (std::size_t j = 0; j < z.size(); ++j) {
    p.values[j] = std::clamp(space.to_native(j, z[j]), region.ranges[j].lo, region.ranges[j].hi);
  }
  return p;
}

}  // namespace

std::vector<DesignPoint> propose_batch(const GpModel& model, const Region& region,
                                       const ParameterSpace& space,
                                       const AcquisitionParams& params, RandomStream& rng) {
  params.validate();
  const auto u = unit_bounds(region, space);
  if (model.dimension() != space.dimension()) throw StructuralError("model/space dimension mismatch");

  const std::size_t d = space.dimension();
  const std::size_t m = params.pool_size;
  std::vector<std::vector<double>> pool(m, std::vector<double>(d));
  for (auto& z : pool) {
    for (std::size_t j = 0; j < d; ++j) z[j] = u[j].lo + (u[j].hi - u[j].lo) * rng.uniform();
  }

  // Batched posterior: one triangular solve against all pool columns.
  const std::size_t n = model.size();
  Eigen::MatrixXd Ks(n, m);
  for (std::size_t c = 0; c < m; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      Ks(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) =
          kernel_eval(pool[c], model.train_inputs()[i], model.kernel());
    }
  }
  const Eigen::Map<const RowMatrix> L(model.cholesky_factor().data(), n, n);
  const Eigen::Map<const Eigen::VectorXd> alpha(model.alpha().data(), n);
  const Eigen::VectorXd means = Ks.transpose() * alpha;
  const Eigen::MatrixXd V = L.triangularView<Eigen::Lower>().solve(Ks);
  const Eigen::VectorXd vnorm = V.colwise().squaredNorm().transpose();

  std::vector<double> scores(m);
  for (std::size_t c = 0; c < m; ++c) {
    const auto ci = static_cast<Eigen::Index>(c);
    const double scale = model.target_scale();
    const double mean = model.target_mean() + scale * means[ci];
    const double var = scale * scale * std::max(0.0, model.kernel().signal_variance - vnorm[ci]);
    scores[c] = expected_improvement(mean, var, model.best_target(), params.xi);
  }

  const auto chosen = select_batch(pool, scores, params.batch_size, params.min_pairwise_distance);
  std::vector<DesignPoint> out;
  out.reserve(chosen.size());
  for (auto idx : chosen) out.push_back(to_point(pool[idx], region, space));
  return out;
}

std::vector<DesignPoint> sample_uniform(const Region& region, const ParameterSpace& space,
                                        std::size_t count, RandomStream& rng) {
  const auto u = unit_bounds(region, space);
  std::vector<DesignPoint> out;
  out.reserve(count);
  std::vector<double> z(space.dimension());
  for (std::size_t k = 0; k < count; ++k) {
    for (std::size_t j = 0; j < z.size(); ++j) z[j] = u[j].lo + (u[j].hi - u[j].lo) * rng.uniform();
    out.push_back(to_point(z, region, space));
  }
  return out;
}

}  // namespace acof::bo
