#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "acof/types.hpp"

namespace acof::metrics {

struct TopKSummary {
  std::size_t k_used = 0;
  double gain_db = 0.0;
  double ugbw_hz = 0.0;
  double pm_deg = 0.0;
  double power_w = 0.0;
  double fom = 0.0;
};

/// Means over the k best valid records. Throws EmptyReportError when no
/// record has a fom.
TopKSummary top_k_summary(std::span<const EvaluationRecord> records, std::size_t k = 10);

/// Average gap between 0 and the best fom so far; steps before the first
/// valid record count as the floor gap. Records must be in step order.
/// With first_counted > 0 the leading steps still update the running best
/// but are left out of the average.
double regret(std::span<const EvaluationRecord> records, std::size_t first_counted = 0);

/// Regret of a raw per-step fom sequence (absent = invalid step).
double regret_of(std::span<const std::optional<double>> foms, std::size_t first_counted = 0);

struct ReliabilityRates {
  double sim_valid = 0.0;
  double phys_feasible = 0.0;
};

ReliabilityRates reliability_rates(std::span<const EvaluationRecord> records);

// ---------------------------------------------------------------------------
// HDBSCAN

inline constexpr int kNoise = -1;

struct HdbscanParams {
  std::size_t min_cluster_size = 10;
  std::size_t min_samples = 5;

  void validate() const;
};

struct MstEdge {
  std::size_t a = 0;
  std::size_t b = 0;
  double weight = 0.0;
};

/// Distance to the min_samples-th nearest neighbor, the point itself
/// counting as the first (k is capped at n).
std::vector<double> core_distances(std::span<const std::vector<double>> points,
                                   std::size_t min_samples);

/// Dense row-major n x n matrix of max(core_a, core_b, |a - b|); zero diagonal.
std::vector<double> mutual_reachability(std::span<const std::vector<double>> points,
                                        std::span<const double> core);

/// Prim's algorithm on a dense symmetric weight matrix; n - 1 edges.
std::vector<MstEdge> minimum_spanning_tree(std::span<const double> weights, std::size_t n);

/// lambda = 1 / distance, with distances below 1e-12 treated as 1e-12.
double lambda_of(double distance);

struct CondensedCluster {
  int parent = -1;  // -1 for the root
  double lambda_birth = 0.0;
  double stability = 0.0;
  std::size_t size = 0;
  std::vector<int> children;
};

struct HdbscanResult {
  std::vector<int> labels;  // cluster id or kNoise per point
  std::size_t clusters = 0;
  std::vector<CondensedCluster> tree;  // index 0 is the root
  std::vector<int> selected;           // tree indices of extracted clusters
};

HdbscanResult hdbscan(std::span<const std::vector<double>> points, const HdbscanParams& params);

/// Number of HDBSCAN clusters over the normalized coordinates of every
/// attempted design.
std::size_t count_regions(std::span<const EvaluationRecord> records, const ParameterSpace& space,
                          const HdbscanParams& params = {});

// ---------------------------------------------------------------------------
// report

struct RoundStats {
  std::uint32_t round = 0;  // 0 = seeding
  std::size_t attempted = 0;
  std::size_t sim_valid = 0;
  std::size_t phys_feasible = 0;
  std::optional<double> best_fom;    // within the round
  std::optional<double> mean_fom;    // over the round's valid records
  std::optional<double> best_so_far;  // global, at the end of the round
};

struct MetricsOptions {
  std::size_t top_k = 10;
  HdbscanParams hdbscan;
  bool regret_include_seeding = true;
};

struct MetricsReport {
  std::size_t records = 0;
  std::size_t seed_records = 0;
  std::optional<TopKSummary> top_k;  // absent when nothing was valid
  ReliabilityRates rates;
  double regret = 0.0;
  std::size_t regions = 0;
  MetricsOptions options;
  std::vector<RoundStats> rounds;
};

/// Records must be in step order; round 0 marks seeding.
MetricsReport compute_report(std::span<const EvaluationRecord> records, const ParameterSpace& space,
                             const MetricsOptions& options = {});

}  // namespace acof::metrics
