#include "acof/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "acof/errors.hpp"
#include "acof/fom.hpp"

namespace acof::metrics {

TopKSummary top_k_summary(std::span<const EvaluationRecord> records, std::size_t k) {
  if (k == 0) throw DomainError("top_k_summary: k must be >= 1");
  std::vector<const EvaluationRecord*> valid;
  for (const auto& r : records) {
    if (r.fom) valid.push_back(&r);
  }
  if (valid.empty()) throw EmptyReportError("no valid record to summarize");
  std::stable_sort(valid.begin(), valid.end(),
                   [](const auto* a, const auto* b) { return ranks_before(*a, *b); });
  valid.resize(std::min(k, valid.size()));

  TopKSummary s;
  s.k_used = valid.size();
  for (const auto* r : valid) {
    s.gain_db += r->meas.gain_db;
    s.ugbw_hz += r->meas.ugbw_hz;
    s.pm_deg += r->meas.pm_deg;
    s.power_w += r->meas.power_w;
    s.fom += *r->fom;
  }
  const double n = static_cast<double>(s.k_used);
  s.gain_db /= n;
  s.ugbw_hz /= n;
  s.pm_deg /= n;
  s.power_w /= n;
  s.fom /= n;
  return s;
}

double regret_of(std::span<const std::optional<double>> foms, std::size_t first_counted) {
  std::optional<double> best;
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t t = 0; t < foms.size(); ++t) {
    if (foms[t] && (!best || *foms[t] > *best)) best = foms[t];
    if (t < first_counted) continue;
    sum += best ? -*best : -kFomFloor;
    ++counted;
  }
  return counted == 0 ? 0.0 : sum / static_cast<double>(counted);
}

double regret(std::span<const EvaluationRecord> records, std::size_t first_counted) {
  std::vector<std::optional<double>> foms;
  foms.reserve(records.size());
  for (const auto& r : records) foms.push_back(r.fom);
  return regret_of(foms, first_counted);
}

ReliabilityRates reliability_rates(std::span<const EvaluationRecord> records) {
  if (records.empty()) return {};
  std::size_t valid = 0, feasible = 0;
  for (const auto& r : records) {
    valid += r.meas.sim_valid ? 1 : 0;
    feasible += r.phys_feasible ? 1 : 0;
  }
  const double n = static_cast<double>(records.size());
  return {static_cast<double>(valid) / n, static_cast<double>(feasible) / n};
}

// ---------------------------------------------------------------------------
// HDBSCAN

void HdbscanParams::validate() const {
  if (min_cluster_size < 2) throw ValidationError("min_cluster_size must be >= 2");
  if (min_samples < 1) throw ValidationError("min_samples must be >= 1");
}

namespace {

double euclidean(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

class DisjointSet {
 public:
  explicit DisjointSet(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent_[std::max(a, b)] = std::min(a, b);
  }

 private:
  std::vector<std::size_t> parent_;
};

// Single-linkage dendrogram in which all merges at one distance form a
// single node, so ties never produce arbitrary binary splits.
struct Dendrogram {
  struct Node {
    double distance = 0.0;
    std::size_t size = 1;
    std::vector<std::size_t> children;  // empty for points
  };
  std::vector<Node> nodes;  // points first, root last
};

Dendrogram build_dendrogram(std::size_t n, std::vector<MstEdge> edges) {
  std::sort(edges.begin(), edges.end(), [](const MstEdge& x, const MstEdge& y) {
    if (x.weight != y.weight) return x.weight < y.weight;
    if (x.a != y.a) return x.a < y.a;
    return x.b < y.b;
  });
  Dendrogram dg;
  dg.nodes.resize(n);
  std::vector<std::size_t> node_of(n);
  std::iota(node_of.begin(), node_of.end(), 0);
  DisjointSet dsu(n);

  for (std::size_t i = 0; i < edges.size();) {
    std::size_t j = i;
    while (j < edges.size() && edges[j].weight == edges[i].weight) ++j;
    std::vector<std::size_t> old_roots;
    for (std::size_t e = i; e < j; ++e) {
      old_roots.push_back(dsu.find(edges[e].a));
      old_roots.push_back(dsu.find(edges[e].b));
    }
    std::sort(old_roots.begin(), old_roots.end());
    old_roots.erase(std::unique(old_roots.begin(), old_roots.end()), old_roots.end());
    std::vector<std::size_t> old_nodes(old_roots.size());
    for (std::size_t r = 0; r < old_roots.size(); ++r) old_nodes[r] = node_of[old_roots[r]];
    for (std::size_t e = i; e < j; ++e) dsu.unite(edges[e].a, edges[e].b);

    std::map<std::size_t, std::vector<std::size_t>> groups;
    for (std::size_t r = 0; r < old_roots.size(); ++r) {
      groups[dsu.find(old_roots[r])].push_back(old_nodes[r]);
    }
    for (auto& [root, children] : groups) {
      Dendrogram::Node node;
      node.distance = edges[i].weight;
      node.size = 0;
      for (auto c : children) node.size += dg.nodes[c].size;
      node.children = std::move(children);
      node_of[root] = dg.nodes.size();
      dg.nodes.push_back(std::move(node));
    }
    i = j;
  }
  return dg;
}

void collect_points(const Dendrogram& dg, std::size_t node, std::vector<std::size_t>& out) {
  std::vector<std::size_t> stack{node};
  while (!stack.empty()) {
    const auto v = stack.back();
    stack.pop_back();
    if (dg.nodes[v].children.empty()) out.push_back(v);
    for (auto c : dg.nodes[v].children) stack.push_back(c);
  }
}

}  // namespace

double lambda_of(double distance) { return 1.0 / std::max(distance, 1e-12); }

std::vector<double> core_distances(std::span<const std::vector<double>> points,
                                   std::size_t min_samples) {
  const std::size_t n = points.size();
  std::vector<double> core(n, 0.0);
  if (n == 0) return core;
  const std::size_t k = std::min(std::max<std::size_t>(min_samples, 1), n) - 1;
  std::vector<double> dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) dist[j] = i == j ? 0.0 : euclidean(points[i], points[j]);
    std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
    core[i] = dist[k];
  }
  return core;
}

std::vector<double> mutual_reachability(std::span<const std::vector<double>> points,
                                        std::span<const double> core) {
  const std::size_t n = points.size();
  if (core.size() != n) throw StructuralError("core distance count differs from point count");
  std::vector<double> mr(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = std::max({core[i], core[j], euclidean(points[i], points[j])});
      mr[i * n + j] = d;
      mr[j * n + i] = d;
    }
  }
  return mr;
}

std::vector<MstEdge> minimum_spanning_tree(std::span<const double> weights, std::size_t n) {
  if (weights.size() != n * n) throw StructuralError("weight matrix is not n x n");
  std::vector<MstEdge> edges;
  if (n < 2) return edges;
  edges.reserve(n - 1);
  std::vector<bool> in_tree(n, false);
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> from(n, 0);
  std::size_t current = 0;
  in_tree[0] = true;
  for (std::size_t added = 1; added < n; ++added) {
    std::size_t next = n;
    for (std::size_t v = 0; v < n; ++v) {
      if (in_tree[v]) continue;
      const double w = weights[current * n + v];
      if (w < best[v]) {
        best[v] = w;
        from[v] = current;
      }
      if (next == n || best[v] < best[next]) next = v;
    }
    in_tree[next] = true;
    edges.push_back({std::min(from[next], next), std::max(from[next], next), best[next]});
    current = next;
  }
  return edges;
}

HdbscanResult hdbscan(std::span<const std::vector<double>> points, const HdbscanParams& params) {
  params.validate();
  const std::size_t n = points.size();
  HdbscanResult result;
  result.labels.assign(n, kNoise);
  if (n == 0) return result;
  for (const auto& p : points) {
    if (p.size() != points.front().size()) throw StructuralError("hdbscan: ragged point set");
  }

  const auto core = core_distances(points, params.min_samples);
  const auto mr = mutual_reachability(points, core);
  const auto dg = build_dendrogram(n, minimum_spanning_tree(mr, n));
  const std::size_t mcs = params.min_cluster_size;

  // Condense: walk each cluster down the dendrogram until it splits into at
  // least two children of size >= mcs or evaporates.
  // The root is born where the whole set first becomes connected, so points
  // shed before any real split still count toward its stability.
  auto& tree = result.tree;
  tree.push_back({-1, n > 1 ? lambda_of(dg.nodes.back().distance) : 0.0, 0.0, n, {}});
  std::vector<int> fell_from(n, 0);
  std::vector<std::pair<int, std::size_t>> work{{0, dg.nodes.size() - 1}};
  while (!work.empty()) {
    auto [cluster, node] = work.back();
    work.pop_back();
    const double birth = tree[static_cast<std::size_t>(cluster)].lambda_birth;
    double stability = 0.0;
    for (;;) {
      const auto& nd = dg.nodes[node];
      if (nd.children.empty()) {  // a single point left in the cluster
        fell_from[node] = cluster;
        break;
      }
      const double lambda = lambda_of(nd.distance);
      std::vector<std::size_t> big;
      for (auto c : nd.children) {
        if (dg.nodes[c].size >= mcs) {
          big.push_back(c);
          continue;
        }
        std::vector<std::size_t> pts;
        collect_points(dg, c, pts);
        for (auto p : pts) fell_from[p] = cluster;
        stability += static_cast<double>(pts.size()) * (lambda - birth);
      }
      if (big.size() == 1) {
        node = big.front();
        continue;
      }
      for (auto c : big) {
        stability += static_cast<double>(dg.nodes[c].size) * (lambda - birth);
        const int child = static_cast<int>(tree.size());
        tree.push_back({cluster, lambda, 0.0, dg.nodes[c].size, {}});
        tree[static_cast<std::size_t>(cluster)].children.push_back(child);
        work.emplace_back(child, c);
      }
      break;
    }
    tree[static_cast<std::size_t>(cluster)].stability = stability;
  }

  // Excess-of-mass selection; children are processed before parents because
  // they always carry larger indices. The root competes too, which is how a
  // single dense blob comes out as one cluster.
  std::vector<double> value(tree.size(), 0.0);
  std::vector<bool> chosen(tree.size(), false);
  for (std::size_t c = tree.size(); c-- > 0;) {
    double child_sum = 0.0;
    for (int ch : tree[c].children) child_sum += value[static_cast<std::size_t>(ch)];
    if (!tree[c].children.empty() && child_sum > tree[c].stability) {
      value[c] = child_sum;
    } else {
      value[c] = tree[c].stability;
      chosen[c] = true;
    }
  }
  std::vector<int> selected;
  if (chosen[0]) {
    if (n >= mcs) selected.push_back(0);
  } else {
    std::vector<int> stack(tree[0].children.rbegin(), tree[0].children.rend());
    while (!stack.empty()) {
      const int c = stack.back();
      stack.pop_back();
      if (chosen[static_cast<std::size_t>(c)]) {
        selected.push_back(c);
        continue;
      }
      const auto& ch = tree[static_cast<std::size_t>(c)].children;
      stack.insert(stack.end(), ch.rbegin(), ch.rend());
    }
  }

  // Label each point by the selected cluster above the one it fell out of.
  std::vector<int> label_of_cluster(tree.size(), kNoise);
  for (int c : selected) label_of_cluster[static_cast<std::size_t>(c)] = 0;
  for (std::size_t p = 0; p < n; ++p) {
    int c = fell_from[p];
    while (c >= 0 && label_of_cluster[static_cast<std::size_t>(c)] == kNoise) {
      c = tree[static_cast<std::size_t>(c)].parent;
    }
    result.labels[p] = c < 0 ? kNoise : c;
  }
  // Renumber clusters by their lowest member index.
  std::map<int, int> renumber;
  for (auto& l : result.labels) {
    if (l == kNoise) continue;
    auto [it, inserted] = renumber.try_emplace(l, static_cast<int>(renumber.size()));
    l = it->second;
  }
  result.selected = std::move(selected);
  result.clusters = result.selected.size();
  return result;
}

std::size_t count_regions(std::span<const EvaluationRecord> records, const ParameterSpace& space,
                          const HdbscanParams& params) {
  std::vector<std::vector<double>> cloud;
  cloud.reserve(records.size());
  for (const auto& r : records) cloud.push_back(space.normalize(r.point));
  return hdbscan(cloud, params).clusters;
}

// ---------------------------------------------------------------------------

MetricsReport compute_report(std::span<const EvaluationRecord> records, const ParameterSpace& space,
                             const MetricsOptions& options) {
  MetricsReport report;
  report.options = options;
  report.records = records.size();
  for (const auto& r : records) report.seed_records += r.round == 0 ? 1 : 0;
  try {
    report.top_k = top_k_summary(records, options.top_k);
  } catch (const EmptyReportError&) {
  }
  report.rates = reliability_rates(records);
  report.regret = regret(records, options.regret_include_seeding ? 0 : report.seed_records);
  report.regions = records.empty() ? 0 : count_regions(records, space, options.hdbscan);

  std::optional<double> best;
  for (std::size_t i = 0; i < records.size();) {
    RoundStats rs;
    rs.round = records[i].round;
    double sum = 0.0;
    for (; i < records.size() && records[i].round == rs.round; ++i) {
      const auto& r = records[i];
      ++rs.attempted;
      rs.sim_valid += r.meas.sim_valid ? 1 : 0;
      rs.phys_feasible += r.phys_feasible ? 1 : 0;
      if (!r.fom) continue;
      sum += *r.fom;
      if (!rs.best_fom || *r.fom > *rs.best_fom) rs.best_fom = r.fom;
      if (!best || *r.fom > *best) best = r.fom;
    }
    const std::size_t valid = rs.sim_valid;
    if (valid > 0) rs.mean_fom = sum / static_cast<double>(valid);
    rs.best_so_far = best;
    report.rounds.push_back(rs);
  }
  return report;
}

}  // namespace acof::metrics
