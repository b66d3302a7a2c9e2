#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

namespace oracle {

bool invert(std::vector<std::vector<double>>& a) {
  const std::size_t n = a.size();
  std::vector<std::vector<double>> inv(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) inv[i][i] = 1.0;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    }
    if (std::abs(a[pivot][col]) < 1e-300) return false;
    std::swap(a[pivot], a[col]);
    std::swap(inv[pivot], inv[col]);
    const double p = a[col][col];
    for (std::size_t c = 0; c < n; ++c) {
      a[col][c] /= p;
      inv[col][c] /= p;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a[r][col];
      if (f == 0.0) continue;
      for (std::size_t c = 0; c < n; ++c) {
        a[r][c] -= f * a[col][c];
        inv[r][c] -= f * inv[col][c];
      }
    }
  }
  a = std::move(inv);
  return true;
}

namespace {

double se_kernel(const std::vector<double>& a, const std::vector<double>& b, double sf2,
                 const std::vector<double>& ls) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = (a[i] - b[i]) / ls[i];
    s += d * d;
  }
  return sf2 * std::exp(-0.5 * s);
}

double dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

DenseGp dense_gp(const std::vector<std::vector<double>>& x, const std::vector<double>& y,
                 double signal_variance, const std::vector<double>& lengthscales,
                 double noise_variance, const std::vector<double>& query, double scale) {
  const std::size_t n = x.size();
  double ybar = 0.0;
  for (double v : y) ybar += v;
  ybar /= static_cast<double>(n);

  std::vector<std::vector<double>> k(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) k[i][j] = se_kernel(x[i], x[j], signal_variance, lengthscales);
    k[i][i] += noise_variance;
  }
  if (!invert(k)) return {std::nan(""), std::nan("")};

  std::vector<double> ks(n);
  for (std::size_t i = 0; i < n; ++i) ks[i] = se_kernel(query, x[i], signal_variance, lengthscales);

  double mean = 0.0;
  double quad = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      mean += ks[i] * k[i][j] * (y[j] - ybar) / scale;
      quad += ks[i] * k[i][j] * ks[j];
    }
  }
  return {ybar + scale * mean, scale * scale * std::max(0.0, signal_variance - quad)};
}

double mc_expected_improvement(double mean, double sigma, double f_best, double xi,
                               std::size_t samples, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal(mean, sigma);
  double sum = 0.0;
  for (std::size_t i = 0; i < samples; ++i) sum += std::max(normal(gen) - f_best - xi, 0.0);
  return sum / static_cast<double>(samples);
}

std::vector<std::vector<double>> mutual_reachability(const std::vector<std::vector<double>>& points,
                                                     std::size_t min_samples) {
  const std::size_t n = points.size();
  std::vector<double> core(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> d;
    for (std::size_t j = 0; j < n; ++j) d.push_back(dist(points[i], points[j]));
    std::sort(d.begin(), d.end());
    core[i] = d[std::min(std::max<std::size_t>(min_samples, 1), n) - 1];
  }
  std::vector<std::vector<double>> mr(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j) mr[i][j] = std::max({core[i], core[j], dist(points[i], points[j])});
    }
  }
  return mr;
}

namespace {

double lambda(double w) { return 1.0 / std::max(w, 1e-12); }

// Components of `members` joined by edges strictly lighter than w.
std::vector<std::set<std::size_t>> components(const std::set<std::size_t>& members,
                                              const std::vector<std::vector<double>>& mr, double w) {
  std::vector<std::set<std::size_t>> out;
  std::set<std::size_t> left = members;
  while (!left.empty()) {
    std::set<std::size_t> comp;
    std::vector<std::size_t> frontier{*left.begin()};
    left.erase(left.begin());
    while (!frontier.empty()) {
      const auto v = frontier.back();
      frontier.pop_back();
      comp.insert(v);
      for (auto it = left.begin(); it != left.end();) {
        if (mr[v][*it] < w) {
          frontier.push_back(*it);
          it = left.erase(it);
        } else {
          ++it;
        }
      }
    }
    out.push_back(std::move(comp));
  }
  return out;
}

struct Choice {
  std::vector<int> ids;
  double value = 0.0;
};

}  // namespace

OracleHdbscan hdbscan(const std::vector<std::vector<double>>& points, std::size_t mcs,
                      std::size_t min_samples) {
  const std::size_t n = points.size();
  OracleHdbscan out;
  out.labels.assign(n, -1);
  if (n == 0) return out;
  const auto mr = mutual_reachability(points, min_samples);

  std::set<std::size_t> all;
  for (std::size_t i = 0; i < n; ++i) all.insert(i);
  out.tree.push_back({-1, all, 0.0, 0.0, {}});

  std::vector<int> work{0};
  while (!work.empty()) {
    const int id = work.back();
    work.pop_back();
    std::set<std::size_t> live = out.tree[static_cast<std::size_t>(id)].members;
    double birth = out.tree[static_cast<std::size_t>(id)].lambda_birth;
    std::set<double, std::greater<>> levels;
    for (auto a : live) {
      for (auto b : live) {
        if (a < b) levels.insert(mr[a][b]);
      }
    }
    double stability = 0.0;
    for (double w : levels) {
      if (live.size() < 2) break;
      const auto comps = components(live, mr, w);
      if (comps.size() == 1) continue;
      if (id == 0 && birth == 0.0) {
        // the root is born at the first level where the set disconnects
        birth = lambda(w);
        out.tree[0].lambda_birth = birth;
      }
      std::vector<const std::set<std::size_t>*> big;
      for (const auto& c : comps) {
        if (c.size() >= mcs) {
          big.push_back(&c);
        } else {
          stability += static_cast<double>(c.size()) * (lambda(w) - birth);
        }
      }
      if (big.size() == 1) {
        live = *big.front();
        continue;
      }
      for (const auto* c : big) {
        stability += static_cast<double>(c->size()) * (lambda(w) - birth);
        const int child = static_cast<int>(out.tree.size());
        out.tree.push_back({id, *c, lambda(w), 0.0, {}});
        out.tree[static_cast<std::size_t>(id)].children.push_back(child);
        work.push_back(child);
      }
      break;
    }
    out.tree[static_cast<std::size_t>(id)].stability = stability;
  }

  // Every antichain of the subtree under c, the empty one included.
  std::function<std::vector<Choice>(int)> antichains = [&](int c) {
    std::vector<Choice> below{{{}, 0.0}};
    for (int ch : out.tree[static_cast<std::size_t>(c)].children) {
      const auto sub = antichains(ch);
      std::vector<Choice> next;
      for (const auto& a : below) {
        for (const auto& b : sub) {
          Choice m = a;
          m.ids.insert(m.ids.end(), b.ids.begin(), b.ids.end());
          m.value += b.value;
          next.push_back(std::move(m));
        }
      }
      below = std::move(next);
    }
    if (c != 0 || n >= mcs) below.push_back({{c}, out.tree[static_cast<std::size_t>(c)].stability});
    return below;
  };
  auto options = antichains(0);
  std::sort(options.begin(), options.end(),
            [](const Choice& a, const Choice& b) { return a.value > b.value; });
  out.selected = options.front().ids;
  out.selected_stability = options.front().value;
  if (options.size() > 1) {
    const double tol = 1e-9 * std::max(1.0, std::abs(options.front().value));
    out.unique_optimum = options[1].value < options.front().value - tol;
  }
  if (out.selected.empty() && n >= mcs) out.selected.push_back(0);

  for (int c : out.selected) {
    for (auto p : out.tree[static_cast<std::size_t>(c)].members) out.labels[p] = c;
  }
  return out;
}

}  // namespace oracle
