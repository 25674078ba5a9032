#pragma once

// Exact optimal transport between two integer-mass histograms on a 1-D grid,
// solved as a min-cost flow with successive shortest paths. Used to check the
// closed-form CDF distance against a solver that knows nothing about CDFs.

#include <cstdint>
#include <cstdlib>
#include <limits>
#include <vector>

namespace oracle {

class MinCostFlow {
public:
  explicit MinCostFlow(int nodes) : adj_(static_cast<std::size_t>(nodes)) {}

  void add_edge(int from, int to, std::int64_t cap, std::int64_t cost) {
    adj_[static_cast<std::size_t>(from)].push_back(edges_.size());
    edges_.push_back({to, cap, cost});
    adj_[static_cast<std::size_t>(to)].push_back(edges_.size());
    edges_.push_back({from, 0, -cost});
  }

  // Returns {flow, cost}.
  std::pair<std::int64_t, std::int64_t> solve(int s, int t) {
    std::int64_t flow = 0, cost = 0;
    const auto n = adj_.size();
    for (;;) {
      std::vector<std::int64_t> dist(n, kInf);
      std::vector<std::size_t> via(n, SIZE_MAX);
      dist[static_cast<std::size_t>(s)] = 0;
      // Bellman-Ford; residual graphs here have negative edges.
      for (std::size_t round = 0; round < n; ++round) {
        bool changed = false;
        for (std::size_t u = 0; u < n; ++u) {
          if (dist[u] == kInf) continue;
          for (std::size_t id : adj_[u]) {
            const Edge& e = edges_[id];
            if (e.cap > 0 && dist[u] + e.cost < dist[static_cast<std::size_t>(e.to)]) {
              dist[static_cast<std::size_t>(e.to)] = dist[u] + e.cost;
              via[static_cast<std::size_t>(e.to)] = id;
              changed = true;
            }
          }
        }
        if (!changed) break;
      }
      if (dist[static_cast<std::size_t>(t)] == kInf) break;
      std::int64_t push = kInf;
      for (int v = t; v != s; v = edges_[via[static_cast<std::size_t>(v)] ^ 1].to) {
        push = std::min(push, edges_[via[static_cast<std::size_t>(v)]].cap);
      }
      for (int v = t; v != s; v = edges_[via[static_cast<std::size_t>(v)] ^ 1].to) {
        edges_[via[static_cast<std::size_t>(v)]].cap -= push;
        edges_[via[static_cast<std::size_t>(v)] ^ 1].cap += push;
      }
      flow += push;
      cost += push * dist[static_cast<std::size_t>(t)];
    }
    return {flow, cost};
  }

private:
  static constexpr std::int64_t kInf = std::numeric_limits<std::int64_t>::max() / 4;
  struct Edge {
    int to;
    std::int64_t cap;
    std::int64_t cost;
  };
  std::vector<Edge> edges_;
  std::vector<std::vector<std::size_t>> adj_;
};

// Minimal transport cost between integer masses p and q (equal totals) with
// ground cost |i - j| bins, divided by the total mass.
inline double transport_cost_bins(const std::vector<int>& p, const std::vector<int>& q) {
  const int n = static_cast<int>(p.size());
  const int s = 2 * n, t = 2 * n + 1;
  MinCostFlow g(2 * n + 2);
  std::int64_t total = 0;
  for (int i = 0; i < n; ++i) {
    g.add_edge(s, i, p[static_cast<std::size_t>(i)], 0);
    g.add_edge(n + i, t, q[static_cast<std::size_t>(i)], 0);
    total += p[static_cast<std::size_t>(i)];
    for (int j = 0; j < n; ++j) g.add_edge(i, n + j, total + 1000, std::abs(i - j));
  }
  const auto [flow, cost] = g.solve(s, t);
  return total == 0 ? 0.0 : static_cast<double>(cost) / static_cast<double>(total);
}

// Every way to place `mass` units into `bins` bins.
inline std::vector<std::vector<int>> compositions(int bins, int mass) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur(static_cast<std::size_t>(bins), 0);
  auto rec = [&](auto&& self, int i, int left) -> void {
    if (i == bins - 1) {
      cur[static_cast<std::size_t>(i)] = left;
      out.push_back(cur);
      return;
    }
    for (int k = 0; k <= left; ++k) {
      cur[static_cast<std::size_t>(i)] = k;
      self(self, i + 1, left - k);
    }
  };
  rec(rec, 0, mass);
  return out;
}

}  // namespace oracle
