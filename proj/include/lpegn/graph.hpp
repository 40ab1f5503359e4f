#pragma once

// Concrete graphs over arbitrary natural node ids, k-hop ego subgraphs,
// permutation actions on dense graph tensors, and the isomorphism / 1-WL
// oracles used by the expressivity tests.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "lpegn/errors.hpp"

namespace lpegn {

using NodeId = std::uint32_t;

// Finite node-id set (possibly non-contiguous naturals) with a symmetric
// edge set and optional categorical node/edge labels. Undirected graphs
// store both directions of every edge.
class ConcreteGraph {
 public:
  void add_node(NodeId id, int label = 0) {
    if (adjacency_.contains(id)) return;
    adjacency_[id] = {};
    node_labels_[id] = label;
    sorted_ids_dirty_ = true;
  }

  // Adds the symmetric pair; endpoints must already exist.
  void add_edge(NodeId u, NodeId v, int label = 0) {
    auto iu = adjacency_.find(u);
    auto iv = adjacency_.find(v);
    if (iu == adjacency_.end() || iv == adjacency_.end())
      throw InputError("add_edge: endpoint not a member of the node set");
    if (has_edge(u, v)) return;
    iu->second.push_back(v);
    if (u != v) iv->second.push_back(u);
    edge_labels_[canonical_pair(u, v)] = label;
  }

  bool has_node(NodeId id) const { return adjacency_.contains(id); }

  bool has_edge(NodeId u, NodeId v) const {
    return edge_labels_.contains(canonical_pair(u, v));
  }

  int node_label(NodeId id) const { return node_labels_.at(id); }
  int edge_label(NodeId u, NodeId v) const { return edge_labels_.at(canonical_pair(u, v)); }

  std::size_t node_count() const { return adjacency_.size(); }
  std::size_t edge_count() const { return edge_labels_.size(); }

  const std::vector<NodeId>& neighbors(NodeId id) const { return adjacency_.at(id); }

  int degree(NodeId id) const { return static_cast<int>(adjacency_.at(id).size()); }

  // Node ids in ascending order.
  const std::vector<NodeId>& node_ids() const {
    if (sorted_ids_dirty_) {
      sorted_ids_.clear();
      sorted_ids_.reserve(adjacency_.size());
      for (const auto& [id, _] : adjacency_) sorted_ids_.push_back(id);
      std::sort(sorted_ids_.begin(), sorted_ids_.end());
      sorted_ids_dirty_ = false;
    }
    return sorted_ids_;
  }

  // Undirected edges as canonical (min, max) pairs, sorted.
  std::vector<std::pair<NodeId, NodeId>> edges() const {
    std::vector<std::pair<NodeId, NodeId>> out;
    out.reserve(edge_labels_.size());
    for (const auto& [e, _] : edge_labels_) out.push_back(e);
    std::sort(out.begin(), out.end());
    return out;
  }

  // New graph with ids mapped through `map`; labels carried over.
  ConcreteGraph relabeled(const std::unordered_map<NodeId, NodeId>& map) const {
    ConcreteGraph g;
    for (NodeId id : node_ids()) g.add_node(map.at(id), node_label(id));
    for (const auto& [u, v] : edges()) g.add_edge(map.at(u), map.at(v), edge_label(u, v));
    return g;
  }

 private:
  static std::pair<NodeId, NodeId> canonical_pair(NodeId u, NodeId v) {
    return {std::min(u, v), std::max(u, v)};
  }

  std::unordered_map<NodeId, std::vector<NodeId>> adjacency_;
  std::unordered_map<NodeId, int> node_labels_;
  std::map<std::pair<NodeId, NodeId>, int> edge_labels_;
  mutable std::vector<NodeId> sorted_ids_;
  mutable bool sorted_ids_dirty_ = true;
};

// Bijection on 0..m-1.
struct Permutation {
  std::vector<int> image;

  int size() const { return static_cast<int>(image.size()); }

  bool is_valid() const {
    std::vector<bool> seen(image.size(), false);
    for (int v : image) {
      if (v < 0 || v >= size() || seen[static_cast<std::size_t>(v)]) return false;
      seen[static_cast<std::size_t>(v)] = true;
    }
    return true;
  }

  static Permutation identity(int m) {
    Permutation p;
    p.image.resize(static_cast<std::size_t>(m));
    std::iota(p.image.begin(), p.image.end(), 0);
    return p;
  }

  Permutation inverse() const {
    Permutation inv;
    inv.image.resize(image.size());
    for (int i = 0; i < size(); ++i) inv.image[static_cast<std::size_t>(image[static_cast<std::size_t>(i)])] = i;
    return inv;
  }
};

// How ego subgraphs pick up edges: the induced form keeps every parent edge
// among the k-ball; the center-star form keeps only edges incident to the
// center (the literal reading of the sub-graph definition, kept for
// ablation).
enum class SubgraphMode { induced, center_star };

// k-hop ego subgraph in a contiguous local index space, center at local 0,
// remaining nodes in ascending global id order.
struct SubGraph {
  NodeId center = 0;
  int k = 0;
  std::vector<NodeId> local_to_global;           // [0] == center
  std::vector<std::pair<int, int>> local_edges;  // canonical (min,max) local pairs

  int size() const { return static_cast<int>(local_to_global.size()); }

  int local_index(NodeId id) const {
    for (int i = 0; i < size(); ++i)
      if (local_to_global[static_cast<std::size_t>(i)] == id) return i;
    throw InputError("SubGraph: id not present");
  }

  bool has_local_edge(int u, int v) const {
    const auto e = std::make_pair(std::min(u, v), std::max(u, v));
    return std::binary_search(local_edges.begin(), local_edges.end(), e);
  }
};

inline SubGraph khop_subgraph(const ConcreteGraph& g, NodeId center, int k,
                              SubgraphMode mode = SubgraphMode::induced) {
  if (!g.has_node(center)) throw InputError("khop_subgraph: unknown center node");
  if (k < 1) throw InputError("khop_subgraph: k must be >= 1");

  std::unordered_map<NodeId, int> depth;
  depth[center] = 0;
  std::deque<NodeId> queue{center};
  while (!queue.empty()) {
    const NodeId u = queue.front();
    queue.pop_front();
    if (depth[u] == k) continue;
    for (NodeId v : g.neighbors(u)) {
      if (!depth.contains(v)) {
        depth[v] = depth[u] + 1;
        queue.push_back(v);
      }
    }
  }

  SubGraph s;
  s.center = center;
  s.k = k;
  s.local_to_global.push_back(center);
  std::vector<NodeId> rest;
  for (const auto& [id, _] : depth)
    if (id != center) rest.push_back(id);
  std::sort(rest.begin(), rest.end());
  s.local_to_global.insert(s.local_to_global.end(), rest.begin(), rest.end());

  std::unordered_map<NodeId, int> local_of;
  for (int i = 0; i < s.size(); ++i) local_of[s.local_to_global[static_cast<std::size_t>(i)]] = i;
  for (int i = 0; i < s.size(); ++i) {
    const NodeId u = s.local_to_global[static_cast<std::size_t>(i)];
    if (mode == SubgraphMode::center_star && u != center) continue;
    for (NodeId v : g.neighbors(u)) {
      const auto it = local_of.find(v);
      if (it == local_of.end()) continue;
      const int lu = i, lv = it->second;
      if (mode == SubgraphMode::center_star || lu < lv)
        s.local_edges.emplace_back(std::min(lu, lv), std::max(lu, lv));
    }
  }
  std::sort(s.local_edges.begin(), s.local_edges.end());
  s.local_edges.erase(std::unique(s.local_edges.begin(), s.local_edges.end()),
                      s.local_edges.end());
  return s;
}

// Counts of |khop_subgraph| over every node of every graph.
inline std::map<int, std::int64_t> subgraph_size_histogram(
    std::span<const ConcreteGraph> dataset, int k, SubgraphMode mode = SubgraphMode::induced) {
  if (k < 1) throw InputError("subgraph_size_histogram: k must be >= 1");
  std::map<int, std::int64_t> hist;
  for (const auto& g : dataset)
    for (NodeId id : g.node_ids()) ++hist[khop_subgraph(g, id, k, mode).size()];
  return hist;
}

// Order-2 feature tensor over a contiguous local index space: diagonal cells
// hold node features, off-diagonal cells edge features, channel 0 is the
// adjacency indicator.
struct DenseGraphTensor {
  int m = 0;
  int channels = 0;
  std::vector<double> data;  // [m x m x channels], row-major

  double& at(int i, int j, int c) {
    return data[(static_cast<std::size_t>(i) * m + static_cast<std::size_t>(j)) * channels +
                static_cast<std::size_t>(c)];
  }
  double at(int i, int j, int c) const {
    return data[(static_cast<std::size_t>(i) * m + static_cast<std::size_t>(j)) * channels +
                static_cast<std::size_t>(c)];
  }

  static DenseGraphTensor zeros(int m, int channels) {
    DenseGraphTensor t;
    t.m = m;
    t.channels = channels;
    t.data.assign(static_cast<std::size_t>(m) * m * channels, 0.0);
    return t;
  }
};

// out[sigma(i), sigma(j), :] = in[i, j, :]
inline DenseGraphTensor permute_graph(const DenseGraphTensor& t, const Permutation& sigma) {
  if (sigma.size() != t.m) throw InputError("permute_graph: permutation size mismatch");
  if (!sigma.is_valid()) throw InputError("permute_graph: image is not a bijection");
  DenseGraphTensor out = DenseGraphTensor::zeros(t.m, t.channels);
  for (int i = 0; i < t.m; ++i)
    for (int j = 0; j < t.m; ++j)
      for (int c = 0; c < t.channels; ++c)
        out.at(sigma.image[static_cast<std::size_t>(i)], sigma.image[static_cast<std::size_t>(j)],
               c) = t.at(i, j, c);
  return out;
}

// Exhaustive label-preserving isomorphism check for graphs of at most 8 nodes.
inline bool brute_force_isomorphic(const ConcreteGraph& g1, const ConcreteGraph& g2) {
  if (g1.node_count() > 8 || g2.node_count() > 8)
    throw UsageError("brute_force_isomorphic: limited to graphs of <= 8 nodes");
  if (g1.node_count() != g2.node_count() || g1.edge_count() != g2.edge_count()) return false;
  const auto& ids1 = g1.node_ids();
  std::vector<NodeId> ids2 = g2.node_ids();
  std::sort(ids2.begin(), ids2.end());
  do {
    bool ok = true;
    for (std::size_t i = 0; i < ids1.size() && ok; ++i)
      if (g1.node_label(ids1[i]) != g2.node_label(ids2[i])) ok = false;
    for (std::size_t i = 0; i < ids1.size() && ok; ++i) {
      for (std::size_t j = i + 1; j < ids1.size() && ok; ++j) {
        const bool e1 = g1.has_edge(ids1[i], ids1[j]);
        const bool e2 = g2.has_edge(ids2[i], ids2[j]);
        if (e1 != e2) ok = false;
        else if (e1 && g1.edge_label(ids1[i], ids1[j]) != g2.edge_label(ids2[i], ids2[j]))
          ok = false;
      }
    }
    if (ok) return true;
  } while (std::next_permutation(ids2.begin(), ids2.end()));
  return false;
}

namespace detail_wl {
inline std::uint64_t fnv1a(std::span<const std::uint64_t> words) {
  std::uint64_t h = 1469598103934665603ull;
  for (std::uint64_t w : words)
    for (int b = 0; b < 8; ++b) {
      h ^= (w >> (8 * b)) & 0xFF;
      h *= 1099511628211ull;
    }
  return h;
}
}  // namespace detail_wl

// 1-WL color refinement: colors are content hashes of (own color, sorted
// (edge label, neighbor color) multiset), so histograms of two graphs are
// directly comparable. Returns the color histogram after `iterations`
// rounds (refinement stops early once stable).
inline std::map<std::uint64_t, std::int64_t> wl_refine(const ConcreteGraph& g, int iterations) {
  if (iterations < 1) throw InputError("wl_refine: iterations must be >= 1");
  const auto& ids = g.node_ids();
  std::unordered_map<NodeId, std::uint64_t> color;
  for (NodeId id : ids) {
    const std::uint64_t seed[1] = {static_cast<std::uint64_t>(g.node_label(id))};
    color[id] = detail_wl::fnv1a(seed);
  }
  for (int it = 0; it < iterations; ++it) {
    std::unordered_map<NodeId, std::uint64_t> next;
    bool changed = false;
    for (NodeId id : ids) {
      std::vector<std::uint64_t> sig;
      sig.push_back(color[id]);
      std::vector<std::pair<std::uint64_t, std::uint64_t>> nb;
      for (NodeId v : g.neighbors(id))
        nb.emplace_back(static_cast<std::uint64_t>(g.edge_label(id, v)), color[v]);
      std::sort(nb.begin(), nb.end());
      for (const auto& [el, cv] : nb) {
        sig.push_back(el);
        sig.push_back(cv);
      }
      next[id] = detail_wl::fnv1a(sig);
      if (next[id] != color[id]) changed = true;
    }
    color = std::move(next);
    if (!changed) break;
  }
  std::map<std::uint64_t, std::int64_t> hist;
  for (NodeId id : ids) ++hist[color[id]];
  return hist;
}

// Largest BFS eccentricity from any node; infinite (nullopt) if disconnected.
inline std::optional<int> graph_diameter(const ConcreteGraph& g) {
  const auto& ids = g.node_ids();
  int diameter = 0;
  for (NodeId start : ids) {
    std::unordered_map<NodeId, int> dist;
    dist[start] = 0;
    std::deque<NodeId> q{start};
    int reach = 0;
    while (!q.empty()) {
      const NodeId u = q.front();
      q.pop_front();
      reach = std::max(reach, dist[u]);
      for (NodeId v : g.neighbors(u))
        if (!dist.contains(v)) {
          dist[v] = dist[u] + 1;
          q.push_back(v);
        }
    }
    if (dist.size() != ids.size()) return std::nullopt;
    diameter = std::max(diameter, reach);
  }
  return diameter;
}

}  // namespace lpegn
