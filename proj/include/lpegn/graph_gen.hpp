#pragma once

// Small graph constructors shared by tests, the expressivity bench and the
// scaling bench.

#include <vector>

#include "lpegn/graph.hpp"
#include "lpegn/rng.hpp"

namespace lpegn {

inline ConcreteGraph path_graph(int n, NodeId base = 0) {
  ConcreteGraph g;
  for (int i = 0; i < n; ++i) g.add_node(base + static_cast<NodeId>(i));
  for (int i = 0; i + 1 < n; ++i)
    g.add_edge(base + static_cast<NodeId>(i), base + static_cast<NodeId>(i + 1));
  return g;
}

inline ConcreteGraph cycle_graph(int n, NodeId base = 0) {
  ConcreteGraph g = path_graph(n, base);
  if (n >= 3) g.add_edge(base + static_cast<NodeId>(n - 1), base);
  return g;
}

// Center plus `leaves` pendant nodes.
inline ConcreteGraph star_graph(int leaves, NodeId base = 0) {
  ConcreteGraph g;
  g.add_node(base);
  for (int i = 1; i <= leaves; ++i) {
    g.add_node(base + static_cast<NodeId>(i));
    g.add_edge(base, base + static_cast<NodeId>(i));
  }
  return g;
}

inline ConcreteGraph complete_graph(int n, NodeId base = 0) {
  ConcreteGraph g;
  for (int i = 0; i < n; ++i) g.add_node(base + static_cast<NodeId>(i));
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      g.add_edge(base + static_cast<NodeId>(i), base + static_cast<NodeId>(j));
  return g;
}

// side x side 4-neighbor lattice.
inline ConcreteGraph grid_graph(int side, NodeId base = 0) {
  ConcreteGraph g;
  auto id = [&](int r, int c) { return base + static_cast<NodeId>(r * side + c); };
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) g.add_node(id(r, c));
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) {
      if (c + 1 < side) g.add_edge(id(r, c), id(r, c + 1));
      if (r + 1 < side) g.add_edge(id(r, c), id(r + 1, c));
    }
  return g;
}

inline ConcreteGraph disjoint_union(const ConcreteGraph& a, const ConcreteGraph& b,
                                    NodeId b_offset) {
  ConcreteGraph g;
  for (NodeId id : a.node_ids()) g.add_node(id, a.node_label(id));
  for (const auto& [u, v] : a.edges()) g.add_edge(u, v, a.edge_label(u, v));
  for (NodeId id : b.node_ids()) g.add_node(id + b_offset, b.node_label(id));
  for (const auto& [u, v] : b.edges()) g.add_edge(u + b_offset, v + b_offset, b.edge_label(u, v));
  return g;
}

// Uniform random connected graph: a random spanning tree plus random extra
// edges.
inline ConcreteGraph random_connected_graph(int n, Rng& rng, double extra_edge_prob = 0.3) {
  ConcreteGraph g;
  for (int i = 0; i < n; ++i) g.add_node(static_cast<NodeId>(i));
  for (int i = 1; i < n; ++i)
    g.add_edge(static_cast<NodeId>(i), static_cast<NodeId>(rng.uniform_u64(static_cast<std::uint64_t>(i))));
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (!g.has_edge(static_cast<NodeId>(i), static_cast<NodeId>(j)) &&
          rng.uniform_real() < extra_edge_prob)
        g.add_edge(static_cast<NodeId>(i), static_cast<NodeId>(j));
  return g;
}

// A pair of non-isomorphic graphs that a max-pooling message passing model
// cannot tell apart (with uniform input features every node carries the same
// embedding at every round, in any graph of minimum degree one), together
// with an isomorphic control.
struct ExpressivityFixture {
  ConcreteGraph left;           // 4-cycle
  ConcreteGraph right_iso;      // relabeled 4-cycle, isomorphic to left
  ConcreteGraph right_noniso;   // 4-path, non-isomorphic to left
};

inline ExpressivityFixture expressivity_fixture() {
  ExpressivityFixture f;
  f.left = cycle_graph(4);
  // same cycle under the relabeling 0->7, 1->3, 2->9, 3->5
  f.right_iso = ConcreteGraph();
  for (NodeId id : {3u, 5u, 7u, 9u}) f.right_iso.add_node(id);
  f.right_iso.add_edge(7, 3);
  f.right_iso.add_edge(3, 9);
  f.right_iso.add_edge(9, 5);
  f.right_iso.add_edge(5, 7);
  f.right_noniso = path_graph(4);
  return f;
}

// Six-cycle vs two disjoint triangles: 1-WL-indistinguishable but separable
// by triangle-aware local updates.
struct WlHardPair {
  ConcreteGraph c6;
  ConcreteGraph two_c3;
};

inline WlHardPair wl_hard_pair() {
  WlHardPair p;
  p.c6 = cycle_graph(6);
  p.two_c3 = disjoint_union(cycle_graph(3), cycle_graph(3), 100);
  return p;
}

}  // namespace lpegn
