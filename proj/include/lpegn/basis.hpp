#pragma once

// Bases of permutation-equivariant linear maps between k-order permutation
// representations, indexed by set partitions of the combined (output, input)
// index positions, plus the restricted variants that drop the permutation
// symmetry of chosen nodes.
//
// A basis element B_p maps order-k_in tensors over m nodes to order-k_out
// tensors: B_p[o, j] is nonzero iff the equality pattern of the combined
// tuple (o_1..o_{k_out}, j_1..j_{k_in}) equals p. Nonzero entries in an
// output row are scaled to sum to 1 (mean aggregation), which keeps
// activations size-stable across subgraph sizes so weights can be shared.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lpegn/errors.hpp"
#include "lpegn/partitions.hpp"
#include "lpegn/rng.hpp"
#include "lpegn/tensor.hpp"

namespace lpegn {

inline std::int64_t int_pow(int base, int exp) {
  std::int64_t r = 1;
  for (int i = 0; i < exp; ++i) r *= base;
  return r;
}

inline void unflatten_index(std::int64_t flat, int m, int k, std::span<int> out) {
  for (int i = k - 1; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = static_cast<int>(flat % m);
    flat /= m;
  }
}

struct BasisSet {
  int k_in = 0;
  int k_out = 0;
  int m = 0;
  std::int64_t in_cells = 1;   // m^k_in
  std::int64_t out_cells = 1;  // m^k_out
  int elements = 0;

  // Generating set partitions of the k_in + k_out combined positions
  // (output positions first), in restricted-growth-string order. For a
  // restricted basis these are the pure-kept elements; extra elements are
  // described by atom_names only.
  std::vector<SetPartition> partitions;

  // Pattern table over the combined index space, combined = o * in_cells + j.
  // Every combined cell belongs to exactly one element; cell_weight holds the
  // row-normalized value of that element at the cell.
  std::vector<std::int32_t> cell_element;
  std::vector<double> cell_weight;

  std::vector<std::string> atom_names;  // one per element

  int element_count() const { return elements; }

  // Dense [out_cells x in_cells] materialization of one element.
  std::vector<double> dense_tensor(int e) const {
    if (m > 32)
      throw UsageError("dense_tensor: dense materialization is limited to m <= 32");
    if (e < 0 || e >= elements) throw InputError("dense_tensor: element out of range");
    std::vector<double> t(static_cast<std::size_t>(out_cells * in_cells), 0.0);
    for (std::size_t cell = 0; cell < cell_element.size(); ++cell)
      if (cell_element[cell] == e) t[cell] = cell_weight[cell];
    return t;
  }

  std::vector<std::vector<double>> dense_tensors() const {
    std::vector<std::vector<double>> out;
    out.reserve(static_cast<std::size_t>(elements));
    for (int e = 0; e < elements; ++e) out.push_back(dense_tensor(e));
    return out;
  }
};

struct RestrictedBasisSet {
  BasisSet base;
  std::vector<int> dropped;  // sorted node indices whose symmetry is removed
};

namespace detail_basis {

// Assigns per-row mean normalization: within each output row o, the nonzero
// cells of each element sum to 1.
inline void normalize_rows(BasisSet& b) {
  b.cell_weight.assign(b.cell_element.size(), 0.0);
  std::vector<std::int64_t> counts(static_cast<std::size_t>(b.elements));
  for (std::int64_t o = 0; o < b.out_cells; ++o) {
    std::fill(counts.begin(), counts.end(), 0);
    const std::size_t row = static_cast<std::size_t>(o * b.in_cells);
    for (std::int64_t j = 0; j < b.in_cells; ++j)
      ++counts[static_cast<std::size_t>(b.cell_element[row + static_cast<std::size_t>(j)])];
    for (std::int64_t j = 0; j < b.in_cells; ++j) {
      const auto e = static_cast<std::size_t>(b.cell_element[row + static_cast<std::size_t>(j)]);
      b.cell_weight[row + static_cast<std::size_t>(j)] = 1.0 / static_cast<double>(counts[e]);
    }
  }
}

}  // namespace detail_basis

// Basis of all S_m-equivariant linear maps rho_{k_in} -> rho_{k_out} at
// subgraph size m. All Bell(k_in + k_out) elements are emitted even when
// m < k_in + k_out (elements whose pattern needs more than m distinct values
// are zero), so the weight layout never depends on m.
inline BasisSet build_basis(int k_in, int k_out, int m) {
  if (m < 1) throw InputError("build_basis: m must be >= 1");
  if (k_in < 0 || k_out < 0) throw InputError("build_basis: negative order");
  const int k = k_in + k_out;
  BasisSet b;
  b.k_in = k_in;
  b.k_out = k_out;
  b.m = m;
  b.in_cells = int_pow(m, k_in);
  b.out_cells = int_pow(m, k_out);
  b.partitions = enumerate_partitions(k);
  b.elements = static_cast<int>(b.partitions.size());
  for (const auto& p : b.partitions) b.atom_names.push_back(p.to_string());

  std::map<std::vector<std::uint8_t>, std::int32_t> index_of;
  for (std::size_t i = 0; i < b.partitions.size(); ++i)
    index_of[b.partitions[i].assignment] = static_cast<std::int32_t>(i);

  b.cell_element.resize(static_cast<std::size_t>(b.out_cells * b.in_cells));
  std::vector<int> tuple(static_cast<std::size_t>(k));
  for (std::int64_t o = 0; o < b.out_cells; ++o) {
    unflatten_index(o, m, k_out, std::span<int>(tuple.data(), static_cast<std::size_t>(k_out)));
    for (std::int64_t j = 0; j < b.in_cells; ++j) {
      unflatten_index(j, m, k_in,
                      std::span<int>(tuple.data() + k_out, static_cast<std::size_t>(k_in)));
      const auto pat = pattern_of(tuple.begin(), tuple.end());
      b.cell_element[static_cast<std::size_t>(o * b.in_cells + j)] = index_of.at(pat.assignment);
    }
  }
  detail_basis::normalize_rows(b);
  return b;
}

// Basis of maps equivariant only to permutations fixing every dropped node.
// Element order: the Bell(k_in + k_out) unrestricted patterns first (same
// slots as build_basis), then the elements involving dropped nodes in
// lexicographic order of their position signatures with dropped tokens
// ordering before kept ones. For (1,1) with one dropped node that yields
// dropped-self, dropped-from-others, others-from-dropped in slots 2..4.
inline RestrictedBasisSet build_restricted_basis(int k_in, int k_out, int m,
                                                 std::vector<int> dropped) {
  std::sort(dropped.begin(), dropped.end());
  dropped.erase(std::unique(dropped.begin(), dropped.end()), dropped.end());
  for (int d : dropped)
    if (d < 0 || d >= m) throw InputError("build_restricted_basis: dropped node out of range");
  if (static_cast<int>(dropped.size()) == m)
    throw InputError(
        "build_restricted_basis: dropping every node leaves no symmetry; every map is allowed");
  if (dropped.empty()) return RestrictedBasisSet{build_basis(k_in, k_out, m), {}};

  const int k = k_in + k_out;
  RestrictedBasisSet rb;
  rb.dropped = dropped;
  BasisSet& b = rb.base;
  b.k_in = k_in;
  b.k_out = k_out;
  b.m = m;
  b.in_cells = int_pow(m, k_in);
  b.out_cells = int_pow(m, k_out);
  b.partitions = enumerate_partitions(k);

  // token: (0, dropped index) or (1, kept block id)
  using Signature = std::vector<std::pair<int, int>>;
  auto signature_of = [&](std::span<const int> tuple) {
    Signature sig;
    std::vector<int> kept_seen;
    for (int v : tuple) {
      const auto dit = std::lower_bound(dropped.begin(), dropped.end(), v);
      if (dit != dropped.end() && *dit == v) {
        sig.emplace_back(0, static_cast<int>(dit - dropped.begin()));
      } else {
        int block = -1;
        for (std::size_t s = 0; s < kept_seen.size(); ++s)
          if (kept_seen[s] == v) block = static_cast<int>(s);
        if (block < 0) {
          block = static_cast<int>(kept_seen.size());
          kept_seen.push_back(v);
        }
        sig.emplace_back(1, block);
      }
    }
    return sig;
  };

  std::map<Signature, std::int32_t> slot_of;
  for (std::size_t i = 0; i < b.partitions.size(); ++i) {
    Signature sig;
    for (auto a : b.partitions[i].assignment) sig.emplace_back(1, static_cast<int>(a));
    slot_of[sig] = static_cast<std::int32_t>(i);
    b.atom_names.push_back(b.partitions[i].to_string());
  }

  // first pass: collect signatures that involve dropped nodes
  std::vector<int> tuple(static_cast<std::size_t>(k));
  std::vector<Signature> extra;
  for (std::int64_t o = 0; o < b.out_cells; ++o) {
    unflatten_index(o, m, k_out, std::span<int>(tuple.data(), static_cast<std::size_t>(k_out)));
    for (std::int64_t j = 0; j < b.in_cells; ++j) {
      unflatten_index(j, m, k_in,
                      std::span<int>(tuple.data() + k_out, static_cast<std::size_t>(k_in)));
      const auto sig = signature_of(tuple);
      if (!slot_of.contains(sig)) extra.push_back(sig);
    }
  }
  std::sort(extra.begin(), extra.end());
  extra.erase(std::unique(extra.begin(), extra.end()), extra.end());
  for (const auto& sig : extra) {
    slot_of[sig] = static_cast<std::int32_t>(b.atom_names.size());
    std::string name = "(";
    for (std::size_t i = 0; i < sig.size(); ++i) {
      if (i) name += ",";
      name += sig[i].first == 0 ? "D" + std::to_string(sig[i].second)
                                : "K" + std::to_string(sig[i].second);
    }
    name += ")";
    b.atom_names.push_back(name);
  }
  b.elements = static_cast<int>(b.atom_names.size());

  b.cell_element.resize(static_cast<std::size_t>(b.out_cells * b.in_cells));
  for (std::int64_t o = 0; o < b.out_cells; ++o) {
    unflatten_index(o, m, k_out, std::span<int>(tuple.data(), static_cast<std::size_t>(k_out)));
    for (std::int64_t j = 0; j < b.in_cells; ++j) {
      unflatten_index(j, m, k_in,
                      std::span<int>(tuple.data() + k_out, static_cast<std::size_t>(k_in)));
      b.cell_element[static_cast<std::size_t>(o * b.in_cells + j)] =
          slot_of.at(signature_of(tuple));
    }
  }
  detail_basis::normalize_rows(b);
  return rb;
}

// ---------------------------------------------------------------------------
// exhaustive oracle

// Dimension of the space of linear maps rho_{k_in} -> rho_{k_out} commuting
// with the given permutations (all of S_m by default): assembles the Gram
// matrix of the constraint rows e_i - e_{sigma(i)} over every permutation and
// counts the null space by eigenvalue factorization.
inline int nullspace_dimension_for_perms(int k_in, int k_out, int m,
                                         const std::vector<std::vector<int>>& perms) {
  const int k = k_in + k_out;
  const std::int64_t dim = int_pow(m, k);
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(dim, dim);
  std::vector<int> tuple(static_cast<std::size_t>(k));
  for (const auto& sigma : perms) {
    for (std::int64_t i = 0; i < dim; ++i) {
      unflatten_index(i, m, k, tuple);
      std::int64_t image = 0;
      for (int t = 0; t < k; ++t)
        image = image * m + sigma[static_cast<std::size_t>(tuple[static_cast<std::size_t>(t)])];
      if (image == i) continue;
      gram(i, i) += 1.0;
      gram(image, image) += 1.0;
      gram(i, image) -= 1.0;
      gram(image, i) -= 1.0;
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram, Eigen::EigenvaluesOnly);
  const double max_ev = es.eigenvalues().size() ? es.eigenvalues().maxCoeff() : 0.0;
  const double tol = 1e-8 * std::max(1.0, max_ev);
  int nullity = 0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i)
    if (std::abs(es.eigenvalues()(i)) < tol) ++nullity;
  return nullity;
}

inline std::vector<std::vector<int>> all_permutations(int m) {
  std::vector<int> perm(static_cast<std::size_t>(m));
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<std::vector<int>> out;
  do {
    out.push_back(perm);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return out;
}

inline int nullspace_dimension_oracle(int k_in, int k_out, int m) {
  if (m > 6 || k_in + k_out > 4)
    throw UsageError("nullspace_dimension_oracle: exhaustive loop limited to m <= 6 and "
                     "k_in + k_out <= 4");
  return nullspace_dimension_for_perms(k_in, k_out, m, all_permutations(m));
}

// Restricted variant: only permutations fixing every dropped node.
inline int restricted_nullspace_dimension_oracle(int k_in, int k_out, int m,
                                                 const std::vector<int>& dropped) {
  if (m > 6 || k_in + k_out > 4)
    throw UsageError("restricted_nullspace_dimension_oracle: exhaustive loop limited to m <= 6 "
                     "and k_in + k_out <= 4");
  std::vector<int> kept;
  for (int v = 0; v < m; ++v)
    if (std::find(dropped.begin(), dropped.end(), v) == dropped.end()) kept.push_back(v);
  std::vector<int> arrangement = kept;
  std::vector<std::vector<int>> perms;
  do {
    std::vector<int> sigma(static_cast<std::size_t>(m));
    std::iota(sigma.begin(), sigma.end(), 0);
    for (std::size_t i = 0; i < kept.size(); ++i)
      sigma[static_cast<std::size_t>(kept[i])] = arrangement[i];
    perms.push_back(std::move(sigma));
  } while (std::next_permutation(arrangement.begin(), arrangement.end()));
  return nullspace_dimension_for_perms(k_in, k_out, m, perms);
}

// Rank of the span of the materialized basis tensors.
inline int basis_span_dimension(const BasisSet& b) {
  Eigen::MatrixXd rows(b.elements, b.out_cells * b.in_cells);
  for (int e = 0; e < b.elements; ++e) {
    const auto t = b.dense_tensor(e);
    for (std::size_t c = 0; c < t.size(); ++c) rows(e, static_cast<Eigen::Index>(c)) = t[c];
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(rows);
  qr.setThreshold(1e-10);
  return static_cast<int>(qr.rank());
}

// ---------------------------------------------------------------------------
// equivariance check

struct EquivarianceReport {
  bool ok = true;
  int element = -1;
  int trial = -1;
  std::vector<int> sigma;
  double max_abs_dev = 0.0;
};

// (sigma . x)[t] = x[sigma^{-1} t], i.e. out[sigma(t)] = x[t] per coordinate.
inline std::vector<double> permute_order_k(std::span<const double> x, int m, int k,
                                           const std::vector<int>& sigma) {
  std::vector<double> out(x.size());
  std::vector<int> tuple(static_cast<std::size_t>(k));
  const std::int64_t cells = int_pow(m, k);
  for (std::int64_t flat = 0; flat < cells; ++flat) {
    unflatten_index(flat, m, k, tuple);
    std::int64_t image = 0;
    for (int t = 0; t < k; ++t)
      image = image * m + sigma[static_cast<std::size_t>(tuple[static_cast<std::size_t>(t)])];
    out[static_cast<std::size_t>(image)] = x[static_cast<std::size_t>(flat)];
  }
  return out;
}

// Randomized check that every tensor commutes with the permutation action:
// B(sigma . x) == sigma . (B x) for random sigma and x.
inline bool verify_equivariance(std::span<const std::vector<double>> tensors, int k_in, int k_out,
                                int m, int trials, Rng& rng, double tol = 1e-10,
                                EquivarianceReport* report = nullptr) {
  const std::int64_t in_cells = int_pow(m, k_in);
  const std::int64_t out_cells = int_pow(m, k_out);
  std::vector<int> sigma(static_cast<std::size_t>(m));
  std::vector<double> x(static_cast<std::size_t>(in_cells));
  auto apply = [&](const std::vector<double>& tensor, std::span<const double> in) {
    std::vector<double> y(static_cast<std::size_t>(out_cells), 0.0);
    for (std::int64_t o = 0; o < out_cells; ++o)
      for (std::int64_t j = 0; j < in_cells; ++j)
        y[static_cast<std::size_t>(o)] +=
            tensor[static_cast<std::size_t>(o * in_cells + j)] * in[static_cast<std::size_t>(j)];
    return y;
  };
  for (int trial = 0; trial < trials; ++trial) {
    std::iota(sigma.begin(), sigma.end(), 0);
    rng.shuffle(sigma);
    for (auto& v : x) v = 2.0 * rng.uniform_real() - 1.0;
    const auto px = permute_order_k(x, m, k_in, sigma);
    for (std::size_t e = 0; e < tensors.size(); ++e) {
      const auto left = apply(tensors[e], px);
      const auto right = permute_order_k(apply(tensors[e], x), m, k_out, sigma);
      double dev = 0.0;
      for (std::size_t i = 0; i < left.size(); ++i)
        dev = std::max(dev, std::abs(left[i] - right[i]));
      if (dev > tol) {
        if (report) {
          report->ok = false;
          report->element = static_cast<int>(e);
          report->trial = trial;
          report->sigma = sigma;
          report->max_abs_dev = dev;
        }
        return false;
      }
    }
  }
  if (report) report->ok = true;
  return true;
}

inline bool verify_equivariance(const BasisSet& b, int trials, Rng& rng, double tol = 1e-10,
                                EquivarianceReport* report = nullptr) {
  const auto tensors = b.dense_tensors();
  return verify_equivariance(tensors, b.k_in, b.k_out, b.m, trials, rng, tol, report);
}

// ---------------------------------------------------------------------------
// application as a differentiable op, and the shared cache

// z[o, e*C + c] = sum over input cells j in element e's row class of
// cell_weight * x[j, c]. One pass over the combined index space applies
// every element at once because the element supports partition it.
inline ad::Tensor basis_apply(ad::Tape& tape, const ad::Tensor& x,
                              std::shared_ptr<const BasisSet> basis) {
  if (x.rank() != 2 || x.dim(0) != basis->in_cells)
    throw ShapeError("basis_apply: input must be [m^k_in x C]");
  const int C = x.dim(1);
  const int E = basis->elements;
  const std::int64_t Mi = basis->in_cells;
  const std::int64_t Mo = basis->out_cells;
  std::vector<double> out_data(static_cast<std::size_t>(Mo) * E * C, 0.0);
  {
    const double* xd = x.data().data();
    double* od = out_data.data();
    for (std::int64_t o = 0; o < Mo; ++o) {
      const std::size_t row = static_cast<std::size_t>(o * Mi);
      double* orow = od + static_cast<std::size_t>(o) * E * C;
      for (std::int64_t j = 0; j < Mi; ++j) {
        const double w = basis->cell_weight[row + static_cast<std::size_t>(j)];
        double* slot = orow + basis->cell_element[row + static_cast<std::size_t>(j)] * C;
        const double* xrow = xd + static_cast<std::size_t>(j) * C;
        for (int c = 0; c < C; ++c) slot[c] += w * xrow[c];
      }
    }
  }
  const bool rg = ad::detail::want_grad(tape, {&x});
  ad::Tensor out =
      ad::make_op_output({static_cast<int>(Mo), E * C}, std::move(out_data), rg);
  if (rg) {
    tape.record("basis_apply", {x}, out, [x, out, basis = std::move(basis), C]() {
      const auto& g = out.grad_buffer();
      auto& gx = x.grad_buffer();
      const std::int64_t Mi2 = basis->in_cells;
      const std::int64_t Mo2 = basis->out_cells;
      const int E2 = basis->elements;
      for (std::int64_t o = 0; o < Mo2; ++o) {
        const std::size_t row = static_cast<std::size_t>(o * Mi2);
        const double* grow = g.data() + static_cast<std::size_t>(o) * E2 * C;
        for (std::int64_t j = 0; j < Mi2; ++j) {
          const double w = basis->cell_weight[row + static_cast<std::size_t>(j)];
          const double* slot = grow + basis->cell_element[row + static_cast<std::size_t>(j)] * C;
          double* gxrow = gx.data() + static_cast<std::size_t>(j) * C;
          for (int c = 0; c < C; ++c) gxrow[c] += w * slot[c];
        }
      }
    });
  }
  return out;
}

// Memoized pattern tables, shared across workers. Concurrent readers are
// safe; insertion is serialized.
inline std::shared_ptr<const BasisSet> cached_basis(int k_in, int k_out, int m) {
  static std::mutex mu;
  static std::map<std::array<int, 3>, std::shared_ptr<const BasisSet>> cache;
  std::scoped_lock lock(mu);
  const std::array<int, 3> key{k_in, k_out, m};
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  auto built = std::make_shared<const BasisSet>(build_basis(k_in, k_out, m));
  cache.emplace(key, built);
  return built;
}

}  // namespace lpegn
