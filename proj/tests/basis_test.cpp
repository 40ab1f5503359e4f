#include "lpegn/basis.hpp"

#include <gtest/gtest.h>

#include "lpegn/rng.hpp"
#include "test_util.hpp"

using namespace lpegn;

TEST(Basis, ElementCountsAreBellNumbers) {
  const int expected[3][3] = {{1, 1, 2}, {1, 2, 5}, {2, 5, 15}};
  for (int k_in = 0; k_in <= 2; ++k_in)
    for (int k_out = 0; k_out <= 2; ++k_out) {
      const auto b = build_basis(k_in, k_out, 5);
      EXPECT_EQ(b.element_count(), expected[k_in][k_out]) << k_in << "," << k_out;
      EXPECT_EQ(static_cast<std::uint64_t>(b.element_count()), bell_number(k_in + k_out));
    }
}

TEST(Basis, OrderOneToOneIsIdentityAndOffdiagonal) {
  const int m = 5;
  const auto b = build_basis(1, 1, m);
  ASSERT_EQ(b.element_count(), 2);
  const auto identity = b.dense_tensor(0);
  const auto offdiag = b.dense_tensor(1);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      EXPECT_DOUBLE_EQ(identity[static_cast<std::size_t>(i) * m + j], i == j ? 1.0 : 0.0);
      EXPECT_DOUBLE_EQ(offdiag[static_cast<std::size_t>(i) * m + j],
                       i == j ? 0.0 : 1.0 / (m - 1));
    }
}

TEST(Basis, ScalarToScalar) {
  const auto b = build_basis(0, 0, 3);
  ASSERT_EQ(b.element_count(), 1);
  const auto t = b.dense_tensor(0);
  ASSERT_EQ(t.size(), 1u);
  EXPECT_DOUBLE_EQ(t[0], 1.0);
}

TEST(Basis, RowNormalization) {
  for (const auto [k_in, k_out, m] : {std::tuple{2, 2, 4}, {1, 2, 3}, {2, 1, 5}, {2, 0, 4}}) {
    const auto b = build_basis(k_in, k_out, m);
    for (std::int64_t o = 0; o < b.out_cells; ++o) {
      std::vector<double> row_sum(static_cast<std::size_t>(b.elements), 0.0);
      for (std::int64_t j = 0; j < b.in_cells; ++j) {
        const auto cell = static_cast<std::size_t>(o * b.in_cells + j);
        row_sum[static_cast<std::size_t>(b.cell_element[cell])] += b.cell_weight[cell];
      }
      for (double s : row_sum) EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Oracle, KnownDimensions) {
  EXPECT_EQ(nullspace_dimension_oracle(2, 2, 5), 15);
  EXPECT_EQ(nullspace_dimension_oracle(2, 2, 3), 14);
  EXPECT_EQ(nullspace_dimension_oracle(2, 2, 2), 8);
  EXPECT_EQ(nullspace_dimension_oracle(1, 1, 2), 2);
  EXPECT_EQ(nullspace_dimension_oracle(1, 2, 2), 4);
}

TEST(Oracle, SizeLimitEnforced) {
  EXPECT_THROW(nullspace_dimension_oracle(2, 2, 7), UsageError);
  EXPECT_THROW(nullspace_dimension_oracle(2, 3, 4), UsageError);
}

TEST(Oracle, SpanDimensionMatchesForSmallSizes) {
  for (int m = 2; m <= 4; ++m) {
    for (const auto [k_in, k_out] : {std::pair{1, 1}, {1, 2}, {2, 1}, {2, 2}}) {
      const auto b = build_basis(k_in, k_out, m);
      EXPECT_EQ(basis_span_dimension(b), nullspace_dimension_oracle(k_in, k_out, m))
          << k_in << "," << k_out << " m=" << m;
      EXPECT_EQ(static_cast<std::uint64_t>(basis_span_dimension(b)),
                partition_count_max_blocks(k_in + k_out, m));
    }
  }
}

TEST(Restricted, OneDropAddsThreeElements) {
  const auto rb = build_restricted_basis(1, 1, 5, {4});
  EXPECT_EQ(rb.base.element_count(), 5);
  ASSERT_EQ(rb.base.atom_names.size(), 5u);
  // slots 0/1 are the unrestricted patterns, then dropped-self,
  // dropped-from-others, others-from-dropped
  EXPECT_EQ(rb.base.atom_names[0], "{{0,1}}");
  EXPECT_EQ(rb.base.atom_names[1], "{{0},{1}}");
  EXPECT_EQ(rb.base.atom_names[2], "(D0,D0)");
  EXPECT_EQ(rb.base.atom_names[3], "(D0,K0)");
  EXPECT_EQ(rb.base.atom_names[4], "(K0,D0)");

  // dropped-self element touches only the (4,4) cell
  const auto dropped_self = rb.base.dense_tensor(2);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j)
      EXPECT_DOUBLE_EQ(dropped_self[static_cast<std::size_t>(i) * 5 + j],
                       (i == 4 && j == 4) ? 1.0 : 0.0);
}

TEST(Restricted, EmptyDropReproducesBasis) {
  const auto rb = build_restricted_basis(1, 1, 5, {});
  const auto b = build_basis(1, 1, 5);
  EXPECT_EQ(rb.base.cell_element, b.cell_element);
  EXPECT_EQ(rb.base.cell_weight, b.cell_weight);
  EXPECT_TRUE(rb.dropped.empty());
}

TEST(Restricted, CountMatchesSubgroupOracle) {
  EXPECT_EQ(build_restricted_basis(1, 1, 3, {2}).base.element_count(), 5);
  EXPECT_EQ(restricted_nullspace_dimension_oracle(1, 1, 3, {2}), 5);
  EXPECT_EQ(build_restricted_basis(2, 2, 5, {0}).base.element_count(), 52);  // Bell(5)
  EXPECT_EQ(restricted_nullspace_dimension_oracle(2, 2, 5, {0}), 52);
}

TEST(Restricted, FullDropIsDegenerate) {
  EXPECT_THROW(build_restricted_basis(1, 1, 3, {0, 1, 2}), InputError);
  EXPECT_THROW(build_restricted_basis(1, 1, 3, {3}), InputError);
}

// inputs that are zero on every dropped cell see exactly the unrestricted
// lower-dimensional map on the kept nodes
TEST(Restricted, ZeroCrossTermsReproduceUnrestrictedMap) {
  Rng rng(77);
  const int m = 5;
  const int dropped = 4;
  const auto rb = build_restricted_basis(1, 1, m, {dropped});
  const auto small = build_basis(1, 1, m - 1);

  std::vector<double> x(m, 0.0);
  for (int i = 0; i < m - 1; ++i) x[static_cast<std::size_t>(i)] = 2.0 * rng.uniform_real() - 1.0;
  std::vector<double> w(static_cast<std::size_t>(rb.base.element_count()));
  for (auto& v : w) v = 2.0 * rng.uniform_real() - 1.0;

  // y = sum_e w_e * (B_e x), restricted at size m with zeroed dropped cells
  std::vector<double> y(m, 0.0);
  for (int e = 0; e < rb.base.element_count(); ++e) {
    const auto t = rb.base.dense_tensor(e);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j)
        y[static_cast<std::size_t>(i)] +=
            w[static_cast<std::size_t>(e)] * t[static_cast<std::size_t>(i) * m + j] *
            x[static_cast<std::size_t>(j)];
  }
  // reference: unrestricted map at size m-1 with the first two weights
  std::vector<double> want(m - 1, 0.0);
  for (int e = 0; e < 2; ++e) {
    const auto t = small.dense_tensor(e);
    for (int i = 0; i < m - 1; ++i)
      for (int j = 0; j < m - 1; ++j)
        want[static_cast<std::size_t>(i)] +=
            w[static_cast<std::size_t>(e)] * t[static_cast<std::size_t>(i) * (m - 1) + j] *
            x[static_cast<std::size_t>(j)];
  }
  for (int i = 0; i < m - 1; ++i) EXPECT_NEAR(y[static_cast<std::size_t>(i)], want[static_cast<std::size_t>(i)], 1e-12);
}

TEST(Equivariance, ConstructedBasesPass) {
  Rng rng(101);
  EXPECT_TRUE(verify_equivariance(build_basis(1, 1, 4), 20, rng));
  EXPECT_TRUE(verify_equivariance(build_basis(2, 2, 5), 100, rng));
  EXPECT_TRUE(verify_equivariance(build_basis(1, 2, 4), 50, rng));
  EXPECT_TRUE(verify_equivariance(build_basis(2, 0, 4), 50, rng));
}

TEST(Equivariance, NegativeControlReportsCounterexample) {
  Rng rng(103);
  const int m = 4;
  const auto b = build_basis(1, 1, m);
  auto tensors = b.dense_tensors();
  std::vector<double> junk(static_cast<std::size_t>(m) * m);
  for (auto& v : junk) v = rng.uniform_real();
  tensors.push_back(junk);

  EquivarianceReport report;
  EXPECT_FALSE(verify_equivariance(tensors, 1, 1, m, 50, rng, 1e-10, &report));
  EXPECT_FALSE(report.ok);
  EXPECT_EQ(report.element, 2);  // the appended non-equivariant tensor
  EXPECT_GT(report.max_abs_dev, 1e-10);
  EXPECT_EQ(report.sigma.size(), static_cast<std::size_t>(m));
}

TEST(Equivariance, SmallSizesStillEquivariant) {
  Rng rng(105);
  // m below k_in + k_out: collapsed elements, still equivariant
  EXPECT_TRUE(verify_equivariance(build_basis(2, 2, 2), 50, rng));
  EXPECT_TRUE(verify_equivariance(build_basis(2, 2, 1), 10, rng));
}

TEST(BasisApply, MatchesDenseComposition) {
  Rng rng(107);
  const auto basis = cached_basis(2, 1, 3);
  const int C = 2;
  std::vector<double> xdata(static_cast<std::size_t>(basis->in_cells) * C);
  for (auto& v : xdata) v = 2.0 * rng.uniform_real() - 1.0;
  ad::Tape tape;
  const auto x = ad::Tensor::constant({static_cast<int>(basis->in_cells), C}, xdata);
  const auto z = basis_apply(tape, x, basis);
  ASSERT_EQ(z.shape(), (std::vector<int>{3, basis->elements * C}));

  for (int e = 0; e < basis->elements; ++e) {
    const auto t = basis->dense_tensor(e);
    for (std::int64_t o = 0; o < basis->out_cells; ++o)
      for (int c = 0; c < C; ++c) {
        double want = 0.0;
        for (std::int64_t j = 0; j < basis->in_cells; ++j)
          want += t[static_cast<std::size_t>(o * basis->in_cells + j)] *
                  xdata[static_cast<std::size_t>(j) * C + static_cast<std::size_t>(c)];
        EXPECT_NEAR(z[o * basis->elements * C + e * C + c], want, 1e-12);
      }
  }
}

TEST(BasisApply, GradientMatchesFiniteDifferences) {
  Rng rng(109);
  const auto basis = cached_basis(1, 2, 3);
  const int C = 2;
  std::vector<double> xdata(static_cast<std::size_t>(basis->in_cells) * C);
  for (auto& v : xdata) v = 2.0 * rng.uniform_real() - 1.0;
  std::vector<ad::Tensor> params{
      ad::Tensor::parameter({static_cast<int>(basis->in_cells), C}, xdata)};
  const auto result = test::check_gradients(params, [&](ad::Tape& t) {
    const auto z = basis_apply(t, params[0], basis);
    return reduce_mean(t, mul(t, z, z));
  });
  EXPECT_LT(result.max_rel_err, 1e-6);
}

TEST(BasisCache, SharedInstance) {
  const auto a = cached_basis(1, 1, 7);
  const auto b = cached_basis(1, 1, 7);
  EXPECT_EQ(a.get(), b.get());
  EXPECT_NE(cached_basis(1, 1, 8).get(), a.get());
}
