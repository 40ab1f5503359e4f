#include "lpegn/tensor.hpp"

#include <gtest/gtest.h>

#include "lpegn/rng.hpp"
#include "test_util.hpp"

using namespace lpegn;
using ad::Tape;
using ad::Tensor;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, bool requires_grad = false) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  std::vector<double> data(static_cast<std::size_t>(n));
  for (auto& v : data) v = 2.0 * rng.uniform_real() - 1.0;
  return requires_grad ? Tensor::parameter(std::move(shape), std::move(data))
                       : Tensor::constant(std::move(shape), std::move(data));
}

// independent entry-by-entry triple loop
std::vector<double> naive_matmul(const Tensor& a, const Tensor& b) {
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> c(static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      for (int l = 0; l < k; ++l)
        c[static_cast<std::size_t>(i) * n + j] += a[i * k + l] * b[static_cast<std::int64_t>(l) * n + j];
  return c;
}

}  // namespace

TEST(Contract, IdentityMatvec) {
  Tape tape;
  const Tensor eye = Tensor::constant({2, 2}, {1, 0, 0, 1});
  const Tensor v = Tensor::constant({2}, {3, 4});
  const Tensor out = contract(tape, eye, v, "ij,j->i");
  EXPECT_EQ(out.shape(), (std::vector<int>{2}));
  EXPECT_DOUBLE_EQ(out[0], 3.0);
  EXPECT_DOUBLE_EQ(out[1], 4.0);
}

TEST(Contract, RowSums) {
  Tape tape;
  const Tensor ones = Tensor::constant({3, 3}, std::vector<double>(9, 1.0));
  const Tensor v = Tensor::constant({3}, {1, 1, 1});
  const Tensor out = contract(tape, ones, v, "ij,j->i");
  for (int i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(out[i], 3.0);
}

TEST(Contract, MatmulMatchesTripleLoopOracle) {
  Rng rng(7);
  Tape tape;
  const Tensor a = random_tensor({4, 5}, rng);
  const Tensor b = random_tensor({5, 2}, rng);
  const Tensor c = contract(tape, a, b, "ij,jk->ik");
  const auto oracle = naive_matmul(a, b);
  ASSERT_EQ(c.size(), static_cast<std::int64_t>(oracle.size()));
  for (std::int64_t i = 0; i < c.size(); ++i) EXPECT_NEAR(c[i], oracle[i], 1e-12);
}

// exercise the transposed/swapped GEMM fast paths against the plain one
TEST(Contract, TransposedSpecsAgree) {
  Rng rng(11);
  Tape tape;
  const Tensor a = random_tensor({4, 3}, rng);
  const Tensor b = random_tensor({3, 5}, rng);
  const Tensor c0 = contract(tape, a, b, "ij,jk->ik");

  // a stored transposed
  std::vector<double> at(12);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j) at[static_cast<std::size_t>(j) * 4 + i] = a[i * 3 + j];
  const Tensor a_t = Tensor::constant({3, 4}, at);
  const Tensor c1 = contract(tape, a_t, b, "ji,jk->ik");

  // b stored transposed
  std::vector<double> bt(15);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 5; ++j) bt[static_cast<std::size_t>(j) * 3 + i] = b[i * 5 + j];
  const Tensor b_t = Tensor::constant({5, 3}, bt);
  const Tensor c2 = contract(tape, a, b_t, "ij,kj->ik");

  // swapped output
  const Tensor c3 = contract(tape, a, b, "ij,jk->ki");

  for (int i = 0; i < 4; ++i)
    for (int k = 0; k < 5; ++k) {
      const double want = c0[i * 5 + k];
      EXPECT_NEAR(c1[i * 5 + k], want, 1e-12);
      EXPECT_NEAR(c2[i * 5 + k], want, 1e-12);
      EXPECT_NEAR(c3[k * 4 + i], want, 1e-12);
    }
}

TEST(Contract, OuterAndBatch) {
  Tape tape;
  const Tensor u = Tensor::constant({2}, {1, 2});
  const Tensor v = Tensor::constant({3}, {4, 5, 6});
  const Tensor outer = contract(tape, u, v, "i,j->ij");
  EXPECT_EQ(outer.shape(), (std::vector<int>{2, 3}));
  EXPECT_DOUBLE_EQ(outer[5], 12.0);

  // batch label appears in both inputs and the output
  const Tensor a = Tensor::constant({2, 2}, {1, 2, 3, 4});
  const Tensor d = contract(tape, a, u, "ij,i->ij");
  EXPECT_DOUBLE_EQ(d[0], 1.0);
  EXPECT_DOUBLE_EQ(d[3], 8.0);
}

TEST(Contract, Bilinearity) {
  Rng rng(3);
  Tape tape;
  const Tensor a = random_tensor({3, 4}, rng);
  const Tensor a2 = random_tensor({3, 4}, rng);
  const Tensor b = random_tensor({4, 2}, rng);
  const double alpha = 0.7, beta = -1.3;

  std::vector<double> mix(12);
  for (int i = 0; i < 12; ++i) mix[static_cast<std::size_t>(i)] = alpha * a[i] + beta * a2[i];
  const Tensor am = Tensor::constant({3, 4}, mix);

  const Tensor left = contract(tape, am, b, "ij,jk->ik");
  const Tensor r1 = contract(tape, a, b, "ij,jk->ik");
  const Tensor r2 = contract(tape, a2, b, "ij,jk->ik");
  for (std::int64_t i = 0; i < left.size(); ++i)
    EXPECT_NEAR(left[i], alpha * r1[i] + beta * r2[i], 1e-12);
}

TEST(Contract, ShapeErrorsNameTheAxis) {
  Tape tape;
  const Tensor a = Tensor::constant({2, 3}, std::vector<double>(6, 0.0));
  const Tensor b = Tensor::constant({4, 2}, std::vector<double>(8, 0.0));
  try {
    contract(tape, a, b, "ij,jk->ik");
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("'j'"), std::string::npos);
  }
  EXPECT_THROW(contract(tape, a, b, "ii,jk->ik"), ShapeError);
  EXPECT_THROW(contract(tape, a, b, "ij,kl->im"), ShapeError);
}

TEST(Elementwise, ReluAddMul) {
  Tape tape;
  const Tensor x = Tensor::constant({3}, {-1, 0, 2});
  const Tensor r = relu(tape, x);
  EXPECT_DOUBLE_EQ(r[0], 0.0);
  EXPECT_DOUBLE_EQ(r[1], 0.0);
  EXPECT_DOUBLE_EQ(r[2], 2.0);

  const Tensor s = add(tape, Tensor::constant({2}, {1, 2}), Tensor::constant({2}, {3, 4}));
  EXPECT_DOUBLE_EQ(s[0], 4.0);
  EXPECT_DOUBLE_EQ(s[1], 6.0);

  EXPECT_THROW(add(tape, x, s), ShapeError);

  const Tensor half = scale(tape, s, 0.5);
  EXPECT_DOUBLE_EQ(half[0], 2.0);
  EXPECT_DOUBLE_EQ(half[1], 3.0);
}

TEST(Elementwise, MulProductRuleGradient) {
  Tape tape;
  Tensor a = Tensor::parameter({1}, {3});
  Tensor b = Tensor::parameter({1}, {5});
  const Tensor out = reduce_sum(tape, mul(tape, a, b));
  tape.backward(out);
  EXPECT_DOUBLE_EQ(a.grad()[0], 5.0);
  EXPECT_DOUBLE_EQ(b.grad()[0], 3.0);
}

TEST(Reduce, SumAndMean) {
  Tape tape;
  const Tensor ones = Tensor::constant({2, 2}, {1, 1, 1, 1});
  const Tensor total = reduce_sum(tape, ones);
  EXPECT_EQ(total.rank(), 0);
  EXPECT_DOUBLE_EQ(total[0], 4.0);

  const Tensor mean = reduce_mean(tape, Tensor::constant({2}, {2, 4}));
  EXPECT_DOUBLE_EQ(mean[0], 3.0);

  const Tensor mat = Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor rows = reduce_sum(tape, mat, {1});
  EXPECT_EQ(rows.shape(), (std::vector<int>{2}));
  EXPECT_DOUBLE_EQ(rows[0], 6.0);
  EXPECT_DOUBLE_EQ(rows[1], 15.0);

  EXPECT_THROW(reduce_sum(tape, mat, {2}), ShapeError);
}

TEST(Reduce, MatchesSequentialAccumulationOracle) {
  Rng rng(17);
  Tape tape;
  const Tensor t = random_tensor({3, 3}, rng);
  double acc = 0.0;
  for (std::int64_t i = 0; i < t.size(); ++i) acc += t[i];
  EXPECT_NEAR(reduce_sum(tape, t)[0], acc, 1e-12);
}

TEST(CrossEntropy, UniformAndStabilized) {
  Tape tape;
  const Tensor uniform = Tensor::constant({2}, {0, 0});
  EXPECT_NEAR(softmax_cross_entropy(tape, uniform, 0)[0], std::log(2.0), 1e-12);

  const Tensor wide = Tensor::constant({2}, {1000, 0});
  const double loss = softmax_cross_entropy(tape, wide, 0)[0];
  EXPECT_TRUE(std::isfinite(loss));
  EXPECT_GE(loss, 0.0);
  EXPECT_LT(loss, 1e-10);

  EXPECT_THROW(softmax_cross_entropy(tape, uniform, 2), InputError);
  EXPECT_THROW(softmax_cross_entropy(tape, uniform, -1), InputError);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  Rng rng(23);
  std::vector<double> data(4);
  for (auto& v : data) v = 2.0 * rng.uniform_real() - 1.0;
  std::vector<Tensor> params{Tensor::parameter({4}, data)};
  const auto result = test::check_gradients(
      params, [&](Tape& t) { return softmax_cross_entropy(t, params[0], 2); });
  EXPECT_LT(result.max_rel_err, 1e-6);
  EXPECT_EQ(result.checked, 4);
}

TEST(Backward, LinearCase) {
  Tape tape;
  Tensor w = Tensor::parameter({3}, {0.5, -1.0, 2.0});
  const Tensor x = Tensor::constant({3}, {1, 2, 3});
  const Tensor loss = reduce_sum(tape, mul(tape, w, x));
  tape.backward(loss);
  EXPECT_DOUBLE_EQ(w.grad()[0], 1.0);
  EXPECT_DOUBLE_EQ(w.grad()[1], 2.0);
  EXPECT_DOUBLE_EQ(w.grad()[2], 3.0);
}

TEST(Backward, InactiveReluHasZeroGradient) {
  Tape tape;
  Tensor w = Tensor::parameter({1}, {2.0});
  const Tensor loss = reduce_sum(tape, relu(tape, scale(tape, w, -1.0)));
  tape.backward(loss);
  EXPECT_DOUBLE_EQ(w.grad()[0], 0.0);
}

TEST(Backward, UsageErrors) {
  Tape tape;
  Tensor w = Tensor::parameter({2}, {1.0, 2.0});
  const Tensor y = relu(tape, w);
  EXPECT_THROW(tape.backward(y), UsageError);  // non-scalar

  const Tensor loss = reduce_sum(tape, y);
  Tape other;
  EXPECT_THROW(other.backward(loss), UsageError);  // not on that tape

  tape.backward(loss);
  EXPECT_THROW(tape.backward(loss), UsageError);  // consumed
  tape.reset();
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Backward, CompositeNetMatchesFiniteDifferences) {
  Rng rng(31);
  std::vector<Tensor> params;
  params.push_back(random_tensor({4, 3}, rng, true));  // layer 1
  params.push_back(random_tensor({3}, rng, true));     // bias 1
  params.push_back(random_tensor({3, 2}, rng, true));  // layer 2
  const Tensor x = random_tensor({5, 4}, rng);

  const auto forward = [&](Tape& t) {
    Tensor h = contract(t, x, params[0], "ij,jk->ik");
    Tensor hb = add(t, h, contract(t, Tensor::constant({5}, std::vector<double>(5, 1.0)),
                                   params[1], "i,c->ic"));
    Tensor a = relu(t, hb);
    Tensor out = contract(t, a, params[2], "ij,jk->ik");
    return reduce_mean(t, mul(t, out, out));
  };
  const auto result = test::check_gradients(params, forward);
  EXPECT_LT(result.max_rel_err, 1e-6) << "checked " << result.checked;
}

TEST(Backward, AccumulationIsLinear) {
  Rng rng(41);
  Tensor w = random_tensor({4}, rng, true);
  const Tensor x = random_tensor({4}, rng);

  // sum of two losses in one pass
  Tape tape;
  const Tensor l1 = reduce_sum(tape, mul(tape, w, x));
  const Tensor l2 = reduce_sum(tape, relu(tape, w));
  const Tensor total = add(tape, l1, l2);
  tape.backward(total);
  const std::vector<double> combined(w.grad().begin(), w.grad().end());

  // two separate passes accumulating into the same leaf
  w.zero_grad();
  Tape t1;
  t1.backward(reduce_sum(t1, mul(t1, w, x)));
  Tape t2;
  t2.backward(reduce_sum(t2, relu(t2, w)));
  for (std::size_t i = 0; i < combined.size(); ++i)
    EXPECT_NEAR(w.grad()[i], combined[i], 1e-14);
}

// every record's inputs are leaves or outputs of earlier records
TEST(Tape, RecordsAreTopologicallyOrdered) {
  Rng rng(5);
  Tape tape;
  Tensor w = random_tensor({3, 3}, rng, true);
  Tensor x = random_tensor({3, 3}, rng);
  Tensor h = relu(tape, contract(tape, w, x, "ij,jk->ik"));
  Tensor loss = reduce_sum(tape, mul(tape, h, h));
  (void)loss;

  std::vector<const void*> produced;
  for (const auto& rec : tape.records()) {
    for (const auto& in : rec.inputs) {
      const bool is_earlier_output =
          std::find(produced.begin(), produced.end(), in.id()) != produced.end();
      const bool is_leaf = in.id() == w.id() || in.id() == x.id();
      EXPECT_TRUE(is_earlier_output || is_leaf) << rec.name;
    }
    produced.push_back(rec.output.id());
  }
}

TEST(IndexedOps, GatherAssembleConcatMaxGradients) {
  Rng rng(59);
  std::vector<Tensor> params{random_tensor({4, 3}, rng, true)};

  const auto terms = std::make_shared<std::vector<ad::AssembleTerm>>(
      std::vector<ad::AssembleTerm>{{0, 0, 1, 0.5}, {0, 0, 2, 0.5}, {1, 0, 0, 1.0}, {2, 0, 3, 2.0}});

  const auto forward = [&](Tape& t) {
    Tensor g = gather_rows(t, params[0], {2, 0, 3, 3});
    Tensor a = assemble_rows(t, {g}, 3, terms);
    Tensor c = concat_cols(t, a, a);
    Tensor mx = rows_max(t, c, {{0, 1}, {1, 2}});
    Tensor flat = reshape(t, mx, {12});
    Tensor joined = add_n(t, {flat, flat, flat});
    return reduce_mean(t, mul(t, joined, joined));
  };
  const auto result = test::check_gradients(params, forward);
  EXPECT_LT(result.max_rel_err, 1e-6);
}

TEST(IndexedOps, GatherAndAssembleValues) {
  Tape tape;
  const Tensor src = Tensor::constant({3, 2}, {1, 2, 3, 4, 5, 6});
  const Tensor g = gather_rows(tape, src, {2, 2, 0});
  EXPECT_EQ(g.shape(), (std::vector<int>{3, 2}));
  EXPECT_DOUBLE_EQ(g[0], 5.0);
  EXPECT_DOUBLE_EQ(g[5], 2.0);

  const auto terms = std::make_shared<std::vector<ad::AssembleTerm>>(
      std::vector<ad::AssembleTerm>{{0, 0, 0, 1.0}, {0, 0, 1, 1.0}, {1, 0, 2, -1.0}});
  const Tensor a = assemble_rows(tape, {src}, 2, terms);
  EXPECT_DOUBLE_EQ(a[0], 4.0);   // rows 0+1, col 0
  EXPECT_DOUBLE_EQ(a[1], 6.0);
  EXPECT_DOUBLE_EQ(a[2], -5.0);  // -row 2
}

TEST(NoGradMode, NothingRecorded) {
  Tape tape;
  tape.set_recording(false);
  Tensor w = Tensor::parameter({2}, {1.0, 2.0});
  const Tensor y = relu(tape, w);
  EXPECT_EQ(tape.size(), 0u);
  EXPECT_FALSE(y.requires_grad());
}
