#include <gtest/gtest.h>

#include <cmath>

#include "support/oracles.hpp"

using namespace tanflow;
using tantest::Gen;

namespace {

const std::vector<StageKind> kAllKinds = {StageKind::Linear,   StageKind::Recurrent, StageKind::Shift,
                                          StageKind::Coupling, StageKind::Reversal,  StageKind::Rescale,
                                          StageKind::Leaky};

TransformOptions small_options() {
  TransformOptions o;
  o.rnn_hidden = 5;
  o.coupling_hidden = 8;
  o.shift_hidden = 8;
  o.shift_state = 4;
  return o;
}

TransformChain random_chain(const std::vector<StageKind>& kinds, std::size_t d, Gen& g,
                            const TransformOptions& opt = small_options()) {
  TransformChain chain = build_chain(kinds, d, opt, RandomStream(g.index(0, 1 << 30)));
  tantest::randomize(chain.parameters(), g);
  return chain;
}

std::vector<double> row_of(const Array& a, std::size_t r) { return {a.row(r).begin(), a.row(r).end()}; }

// Maps a single row through the chain.
auto row_map(const TransformChain& chain) {
  return [&chain](const std::vector<double>& x) {
    const auto [z, ld] = apply(chain, Array(Shape{1, x.size()}, x));
    return row_of(z, 0);
  };
}

// Worst |logdet - ln|det J_fd|| scaled by max(1, |ln|det J_fd||).
double worst_logdet_error(const TransformChain& chain, const Array& x) {
  const auto [z, logdet] = apply(chain, x);
  double worst = 0;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double ref = tantest::log_abs_det(tantest::fd_jacobian(row_map(chain), row_of(x, r)));
    worst = std::max(worst, std::abs(logdet[r] - ref) / std::max(1.0, std::abs(ref)));
  }
  return worst;
}

std::string kind_label(StageKind k) { return std::string(stage_kind_name(k)); }

}  // namespace

// ------------------------------------------------------------ properties

class EveryKind : public ::testing::TestWithParam<StageKind> {};

TEST_P(EveryKind, InverseUndoesForward) {
  Gen g(1000 + static_cast<int>(GetParam()));
  for (int trial = 0; trial < 15; ++trial) {
    const std::size_t d = g.index(2, 9);
    TransformChain chain = random_chain({GetParam()}, d, g);
    const Array x = g.matrix(g.index(1, 7), d, 1.5);
    const auto [z, ld] = apply(chain, x);
    ASSERT_TRUE(z.all_finite());
    EXPECT_LT(max_abs_diff(chain.inverse(z), x), 1e-10) << kind_label(GetParam()) << " d=" << d;
  }
}

TEST_P(EveryKind, LogDetMatchesFiniteDifferenceJacobian) {
  Gen g(2000 + static_cast<int>(GetParam()));
  for (int trial = 0; trial < 8; ++trial) {
    const std::size_t d = g.index(2, 7);
    TransformChain chain = random_chain({GetParam()}, d, g);
    EXPECT_LT(worst_logdet_error(chain, g.matrix(3, d, 1.5)), 1e-6) << kind_label(GetParam()) << " d=" << d;
  }
}

TEST_P(EveryKind, ParameterGradientsMatchCentralDifferences) {
  Gen g(3000 + static_cast<int>(GetParam()));
  const std::size_t d = 4;
  TransformChain chain = random_chain({GetParam()}, d, g);
  const Array x = g.matrix(5, d), w = g.matrix(5, d);
  std::vector<Parameter*> ps = chain.parameters();
  auto eval = [&](Tape& tape) {
    ChainOutput out = chain.forward(tape, tape.constant(x));
    return sum(out.z * tape.constant(w)) + sum(out.logdet);
  };
  auto loss = [&] {
    Tape tape(false);
    return eval(tape).value().item();
  };
  auto analytic = [&] {
    Tape tape;
    tape.backward(eval(tape), ps);
  };
  const auto res = tantest::check_gradients(ps, loss, analytic);
  EXPECT_LT(res.worst, 1e-5) << res.where;
}

TEST_P(EveryKind, InputGradientMatchesCentralDifferences) {
  Gen g(4000 + static_cast<int>(GetParam()));
  const std::size_t d = 5;
  TransformChain chain = random_chain({GetParam()}, d, g);
  Parameter x("x", g.matrix(3, d));
  const Array w = g.matrix(3, d);
  std::vector<Parameter*> ps{&x};
  auto eval = [&](Tape& tape) {
    ChainOutput out = chain.forward(tape, tape.param(x));
    return sum(out.z * tape.constant(w)) + sum(out.logdet);
  };
  auto loss = [&] {
    Tape tape(false);
    return eval(tape).value().item();
  };
  auto analytic = [&] {
    Tape tape;
    tape.backward(eval(tape), ps);
  };
  const auto res = tantest::check_gradients(ps, loss, analytic);
  EXPECT_LT(res.worst, 1e-5) << res.where;
}

INSTANTIATE_TEST_SUITE_P(Transforms, EveryKind, ::testing::ValuesIn(kAllKinds),
                         [](const auto& info) { return kind_label(info.param); });

// ------------------------------------------------------------- LinearLU

TEST(LinearLU, ForwardIsAffineWithLuMatrix) {
  Gen g(5);
  const std::size_t d = 5;
  LinearLU t("lin", d, RandomStream(1));
  tantest::randomize(t.parameters(), g);
  Eigen::MatrixXd L = Eigen::MatrixXd::Identity(d, d), U = Eigen::MatrixXd::Zero(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      if (j < i) L(i, j) = t.lower().value(i, j);
      if (j >= i) U(i, j) = t.upper().value(i, j);
    }
  const Eigen::MatrixXd A = L * U;
  EXPECT_LT((tantest::to_eigen(t.matrix()) - A).cwiseAbs().maxCoeff(), 1e-14);
  const Array x = g.matrix(4, d);
  const auto [z, ld] = apply(t, x);
  for (std::size_t r = 0; r < 4; ++r) {
    Eigen::VectorXd xr(d);
    for (std::size_t i = 0; i < d; ++i) xr(i) = x(r, i);
    const Eigen::VectorXd zr = A * xr;
    for (std::size_t i = 0; i < d; ++i) EXPECT_NEAR(z(r, i), zr(i) + t.shift().value[i], 1e-13);
    EXPECT_NEAR(ld[r], std::log(std::abs(A.determinant())), 1e-12);
  }
  // Entries outside the triangles are ignored.
  t.lower().value(0, 3) = 99.0;
  t.upper().value(3, 0) = -99.0;
  EXPECT_EQ(apply(t, x).first, z);
}

TEST(LinearLU, InverseMatchesDenseSolve) {
  Gen g(6);
  const std::size_t d = 6;
  LinearLU t("lin", d, RandomStream(2));
  tantest::randomize(t.parameters(), g);
  const Eigen::MatrixXd A = tantest::to_eigen(t.matrix());
  const Array z = g.matrix(3, d);
  const Array x = t.inverse(z);
  for (std::size_t r = 0; r < 3; ++r) {
    Eigen::VectorXd rhs(d);
    for (std::size_t i = 0; i < d; ++i) rhs(i) = z(r, i) - t.shift().value[i];
    const Eigen::VectorXd ref = A.partialPivLu().solve(rhs);
    for (std::size_t i = 0; i < d; ++i) EXPECT_NEAR(x(r, i), ref(i), 1e-12);
  }
}

TEST(LinearLU, StartsNearIdentityAndRejectsZeroPivot) {
  LinearLU t("lin", 4, RandomStream(3), 0.01);
  const Array a = t.matrix();
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(a(i, j), i == j ? 1.0 : 0.0, 0.06);
  t.upper().value(2, 2) = 0.0;
  EXPECT_THROW(apply(t, Array(Shape{1, 4})), SingularityError);
  EXPECT_THROW(t.inverse(Array(Shape{1, 4})), SingularityError);
}

// ------------------------------------------------------------ Recurrent

TEST(RecurrentTransform, MatchesScalarRecurrence) {
  Gen g(7);
  const std::size_t d = 5, rho = 3;
  RecurrentTransform t("rnn", d, rho, 0.4, RandomStream(4));
  tantest::randomize(t.parameters(), g, 1.0);
  const Array x = g.matrix(3, d);
  const auto [z, ld] = apply(t, x);
  const double y = t.y().value[0], b = t.b().value[0];
  for (std::size_t r = 0; r < 3; ++r) {
    std::vector<double> s(rho, 0.0);
    double logdet = 0;
    for (std::size_t i = 0; i < d; ++i) {
      double pre = y * x(r, i) + b;
      for (std::size_t k = 0; k < rho; ++k) pre += t.w().value[k] * s[k];
      EXPECT_NEAR(z(r, i), pre >= 0 ? pre : 0.4 * pre, 1e-13);
      logdet += std::log(std::abs(y)) + (pre >= 0 ? 0.0 : std::log(0.4));
      std::vector<double> next(rho);
      for (std::size_t k = 0; k < rho; ++k) {
        double a = t.u().value[k] * x(r, i) + t.a().value[k];
        for (std::size_t j = 0; j < rho; ++j) a += s[j] * t.v().value(j, k);
        next[k] = std::max(0.0, a);
      }
      s = next;
    }
    EXPECT_NEAR(ld[r], logdet, 1e-12);
  }
}

TEST(RecurrentTransform, JacobianIsLowerTriangular) {
  Gen g(8);
  TransformChain chain = random_chain({StageKind::Recurrent}, 6, g);
  const Eigen::MatrixXd J = tantest::fd_jacobian(row_map(chain), row_of(g.matrix(1, 6), 0));
  for (Eigen::Index i = 0; i < 6; ++i)
    for (Eigen::Index j = i + 1; j < 6; ++j) EXPECT_NEAR(J(i, j), 0.0, 1e-9);
}

TEST(RecurrentTransform, RejectsBadLeakAndZeroScale) {
  EXPECT_THROW(RecurrentTransform("r", 3, 2, 1.0, RandomStream(1)), ContractViolation);
  EXPECT_THROW(RecurrentTransform("r", 3, 2, 0.0, RandomStream(1)), ContractViolation);
  RecurrentTransform t("r", 3, 2, 0.5, RandomStream(1));
  t.y().value[0] = 0.0;
  EXPECT_THROW(t.inverse(Array(Shape{1, 3})), SingularityError);
}

// -------------------------------------------------- volume preserving

TEST(RecurrentShift, UnitTriangularJacobianAndZeroLogDet) {
  Gen g(9);
  TransformChain chain = random_chain({StageKind::Shift}, 5, g);
  const Array x = g.matrix(4, 5);
  const auto [z, ld] = apply(chain, x);
  for (double v : ld.data()) EXPECT_EQ(v, 0.0);
  const Eigen::MatrixXd J = tantest::fd_jacobian(row_map(chain), row_of(x, 0));
  for (Eigen::Index i = 0; i < 5; ++i) {
    EXPECT_NEAR(J(i, i), 1.0, 1e-8);
    for (Eigen::Index j = i + 1; j < 5; ++j) EXPECT_NEAR(J(i, j), 0.0, 1e-9);
  }
  // The first shift has no inputs: z_1 - x_1 is the same for every row.
  for (std::size_t r = 1; r < 4; ++r) EXPECT_NEAR(z(r, 0) - x(r, 0), z(0, 0) - x(0, 0), 1e-14);
}

TEST(AdditiveCoupling, PassesFirstBlockAndHasZeroLogDet) {
  Gen g(10);
  for (std::size_t d : {2u, 3u, 7u}) {
    TransformChain chain = random_chain({StageKind::Coupling}, d, g);
    const Array x = g.matrix(4, d);
    const auto [z, ld] = apply(chain, x);
    const std::size_t half = (d + 1) / 2;
    for (std::size_t r = 0; r < 4; ++r) {
      EXPECT_EQ(ld[r], 0.0);
      for (std::size_t i = 0; i < half; ++i) EXPECT_EQ(z(r, i), x(r, i));
    }
  }
  EXPECT_THROW(AdditiveCoupling("c", 1, 4, 0.1, RandomStream(1)), ContractViolation);
}

TEST(Reversal, IsAnInvolution) {
  Gen g(11);
  Reversal rev("rev", 5);
  const Array x = g.matrix(3, 5);
  const auto [z, ld] = apply(rev, x);
  EXPECT_EQ(apply(rev, z).first, x);
  EXPECT_EQ(rev.inverse(x), z);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(z(1, i), x(1, 4 - i));
  for (double v : ld.data()) EXPECT_EQ(v, 0.0);
}

TEST(Rescale, LogDetIsSumOfLogScales) {
  Rescale t("s", 3);
  t.log_scale().value = Array::vector({0.5, -1.0, 2.0});
  const Array x = Array::matrix({{1, 2, 3}});
  const auto [z, ld] = apply(t, x);
  EXPECT_NEAR(z(0, 0), std::exp(0.5), 1e-15);
  EXPECT_NEAR(z(0, 2), 3 * std::exp(2.0), 1e-13);
  EXPECT_NEAR(ld[0], 1.5, 1e-15);
}

TEST(ElementwiseLeaky, LogDetCountsNegativeInputs) {
  ElementwiseLeaky t("r", 4, 0.25);
  const Array x = Array::matrix({{-1, 2, -3, 0}, {1, 1, 1, 1}});
  const auto [z, ld] = apply(t, x);
  EXPECT_EQ(z, Array::matrix({{-0.25, 2, -0.75, 0}, {1, 1, 1, 1}}));
  EXPECT_NEAR(ld[0], 2 * std::log(0.25), 1e-15);
  EXPECT_EQ(ld[1], 0.0);
  EXPECT_EQ(t.inverse(z), x);
}

// ----------------------------------------------------------------- chain

TEST(TransformChain, LogDetIsSumOfStagesAndInverseRunsBackwards) {
  Gen g(12);
  TransformChain chain = random_chain({StageKind::Linear, StageKind::Recurrent, StageKind::Reversal,
                                       StageKind::Leaky, StageKind::Rescale},
                                      4, g);
  const Array x = g.matrix(3, 4);
  Tape tape(false);
  ChainOutput out = chain.forward(tape, tape.constant(x));
  ASSERT_EQ(out.stage_logdets.size(), 5u);
  Array manual = x;
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0;
    for (const Var& v : out.stage_logdets) s += v.value()[r];
    EXPECT_NEAR(out.logdet.value()[r], s, 1e-13);
  }
  for (std::size_t k = 0; k < chain.size(); ++k) manual = apply(chain.stage(k), manual).first;
  EXPECT_EQ(manual, out.z.value());
  EXPECT_LT(max_abs_diff(chain.inverse(out.z.value()), x), 1e-12);
  EXPECT_LT(worst_logdet_error(chain, x), 1e-6);
}

TEST(TransformChain, EmptyChainIsIdentity) {
  TransformChain chain(3);
  const Array x = Array::matrix({{1, 2, 3}});
  const auto [z, ld] = apply(chain, x);
  EXPECT_EQ(z, x);
  EXPECT_EQ(ld[0], 0.0);
  EXPECT_EQ(chain.inverse(x), x);
}

TEST(TransformChain, DimensionChecks) {
  TransformChain chain(3);
  EXPECT_THROW(chain.append(std::make_unique<Reversal>("r", 4)), ContractViolation);
  EXPECT_THROW(apply(chain, Array(Shape{2, 4})), ContractViolation);
}

TEST(TransformChain, SingularStageIsNamedOnInverse) {
  TransformChain chain = build_chain("L RNN", 3, {}, RandomStream(1));
  dynamic_cast<LinearLU&>(chain.stage(0)).upper().value(1, 1) = 0.0;
  try {
    chain.inverse(Array(Shape{1, 3}));
    FAIL() << "expected SingularityError";
  } catch (const SingularityError& e) {
    EXPECT_NE(std::string(e.what()).find("stage 0 (LinearLU)"), std::string::npos) << e.what();
  }
}

// ----------------------------------------------------------------- presets

TEST(Preset, ExpandsNamesIntoStages) {
  using K = StageKind;
  const std::map<std::string, std::vector<K>> expected = {
      {"None", {}},
      {"L None", {K::Linear}},
      {"RNN", {K::Recurrent}},
      {"L RNN", {K::Linear, K::Recurrent}},
      {"2xRNN", {K::Recurrent, K::Reversal, K::Recurrent}},
      {"4xAdd+Re", {K::Coupling, K::Reversal, K::Coupling, K::Reversal, K::Coupling, K::Reversal, K::Coupling, K::Rescale}},
      {"L 4xSRNN+Re", {K::Linear, K::Shift, K::Reversal, K::Shift, K::Reversal, K::Shift, K::Reversal, K::Shift, K::Rescale}},
      {"RNN+4xAdd+Re", {K::Recurrent, K::Coupling, K::Reversal, K::Coupling, K::Reversal, K::Coupling, K::Reversal,
                        K::Coupling, K::Rescale}},
      {"2x L+ReLU+SRNN+Re", {K::Linear, K::Leaky, K::Shift, K::Rescale, K::Linear, K::Leaky, K::Shift, K::Rescale}},
  };
  for (const auto& [name, stages] : expected) EXPECT_EQ(parse_preset(name), stages) << name;
  EXPECT_EQ(parse_preset("5x L+ReLU+SRNN+Re").size(), 20u);
  EXPECT_EQ(parse_preset("  L   RNN "), parse_preset("L RNN"));
  EXPECT_EQ(parse_preset("L"), std::vector<K>{K::Linear});
}

TEST(Preset, ErrorsNameTheBadAtom) {
  try {
    parse_preset("3xFoo");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("\"Foo\""), std::string::npos) << e.what();
  }
  for (const char* bad : {"", "RNN+", "+RNN", "0xRNN", "RNN+None", "L RNN+Bogus", "2x None"})
    EXPECT_THROW(parse_preset(bad), ParseError) << bad;
}

TEST(Preset, EveryTablePresetBuildsAndInverts) {
  Gen g(13);
  EXPECT_EQ(table_presets().size(), 15u);
  for (const std::string& name : table_presets()) {
    for (std::size_t d : {3u, 5u}) {
      TransformChain chain = build_chain(name, d, small_options(), RandomStream(7));
      tantest::randomize(chain.parameters(), g, 0.1);
      const Array x = g.matrix(4, d);
      const auto [z, ld] = apply(chain, x);
      EXPECT_LT(max_abs_diff(chain.inverse(z), x), 1e-9) << name;
      for (std::size_t k = 0; k < chain.size(); ++k)
        EXPECT_EQ(chain.stage(k).name(), "t" + std::to_string(k) + "." + std::string(chain.stage(k).kind()));
    }
  }
}

TEST(Preset, RepeatedStagesHaveIndependentParameters) {
  TransformChain chain = build_chain("2xRNN", 3, {}, RandomStream(4));
  auto& a = dynamic_cast<RecurrentTransform&>(chain.stage(0));
  auto& b = dynamic_cast<RecurrentTransform&>(chain.stage(2));
  EXPECT_NE(a.w().value, b.w().value);
  EXPECT_NE(a.w().name, b.w().name);
}

TEST(Preset, BuildIsSeedDeterministic) {
  TransformChain a = build_chain("L RNN+4xAdd+Re", 4, small_options(), RandomStream(9));
  TransformChain b = build_chain("L RNN+4xAdd+Re", 4, small_options(), RandomStream(9));
  const auto pa = a.parameters(), pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t k = 0; k < pa.size(); ++k) EXPECT_EQ(pa[k]->value, pb[k]->value);
}
