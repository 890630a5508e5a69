// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>

#include "support/oracles.hpp"

using namespace tanflow;
using tantest::Gen;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass;
  std::string detail;
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

const std::vector<StageKind> kKinds = {StageKind::Linear,   StageKind::Recurrent, StageKind::Shift,
                                       StageKind::Coupling, StageKind::Reversal,  StageKind::Rescale,
                                       StageKind::Leaky};

TransformOptions narrow() {
  TransformOptions o;
  o.rnn_hidden = 6;
  o.coupling_hidden = 12;
  o.shift_hidden = 12;
  o.shift_state = 4;
  return o;
}

TransformChain random_chain(const std::vector<StageKind>& kinds, std::size_t d, Gen& g,
                            const TransformOptions& opt) {
  TransformChain chain = build_chain(kinds, d, opt, RandomStream(g.index(0, 1 << 30)));
  tantest::randomize(chain.parameters(), g);
  return chain;
}

ModelConfig tiny(const std::string& preset, const std::string& cond, std::size_t d, std::uint64_t seed = 1) {
  ModelConfig c;
  c.preset = preset;
  c.conditional = cond;
  c.dim = d;
  c.seed = seed;
  c.transform.rnn_hidden = 4;
  c.transform.coupling_hidden = 4;
  c.transform.shift_hidden = 4;
  c.transform.shift_state = 4;
  c.cond.hidden = 4;
  c.cond.head_hidden = 4;
  c.cond.components = 2;
  c.cond.ram_units = 4;
  return c;
}

std::vector<double> row_of(const Array& a, std::size_t r) { return {a.row(r).begin(), a.row(r).end()}; }

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

// Evenly spaced breakpoints covering [-half, half].
std::vector<double> grid_breaks(double half, double step) {
  std::vector<double> b;
  for (double v = -half; v <= half + 1e-12; v += step) b.push_back(v);
  return b;
}

// ------------------------------------------------------------- criteria

Verdict invertibility() {
  Gen g(101);
  double worst = 0;
  std::string where;
  for (StageKind k : kKinds)
    for (std::size_t d : {2u, 6u, 32u})
      for (int trial = 0; trial < 20; ++trial) {
        TransformChain chain = random_chain({k}, d, g, TransformOptions{});
        const Array x = g.matrix(16, d, 2.0);
        const auto [z, ld] = apply(chain, x);
        const double err = max_abs_diff(chain.inverse(z), x);
        if (!(err <= worst)) worst = err, where = std::string(stage_kind_name(k)) + " d=" + std::to_string(d);
      }
  return {worst < 1e-7, "max |inverse(forward(x)) - x| = " + fmt(worst) + " (" + where + "), 420 parameterizations"};
}

Verdict jacobian() {
  Gen g(102);
  double worst = 0;
  std::string where;
  std::size_t checked = 0;
  auto check = [&](const std::vector<StageKind>& kinds, std::size_t d, const std::string& label) {
    TransformChain chain = random_chain(kinds, d, g, narrow());
    const Array x = g.matrix(3, d, 1.5);
    const auto [z, logdet] = apply(chain, x);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      auto f = [&](const std::vector<double>& v) { return row_of(apply(chain, Array(Shape{1, d}, v)).first, 0); };
      const double ref = tantest::log_abs_det(tantest::fd_jacobian(f, row_of(x, r)));
      const double err = std::abs(logdet[r] - ref) / std::max(1.0, std::abs(ref));
      ++checked;
      if (!(err <= worst)) worst = err, where = label + " d=" + std::to_string(d);
    }
  };
  for (StageKind k : kKinds)
    for (std::size_t d = 2; d <= 8; ++d) check({k}, d, std::string(stage_kind_name(k)));
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<StageKind> kinds;
    std::string label;
    for (int s = 0; s < 5; ++s) {
      kinds.push_back(kKinds[g.index(0, kKinds.size() - 1)]);
      label += (s ? "+" : "") + std::string(stage_kind_name(kinds.back()));
    }
    check(kinds, g.index(2, 8), label);
  }
  return {worst < 1e-4, "worst relative log-det error " + fmt(worst) + " (" + where + ") over " +
                            std::to_string(checked) + " points"};
}

Verdict gradients() {
  Gen g(103);
  double worst = 0;
  std::string where;
  std::size_t entries = 0;
  for (const char* preset : {"L RNN+4xAdd+Re", "L 4xSRNN+Re", "2xRNN", "5x L+ReLU+SRNN+Re"})
    for (const std::string& cond : conditional_names()) {
      TanModel m(tiny(preset, cond, 3));
      tantest::randomize(m.parameters(), g, 0.3);
      const Array x = g.matrix(5, 3);
      const auto ps = m.parameters();
      auto loss = [&] {
        Tape t(false);
        return m.nll_loss(t, t.constant(x)).value().item();
      };
      auto analytic = [&] {
        Tape t;
        t.backward(m.nll_loss(t, t.constant(x)), ps);
      };
      const auto res = tantest::check_gradients(ps, loss, analytic);
      entries += res.entries;
      if (!(res.worst <= worst)) worst = res.worst, where = std::string(preset) + " & " + cond + ": " + res.where;
    }
  return {worst < 1e-4, "worst relative gradient error " + fmt(worst) + " over " + std::to_string(entries) +
                            " entries (" + where + ")"};
}

double mass_1d(TanModel& m) {
  auto density = [&](double v) { return std::exp(m.log_prob(Array(Shape{1, 1}, {v}))[0]); };
  return tantest::adaptive_simpson(density, grid_breaks(60, 0.25), 1e-12);
}

// Tensor-product Simpson over the whole plane after x = sinh(u) on each
// axis, u in [-umax, umax]. The inner axis is one batched log_prob call per
// outer node.
double mass_2d(TanModel& m, double umax, std::size_t n) {
  const double h = 2 * umax / static_cast<double>(n);
  const auto w = tantest::simpson_weights(n, h);
  std::vector<double> x(n + 1), jac(n + 1);
  for (std::size_t k = 0; k <= n; ++k) x[k] = std::sinh(-umax + h * k), jac[k] = w[k] * std::cosh(-umax + h * k);
  Array row(Shape{n + 1, 2});
  double total = 0;
  for (std::size_t a = 0; a <= n; ++a) {
    for (std::size_t b = 0; b <= n; ++b) row(b, 0) = x[a], row(b, 1) = x[b];
    const Array lp = m.log_prob(row);
    double inner = 0;
    for (std::size_t b = 0; b <= n; ++b) inner += jac[b] * std::exp(lp[b]);
    total += jac[a] * inner;
  }
  return total;
}

Verdict normalization() {
  Gen g(104);
  struct Case {
    const char* preset;
    const char* cond;
    std::size_t d;
  };
  const std::vector<Case> cases = {{"RNN", "RAM", 1},      {"None", "MultiInd", 1},        {"RNN", "RAM", 2},
                                   {"None", "MultiInd", 2}, {"L 4xAdd+Re", "LAM", 2}};
  double worst = 0;
  std::string detail;
  for (const Case& c : cases)
    for (std::uint64_t seed : {1u, 2u}) {
      TanModel m(tiny(c.preset, c.cond, c.d, seed));
      tantest::randomize(m.parameters(), g, 0.2);
      const double mass = c.d == 1 ? mass_1d(m) : mass_2d(m, 12.0, 4000);
      worst = std::max(worst, std::abs(mass - 1));
      detail += std::string(detail.empty() ? "" : ", ") + c.preset + " & " + c.cond + " d=" + std::to_string(c.d) +
                ": " + fmt(mass);
    }
  return {worst < 1e-2, "mass " + detail};
}

Verdict identities() {
  Gen g(105);
  bool ok = true;
  std::string notes;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t d = g.index(2, 12);
    for (StageKind k : {StageKind::Shift, StageKind::Coupling}) {
      TransformChain chain = random_chain({k}, d, g, narrow());
      const auto [z, ld] = apply(chain, g.matrix(8, d, 2.0));
      for (double v : ld.data()) ok = ok && v == 0.0;
    }
    TransformChain rev = random_chain({StageKind::Reversal, StageKind::Reversal}, d, g, narrow());
    const Array x = g.matrix(8, d, 3.0);
    const auto [twice, ld2] = apply(rev, x);
    ok = ok && twice == x;
  }
  if (!ok) notes += "shift/coupling log-det or reversal involution not exact; ";

  // TIED as LAM with weights restricted to shared columns.
  for (std::size_t d : {2u, 5u, 9u}) {
    ModelConfig tc = tiny("None", "TIED", d, 7), lc = tiny("None", "LAM", d, 8);
    tc.cond.hidden = lc.cond.hidden = 6;
    TanModel tm(tc), lm(lc);
    tantest::randomize(tm.parameters(), g);
    auto& tied = dynamic_cast<TiedConditional&>(tm.conditional());
    auto& lam = dynamic_cast<LamConditional&>(lm.conditional());
    for (std::size_t i = 1; i < d; ++i)
      for (std::size_t j = 0; j < i; ++j)
        for (std::size_t q = 0; q < lam.hidden_width(); ++q)
          lam.weight().value(LamConditional::packed_row(i, j), q) = tied.weight().value(q, j);
    lam.bias().value = tied.bias().value;
    const auto tp = tied.parameters(), lp = lam.parameters();
    for (std::size_t k = 2; k < tp.size(); ++k) lp[k]->value = tp[k]->value;
    const Array z = g.matrix(30, d, 2.0);
    if (!(tied.log_prob(z) == lam.log_prob(z)) || !(tm.log_prob(z) == lm.log_prob(z))) {
      ok = false;
      notes += "TIED differs from column-restricted LAM at d=" + std::to_string(d) + "; ";
    }
  }
  return {ok, ok ? "shift/coupling log-det == 0, reversal twice == identity, TIED == restricted LAM (bitwise)"
                 : notes};
}

double test_ll(const std::string& preset, const std::string& cond, const Dataset& ds, const TrainConfig& t) {
  ModelConfig c;
  c.preset = preset;
  c.conditional = cond;
  c.dim = ds.dim();
  c.seed = 3;
  TanModel m(c);
  train(m, ds.train, ds.validation, t);
  return mean_ll_report(m, ds.test).mean;
}

Verdict star_ranking() {
  GeneratorSpec s;
  s.kind = "star";
  s.dim = 8;
  s.n = 20000;
  s.seed = 1;
  const Dataset ds = generate(s);
  TrainConfig t;
  t.iterations = 3000;
  t.validation_period = 250;
  t.decay = 0.5;
  t.seed = 1;
  const double lam = test_ll("L 4xAdd+Re", "LAM", ds, t);
  const double tied = test_ll("None", "TIED", ds, t);
  const double multi = test_ll("None", "MultiInd", ds, t);
  const double single = test_ll("None", "SingleInd", ds, t);
  const bool ok = lam - tied > 0.5 && tied - multi > 0.5 && multi - single > 0.5;
  return {ok, "test LL: L 4xAdd+Re & LAM " + fmt(lam) + ", TIED " + fmt(tied) + ", MultiInd " + fmt(multi) +
                  ", SingleInd " + fmt(single)};
}

Verdict gaussian_entropy() {
  Gen g(107);
  const double rho = 0.9;
  Dataset ds;
  ds.train = tantest::correlated_gaussian(20000, rho, g);
  ds.validation = tantest::correlated_gaussian(5000, rho, g);
  ds.test = tantest::correlated_gaussian(50000, rho, g);
  ModelConfig c;
  c.preset = "L None";
  c.conditional = "SingleInd";
  c.dim = 2;
  TanModel m(c);
  TrainConfig t;
  t.iterations = 2000;
  t.validation_period = 100;
  train(m, ds.train, ds.validation, t);
  const double nll = mean_nll(m, ds.test);
  const double entropy = 0.5 * std::log(std::pow(2 * std::numbers::pi * std::numbers::e, 2) * (1 - rho * rho));
  return {std::abs(nll - entropy) < 0.05, "test NLL " + fmt(nll) + " vs analytic entropy " + fmt(entropy)};
}

Verdict sampling() {
  Gen g(108);
  // Bimodal 1-D training data.
  auto draw = [&](std::size_t n) {
    Array x(Shape{n, 1});
    for (std::size_t r = 0; r < n; ++r) x(r, 0) = g.coin() ? -2 + 0.5 * g.normal() : 1.5 + g.normal();
    return x;
  };
  const Array tr = draw(5000), va = draw(1000);
  ModelConfig c = tiny("L RNN", "MultiInd", 1);
  c.cond.components = 5;
  TanModel m(c);
  TrainConfig t;
  t.iterations = 500;
  t.validation_period = 100;
  train(m, tr, va, t);

  const double lo = -40, hi = 40, h = 1e-3;
  const std::size_t n = static_cast<std::size_t>((hi - lo) / h);
  Array xs(Shape{n + 1, 1});
  for (std::size_t k = 0; k <= n; ++k) xs(k, 0) = lo + h * k;
  const Array lp = m.log_prob(xs);
  std::vector<double> cdf(n + 1, 0.0);
  for (std::size_t k = 1; k <= n; ++k) cdf[k] = cdf[k - 1] + 0.5 * h * (std::exp(lp[k - 1]) + std::exp(lp[k]));
  const double mass = cdf[n];
  auto F = [&](double v) {
    if (v <= lo) return 0.0;
    if (v >= hi) return 1.0;
    const double pos = (v - lo) / h;
    const std::size_t k = std::min(n - 1, static_cast<std::size_t>(pos));
    return (cdf[k] + (pos - k) * (cdf[k + 1] - cdf[k])) / mass;
  };
  const Array s = m.sample(100000, 9);
  const double ks = tantest::ks_statistic({s.data().begin(), s.data().end()}, F);
  return {ks < 0.01, "KS " + fmt(ks) + " on 1e5 samples (quadrature mass " + fmt(mass) + ")"};
}

Verdict anomaly() {
  const double oracle =
      average_precision(std::vector<double>{0.9, 0.8, 0.7}, std::vector<int>{1, 0, 1});
  GeneratorSpec s;
  s.kind = "trimodal";
  s.dim = 3;
  s.n = 10000;
  s.seed = 2;
  s.outlier_fraction = 0.01;
  const Dataset ds = generate(s);
  ModelConfig c;
  c.preset = "L RNN";
  c.conditional = "RAM";
  c.dim = 3;
  c.seed = 3;
  TanModel m(c);
  TrainConfig t;
  t.iterations = 2000;
  t.validation_period = 250;
  train(m, ds.train, ds.validation, t);
  const double ap = average_precision(anomaly_scores(m, ds.test), ds.test_labels);
  std::size_t pos = 0;
  for (int y : ds.test_labels) pos += y;
  const bool exact = std::abs(oracle - 5.0 / 6.0) <= 1e-15;
  return {ap > 0.95 && exact,
          "AP " + fmt(ap) + " with " + std::to_string(pos) + " outliers in " + std::to_string(ds.test.rows()) +
              " test rows; oracle case " + (exact ? "exact" : "wrong")};
}

Verdict determinism() {
  GeneratorSpec s;
  s.kind = "markov";
  s.dim = 4;
  s.n = 2000;
  s.seed = 5;
  const Dataset ds = generate(s);
  auto run = [&] {
    TanModel m(tiny("L RNN+2xAdd+Re", "RAM", 4, 11));
    TrainConfig t;
    t.iterations = 200;
    t.batch_size = 64;
    t.validation_period = 50;
    t.seed = 12;
    const TrainResult r = train(m, ds.train, ds.validation, t);
    return checkpoint_bytes(m, r.best_meta) + history_table(r.history) + loss_curve_table(r.history);
  };
  const bool lib = run() == run();

  const fs::path dir = fs::temp_directory_path() / "tan_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string base = "cd '" + dir.string() + "' && '" TAN_CLI "' --quiet ";
  auto sh = [&](const std::string& args) { return std::system((base + args + " > /dev/null").c_str()) == 0; };
  const std::string tr = "train --data d --preset \"L RNN\" --conditional LAM --components 3 --hidden 8"
                         " --head-hidden 8 --rnn-hidden 4 --iterations 120 --validation-period 40 --seed 4 --out ";
  bool cli = sh("generate --kind star -d 5 -n 1000 --seed 3 --out d") && sh(tr + "a") && sh(tr + "b");
  for (const char* f : {"checkpoint.tan", "history.csv", "loss_curve.csv", "history_decay_0.1.csv"})
    cli = cli && slurp(dir / "a" / f) == slurp(dir / "b" / f) && !slurp(dir / "a" / f).empty();
  return {lib && cli, std::string("library rerun ") + (lib ? "identical" : "DIFFERS") + ", CLI rerun " +
                          (cli ? "identical" : "DIFFERS")};
}

}  // namespace

int main() {
  tune_allocator();
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria = {
      {"invertibility", invertibility}, {"jacobian", jacobian},         {"gradients", gradients},
      {"normalization", normalization}, {"identities", identities},     {"star ranking", star_ranking},
      {"gaussian entropy", gaussian_entropy}, {"sampling", sampling},   {"anomaly", anomaly},
      {"determinism", determinism}};
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[k].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !v.pass;
    std::printf("%s %2zu %-17s %7.1fs  %s\n", v.pass ? "PASS" : "FAIL", k + 1, criteria[k].first, secs,
                v.detail.c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
