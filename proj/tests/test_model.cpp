#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "support/oracles.hpp"

using namespace tanflow;
using tantest::Gen;

namespace {

ModelConfig small_config(const std::string& preset, const std::string& cond, std::size_t d, std::uint64_t seed = 1) {
  ModelConfig c;
  c.preset = preset;
  c.conditional = cond;
  c.dim = d;
  c.seed = seed;
  c.transform.rnn_hidden = 4;
  c.transform.coupling_hidden = 6;
  c.transform.shift_hidden = 6;
  c.transform.shift_state = 3;
  c.cond.hidden = 4;
  c.cond.head_hidden = 6;
  c.cond.components = 3;
  c.cond.ram_units = 5;
  return c;
}

TanModel random_model(const ModelConfig& c, Gen& g, double scale = 0.3) {
  TanModel m(c);
  tantest::randomize(m.parameters(), g, scale);
  return m;
}

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "tan_test_model";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(TanModel, LogProbIsConditionalPlusLogDet) {
  Gen g(1);
  TanModel m = random_model(small_config("L RNN+2xAdd+Re", "RAM", 3), g);
  const Array x = g.matrix(6, 3);
  const auto [z, logdet] = apply(m.chain(), x);
  const Array cond = m.conditional().log_prob(z);
  const Array lp = m.log_prob(x);
  for (std::size_t r = 0; r < 6; ++r) EXPECT_NEAR(lp[r], cond[r] + logdet[r], 1e-12);
  Tape tape(false);
  EXPECT_NEAR(m.nll_loss(tape, tape.constant(x)).value().item(),
              -(std::accumulate(lp.data().begin(), lp.data().end(), 0.0) / 6), 1e-12);
}

TEST(TanModel, NormalizesInOneDimension) {
  Gen g(2);
  for (const char* preset : {"None", "L None", "RNN", "L RNN", "2xRNN", "L 2xSRNN+Re", "2x L+ReLU+SRNN+Re"}) {
    TanModel m = random_model(small_config(preset, "MultiInd", 1), g);
    auto density = [&](double v) { return std::exp(m.log_prob(Array(Shape{1, 1}, {v}))[0]); };
    std::vector<double> breaks;
    for (int k = -400; k <= 400; ++k) breaks.push_back(0.25 * k);
    const double mass = tantest::adaptive_simpson(density, breaks, 1e-13);
    EXPECT_NEAR(mass, 1.0, 1e-5) << preset;
  }
}

TEST(TanModel, BatchedEvaluationIgnoresChunkingAndWorkers) {
  Gen g(3);
  TanModel m = random_model(small_config("L RNN+4xAdd+Re", "LAM", 4), g);
  const Array x = g.matrix(257, 4);
  const Array one = m.log_prob(x, 1, 4096);
  EXPECT_EQ(m.log_prob(x, 4, 4096), one);
  const Array small = m.log_prob(x, 1, 17);
  EXPECT_EQ(m.log_prob(x, 3, 17), small);
  EXPECT_EQ(m.log_prob(x, 8, 17), small);
  for (std::size_t chunk : {1u, 17u, 64u}) {
    const Array other = m.log_prob(x, 2, chunk);
    for (std::size_t r = 0; r < x.rows(); ++r) EXPECT_NEAR(other[r], one[r], 1e-12 * std::abs(one[r]));
  }
  EXPECT_THROW(m.log_prob(Array(Shape{2, 3})), ContractViolation);
}

TEST(TanModel, InitializationIsSeeded) {
  TanModel a(small_config("L RNN", "TIED", 3, 5)), b(small_config("L RNN", "TIED", 3, 5)),
      c(small_config("L RNN", "TIED", 3, 6));
  EXPECT_EQ(checkpoint_bytes(a), checkpoint_bytes(b));
  EXPECT_NE(checkpoint_bytes(a), checkpoint_bytes(c));
}

TEST(TanModel, ParameterNamesAreUniqueForEveryCombination) {
  for (const std::string& preset : table_presets())
    for (const std::string& cond : conditional_names()) {
      TanModel m(small_config(preset, cond, 3));
      std::set<std::string> names;
      std::size_t count = 0;
      for (Parameter* p : m.parameters()) {
        EXPECT_TRUE(names.insert(p->name).second) << p->name;
        count += p->value.size();
      }
      EXPECT_EQ(m.parameter_count(), count);
    }
}

TEST(TanModel, SamplesInvertTheChain) {
  Gen g(4);
  TanModel m = random_model(small_config("L RNN+2xAdd+Re", "LAM", 3), g);
  const Array x = m.sample(50, 9);
  EXPECT_EQ(x, m.sample(50, 9));
  EXPECT_NE(x, m.sample(50, 10));
  EXPECT_EQ(m.sample(20, 9), x.slice_rows(0, 20));
  const Array z = m.conditional().sample(50, RandomStream(9).split("sample"));
  EXPECT_LT(max_abs_diff(apply(m.chain(), x).first, z), 1e-10);
  EXPECT_TRUE(m.log_prob(x).all_finite());
  EXPECT_EQ(m.sample(0, 1).shape(), (Shape{0, 3}));
}

TEST(TanModel, SampleMomentsMatchQuadrature) {
  Gen g(5);
  TanModel m = random_model(small_config("L RNN", "MultiInd", 1), g);
  auto density = [&](double v) { return std::exp(m.log_prob(Array(Shape{1, 1}, {v}))[0]); };
  std::vector<double> breaks;
  for (int k = -200; k <= 200; ++k) breaks.push_back(0.25 * k);
  const double mean = tantest::adaptive_simpson([&](double v) { return v * density(v); }, breaks, 1e-12);
  const double second = tantest::adaptive_simpson([&](double v) { return v * v * density(v); }, breaks, 1e-12);
  const Array s = m.sample(100000, 3);
  double s1 = 0, s2 = 0;
  for (double v : s.data()) s1 += v, s2 += v * v;
  const double sd = std::sqrt(second - mean * mean);
  EXPECT_NEAR(s1 / 1e5, mean, 5 * sd / std::sqrt(1e5));
  EXPECT_NEAR(s2 / 1e5, second, 0.05 * second);
}

TEST(TanModel, SnapshotAndRestore) {
  Gen g(6);
  TanModel m = random_model(small_config("RNN", "RAM", 2), g);
  const auto snap = m.snapshot();
  const Array x = g.matrix(3, 2);
  const Array before = m.log_prob(x);
  tantest::randomize(m.parameters(), g);
  EXPECT_NE(m.log_prob(x), before);
  m.restore(snap);
  EXPECT_EQ(m.log_prob(x), before);
  auto bad = snap;
  bad.pop_back();
  EXPECT_THROW(m.restore(bad), ContractViolation);
  bad = snap;
  bad[0] = Array(Shape{7});
  EXPECT_THROW(m.restore(bad), ContractViolation);
}

// ------------------------------------------------------------ checkpoints

TEST(Checkpoint, RoundTripIsBitExact) {
  Gen g(7);
  for (const char* cond : {"LAM", "RAM", "TIED", "MultiInd", "SingleInd"}) {
    ModelConfig cfg = small_config("L 2xSRNN+Re", cond, 3, 11);
    cfg.transform.leak = 0.3;
    cfg.cond.head_leak = 0.17;
    TanModel m = random_model(cfg, g);
    const CheckpointMeta meta{1234, -0.1 / 3.0, 77};
    const auto path = scratch(std::string("m_") + cond + ".tan");
    save_checkpoint(m, path, meta);
    LoadedCheckpoint loaded = load_checkpoint(path);
    EXPECT_EQ(loaded.meta.iteration, 1234u);
    EXPECT_EQ(loaded.meta.validation_nll, -0.1 / 3.0);
    EXPECT_EQ(loaded.meta.train_seed, 77u);
    EXPECT_EQ(loaded.model.config().transform.leak, 0.3);
    EXPECT_EQ(loaded.model.config().cond.head_leak, 0.17);
    EXPECT_EQ(checkpoint_bytes(loaded.model, meta), checkpoint_bytes(m, meta));
    const Array x = g.matrix(5, 3);
    EXPECT_EQ(loaded.model.log_prob(x), m.log_prob(x));
  }
}

TEST(Checkpoint, SpecialValuesSurvive) {
  TanModel m(small_config("None", "MultiInd", 1));
  auto& mix = dynamic_cast<MultiIndConditional&>(m.conditional()).mixture().value;
  mix[0] = -0.0;
  mix[1] = 5e-324;
  mix[2] = 1.7976931348623157e308;
  LoadedCheckpoint back = parse_checkpoint(checkpoint_bytes(m));
  const Array& v = dynamic_cast<MultiIndConditional&>(back.model.conditional()).mixture().value;
  EXPECT_TRUE(std::signbit(v[0]));
  EXPECT_EQ(v[1], 5e-324);
  EXPECT_EQ(v[2], 1.7976931348623157e308);
}

TEST(Checkpoint, RejectsDamagedFiles) {
  TanModel m(small_config("L RNN", "LAM", 2));
  const std::string bytes = checkpoint_bytes(m);
  EXPECT_THROW(parse_checkpoint(bytes.substr(0, bytes.size() - 1)), FormatError);
  EXPECT_THROW(parse_checkpoint(bytes + "x"), FormatError);
  EXPECT_THROW(parse_checkpoint(bytes.substr(0, 30)), FormatError);
  EXPECT_THROW(parse_checkpoint(""), FormatError);
  EXPECT_THROW(parse_checkpoint("not a checkpoint\n"), FormatError);

  std::string future = bytes;
  future.replace(0, 16, "tan-checkpoint 9");
  try {
    parse_checkpoint(future);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("version 9"), std::string::npos) << e.what();
  }

  std::string renamed = bytes;
  const auto at = renamed.find("cond.LAM.weight");
  ASSERT_NE(at, std::string::npos);
  renamed.replace(at, 15, "cond.LAM.wEight");
  EXPECT_THROW(parse_checkpoint(renamed), FormatError);

  std::string bad_field = bytes;
  const auto dim = bad_field.find("dim=2");
  bad_field.replace(dim, 5, "dim=x");
  EXPECT_THROW(parse_checkpoint(bad_field), FormatError);

  // A config that disagrees with the stored tensors.
  std::string wider = bytes;
  const auto hid = wider.find("cond.hidden=4");
  wider.replace(hid, 13, "cond.hidden=5");
  EXPECT_THROW(parse_checkpoint(wider), FormatError);

  EXPECT_THROW(load_checkpoint(scratch("missing.tan")), Error);
}

TEST(Checkpoint, SaveReplacesAtomically) {
  TanModel a(small_config("RNN", "MultiInd", 1, 1)), b(small_config("RNN", "MultiInd", 1, 2));
  const auto path = scratch("replace.tan");
  save_checkpoint(a, path);
  save_checkpoint(b, path);
  LoadedCheckpoint back = load_checkpoint(path);
  EXPECT_EQ(checkpoint_bytes(back.model), checkpoint_bytes(b));
  EXPECT_FALSE(std::filesystem::exists(path.string() + ".tmp"));
}

TEST(Checkpoint, ConfigFieldsAreComplete) {
  const auto fields = config_fields(small_config("L RNN", "Tied", 2));
  EXPECT_EQ(fields.at("preset"), "L RNN");
  EXPECT_EQ(fields.at("dim"), "2");
  EXPECT_EQ(fields.size(), 16u);
  TanModel m(small_config("L RNN", "Tied", 2));
  EXPECT_EQ(m.config().conditional, "TIED");
}
