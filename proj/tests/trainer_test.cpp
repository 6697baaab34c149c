#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ufdn/config.hpp"
#include "ufdn/errors.hpp"
#include "ufdn/trainer.hpp"

using namespace ufdn;
namespace fs = std::filesystem;

namespace {

Architecture tiny_arch(std::size_t classes = 10) {
  Architecture a;
  a.image_size = 8;
  a.latent_dim = 6;
  a.enc_widths = {8, 16};
  a.dx_widths = {8};
  a.dv_hidden = {12};
  a.num_classes = classes;
  return a;
}

MultiDomainCorpus tiny_corpus(std::size_t sprites = 20) {
  CorpusSpec spec;
  spec.n_sprites = sprites;
  spec.image_size = 8;
  spec.seed = 3;
  return make_corpus(spec);
}

TrainConfig tiny_config(std::size_t steps) {
  TrainConfig c;
  c.steps = steps;
  c.batch_size = 8;
  c.lr = 1e-3;
  c.seed = 42;
  c.uda_enabled = true;
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ufdn_trainer_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

bool same_params(const ParamMap& a, const ParamMap& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [name, t] : a) {
    const Tensor& u = b.at(name);
    if (!std::equal(t.values().begin(), t.values().end(), u.values().begin())) return false;
  }
  return true;
}

std::vector<std::string> log_lines(const std::vector<StepLosses>& trace) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < trace.size(); ++i) out.push_back(format_log_line(i, trace[i]));
  return out;
}

}  // namespace

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor p({1}, {0.3}), m({1}), v({1});
  adam_update(p, Tensor({1}, {1.0}), m, v, 1, {1e-2, 0.5, 0.999, 1e-8});
  EXPECT_NEAR(p[0], 0.3 - 1e-2, 1e-9);
  EXPECT_THROW(adam_update(p, Tensor({2}), m, v, 2, {1e-2, 0.5, 0.999, 1e-8}), ContractError);
}

TEST(Adam, TwoStepsMatchHandComputation) {
  const double lr = 0.1, b1 = 0.5, b2 = 0.9, eps = 1e-8;
  Tensor p({1}, {1.0}), m({1}), v({1});
  adam_update(p, Tensor({1}, {2.0}), m, v, 1, {lr, b1, b2, eps});
  adam_update(p, Tensor({1}, {-1.0}), m, v, 2, {lr, b1, b2, eps});
  // m2 = 0.5*1 + 0.5*(-1) = 0, so the second step only changes v.
  EXPECT_NEAR(m[0], 0.0, 1e-15);
  EXPECT_NEAR(v[0], 0.9 * 0.4 + 0.1 * 1.0, 1e-15);
  EXPECT_NEAR(p[0], 1.0 - lr * 1.0, 1e-7);
}

TEST(Adam, ZeroGradientLeavesParameterAndMoments) {
  ParamMap params{{"w", Tensor({3}, {1.0, -2.0, 0.5})}};
  const ParamMap before = params;
  AdamState s;
  adam_step(params, {{"w", Tensor({3})}}, s, {1e-3, 0.5, 0.999, 1e-8});
  EXPECT_TRUE(same_params(params, before));
  EXPECT_EQ(s.t, 1u);
  for (double x : s.m.at("w").values()) EXPECT_EQ(x, 0.0);
  for (double x : s.v.at("w").values()) EXPECT_EQ(x, 0.0);
}

TEST(TrainStep, EachSubStepMovesOnlyItsPartition) {
  const Architecture a = tiny_arch();
  TrainState st = initial_state(a, 1);
  const auto batches = batch_iter(tiny_corpus(), 8, 1, 0);
  const TrainConfig c = tiny_config(1);
  UfdnModel previous = st.model;
  std::vector<Composite> seen;
  Rng rng = step_rng(c.seed, 0);
  train_step(st.model, batches[0], c, st.opt, rng, 0, [&](Composite which, const UfdnModel& m) {
    seen.push_back(which);
    const auto owned = composite_partitions(which, c.objective());
    for (Partition p : kAllPartitions) {
      const bool moved = !same_params(m.params(p), previous.params(p));
      const bool is_owned = std::find(owned.begin(), owned.end(), p) != owned.end();
      EXPECT_EQ(moved, is_owned) << "sub-step " << static_cast<int>(which) << ", partition "
                                 << partition_name(p);
    }
    previous = m;
  });
  EXPECT_EQ(seen, (std::vector<Composite>{Composite::DomainDisc, Composite::ImageDisc,
                                          Composite::Encoder, Composite::Generator}));
}

TEST(TrainStep, AblationFlagsFreezeTheirDiscriminator) {
  const Architecture a = tiny_arch(0);
  const auto batches = batch_iter(tiny_corpus(), 8, 1, 0);
  for (int mode = 0; mode < 2; ++mode) {
    TrainConfig c = tiny_config(1);
    c.uda_enabled = false;
    (mode == 0 ? c.disable_dv : c.disable_dx) = true;
    TrainState st = initial_state(a, 1);
    const UfdnModel before = st.model;
    Rng rng = step_rng(c.seed, 0);
    const StepLosses l = train_step(st.model, batches[0], c, st.opt, rng);
    const Partition frozen = mode == 0 ? Partition::DomainDisc : Partition::ImageDisc;
    EXPECT_TRUE(same_params(st.model.params(frozen), before.params(frozen)));
    EXPECT_FALSE(same_params(st.model.params(Partition::Encoder), before.params(Partition::Encoder)));
    if (mode == 0) {
      EXPECT_EQ(l.e_adv, 0.0);
      EXPECT_EQ(l.dv, 0.0);
    } else {
      EXPECT_EQ(l.g_adv, 0.0);
      EXPECT_EQ(l.dx_adv, 0.0);
      EXPECT_EQ(c.objective().weights.cls, 0.0);
    }
  }
}

TEST(TrainStep, NonFiniteLossRaisesDivergence) {
  TrainState st = initial_state(tiny_arch(), 1);
  auto w = st.model.params(Partition::Encoder).at("E.mu.b").mutable_values();
  w[0] = std::numeric_limits<double>::quiet_NaN();
  const auto batches = batch_iter(tiny_corpus(), 8, 1, 0);
  Rng rng(1);
  try {
    train_step(st.model, batches[0], tiny_config(1), st.opt, rng, 17);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.step(), 17u);
    EXPECT_FALSE(e.loss_name().empty());
  }
}

TEST(TrainLoop, SeededRunsReplayExactly) {
  const auto corpus = tiny_corpus();
  const TrainConfig c = tiny_config(100);
  std::ostringstream log_a, log_b;
  const TrainResult a = train_loop(initial_state(tiny_arch(), 5), corpus, c, {&log_a});
  const TrainResult b = train_loop(initial_state(tiny_arch(), 5), corpus, c, {&log_b});
  EXPECT_EQ(log_a.str(), log_b.str());
  const std::string text = log_a.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 100);
  TrainConfig other = c;
  other.seed = 43;
  const TrainResult d = train_loop(initial_state(tiny_arch(), 5), corpus, other);
  EXPECT_NE(log_lines(a.trace), log_lines(d.trace));
}

TEST(TrainLoop, LogLineFormat) {
  StepLosses l;
  l.recon = 1.5;
  l.aux = 0.25;
  EXPECT_EQ(format_log_line(7, l),
            "7\trecon=1.5\tkl=0\te_adv=0\tg_adv=0\tdx_adv=0\tdv=0\tcls=0\taux=0.25");
}

TEST(TrainLoop, CheckpointCountAndResumeReplay) {
  const auto corpus = tiny_corpus();
  TrainConfig c = tiny_config(20);
  c.checkpoint_every = 6;
  const fs::path dir = scratch("resume");
  std::ostringstream full_log, resumed_log;
  const TrainResult full = train_loop(initial_state(tiny_arch(), 2), corpus, c, {&full_log, dir});
  ASSERT_EQ(full.checkpoints.size(), 4u + 1u);  // ceil(20/6) periodic plus final
  EXPECT_TRUE(fs::exists(dir / "final.ufdn"));

  const LoadedCheckpoint mid = load_checkpoint(dir / "step_0000012.ufdn");
  EXPECT_EQ(mid.state.step, 12u);
  EXPECT_EQ(mid.config, c);
  const TrainResult resumed =
      train_loop(mid.state, corpus, mid.config, {&resumed_log, scratch("resume2")});
  ASSERT_EQ(resumed.trace.size(), 8u);
  const std::string full_text = full_log.str();
  std::size_t cut = 0;
  for (int i = 0; i < 12; ++i) cut = full_text.find('\n', cut) + 1;
  EXPECT_EQ(full_text.substr(cut), resumed_log.str());
  for (Partition p : kAllPartitions)
    EXPECT_TRUE(same_params(full.state.model.params(p), resumed.state.model.params(p)));
}

TEST(TrainLoop, CorpusMismatchIsConfigError) {
  Architecture a = tiny_arch();
  a.domain_dim = 2;
  EXPECT_THROW(train_loop(initial_state(a, 1), tiny_corpus(), tiny_config(1)), ConfigError);
  Architecture no_cls = tiny_arch(0);
  EXPECT_THROW(train_loop(initial_state(no_cls, 1), tiny_corpus(), tiny_config(1)), ConfigError);
}

TEST(TrainLoop, VaeLossDecreases) {
  const auto corpus = tiny_corpus(30);
  TrainConfig c = tiny_config(300);
  const TrainResult r = train_loop(initial_state(tiny_arch(), 9), corpus, c);
  auto window = [&](std::size_t from) {
    double s = 0;
    for (std::size_t i = from; i < from + 50; ++i) s += r.trace[i].recon + r.trace[i].kl;
    return s / 50;
  };
  EXPECT_LT(window(250), window(0));
}

TEST(Checkpoint, RoundTripIsByteIdentical) {
  const fs::path dir = scratch("roundtrip");
  const auto corpus = tiny_corpus();
  const TrainResult r = train_loop(initial_state(tiny_arch(), 4), corpus, tiny_config(3));
  save_checkpoint(r.state, tiny_config(3), dir / "a.ufdn");
  const LoadedCheckpoint l = load_checkpoint(dir / "a.ufdn");
  save_checkpoint(l.state, l.config, dir / "b.ufdn");
  EXPECT_EQ(slurp(dir / "a.ufdn"), slurp(dir / "b.ufdn"));
  EXPECT_EQ(l.state.opt[0].t, 3u);

  for (Partition p : kAllPartitions)
    for (const auto& [name, t] : r.state.model.params(p)) {
      const Tensor& u = l.state.model.param(p, name);
      for (std::size_t i = 0; i < t.size(); ++i)
        ASSERT_LE(std::abs(u[i] - t[i]), std::ldexp(std::abs(t[i]), -23)) << name;
    }

  // Forward outputs agree up to storage rounding.
  const Tensor x = batch_iter(corpus, 4, 0, 0)[0].images;
  const Tensor mu_a = encode(r.state.model, x).mu, mu_b = encode(l.state.model, x).mu;
  for (std::size_t i = 0; i < mu_a.size(); ++i) EXPECT_NEAR(mu_a[i], mu_b[i], 1e-5);
}

TEST(Checkpoint, CorruptionIsDetected) {
  const fs::path dir = scratch("corrupt");
  const TrainState st = initial_state(tiny_arch(), 4);
  save_checkpoint(st, tiny_config(1), dir / "ok.ufdn");
  const std::string good = slurp(dir / "ok.ufdn");
  auto write = [&](const std::string& name, const std::string& bytes) {
    std::ofstream(dir / name, std::ios::binary) << bytes;
    return dir / name;
  };

  // E.conv1.w is [16,8,4,4]; change the 16 in its shape.
  std::string shape_bad = good;
  const auto at = shape_bad.find("\"name\":\"E.conv1.w\"");
  ASSERT_NE(at, std::string::npos);
  const auto shape_at = shape_bad.find("\"shape\":[16,", at);
  ASSERT_NE(shape_at, std::string::npos);
  shape_bad[shape_at + 10] = '7';
  try {
    load_checkpoint(write("shape.ufdn", shape_bad));
    FAIL() << "expected integrity error";
  } catch (const IntegrityError& e) {
    EXPECT_NE(std::string(e.what()).find("E.conv1.w"), std::string::npos) << e.what();
  }

  EXPECT_THROW(load_checkpoint(write("trunc.ufdn", good.substr(0, good.size() - 10))), IntegrityError);
  std::string magic = good;
  magic[0] = 'X';
  EXPECT_THROW(load_checkpoint(write("magic.ufdn", magic)), FormatError);
  std::string version = good;
  version[4] = 2;
  EXPECT_THROW(load_checkpoint(write("version.ufdn", version)), FormatError);
  EXPECT_THROW(load_checkpoint(dir / "missing.ufdn"), IoError);
}

TEST(Config, UnknownKeysAreNamed) {
  try {
    run_config_from_json(json::parse(R"({"train": {"leraning_rate": 0.1}})"));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("leraning_rate"), std::string::npos);
  }
  EXPECT_THROW(run_config_from_json(json::parse(R"({"arch": {"latent_dim": "big"}})")), ConfigError);
}

TEST(Config, RoundTrip) {
  TrainConfig c = tiny_config(77);
  c.weights.e_adv = 3.5;
  c.label_domains = {0};
  c.disable_dx = true;
  EXPECT_EQ(train_config_from_json(to_json(c)), c);
  const Architecture a = tiny_arch();
  EXPECT_EQ(architecture_from_json(to_json(a)), a);
}

TEST(Config, RunConfigValidation) {
  RunConfig rc = run_config_from_json(json::parse(R"({"data": {"corpus": "x", "domains": 3}})"));
  EXPECT_NO_THROW(rc.validate());
  rc.data.domains = 2;
  EXPECT_THROW(rc.validate(), ConfigError);
  rc = run_config_from_json(json::parse(R"({"data": {"domains": 3}})"));
  EXPECT_THROW(rc.validate(), ConfigError);
}
