#include <gtest/gtest.h>

#include <cmath>

#include "dmm/trainer.hpp"
#include "testing.hpp"

using namespace dmm;

namespace {

DatasetSplit small_data(std::size_t train = 40, std::size_t val = 20, std::uint64_t seed = 1) {
  SynthConfig c;
  c.train_size = train;
  c.val_size = val;
  c.test_size = 0;
  c.seed = seed;
  return generate_synthetic(c);
}

TrainConfig small_config(std::size_t m = 10, std::size_t p = 5) {
  TrainConfig c;
  c.max_iterations = m;
  c.update_interval = p;
  c.batch_size = 4;
  c.base_lr = 0.01;
  c.backbone.channels = {4, 8};
  c.heads = {8, 16, 8, 8};
  return c;
}

// Direct transcription of the training listing.
std::vector<TrainEventKind> listing_events(std::size_t m, std::size_t p) {
  std::vector<TrainEventKind> out;
  std::size_t loop = 0;
  while (loop <= m) {
    if (loop % p == 0) {
      out.push_back(TrainEventKind::validation_loss);
      out.push_back(TrainEventKind::update_thresholds);
      out.push_back(TrainEventKind::update_weights);
      out.push_back(TrainEventKind::advance);
    }
    out.push_back(TrainEventKind::joint_loss);
    out.push_back(TrainEventKind::sgd_step);
    loop = loop + 1;
  }
  return out;
}

}  // namespace

TEST(TrainLoop, EventOrderMatchesListing) {
  const DatasetSplit data = small_data(8, 4);
  for (std::size_t m : {1u, 10u, 100u}) {
    for (std::size_t p : {1u, 5u}) {
      TrainConfig cfg = small_config(m, p);
      DmmNetwork net = make_network(data, cfg);
      std::vector<TrainEventKind> kinds;
      std::vector<std::size_t> loops;
      const TrainLog log = train(net, data, cfg, [&](const TrainEvent& e) {
        kinds.push_back(e.kind);
        loops.push_back(e.loop);
      });
      EXPECT_EQ(kinds, listing_events(m, p)) << "M=" << m << " P=" << p;
      EXPECT_EQ(log.updates, m / p + 1);
      EXPECT_EQ(log.scheduler.t, m / p + 1);
      EXPECT_EQ(log.losses.size(), m + 1);
      EXPECT_TRUE(std::is_sorted(loops.begin(), loops.end()));
    }
  }
}

TEST(TrainLoop, TenIterationsEveryFiveAdvancesThreeTimes) {
  const DatasetSplit data = small_data(8, 4);
  TrainConfig cfg = small_config(10, 5);
  DmmNetwork net = make_network(data, cfg);
  std::vector<std::size_t> at;
  train(net, data, cfg, [&](const TrainEvent& e) {
    if (e.kind == TrainEventKind::advance) at.push_back(e.loop);
  });
  EXPECT_EQ(at, (std::vector<std::size_t>{0, 5, 10}));
}

TEST(TrainLoop, EpochCounterAndTrace) {
  const DatasetSplit data = small_data(40, 20);
  TrainConfig cfg = small_config(12, 5);
  cfg.batch_size = 8;
  DmmNetwork net = make_network(data, cfg);
  const TrainLog log = train(net, data, cfg);
  ASSERT_EQ(log.trace.size(), 3u * 6u);
  const std::size_t loops[] = {0, 5, 10}, epochs[] = {1, 2, 3};
  for (std::size_t u = 0; u < 3; ++u) {
    for (std::size_t a = 0; a < 6; ++a) {
      const TraceRow& r = log.trace[u * 6 + a];
      EXPECT_EQ(r.iteration, loops[u]);
      EXPECT_EQ(r.epoch, epochs[u]);
      EXPECT_EQ(r.attribute, a);
      EXPECT_LE(r.fp + r.fn, 20u);
    }
  }
  // The first update only records losses.
  for (std::size_t a = 0; a < 6; ++a) EXPECT_EQ(log.trace[a].lambda, 1.0);
}

TEST(TrainLoop, FirstJointLossMatchesPerSampleOracle) {
  // With the batch equal to the training set every batch is a permutation of
  // all samples, so the first joint loss is the mean over samples.
  const DatasetSplit data = small_data(12, 4);
  TrainConfig cfg = small_config(1, 1);
  cfg.batch_size = 12;
  DmmNetwork fresh = make_network(data, cfg);
  double oracle = 0.0;
  for (const Sample& s : data.train) {
    const Shape& sh = s.image.shape();
    const NetworkOutput out = fresh.forward(s.image.reshaped({1, sh[0], sh[1], sh[2]}));
    for (std::size_t a = 0; a < 6; ++a) oracle += std::pow(out.attributes[a] - s.labels[a], 2);
    for (std::size_t k = 0; k < s.landmarks.size(); ++k) oracle += cfg.beta * std::pow(out.landmarks[k] - s.landmarks[k], 2);
  }
  oracle /= 12.0;
  DmmNetwork net = make_network(data, cfg);
  const TrainLog log = train(net, data, cfg);
  EXPECT_NEAR(log.losses[0].joint, oracle, 1e-12 * oracle);
}

TEST(TrainLoop, SameSeedGivesIdenticalLog) {
  const DatasetSplit data = small_data();
  TrainConfig cfg = small_config(30, 5);
  DmmNetwork a = make_network(data, cfg), b = make_network(data, cfg);
  const TrainLog la = train(a, data, cfg), lb = train(b, data, cfg);
  EXPECT_EQ(la, lb);
  EXPECT_EQ(serialize_checkpoint(a), serialize_checkpoint(b));
  cfg.seed = 2;
  DmmNetwork c = make_network(data, cfg);
  EXPECT_NE(train(c, data, cfg).losses, la.losses);
}

TEST(TrainLoop, BaselineKeepsUnitWeightsAndZeroThresholds) {
  const DatasetSplit data = small_data();
  TrainConfig cfg = with_flags(small_config(30, 5), ablation_variants().front().flags);
  DmmNetwork net = make_network(data, cfg);
  EXPECT_FALSE(net.config().grouping);
  const TrainLog log = train(net, data, cfg);
  for (const TraceRow& r : log.trace) {
    EXPECT_EQ(r.lambda, 1.0);
    EXPECT_EQ(r.tau, 0.0);
  }
}

TEST(TrainLoop, TraceFollowsSchedulerFormulas) {
  const DatasetSplit data = small_data();
  TrainConfig cfg = small_config(20, 5);
  DmmNetwork net = make_network(data, cfg);
  const TrainLog log = train(net, data, cfg);
  const std::size_t j = 6, v = data.val.size();
  for (std::size_t u = 1; u < log.updates; ++u) {
    for (std::size_t a = 0; a < j; ++a) {
      const TraceRow& prev = log.trace[(u - 1) * j + a];
      const TraceRow& r = log.trace[u * j + a];
      const double lambda = prev.val_loss == 0.0 ? 0.0 : std::abs(r.val_loss - prev.val_loss) / prev.val_loss;
      EXPECT_DOUBLE_EQ(r.lambda, lambda);
      const double tau = prev.tau + cfg.gamma * static_cast<double>(r.epoch) *
                                        (static_cast<double>(r.fp) - static_cast<double>(r.fn)) / static_cast<double>(v);
      EXPECT_DOUBLE_EQ(r.tau, tau);
    }
  }
}

TEST(LrPolicy, Examples) {
  TrainConfig cfg;
  cfg.plateau_patience = 3;
  cfg.lr_decay_factor = 0.1;
  EXPECT_EQ(lr_policy({5.0, 4.0, 3.0, 2.0}, 1.0, cfg), 1.0);
  EXPECT_EQ(lr_policy({1.0, 1.0, 1.0}, 1.0, cfg), 1.0);
  EXPECT_DOUBLE_EQ(lr_policy({1.0, 1.0, 1.0, 1.0}, 1.0, cfg), 0.1);
  EXPECT_EQ(lr_policy({1.0, 2.0, 0.5, 0.7}, 1.0, cfg), 1.0);
  EXPECT_THROW(lr_policy({}, 1.0, cfg), std::invalid_argument);

  // Replayed update by update, two plateaus give two decays.
  std::vector<double> history;
  double lr = 1.0;
  for (int i = 0; i < 7; ++i) {
    history.push_back(1.0);
    lr = lr_policy(history, lr, cfg);
  }
  EXPECT_DOUBLE_EQ(lr, 0.01);
}

TEST(LrPolicy, TrainLoopFollowsReplay) {
  const DatasetSplit data = small_data();
  TrainConfig cfg = small_config(60, 2);
  cfg.plateau_patience = 1;
  cfg.base_lr = 0.05;
  DmmNetwork net = make_network(data, cfg);
  const TrainLog log = train(net, data, cfg);
  double lr = cfg.base_lr;
  std::vector<LrEvent> expect;
  for (std::size_t u = 0; u < log.monitor_history.size(); ++u) {
    const std::vector<double> prefix(log.monitor_history.begin(), log.monitor_history.begin() + static_cast<long>(u) + 1);
    const double next = lr_policy(prefix, lr, cfg);
    if (next != lr) expect.push_back({u * cfg.update_interval, lr, next});
    lr = next;
  }
  EXPECT_EQ(log.lr_events, expect);
  for (const LossPoint& p : log.losses) {
    double want = cfg.base_lr;
    for (const LrEvent& e : expect) {
      if (e.iteration <= p.iteration) want = e.new_lr;
    }
    EXPECT_EQ(p.learning_rate, want);
  }
}

TEST(Ablation, VariantsMatchTable) {
  struct Row {
    const char* name;
    bool fld, dw, at, ag;
  };
  const Row table[] = {
      {"Baseline", false, false, false, false}, {"DMM-FAC", false, true, true, true},
      {"DMM-EQ-FIX", true, false, false, true}, {"DMM-EQ-AT", true, false, true, true},
      {"DMM-DW-FIX", true, true, false, true},  {"DMM-SPP", true, true, true, false},
      {"DMM-CNN", true, true, true, true},
  };
  const auto& v = ablation_variants();
  ASSERT_EQ(v.size(), 7u);
  for (std::size_t i = 0; i < 7; ++i) {
    EXPECT_EQ(v[i].name, table[i].name);
    EXPECT_EQ(v[i].flags, (AblationFlags{table[i].fld, table[i].dw, table[i].at, table[i].ag}));
  }
}

TEST(Ablation, FldOffIgnoresLandmarks) {
  const DatasetSplit data = small_data();
  TrainConfig cfg = with_flags(small_config(10, 5), {false, true, true, true});
  DatasetSplit moved = data;
  for (Sample& s : moved.train) std::reverse(s.landmarks.begin(), s.landmarks.end());
  DmmNetwork a = make_network(data, cfg), b = make_network(moved, cfg);
  EXPECT_EQ(train(a, data, cfg), train(b, moved, cfg));
}

TEST(TrainLoop, DivergenceRaisesTrainError) {
  const DatasetSplit data = small_data();
  TrainConfig cfg = small_config(200, 50);
  cfg.base_lr = 1e6;
  DmmNetwork net = make_network(data, cfg);
  try {
    train(net, data, cfg);
    FAIL() << "expected TrainError";
  } catch (const TrainError& e) {
    EXPECT_NE(std::string(e.what()).find("non-finite"), std::string::npos);
  }
}

TEST(TrainLoop, MixedImageSizes) {
  DatasetSplit data = small_data(20, 8);
  SynthConfig big;
  big.train_size = 20;
  big.val_size = 8;
  big.test_size = 0;
  big.image_size = 24;
  big.seed = 7;
  const DatasetSplit other = generate_synthetic(big);
  for (std::size_t i = 0; i < 20; i += 2) data.train[i] = other.train[i];
  for (std::size_t i = 0; i < 8; i += 2) data.val[i] = other.val[i];
  TrainConfig cfg = small_config(20, 5);
  DmmNetwork net = make_network(data, cfg);
  const TrainLog log = train(net, data, cfg);
  for (const LossPoint& p : log.losses) EXPECT_TRUE(std::isfinite(p.joint));
  EXPECT_EQ(log.updates, 5u);
}

TEST(TrainLoop, ValidationSource) {
  DatasetSplit data = small_data(20, 0);
  TrainConfig cfg = small_config(5, 5);
  DmmNetwork net = make_network(data, cfg);
  EXPECT_THROW(train(net, data, cfg), std::invalid_argument);
  cfg.validation_source = ValidationSource::train_split;
  const TrainLog log = train(net, data, cfg);
  EXPECT_LE(log.trace[0].fp + log.trace[0].fn, 20u);
}

TEST(TrainLoop, RejectsMismatchedNetwork) {
  const DatasetSplit data = small_data();
  TrainConfig cfg = small_config();
  DmmNetwork net = make_network(data, cfg);
  TrainConfig ungrouped = cfg;
  ungrouped.flags.use_grouping = false;
  EXPECT_THROW(train(net, data, ungrouped), std::invalid_argument);
}

TEST(TrainConfigTest, Validation) {
  auto bad = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    EXPECT_THROW(c.validate(), std::invalid_argument);
  };
  EXPECT_NO_THROW(TrainConfig{}.validate());
  bad([](TrainConfig& c) { c.max_iterations = 0; });
  bad([](TrainConfig& c) { c.update_interval = 0; });
  bad([](TrainConfig& c) { c.batch_size = 0; });
  bad([](TrainConfig& c) { c.base_lr = 0.0; });
  bad([](TrainConfig& c) { c.momentum = 1.0; });
  bad([](TrainConfig& c) { c.lr_decay_factor = 0.0; });
  bad([](TrainConfig& c) { c.plateau_patience = 0; });
  bad([](TrainConfig& c) { c.beta = -1.0; });
  bad([](TrainConfig& c) { c.gamma = NAN; });
  bad([](TrainConfig& c) { c.lambda_cap = -1.0; });
  EXPECT_EQ(iterations_for_epochs(1.0, 100, 16), 7u);
  EXPECT_EQ(iterations_for_epochs(2.0, 64, 16), 8u);
}

TEST(TrainCsv, HeadersAndRowCounts) {
  const DatasetSplit data = small_data();
  TrainConfig cfg = small_config(10, 5);
  DmmNetwork net = make_network(data, cfg);
  const TrainLog log = train(net, data, cfg);
  dmm::testing::TempDir dir("csv");
  write_trace_csv(dir / "trace.csv", log, data.spec);
  write_loss_csv(dir / "loss.csv", log);
  write_lr_csv(dir / "lr.csv", log);
  auto lines = [](const std::string& s) { return std::count(s.begin(), s.end(), '\n'); };
  const std::string trace = dmm::testing::slurp(dir / "trace.csv");
  EXPECT_EQ(trace.rfind("iteration,epoch,attribute,val_loss,lambda,tau,fp,fn\n", 0), 0u);
  EXPECT_EQ(lines(trace), 1 + 18);
  EXPECT_EQ(lines(dmm::testing::slurp(dir / "loss.csv")), 1 + 11);
  EXPECT_EQ(dmm::testing::slurp(dir / "lr.csv"), "iteration,old_lr,new_lr\n");
}

TEST(TrainLoop, ConvergedAttributeWeightTendsToZero) {
  SynthConfig sc;
  sc.train_size = 1000;
  sc.val_size = 200;
  sc.test_size = 0;
  const DatasetSplit data = generate_synthetic(sc);
  TrainConfig cfg;
  cfg.max_iterations = 1500;
  cfg.update_interval = 100;
  cfg.batch_size = 16;
  cfg.base_lr = 0.01;
  DmmNetwork net = make_network(data, cfg);
  const TrainLog log = train(net, data, cfg);
  const std::size_t eyeglasses = data.spec.index_of("Eyeglasses");
  std::vector<double> lambda;
  for (const TraceRow& r : log.trace) {
    if (r.attribute == eyeglasses) lambda.push_back(r.lambda);
  }
  ASSERT_EQ(lambda.size(), 16u);
  const double tail = (lambda[13] + lambda[14] + lambda[15]) / 3.0;
  EXPECT_LT(tail, 0.1);
  EXPECT_LT(tail, *std::max_element(lambda.begin() + 1, lambda.end()) / 5.0);
}
