#include "dmm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "dmm/format.hpp"
#include "dmm/inference.hpp"
#include "dmm/losses.hpp"

namespace dmm {

std::string to_string(ValidationSource source) {
  return source == ValidationSource::val_split ? "val_split" : "train_split";
}

std::string to_string(LrMonitor monitor) { return monitor == LrMonitor::joint ? "joint" : "mean_fac"; }

std::string to_string(TrainEventKind kind) {
  switch (kind) {
    case TrainEventKind::validation_loss: return "validation_loss";
    case TrainEventKind::update_thresholds: return "update_thresholds";
    case TrainEventKind::update_weights: return "update_weights";
    case TrainEventKind::advance: return "advance";
    case TrainEventKind::joint_loss: return "joint_loss";
    case TrainEventKind::sgd_step: return "sgd_step";
  }
  return "?";
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("train config: ") + what);
  };
  require(max_iterations > 0, "max_iterations must be > 0");
  require(update_interval > 0, "update_interval must be > 0");
  require(batch_size > 0, "batch_size must be > 0");
  require(base_lr > 0.0 && std::isfinite(base_lr), "base_lr must be > 0");
  require(momentum >= 0.0 && momentum < 1.0, "momentum must lie in [0,1)");
  require(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0, "lr_decay_factor must lie in (0,1]");
  require(plateau_patience > 0, "plateau_patience must be > 0");
  require(beta >= 0.0 && std::isfinite(beta), "beta must be >= 0");
  require(gamma >= 0.0 && std::isfinite(gamma), "gamma must be >= 0");
  require(!lambda_cap || *lambda_cap >= 0.0, "lambda_cap must be >= 0");
}

std::size_t iterations_for_epochs(double epochs, std::size_t train_size, std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("iterations_for_epochs: batch_size must be > 0");
  return static_cast<std::size_t>(std::ceil(epochs * static_cast<double>(train_size) / static_cast<double>(batch_size)));
}

DmmNetwork make_network(const DatasetSplit& data, const TrainConfig& config) {
  NetworkConfig nc;
  nc.attributes = data.spec;
  nc.backbone = config.backbone;
  nc.heads = config.heads;
  nc.landmarks = data.landmarks;
  nc.grouping = config.flags.use_grouping;
  nc.seed = config.seed;
  return DmmNetwork(nc);
}

double lr_policy(const std::vector<double>& history, double current_lr, const TrainConfig& config) {
  if (history.empty()) throw std::invalid_argument("lr_policy: empty history");
  double best = history[0];
  std::size_t waited = 0;
  bool decay_now = false;
  for (std::size_t i = 1; i < history.size(); ++i) {
    decay_now = false;
    if (history[i] < best) {
      best = history[i];
      waited = 0;
    } else if (++waited == config.plateau_patience) {
      decay_now = true;
      waited = 0;
    }
  }
  return decay_now ? current_lr * config.lr_decay_factor : current_lr;
}

const std::vector<Variant>& ablation_variants() {
  //                                       FLD    DW     AT     AG
  static const std::vector<Variant> v{
      {"Baseline", {false, false, false, false}},
      {"DMM-FAC", {false, true, true, true}},
      {"DMM-EQ-FIX", {true, false, false, true}},
      {"DMM-EQ-AT", {true, false, true, true}},
      {"DMM-DW-FIX", {true, true, false, true}},
      {"DMM-SPP", {true, true, true, false}},
      {"DMM-CNN", {true, true, true, true}},
  };
  return v;
}

TrainConfig with_flags(TrainConfig config, const AblationFlags& flags) {
  config.flags = flags;
  return config;
}

namespace {

struct ValidationResult {
  ValidationStats stats;
  double fld = 0.0;
};

ValidationResult validate_on(const DmmNetwork& net, std::span<const Sample> samples, std::span<const double> tau) {
  const Predictions p = predict(net, samples);
  ValidationResult r;
  r.stats.fac_losses = fac_loss_per_attribute(p.attributes, p.labels);
  r.stats.errors = count_fp_fn(predict_labels(p.attributes, tau), p.labels);
  r.stats.samples = samples.size();
  r.fld = fld_loss(p.landmarks, p.landmark_truth);
  return r;
}

// Epoch-wise shuffled sample stream; the order of epoch e depends only on
// (seed, e).
class SampleStream {
 public:
  SampleStream(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) {}

  std::size_t at(std::size_t k) {
    const std::size_t epoch = k / n_;
    auto it = orders_.find(epoch);
    if (it == orders_.end()) {
      if (orders_.size() > 2) orders_.erase(orders_.begin());
      std::vector<std::size_t> order(n_);
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::seed_seq sseq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                         static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
      std::mt19937_64 rng(sseq);
      std::shuffle(order.begin(), order.end(), rng);
      it = orders_.emplace(epoch, std::move(order)).first;
    }
    return it->second[k % n_];
  }

 private:
  std::size_t n_;
  std::uint64_t seed_;
  std::map<std::size_t, std::vector<std::size_t>> orders_;
};

void scale(Tensor& t, double s) {
  if (s == 1.0) return;
  for (double& v : t.data()) v *= s;
}

std::string format_losses(const std::vector<double>& v) {
  std::ostringstream out;
  out.precision(6);
  for (std::size_t i = 0; i < v.size(); ++i) out << (i ? "," : "") << v[i];
  return out.str();
}

}  // namespace

TrainLog train(DmmNetwork& net, const DatasetSplit& data, const TrainConfig& cfg, const TrainObserver& observer) {
  cfg.validate();
  const NetworkConfig& nc = net.config();
  if (nc.attributes != data.spec) throw std::invalid_argument("train: network attributes differ from the dataset's");
  if (nc.landmarks != data.landmarks) throw std::invalid_argument("train: network landmark count differs from the dataset's");
  if (nc.grouping != cfg.flags.use_grouping) throw std::invalid_argument("train: network grouping differs from use_grouping");
  if (data.train.empty()) throw std::invalid_argument("train: empty training split");
  const std::vector<Sample>& val = cfg.validation_source == ValidationSource::val_split ? data.val : data.train;
  if (val.empty()) throw std::invalid_argument("train: validation split is empty (use validation_source=train_split)");

  const std::size_t j = data.spec.size();
  const std::size_t n = data.train.size();
  const double beta = cfg.flags.use_fld ? cfg.beta : 0.0;
  auto emit = [&](TrainEventKind k, std::size_t loop) {
    if (observer) observer({k, loop});
  };

  Scheduler scheduler(j, SchedulerConfig{cfg.gamma, cfg.flags.use_dynamic_weights, cfg.flags.use_adaptive_threshold,
                                         cfg.lambda_cap});
  SampleStream stream(n, cfg.seed);
  TrainLog log;
  double lr = cfg.base_lr;
  std::vector<std::size_t> batch_idx(cfg.batch_size);

  for (std::size_t loop = 0; loop <= cfg.max_iterations; ++loop) {
    const std::size_t seen = loop * cfg.batch_size;
    const std::size_t epoch = seen / n + 1;

    if (loop % cfg.update_interval == 0) {
      const ValidationResult v = validate_on(net, val, scheduler.state().tau);
      emit(TrainEventKind::validation_loss, loop);
      scheduler.update(v.stats, epoch, [&](SchedulerEvent e) {
        switch (e) {
          case SchedulerEvent::update_thresholds: emit(TrainEventKind::update_thresholds, loop); break;
          case SchedulerEvent::update_weights: emit(TrainEventKind::update_weights, loop); break;
          case SchedulerEvent::advance: emit(TrainEventKind::advance, loop); break;
        }
      });
      const SchedulerState& s = scheduler.state();
      for (std::size_t a = 0; a < j; ++a) {
        log.trace.push_back({loop, epoch, a, v.stats.fac_losses[a], s.lambda[a], s.tau[a], v.stats.errors.fp[a],
                             v.stats.errors.fn[a]});
      }
      const double fac_sum = std::accumulate(v.stats.fac_losses.begin(), v.stats.fac_losses.end(), 0.0);
      log.monitor_history.push_back(cfg.lr_monitor == LrMonitor::joint ? fac_sum + beta * v.fld
                                                                        : fac_sum / static_cast<double>(j));
      const double next = lr_policy(log.monitor_history, lr, cfg);
      if (next != lr) {
        log.lr_events.push_back({loop, lr, next});
        lr = next;
      }
      ++log.updates;
    }

    for (std::size_t b = 0; b < cfg.batch_size; ++b) batch_idx[b] = stream.at(seen + b);
    // Mixed image sizes train as same-shape sub-batches, each weighted by its share.
    std::map<Shape, std::vector<std::size_t>> groups;
    for (std::size_t i : batch_idx) groups[data.train[i].image.shape()].push_back(i);

    const std::vector<double>& lambda = scheduler.state().lambda;
    double joint = 0.0;
    std::vector<double> fac_total(j, 0.0);
    for (const auto& [shape, members] : groups) {
      const Batch batch = make_batch(data.train, members);
      const double share = static_cast<double>(members.size()) / static_cast<double>(cfg.batch_size);
      ForwardCache cache;
      const NetworkOutput out = net.forward(batch.images, &cache);
      const std::vector<double> fac = fac_loss_per_attribute(out.attributes, batch.labels);
      const double fld = cfg.flags.use_fld ? fld_loss(out.landmarks, batch.landmarks) : 0.0;
      joint += share * joint_loss(fac, lambda, fld, beta);
      for (std::size_t a = 0; a < j; ++a) fac_total[a] += share * fac[a];

      Tensor attr_grad = fac_loss_grad(out.attributes, batch.labels, lambda);
      scale(attr_grad, share);
      Tensor lm_grad = cfg.flags.use_fld ? fld_loss_grad(out.landmarks, batch.landmarks, beta * share) : Tensor();
      net.backward_attributes(cache, attr_grad, lm_grad);
    }
    emit(TrainEventKind::joint_loss, loop);
    if (!std::isfinite(joint)) {
      throw TrainError("iteration " + std::to_string(loop) + ": non-finite joint loss (attribute losses " +
                       format_losses(fac_total) + ")");
    }
    log.losses.push_back({loop, epoch, joint, lr});
    net.sgd_step(SgdOptions{lr, cfg.momentum}, cfg.freeze_backbone);
    emit(TrainEventKind::sgd_step, loop);
  }
  log.scheduler = scheduler.state();
  return log;
}

// ---- CSV ----

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  return out;
}

}  // namespace

void write_trace_csv(const std::filesystem::path& path, const TrainLog& log, const AttributeSpec& spec) {
  auto out = open_csv(path);
  out << "iteration,epoch,attribute,val_loss,lambda,tau,fp,fn\n";
  for (const auto& r : log.trace) {
    out << r.iteration << ',' << r.epoch << ',' << spec.names.at(r.attribute) << ',' << format_real(r.val_loss) << ','
        << format_real(r.lambda) << ',' << format_real(r.tau) << ',' << r.fp << ',' << r.fn << '\n';
  }
}

void write_loss_csv(const std::filesystem::path& path, const TrainLog& log) {
  auto out = open_csv(path);
  out << "iteration,epoch,joint_loss,learning_rate\n";
  for (const auto& p : log.losses) out << p.iteration << ',' << p.epoch << ',' << format_real(p.joint) << ',' << format_real(p.learning_rate) << '\n';
}

void write_lr_csv(const std::filesystem::path& path, const TrainLog& log) {
  auto out = open_csv(path);
  out << "iteration,old_lr,new_lr\n";
  for (const auto& e : log.lr_events) out << e.iteration << ',' << format_real(e.old_lr) << ',' << format_real(e.new_lr) << '\n';
}

}  // namespace dmm
