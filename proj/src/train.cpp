#include "ecgcrnn/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <thread>

#include "ecgcrnn/checkpoint.hpp"
#include "ecgcrnn/error.hpp"
#include "ecgcrnn/log.hpp"

namespace ecgcrnn::train {

namespace {

std::string shortest(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <typename Fn>
void run_lanes(std::size_t count, std::size_t threads, Fn&& fn) {
  if (threads <= 1 || count <= 1) {
    for (std::size_t j = 0; j < count; ++j) fn(j);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(count);
  pool.reserve(count);
  for (std::size_t j = 0; j < count; ++j)
    pool.emplace_back([&, j] {
      try {
        fn(j);
      } catch (...) {
        errors[j] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
  out << text;
}

}  // namespace

double cross_entropy(std::span<const double> probs, std::size_t label) {
  if (label >= probs.size()) throw Error(Errc::BadDistribution, "label outside the distribution");
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw Error(Errc::BadDistribution, "negative or non-finite probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw Error(Errc::BadDistribution, "probabilities sum to " + shortest(sum));
  return -std::log(std::max(probs[label], 1e-12));
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state) {
  if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size())
    throw Error(Errc::ShapeMismatch, "Adam state, parameters and gradients differ in size");
  if (!(state.config.learning_rate > 0.0)) throw Error(Errc::BadConfig, "learning rate must be positive");
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (!std::isfinite(grads[i])) throw Error(Errc::NonFiniteGradient, "gradient component " + std::to_string(i));

  const auto& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double lr_t = c.learning_rate * std::sqrt(1.0 - std::pow(c.beta2, t)) / (1.0 - std::pow(c.beta1, t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g;
    state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * g * g;
    params[i] -= lr_t * state.m[i] / (std::sqrt(state.v[i]) + c.epsilon);
  }
}

void adam_step(nn::ModelParams& params, const nn::Gradients& grads, AdamState& state) {
  if (!(params.arch() == grads.arch())) throw Error(Errc::ShapeMismatch, "gradient architecture differs");
  adam_step(params.values(), grads.values(), state);
  params.bump_generation();
}

double schedule_update(LrSchedule& sched, double loss) {
  if (loss < sched.best) {
    sched.best = loss;
    sched.since_improvement = 0;
    return sched.lr;
  }
  if (++sched.since_improvement >= sched.patience) {
    sched.lr = std::max(sched.lr * sched.factor, sched.floor);
    sched.since_improvement = 0;
  }
  return sched.lr;
}

void validate(const TrainConfig& cfg) {
  if (cfg.batch_size == 0 || cfg.eval_batch_size == 0) throw Error(Errc::BadConfig, "batch sizes must be positive");
  if (!(cfg.learning_rate > 0.0)) throw Error(Errc::BadConfig, "learning rate must be positive");
  if (!(cfg.dropout >= 0.0 && cfg.dropout < 1.0)) throw Error(Errc::BadConfig, "dropout must be in [0, 1)");
  cfg.arch.validate();
  pipeline::validate(cfg.augmentation);
  pipeline::validate(cfg.window);
  if (cfg.window.window_len != cfg.arch.window_len)
    throw Error(Errc::BadConfig, "window length differs from the architecture input length");
}

EvalResult evaluate(const nn::ModelParams& params, std::span<const pipeline::LabeledSignal> records,
                    std::size_t batch_size, const pipeline::WindowConfig& wcfg) {
  std::vector<std::size_t> lengths;
  lengths.reserve(records.size());
  for (const auto& r : records) lengths.push_back(r.samples.size());
  pipeline::AugmentationConfig off;
  off.enabled = false;
  const auto plan = pipeline::plan_batches(lengths, batch_size, off, wcfg, 0, 0);

  EvalResult res;
  res.skipped = plan.skipped;
  res.predictions.assign(records.size(), 0);
  res.probs.assign(records.size(), {});
  double loss = 0.0;
  std::size_t correct = 0, seen = 0;
  for (const auto& items : plan.batches) {
    const auto batch = pipeline::build_batch(records, items, wcfg);
    for (std::size_t j = 0; j < batch.size(); ++j) {
      const auto fwd = nn::model_forward(batch.tensors[j], params, nn::Mode::Eval);
      const std::size_t idx = batch.record_indices[j];
      const std::size_t label = index_of(batch.labels[j]);
      res.predictions[idx] = nn::argmax(fwd.probs);
      loss += cross_entropy(fwd.probs, label);
      correct += res.predictions[idx] == label ? 1 : 0;
      res.probs[idx] = fwd.probs;
      ++seen;
    }
  }
  if (seen > 0) {
    res.loss = loss / static_cast<double>(seen);
    res.accuracy = static_cast<double>(correct) / static_cast<double>(seen);
  }
  return res;
}

BatchStep batch_gradient(const nn::ModelParams& params, const pipeline::Batch& batch, double dropout,
                         std::uint64_t seed, std::uint64_t epoch, std::size_t threads, nn::Gradients& out) {
  out.set_zero();
  BatchStep step;
  const std::size_t n = batch.size();
  if (n == 0) return step;
  const std::size_t lanes = std::max<std::size_t>(1, threads);
  const double scale = 1.0 / static_cast<double>(n);
  std::vector<nn::Gradients> slots(std::min(lanes, n), nn::Gradients(params.arch()));
  std::vector<double> losses(n, 0.0);
  std::vector<std::size_t> hits(n, 0);

  for (std::size_t wave = 0; wave < n; wave += lanes) {
    const std::size_t count = std::min(lanes, n - wave);
    run_lanes(count, lanes, [&](std::size_t j) {
      const std::size_t i = wave + j;
      Rng rng = Rng::derive(seed, {epoch, batch.record_indices[i], 0xD50Du});
      const auto fwd = nn::model_forward(batch.tensors[i], params, nn::Mode::Train, &rng, dropout);
      const std::size_t label = index_of(batch.labels[i]);
      slots[j].set_zero();
      if (!std::all_of(fwd.probs.begin(), fwd.probs.end(), [](double v) { return std::isfinite(v); })) {
        losses[i] = std::numeric_limits<double>::quiet_NaN();
        return;
      }
      losses[i] = cross_entropy(fwd.probs, label);
      hits[i] = nn::argmax(fwd.probs) == label ? 1 : 0;
      nn::model_backward_accumulate(fwd.trace, label, params, slots[j], scale);
    });
    for (std::size_t j = 0; j < count; ++j) {
      auto dst = out.values();
      const auto src = slots[j].values();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    step.loss += losses[i];
    step.correct += hits[i];
  }
  step.loss /= static_cast<double>(n);
  return step;
}

TrainResult train(std::span<const pipeline::LabeledSignal> train_set,
                  std::span<const pipeline::LabeledSignal> monitor_set, const TrainConfig& cfg) {
  validate(cfg);
  TrainResult result;
  nn::ModelParams params = nn::init_params(cfg.arch, cfg.seed);
  result.best = params;
  if (cfg.epochs == 0) return result;
  if (train_set.empty()) throw Error(Errc::EmptyInput, "empty training set");
  if (cfg.out_dir) std::filesystem::create_directories(*cfg.out_dir);

  AdamState adam(params.size(), AdamConfig{cfg.learning_rate});
  LrSchedule sched;
  sched.lr = cfg.learning_rate;
  nn::Gradients grads(cfg.arch);

  std::vector<std::size_t> lengths;
  lengths.reserve(train_set.size());
  for (const auto& r : train_set) lengths.push_back(r.samples.size());

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    adam.config.learning_rate = sched.lr;
    const auto plan = pipeline::plan_batches(lengths, cfg.batch_size, cfg.augmentation, cfg.window, cfg.seed, epoch);
    double loss_sum = 0.0;
    std::size_t correct = 0, seen = 0;
    for (std::size_t b = 0; b < plan.batches.size(); ++b) {
      const auto batch = pipeline::build_batch(train_set, plan.batches[b], cfg.window);
      const BatchStep step = batch_gradient(params, batch, cfg.dropout, cfg.seed, epoch, cfg.threads, grads);
      if (!std::isfinite(step.loss)) {
        log::error("non-finite loss in epoch " + std::to_string(epoch) + " batch " + std::to_string(b));
        throw Error(Errc::NonFiniteLoss, "epoch " + std::to_string(epoch) + " batch " + std::to_string(b));
      }
      adam_step(params, grads, adam);
      loss_sum += step.loss * static_cast<double>(batch.size());
      correct += step.correct;
      seen += batch.size();
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = sched.lr;
    rec.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
    rec.train_acc = seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0;
    if (!monitor_set.empty()) {
      const auto ev = evaluate(params, monitor_set, cfg.eval_batch_size, cfg.window);
      rec.test_loss = ev.loss;
      rec.test_acc = ev.accuracy;
    }
    if (!std::isfinite(rec.test_loss)) throw Error(Errc::NonFiniteLoss, "monitored loss in epoch " + std::to_string(epoch));
    result.history.push_back(rec);
    schedule_update(sched, monitor_set.empty() ? rec.train_loss : rec.test_loss);

    const double monitored = monitor_set.empty() ? rec.train_acc : rec.test_acc;
    const bool best = monitored > result.best_accuracy;
    if (best) {
      result.best = params;
      result.best_epoch = epoch;
      result.best_accuracy = monitored;
    }
    log::info("epoch " + std::to_string(epoch) + " train_loss=" + shortest(rec.train_loss) +
              " train_acc=" + shortest(rec.train_acc) + " test_loss=" + shortest(rec.test_loss) +
              " test_acc=" + shortest(rec.test_acc) + " lr=" + shortest(rec.lr) + (best ? " *" : ""));

    if (cfg.out_dir) {
      write_text(*cfg.out_dir / "history.csv", format_history_csv(result.history));
      if (best) {
        nlohmann::json meta = cfg.extra_metadata;
        meta["seed"] = cfg.seed;
        meta["epoch"] = epoch;
        meta["metrics"] = {{"train_loss", rec.train_loss}, {"train_acc", rec.train_acc},
                           {"test_loss", rec.test_loss},   {"test_acc", rec.test_acc},
                           {"lr", rec.lr},                 {"eval_batch_size", cfg.eval_batch_size}};
        const std::string name = "ckpt_epoch" + std::to_string(epoch) + ".bin";
        nn::save_checkpoint(*cfg.out_dir / name, params, meta);
        write_text(*cfg.out_dir / "best.bin", name + "\n");
      }
    }
  }
  return result;
}

std::string format_history_csv(std::span<const EpochRecord> history) {
  std::string out = "epoch,train_loss,train_acc,test_loss,test_acc,lr\n";
  for (const auto& r : history) {
    out += std::to_string(r.epoch) + ',' + shortest(r.train_loss) + ',' + shortest(r.train_acc) + ',' +
           shortest(r.test_loss) + ',' + shortest(r.test_acc) + ',' + shortest(r.lr) + '\n';
  }
  return out;
}

std::vector<EpochRecord> parse_history_csv(std::string_view text) {
  std::vector<EpochRecord> out;
  bool header = true;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line.rfind("epoch", 0) == 0) continue;
    }
    double f[6];
    for (int i = 0; i < 6; ++i) {
      const std::size_t comma = line.find(',');
      const std::string_view tok = line.substr(0, comma);
      const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), f[i]);
      if (res.ec != std::errc() || (i < 5 && comma == std::string_view::npos))
        throw Error(Errc::BadConfig, "history line " + std::to_string(line_no) + " is malformed");
      line.remove_prefix(comma == std::string_view::npos ? line.size() : comma + 1);
    }
    out.push_back({static_cast<std::size_t>(f[0]), f[1], f[2], f[3], f[4], f[5]});
  }
  return out;
}

}  // namespace ecgcrnn::train
