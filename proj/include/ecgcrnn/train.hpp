#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ecgcrnn/nn.hpp"
#include "ecgcrnn/pipeline.hpp"

namespace ecgcrnn::train {

/// -log(probs[label]) with the probability clamped at 1e-12.
double cross_entropy(std::span<const double> probs, std::size_t label);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

/// Moments are stored flat in parameter order.
struct AdamState {
  AdamConfig config;
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;

  AdamState() = default;
  AdamState(std::size_t n, AdamConfig cfg) : config(cfg), m(n, 0.0), v(n, 0.0) {}
};

/// Bias-corrected Adam with epsilon outside the correction:
///   lr_t = lr * sqrt(1 - b2^t) / (1 - b1^t)
///   theta -= lr_t * m / (sqrt(v) + eps)
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state);
void adam_step(nn::ModelParams& params, const nn::Gradients& grads, AdamState& state);

/// Halve-on-plateau schedule monitored on a loss.
struct LrSchedule {
  double lr = 1e-3;
  double factor = 0.5;
  std::size_t patience = 5;
  double floor = 1e-5;
  double best = std::numeric_limits<double>::infinity();
  std::size_t since_improvement = 0;
};

/// Strict improvement resets the counter; `patience` consecutive
/// non-improvements multiply lr by factor (clamped at floor).
double schedule_update(LrSchedule& sched, double loss);

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 50;
  std::size_t eval_batch_size = 50;
  double learning_rate = 1e-3;
  double dropout = 0.5;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  nn::Architecture arch;
  pipeline::AugmentationConfig augmentation;
  pipeline::WindowConfig window;
  /// When set: history.csv after each epoch, ckpt_epoch<k>.bin on every new
  /// best monitored accuracy, best.bin pointing at the latest of those.
  std::optional<std::filesystem::path> out_dir;
  /// Merged into every checkpoint's metadata (front-end parameters, scale).
  nlohmann::json extra_metadata = nlohmann::json::object();
};

void validate(const TrainConfig& cfg);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double test_loss = 0.0;
  double test_acc = 0.0;
  double lr = 0.0;

  bool operator==(const EpochRecord&) const = default;
};

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<std::size_t> predictions;  // in record order
  std::vector<std::vector<double>> probs;
  std::vector<std::size_t> skipped;
};

/// Eval-mode pass over records, batched and zero-padded like training
/// (batch_size 1 means no padding at all). No augmentation.
EvalResult evaluate(const nn::ModelParams& params, std::span<const pipeline::LabeledSignal> records,
                    std::size_t batch_size, const pipeline::WindowConfig& wcfg = {});

/// Mean loss and mean gradient of one batch (train mode). Per-record work
/// runs in `threads` lanes; the reduction order is record order regardless
/// of the lane count. Non-finite probabilities make the returned loss NaN.
struct BatchStep {
  double loss = 0.0;
  std::size_t correct = 0;
};
BatchStep batch_gradient(const nn::ModelParams& params, const pipeline::Batch& batch, double dropout,
                         std::uint64_t seed, std::uint64_t epoch, std::size_t threads, nn::Gradients& out);

struct TrainResult {
  nn::ModelParams best;
  std::size_t best_epoch = 0;
  double best_accuracy = -1.0;
  std::vector<EpochRecord> history;
};

/// Trains on `train_set`, monitoring `monitor_set` (test or validation) for
/// the learning-rate schedule and best-epoch selection.
TrainResult train(std::span<const pipeline::LabeledSignal> train_set,
                  std::span<const pipeline::LabeledSignal> monitor_set, const TrainConfig& cfg);

std::string format_history_csv(std::span<const EpochRecord> history);
std::vector<EpochRecord> parse_history_csv(std::string_view text);

}  // namespace ecgcrnn::train
