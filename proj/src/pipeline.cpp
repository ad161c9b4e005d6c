#include "ecgcrnn/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ecgcrnn/dsp.hpp"
#include "ecgcrnn/error.hpp"
#include "ecgcrnn/log.hpp"

namespace ecgcrnn::pipeline {

void validate(const WindowConfig& cfg) {
  if (cfg.stride == 0 || cfg.window_len == 0 || cfg.stride > cfg.window_len)
    throw Error(Errc::BadConfig, "window config needs 0 < stride <= window_len");
}

void validate(const AugmentationConfig& cfg) {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(cfg.flip_prob) || !prob(cfg.resample_prob))
    throw Error(Errc::BadConfig, "augmentation probabilities must lie in [0, 1]");
  if (!(cfg.stretch_low > -1.0) || !(cfg.stretch_high < 1.0) || cfg.stretch_low > cfg.stretch_high)
    throw Error(Errc::BadConfig, "stretch range must be an interval inside (-1, 1)");
}

std::size_t max_windows(std::size_t n, const WindowConfig& cfg) {
  if (n < cfg.window_len)
    throw Error(Errc::TooShort, std::to_string(n) + " samples is shorter than one window");
  return (n - cfg.window_len) / cfg.stride + 1;
}

std::size_t max_offset(std::size_t n, std::size_t nw, const WindowConfig& cfg) {
  const std::size_t span = (nw - 1) * cfg.stride + cfg.window_len;
  if (nw == 0 || span > n) throw Error(Errc::TooShort, "windows do not fit in the signal");
  return n - span;
}

std::size_t sample_offset(std::size_t n, std::size_t nw, Rng& rng, const WindowConfig& cfg) {
  return static_cast<std::size_t>(rng.uniform_int(max_offset(n, nw, cfg)));
}

WindowTensor extract_windows(std::span<const double> x, std::size_t offset,
                             const WindowConfig& cfg, std::string record_id) {
  WindowTensor t;
  t.nw = max_windows(x.size(), cfg);
  if (offset > max_offset(x.size(), t.nw, cfg))
    throw Error(Errc::TooShort, "offset " + std::to_string(offset) + " leaves no room for " +
                                    std::to_string(t.nw) + " windows");
  t.window_len = cfg.window_len;
  t.record_id = std::move(record_id);
  t.values.resize(t.nw * cfg.window_len);
  for (std::size_t k = 0; k < t.nw; ++k) {
    const auto src = x.subspan(offset + k * cfg.stride, cfg.window_len);
    std::copy(src.begin(), src.end(), t.values.begin() + static_cast<std::ptrdiff_t>(k * cfg.window_len));
  }
  return t;
}

WindowTensor pad_front(WindowTensor t, std::size_t nw) {
  if (nw < t.nw) throw Error(Errc::ShapeMismatch, "cannot pad to fewer windows");
  if (nw == t.nw) return t;
  const std::size_t extra = nw - t.nw;
  t.values.insert(t.values.begin(), extra * t.window_len, 0.0);
  t.pad_count += extra;
  t.nw = nw;
  return t;
}

AugmentDraw draw_augmentation(const AugmentationConfig& cfg, Rng& rng) {
  AugmentDraw d;
  if (!cfg.enabled) return d;
  // Fixed draw order: stretch decision, stretch amount, flip decision.
  if (rng.bernoulli(cfg.resample_prob)) d.stretch = rng.uniform_closed(cfg.stretch_low, cfg.stretch_high);
  d.flip = rng.bernoulli(cfg.flip_prob);
  return d;
}

std::size_t augmented_length(std::size_t n, const AugmentDraw& draw) {
  if (!draw.stretch) return n;
  return static_cast<std::size_t>(std::llround(static_cast<double>(n) * (1.0 + *draw.stretch)));
}

std::vector<double> apply_augmentation(std::span<const double> x, const AugmentDraw& draw) {
  std::vector<double> y = draw.stretch && *draw.stretch != 0.0
                              ? dsp::resample(x, 1.0, 1.0 + *draw.stretch)
                              : std::vector<double>(x.begin(), x.end());
  if (draw.flip)
    for (double& v : y) v = -v;
  return y;
}

std::size_t min_augment_length(const AugmentationConfig& cfg, const WindowConfig& wcfg) {
  const double shrink = 1.0 + std::min(0.0, cfg.stretch_low);
  return static_cast<std::size_t>(std::ceil(static_cast<double>(wcfg.window_len) / shrink - 1e-9));
}

std::vector<double> augment(std::span<const double> x, const AugmentationConfig& cfg, Rng& rng,
                            const WindowConfig& wcfg) {
  if (!cfg.enabled) return {x.begin(), x.end()};
  validate(cfg);
  if (x.size() < min_augment_length(cfg, wcfg))
    throw Error(Errc::TooShort, std::to_string(x.size()) + " samples may stretch below one window");
  return apply_augmentation(x, draw_augmentation(cfg, rng));
}

BatchPlan plan_batches(std::span<const std::size_t> lengths, std::size_t batch_size,
                       const AugmentationConfig& cfg, const WindowConfig& wcfg, std::uint64_t seed,
                       std::uint64_t epoch) {
  if (batch_size == 0) throw Error(Errc::BadConfig, "batch size must be at least 1");
  validate(wcfg);
  validate(cfg);
  BatchPlan plan;
  std::vector<PlannedRecord> items;
  items.reserve(lengths.size());
  const std::size_t min_len = cfg.enabled ? min_augment_length(cfg, wcfg) : wcfg.window_len;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    if (lengths[i] < min_len) {
      log::warn("record " + std::to_string(i) + " skipped: " + std::to_string(lengths[i]) +
                " samples is too short to window");
      plan.skipped.push_back(i);
      continue;
    }
    PlannedRecord p;
    p.record = i;
    Rng rng = Rng::derive(seed, {epoch, i});
    p.draw = draw_augmentation(cfg, rng);
    p.length = augmented_length(lengths[i], p.draw);
    p.nw = max_windows(p.length, wcfg);
    p.offset = cfg.enabled ? sample_offset(p.length, p.nw, rng, wcfg) : 0;
    items.push_back(p);
  }
  std::stable_sort(items.begin(), items.end(),
                   [](const PlannedRecord& a, const PlannedRecord& b) { return a.length < b.length; });
  for (std::size_t i = 0; i < items.size(); i += batch_size) {
    const std::size_t end = std::min(items.size(), i + batch_size);
    plan.batches.emplace_back(items.begin() + static_cast<std::ptrdiff_t>(i),
                              items.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return plan;
}

Batch build_batch(std::span<const LabeledSignal> records, std::span<const PlannedRecord> plan,
                  const WindowConfig& wcfg) {
  Batch batch;
  std::size_t nw = 0;
  for (const auto& p : plan) nw = std::max(nw, p.nw);
  for (const auto& p : plan) {
    const auto& rec = records[p.record];
    const auto signal = apply_augmentation(rec.samples, p.draw);
    WindowTensor t = extract_windows(signal, p.offset, wcfg, rec.id);
    batch.tensors.push_back(pad_front(std::move(t), nw));
    batch.labels.push_back(rec.label);
    batch.record_indices.push_back(p.record);
  }
  return batch;
}

std::vector<Batch> make_batches(std::span<const LabeledSignal> records, std::size_t batch_size,
                                const AugmentationConfig& cfg, const WindowConfig& wcfg,
                                std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> lengths;
  lengths.reserve(records.size());
  for (const auto& r : records) lengths.push_back(r.samples.size());
  const BatchPlan plan = plan_batches(lengths, batch_size, cfg, wcfg, seed, epoch);
  std::vector<Batch> out;
  out.reserve(plan.batches.size());
  for (const auto& b : plan.batches) out.push_back(build_batch(records, b, wcfg));
  return out;
}

}  // namespace ecgcrnn::pipeline
