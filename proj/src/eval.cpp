#include "ecgcrnn/eval.hpp"

#include <cstdio>

#include "ecgcrnn/error.hpp"
#include "ecgcrnn/log.hpp"

namespace ecgcrnn::eval {

namespace {

std::optional<double> ratio(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::string opt_text(const std::optional<double>& v) {
  if (!v) return "undef";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *v);
  return buf;
}

}  // namespace

std::size_t ConfusionMatrix::total() const noexcept {
  std::size_t t = 0;
  for (const auto& row : counts)
    for (std::size_t c : row) t += c;
  return t;
}

std::size_t ConfusionMatrix::row_sum(std::size_t k) const noexcept {
  std::size_t t = 0;
  for (std::size_t c : counts[k]) t += c;
  return t;
}

std::size_t ConfusionMatrix::col_sum(std::size_t k) const noexcept {
  std::size_t t = 0;
  for (const auto& row : counts) t += row[k];
  return t;
}

std::size_t ConfusionMatrix::trace() const noexcept {
  std::size_t t = 0;
  for (std::size_t k = 0; k < kNumClasses; ++k) t += counts[k][k];
  return t;
}

ConfusionMatrix confusion(std::span<const std::size_t> pred, std::span<const std::size_t> truth) {
  if (pred.size() != truth.size())
    throw Error(Errc::LengthMismatch, std::to_string(pred.size()) + " predictions for " +
                                          std::to_string(truth.size()) + " labels");
  if (pred.empty()) throw Error(Errc::EmptyMatrix, "no records to evaluate");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] >= kNumClasses || truth[i] >= kNumClasses) throw Error(Errc::OutOfRange, "class index out of range");
    ++cm.counts[truth[i]][pred[i]];
  }
  return cm;
}

ConfusionMatrix confusion(std::span<const RhythmClass> pred, std::span<const RhythmClass> truth) {
  std::vector<std::size_t> p, t;
  p.reserve(pred.size());
  t.reserve(truth.size());
  for (auto c : pred) p.push_back(index_of(c));
  for (auto c : truth) t.push_back(index_of(c));
  return confusion(std::span<const std::size_t>(p), std::span<const std::size_t>(t));
}

ClassMetrics class_metrics(const ConfusionMatrix& cm) {
  const std::size_t total = cm.total();
  if (total == 0) throw Error(Errc::EmptyMatrix, "confusion matrix is empty");
  ClassMetrics m;
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    const std::size_t tp = cm.counts[k][k];
    const std::size_t fn = cm.row_sum(k) - tp;
    const std::size_t fp = cm.col_sum(k) - tp;
    const std::size_t tn = total - tp - fn - fp;
    auto& c = m.classes[k];
    c.support = tp + fn;
    c.sensitivity = ratio(tp, tp + fn);
    c.specificity = ratio(tn, tn + fp);
    c.f1 = ratio(2 * tp, 2 * tp + fp + fn);
  }
  m.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);
  return m;
}

double cinc_score(double f1n, double f1a, double f1o) {
  for (double v : {f1n, f1a, f1o})
    if (!(v >= 0.0 && v <= 1.0)) throw Error(Errc::OutOfRange, "F1 score outside [0, 1]");
  return (f1n + f1a + f1o) / 3.0;
}

double cinc_score(const ClassMetrics& metrics) {
  double f[3];
  for (std::size_t k = 0; k < 3; ++k) {
    const auto& v = metrics.classes[k].f1;
    if (!v) log::warn(std::string("F1 undefined for class ") + class_token(class_at(k)) + ", counted as 0");
    f[k] = v.value_or(0.0);
  }
  return cinc_score(f[0], f[1], f[2]);
}

nlohmann::json metrics_report(const ConfusionMatrix& cm, const ClassMetrics& metrics) {
  nlohmann::json j;
  j["classes"] = nlohmann::json::array();
  auto rows = nlohmann::json::array();
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    rows.push_back(cm.counts[k]);
    const auto& c = metrics.classes[k];
    j["classes"].push_back({{"class", std::string(1, class_token(class_at(k)))},
                            {"name", class_name(class_at(k))},
                            {"support", c.support},
                            {"sensitivity", opt_json(c.sensitivity)},
                            {"specificity", opt_json(c.specificity)},
                            {"f1", opt_json(c.f1)}});
  }
  j["confusion"] = std::move(rows);
  j["total"] = cm.total();
  j["accuracy"] = metrics.accuracy;
  j["cinc_score"] = cinc_score(metrics);
  return j;
}

std::string metrics_table(const ClassMetrics& metrics) {
  std::string out;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-12s", "");
  out += buf;
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    std::snprintf(buf, sizeof buf, "%10s", std::string(class_name(class_at(k))).substr(0, 10).c_str());
    out += buf;
  }
  out += '\n';
  auto row = [&](const char* label, auto get) {
    std::snprintf(buf, sizeof buf, "%-12s", label);
    out += buf;
    for (std::size_t k = 0; k < kNumClasses; ++k) {
      std::snprintf(buf, sizeof buf, "%10s", opt_text(get(metrics.classes[k])).c_str());
      out += buf;
    }
    out += '\n';
  };
  row("Sensitivity", [](const PerClass& c) { return c.sensitivity; });
  row("Specificity", [](const PerClass& c) { return c.specificity; });
  row("F1 score", [](const PerClass& c) { return c.f1; });
  std::snprintf(buf, sizeof buf, "Accuracy    %10.4f\nCinC score  %10.4f\n", metrics.accuracy, cinc_score(metrics));
  out += buf;
  return out;
}

}  // namespace ecgcrnn::eval
