#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>

#include <nlohmann/json.hpp>

#include "ecgcrnn/record_io.hpp"

namespace ecgcrnn::eval {

/// Rows are the true class, columns the prediction, class order N, A, O, ~.
struct ConfusionMatrix {
  std::array<std::array<std::size_t, kNumClasses>, kNumClasses> counts{};

  std::size_t total() const noexcept;
  std::size_t row_sum(std::size_t k) const noexcept;
  std::size_t col_sum(std::size_t k) const noexcept;
  std::size_t trace() const noexcept;
  bool operator==(const ConfusionMatrix&) const = default;
};

ConfusionMatrix confusion(std::span<const RhythmClass> pred, std::span<const RhythmClass> truth);
ConfusionMatrix confusion(std::span<const std::size_t> pred, std::span<const std::size_t> truth);

/// Ratios that hit 0/0 are left empty rather than NaN.
struct PerClass {
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  std::optional<double> f1;
  std::size_t support = 0;
};

struct ClassMetrics {
  std::array<PerClass, kNumClasses> classes;
  double accuracy = 0.0;
};

ClassMetrics class_metrics(const ConfusionMatrix& cm);

/// Mean of the normal, AF and other-rhythm F1 scores (noise excluded).
double cinc_score(double f1n, double f1a, double f1o);

/// Same from computed metrics; an undefined F1 counts as 0 with a warning.
double cinc_score(const ClassMetrics& metrics);

nlohmann::json metrics_report(const ConfusionMatrix& cm, const ClassMetrics& metrics);

/// Text table with one row per metric and one column per class.
std::string metrics_table(const ClassMetrics& metrics);

}  // namespace ecgcrnn::eval
