#pragma once

// Task heads, losses and evaluation metrics for diagnosis (6 classes),
// grading (3 classes) and discrete-time survival prediction.

#include <optional>
#include <string>
#include <vector>

#include "protofuse/autodiff.hpp"

namespace protofuse {

enum class Task { diagnosis, grading, survival };

std::string to_string(Task task);
Task parse_task(const std::string& text);
int num_outputs(Task task, int n_bins);

inline constexpr int kDefaultSurvivalBins = 4;

struct ClassifierHead {
  Matrix weight;  // D x C
  Matrix bias;    // 1 x C
};

struct SurvivalHead {
  Matrix weight;  // D x n_bins
  Matrix bias;    // 1 x n_bins
  std::vector<double> cut_points;  // n_bins - 1 ascending interior boundaries
};

// Cut points at the cohort quantiles of `times` for `n_bins` equal-mass bins.
std::vector<double> quantile_cut_points(std::vector<double> times, int n_bins);
int survival_bin(double time, const std::vector<double>& cut_points);

double classification_loss(const RowVector& logits, int label);

double survival_loss(const RowVector& hazard_logits, int time_bin, bool event);

// Sum over bins of the cumulative hazard -log S_k.
double risk_score(const RowVector& hazard_logits);

// Harrell's C over comparable pairs; tied risks count one half.
double concordance_index(const std::vector<double>& risks, const std::vector<double>& times,
                         const std::vector<bool>& events);

struct MetricsReport {
  std::optional<double> auc, accuracy, sensitivity, specificity, f1;
  std::optional<double> c_index;
  int n_samples = 0;
  std::vector<std::string> flags;

  // Condition tags.
  std::string task;
  std::string fold = "all";
  std::string mode = "none";
  double rate = 0.0;
  std::string strategy = "none";

  static std::string header();
  std::string row() const;
};

// Scores are n x C (class scores) or n x 1 (binary positive-class score).
MetricsReport classification_metrics(const Matrix& scores, const std::vector<int>& labels);

namespace ops {

ad::Var classification_loss(const ad::Var& logits, int label);
ad::Var survival_loss(const ad::Var& hazard_logits, int time_bin, bool event);

}  // namespace ops
}  // namespace protofuse
