#include "protofuse/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "protofuse/errors.hpp"
#include "protofuse/imputation.hpp"

namespace protofuse {

std::string to_string(Task task) {
  switch (task) {
    case Task::diagnosis: return "diagnosis";
    case Task::grading: return "grading";
    case Task::survival: return "survival";
  }
  return "unknown";
}

Task parse_task(const std::string& text) {
  if (text == "diagnosis") return Task::diagnosis;
  if (text == "grading" || text == "grade") return Task::grading;
  if (text == "survival") return Task::survival;
  throw ConfigError("unknown task '" + text + "' (expected diagnosis, grading or survival)");
}

int num_outputs(Task task, int n_bins) {
  switch (task) {
    case Task::diagnosis: return 6;
    case Task::grading: return 3;
    case Task::survival: return n_bins;
  }
  return 0;
}

std::vector<double> quantile_cut_points(std::vector<double> times, int n_bins) {
  if (n_bins < 1) throw ConfigError("survival head needs at least one bin");
  if (times.empty()) throw PreconditionError("cannot place cut points without survival times");
  std::sort(times.begin(), times.end());
  std::vector<double> cuts;
  for (int b = 1; b < n_bins; ++b) {
    const double pos = static_cast<double>(b) * static_cast<double>(times.size() - 1) / n_bins;
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, times.size() - 1);
    cuts.push_back(times[lo] + (pos - static_cast<double>(lo)) * (times[hi] - times[lo]));
  }
  return cuts;
}

int survival_bin(double time, const std::vector<double>& cut_points) {
  return static_cast<int>(std::upper_bound(cut_points.begin(), cut_points.end(), time) - cut_points.begin());
}

namespace ops {

ad::Var classification_loss(const ad::Var& logits, int label) {
  if (label < 0 || label >= logits.cols()) {
    throw RangeError("class label " + std::to_string(label) + " outside [0, " + std::to_string(logits.cols()) + ")");
  }
  return ad::scale(ad::element(ad::log_softmax_rows(logits), 0, label), -1.0);
}

ad::Var survival_loss(const ad::Var& hazard_logits, int time_bin, bool event) {
  const Eigen::Index nb = hazard_logits.cols();
  if (time_bin < 0 || time_bin >= nb) throw RangeError("survival time bin outside the head's bins");
  const ad::Var h = ad::clamp(ad::sigmoid(hazard_logits), kProbabilityClamp, 1.0 - kProbabilityClamp);
  Matrix event_mask = Matrix::Zero(1, nb);
  Matrix survive_mask = Matrix::Zero(1, nb);
  // event: -log(h_t S_{t-1}); censored: -log S_t.
  const int last_survived = event ? time_bin - 1 : time_bin;
  for (int j = 0; j <= last_survived; ++j) survive_mask(0, j) = 1.0;
  if (event) event_mask(0, time_bin) = 1.0;
  ad::Tape& tape = *hazard_logits.tape();
  const ad::Var log_h = ad::log(h);
  const ad::Var log_s = ad::log(ad::affine(h, -1.0, 1.0));
  const ad::Var total = ad::add(ad::sum(ad::mul(log_h, tape.constant(event_mask))),
                                ad::sum(ad::mul(log_s, tape.constant(survive_mask))));
  return ad::scale(total, -1.0);
}

}  // namespace ops

double classification_loss(const RowVector& logits, int label) {
  ad::Tape tape;
  return ops::classification_loss(tape.constant(Matrix(logits)), label).scalar();
}

double survival_loss(const RowVector& hazard_logits, int time_bin, bool event) {
  ad::Tape tape;
  return ops::survival_loss(tape.constant(Matrix(hazard_logits)), time_bin, event).scalar();
}

double risk_score(const RowVector& hazard_logits) {
  double cumulative = 0.0, risk = 0.0;
  for (Eigen::Index k = 0; k < hazard_logits.size(); ++k) {
    const double h = std::clamp(1.0 / (1.0 + std::exp(-hazard_logits(k))), kProbabilityClamp, 1.0 - kProbabilityClamp);
    cumulative -= std::log1p(-h);
    risk += cumulative;
  }
  return risk;
}

double concordance_index(const std::vector<double>& risks, const std::vector<double>& times,
                         const std::vector<bool>& events) {
  const std::size_t n = risks.size();
  if (times.size() != n || events.size() != n) throw PreconditionError("C-index inputs differ in length");
  if (n < 2) throw PreconditionError("C-index needs at least two samples");
  double concordant = 0.0;
  long comparable = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!events[i]) continue;
    for (std::size_t j = 0; j < n; ++j) {
      if (!(times[i] < times[j])) continue;
      ++comparable;
      if (risks[i] > risks[j]) {
        concordant += 1.0;
      } else if (risks[i] == risks[j]) {
        concordant += 0.5;
      }
    }
  }
  if (comparable == 0) throw UndefinedMetricError("C-index undefined: no comparable pairs");
  return concordant / static_cast<double>(comparable);
}

// ---------------------------------------------------------------------------
// Classification metrics

namespace {

// Mann-Whitney AUC with half credit for ties.
double rank_auc(const Vector& scores, const std::vector<bool>& positive) {
  double wins = 0.0;
  long pairs = 0;
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    if (!positive[i]) continue;
    for (Eigen::Index j = 0; j < scores.size(); ++j) {
      if (positive[j]) continue;
      ++pairs;
      wins += scores(i) > scores(j) ? 1.0 : (scores(i) == scores(j) ? 0.5 : 0.0);
    }
  }
  return wins / static_cast<double>(pairs);
}

std::string fmt(const std::optional<double>& v) {
  if (!v) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

}  // namespace

MetricsReport classification_metrics(const Matrix& raw_scores, const std::vector<int>& labels) {
  const Eigen::Index n = raw_scores.rows();
  if (static_cast<std::size_t>(n) != labels.size()) throw PreconditionError("scores and labels differ in length");
  if (n < 1) throw PreconditionError("classification metrics need at least one sample");
  Matrix scores = raw_scores;
  if (raw_scores.cols() == 1) {
    scores.resize(n, 2);
    scores.col(0) = 1.0 - raw_scores.col(0).array();
    scores.col(1) = raw_scores.col(0);
  }
  const Eigen::Index c = scores.cols();
  for (int y : labels) {
    if (y < 0 || y >= c) throw RangeError("class label outside the score columns");
  }

  std::vector<int> predicted(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < c; ++k) {
      if (scores(i, k) > scores(i, best)) best = k;
    }
    predicted[i] = static_cast<int>(best);
  }

  MetricsReport r;
  r.n_samples = static_cast<int>(n);
  int correct = 0;
  for (Eigen::Index i = 0; i < n; ++i) correct += predicted[i] == labels[i];
  r.accuracy = static_cast<double>(correct) / static_cast<double>(n);

  double auc_sum = 0.0, sen_sum = 0.0, spec_sum = 0.0, f1_sum = 0.0;
  int auc_classes = 0, present = 0;
  for (Eigen::Index k = 0; k < c; ++k) {
    long tp = 0, fp = 0, fn = 0, tn = 0;
    std::vector<bool> positive(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      positive[i] = labels[i] == k;
      const bool pred = predicted[i] == k;
      tp += positive[i] && pred;
      fp += !positive[i] && pred;
      fn += positive[i] && !pred;
      tn += !positive[i] && !pred;
    }
    if (tp + fn == 0) {
      r.flags.push_back("class_" + std::to_string(k) + "_absent");
      continue;
    }
    ++present;
    sen_sum += static_cast<double>(tp) / static_cast<double>(tp + fn);
    spec_sum += tn + fp > 0 ? static_cast<double>(tn) / static_cast<double>(tn + fp) : 1.0;
    f1_sum += 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
    if (tn + fp > 0) {
      auc_sum += rank_auc(scores.col(k), positive);
      ++auc_classes;
    }
  }
  if (present > 0) {
    r.sensitivity = sen_sum / present;
    r.specificity = spec_sum / present;
    r.f1 = f1_sum / present;
  }
  if (auc_classes > 0) {
    r.auc = auc_sum / auc_classes;
  } else {
    r.flags.push_back("auc_undefined");
  }
  return r;
}

std::string MetricsReport::header() {
  return "task\tfold\tmode\trate\tstrategy\tn_samples\tauc\taccuracy\tsensitivity\tspecificity\tf1\tc_index\tflags";
}

std::string MetricsReport::row() const {
  char rate_buf[32];
  std::snprintf(rate_buf, sizeof rate_buf, "%.2f", rate);
  std::string flag_text;
  for (const auto& f : flags) flag_text += (flag_text.empty() ? "" : ";") + f;
  if (flag_text.empty()) flag_text = "-";
  return task + '\t' + fold + '\t' + mode + '\t' + rate_buf + '\t' + strategy + '\t' + std::to_string(n_samples) +
         '\t' + fmt(auc) + '\t' + fmt(accuracy) + '\t' + fmt(sensitivity) + '\t' + fmt(specificity) + '\t' + fmt(f1) +
         '\t' + fmt(c_index) + '\t' + flag_text;
}

}  // namespace protofuse
