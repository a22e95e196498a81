#pragma once

// Scalar reference implementations used as test oracles. Everything here is
// written with plain loops over nested vectors so that it shares no code with
// the library under test.

#include <unistd.h>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace oracle {

using Mat = std::vector<std::vector<double>>;

inline Mat from_eigen(const Eigen::MatrixXd& m) {
  Mat out(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
  return out;
}

inline double max_abs_diff(const Eigen::MatrixXd& a, const Mat& b) {
  if (static_cast<std::size_t>(a.rows()) != b.size()) return std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    if (static_cast<std::size_t>(a.cols()) != b[i].size()) return std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < a.cols(); ++j) worst = std::max(worst, std::abs(a(i, j) - b[i][j]));
  }
  return worst;
}

inline Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> normal(0.0, sd);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = normal(rng);
  return m;
}

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat out(a.size(), std::vector<double>(b.empty() ? 0 : b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][k] * b[k][j];
  return out;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

inline std::vector<double> softmax(const std::vector<double>& x) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double v : x) hi = std::max(hi, v);
  std::vector<double> e(x.size());
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) total += e[i] = std::exp(x[i] - hi);
  for (double& v : e) v /= total;
  return e;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// One cross-attention step: softmax(Q Wq (S Wk)^T / sqrt(D)) (S Wv).
inline Mat attention_step(const Mat& queries, const Mat& source, const Mat& wq, const Mat& wk, const Mat& wv,
                          Mat* weights = nullptr) {
  const Mat q = matmul(queries, wq), k = matmul(source, wk), v = matmul(source, wv);
  const double scale = 1.0 / std::sqrt(static_cast<double>(queries[0].size()));
  Mat out(queries.size(), std::vector<double>(v[0].size(), 0.0));
  if (weights) weights->assign(queries.size(), {});
  for (std::size_t i = 0; i < q.size(); ++i) {
    std::vector<double> logits(k.size());
    for (std::size_t j = 0; j < k.size(); ++j) logits[j] = dot(q[i], k[j]) * scale;
    const auto a = softmax(logits);
    for (std::size_t j = 0; j < k.size(); ++j)
      for (std::size_t c = 0; c < v[0].size(); ++c) out[i][c] += a[j] * v[j][c];
    if (weights) (*weights)[i] = a;
  }
  return out;
}

inline Mat refine(Mat protos, const Mat& patches, const Mat& wq, const Mat& wk, const Mat& wv, int iterations) {
  for (int t = 0; t < iterations; ++t) protos = attention_step(protos, patches, wq, wk, wv);
  return protos;
}

inline Mat self_attention(const Mat& x, const Mat& wq, const Mat& wk, const Mat& wv) {
  Mat out = attention_step(x, x, wq, wk, wv);
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t c = 0; c < x[i].size(); ++c) out[i][c] += x[i][c];
  return out;
}

// -sum_i log(exp(s_ii) / sum_j exp(s_ij)).
inline double mi_loss(const Mat& s) {
  double total = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    double denom = 0.0;
    for (double v : s[i]) denom += std::exp(v);
    total -= s[i][i] - std::log(denom);
  }
  return total;
}

// Scores between L2-normalised affine projections, divided by the temperature.
inline Mat critic_scores(const Mat& p, const Mat& g, const Mat& proj_p, const Mat& bias_p, const Mat& proj_g,
                         const Mat& bias_g, double temperature) {
  auto project = [](const Mat& x, const Mat& w, const Mat& b) {
    Mat z = matmul(x, w);
    for (auto& row : z) {
      for (std::size_t c = 0; c < row.size(); ++c) row[c] += b[0][c];
      const double n = norm(row);
      for (double& v : row) v /= n;
    }
    return z;
  };
  const Mat zp = project(p, proj_p, bias_p), zg = project(g, proj_g, bias_g);
  Mat s(p.size(), std::vector<double>(g.size()));
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = 0; j < g.size(); ++j) s[i][j] = dot(zp[i], zg[j]) / temperature;
  return s;
}

inline double diversity(const Mat& g) {
  const double b = static_cast<double>(g.size());
  double total = 0.0;
  for (const auto& gi : g)
    for (const auto& gj : g) {
      double d2 = 0.0;
      for (std::size_t c = 0; c < gi.size(); ++c) d2 += (gi[c] - gj[c]) * (gi[c] - gj[c]);
      total += std::exp(-std::sqrt(d2));
    }
  return total / (b * b);
}

inline double sample_alignment(const Mat& p, const Mat& g) {
  const std::size_t b = p.size();
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) {
      const double mp = dot(p[i], p[j]) / (norm(p[i]) * norm(p[j]));
      const double mg = dot(g[i], g[j]) / (norm(g[i]) * norm(g[j]));
      total += (mp - mg) * (mp - mg);
    }
  return total / static_cast<double>(b * b);
}

// x + tanh(x W1 + b1) W2 + b2 + row_bias[i].
inline Mat translate(const Mat& x, const Mat& w1, const Mat& b1, const Mat& w2, const Mat& b2, const Mat& row_bias) {
  Mat h = matmul(x, w1);
  for (auto& row : h)
    for (std::size_t c = 0; c < row.size(); ++c) row[c] = std::tanh(row[c] + b1[0][c]);
  Mat out = matmul(h, w2);
  for (std::size_t i = 0; i < out.size(); ++i)
    for (std::size_t c = 0; c < out[i].size(); ++c)
      out[i][c] += x[i][c] + b2[0][c] + (row_bias.empty() ? 0.0 : row_bias[i % row_bias.size()][c]);
  return out;
}

inline double mean_abs_diff(const Mat& a, const Mat& b) {
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t c = 0; c < a[i].size(); ++c, ++n) total += std::abs(a[i][c] - b[i][c]);
  return total / static_cast<double>(n);
}

// sigmoid(tanh(x U + c) v + d), clamped to [1e-7, 1 - 1e-7].
inline double discriminate(const std::vector<double>& x, const Mat& u, const Mat& c, const Mat& v, double d) {
  double logit = d;
  for (std::size_t h = 0; h < u[0].size(); ++h) {
    double a = c[0][h];
    for (std::size_t k = 0; k < x.size(); ++k) a += x[k] * u[k][h];
    logit += std::tanh(a) * v[h][0];
  }
  return std::clamp(sigmoid(logit), 1e-7, 1.0 - 1e-7);
}

// The literal definition: repeatedly scan for the largest entry whose row and
// column are unused. Scanning rows then columns with a strict comparison keeps
// the lexicographically smallest index among equal maxima.
inline std::vector<std::pair<int, int>> greedy_pairs(const Mat& a, int k) {
  std::vector<bool> row_used(a.size()), col_used(a[0].size());
  std::vector<std::pair<int, int>> pairs;
  for (int step = 0; step < k; ++step) {
    int bi = -1, bj = -1;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (row_used[i]) continue;
      for (std::size_t j = 0; j < a[i].size(); ++j) {
        if (col_used[j]) continue;
        if (bi < 0 || a[i][j] > a[bi][bj]) {
          bi = static_cast<int>(i);
          bj = static_cast<int>(j);
        }
      }
    }
    row_used[bi] = col_used[bj] = true;
    pairs.emplace_back(bi, bj);
  }
  return pairs;
}

// Product-form discrete-time likelihood with hazards sigmoid(logits).
inline double survival_nll(const std::vector<double>& logits, int bin, bool event) {
  std::vector<double> h(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) h[k] = sigmoid(logits[k]);
  double surv_before = 1.0;
  for (int k = 0; k < bin; ++k) surv_before *= 1.0 - h[k];
  if (event) return -std::log(std::max(h[bin] * surv_before, 1e-7));
  return -std::log(std::max(surv_before * (1.0 - h[bin]), 1e-7));
}

// Exhaustive enumeration over ordered pairs.
inline double c_index(const std::vector<double>& risk, const std::vector<double>& time, const std::vector<bool>& event) {
  double num = 0.0, den = 0.0;
  for (std::size_t a = 0; a < risk.size(); ++a)
    for (std::size_t b = 0; b < risk.size(); ++b) {
      if (a == b) continue;
      const bool comparable = event[a] && time[a] < time[b];
      if (!comparable) continue;
      den += 1.0;
      num += risk[a] > risk[b] ? 1.0 : (risk[a] == risk[b] ? 0.5 : 0.0);
    }
  return num / den;
}

struct ClassMetrics {
  double auc = 0, accuracy = 0, sensitivity = 0, specificity = 0, f1 = 0;
};

// Area under the ROC curve by sweeping every distinct threshold and
// integrating with the trapezoid rule.
inline double roc_auc(const std::vector<double>& score, const std::vector<bool>& positive) {
  std::vector<double> thresholds = score;
  thresholds.push_back(std::numeric_limits<double>::infinity());
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  double n_pos = 0, n_neg = 0;
  for (bool p : positive) (p ? n_pos : n_neg) += 1;
  double area = 0.0, prev_tpr = 0.0, prev_fpr = 0.0;
  for (double t : thresholds) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < score.size(); ++i)
      if (score[i] >= t) (positive[i] ? tp : fp) += 1;
    const double tpr = tp / n_pos, fpr = fp / n_neg;
    area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
    prev_tpr = tpr;
    prev_fpr = fpr;
  }
  return area;
}

// Macro averages from a full confusion matrix; argmax ties go to the lowest
// column. Every class is assumed present.
inline ClassMetrics class_metrics(const Mat& scores, const std::vector<int>& labels) {
  const std::size_t n = scores.size(), c = scores[0].size();
  Mat confusion(c, std::vector<double>(c, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k)
      if (scores[i][k] > scores[i][best]) best = k;
    confusion[labels[i]][best] += 1.0;
  }
  ClassMetrics m;
  for (std::size_t k = 0; k < c; ++k) m.accuracy += confusion[k][k];
  m.accuracy /= static_cast<double>(n);
  for (std::size_t k = 0; k < c; ++k) {
    double tp = confusion[k][k], fn = 0, fp = 0;
    for (std::size_t j = 0; j < c; ++j) {
      if (j == k) continue;
      fn += confusion[k][j];
      fp += confusion[j][k];
    }
    const double tn = static_cast<double>(n) - tp - fn - fp;
    m.sensitivity += tp / (tp + fn);
    m.specificity += tn / (tn + fp);
    m.f1 += 2 * tp / (2 * tp + fp + fn);
    std::vector<double> col(n);
    std::vector<bool> pos(n);
    for (std::size_t i = 0; i < n; ++i) {
      col[i] = scores[i][k];
      pos[i] = labels[i] == static_cast<int>(k);
    }
    m.auc += roc_auc(col, pos);
  }
  const double dc = static_cast<double>(c);
  m.sensitivity /= dc;
  m.specificity /= dc;
  m.f1 /= dc;
  m.auc /= dc;
  return m;
}

// Fresh scratch directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("protofuse_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace oracle
