#include "protofuse/fusion.hpp"

#include <algorithm>
#include <numeric>

#include "protofuse/errors.hpp"

namespace protofuse {

AffinityMatrix affinity_matrix(const Matrix& p_tokens, const Matrix& g_tokens) {
  if (p_tokens.cols() != g_tokens.cols()) throw PreconditionError("prototype dimensions differ");
  const Vector pn = p_tokens.rowwise().norm();
  const Vector gn = g_tokens.rowwise().norm();
  if ((pn.array() <= 0.0).any() || (gn.array() <= 0.0).any()) {
    throw NormalizationError("affinity undefined for a zero-norm prototype");
  }
  AffinityMatrix a;
  a.values = (p_tokens * g_tokens.transpose()).array() / (pn * gn.transpose()).array();
  a.values = a.values.cwiseMax(-1.0).cwiseMin(1.0);
  return a;
}

FusionSelection select_top_k(const AffinityMatrix& affinity, int k) {
  const Eigen::Index np = affinity.values.rows(), ng = affinity.values.cols();
  if (k < 0 || k > std::min(np, ng)) {
    throw ConfigError("Top-K must lie in [0, " + std::to_string(std::min(np, ng)) + "], got " + std::to_string(k));
  }
  // Sorting every entry once gives the same order as repeated arg-max with
  // lexicographic tie-breaking.
  std::vector<std::pair<int, int>> entries;
  entries.reserve(static_cast<std::size_t>(np * ng));
  for (int n = 0; n < np; ++n)
    for (int m = 0; m < ng; ++m) entries.emplace_back(n, m);
  std::stable_sort(entries.begin(), entries.end(), [&](const auto& a, const auto& b) {
    return affinity.values(a.first, a.second) > affinity.values(b.first, b.second);
  });

  FusionSelection sel;
  std::vector<bool> used_p(np, false), used_g(ng, false);
  for (const auto& [n, m] : entries) {
    if (static_cast<int>(sel.pairs.size()) == k) break;
    if (used_p[n] || used_g[m]) continue;
    used_p[n] = used_g[m] = true;
    sel.pairs.emplace_back(n, m);
  }
  for (int n = 0; n < np; ++n)
    if (!used_p[n]) sel.residual_p.push_back(n);
  for (int m = 0; m < ng; ++m)
    if (!used_g[m]) sel.residual_g.push_back(m);
  return sel;
}

namespace ops {

ad::Var fuse(const ad::Var& p_tokens, const ad::Var& g_tokens, const FusionSelection& selection,
             const ad::Var& weight, const ad::Var& bias) {
  std::vector<ad::Var> parts;
  parts.reserve(selection.pairs.size() + selection.residual_p.size() + selection.residual_g.size());
  for (const auto& [n, m] : selection.pairs) {
    const ad::Var pair = ad::concat_cols(ad::slice_rows(p_tokens, n, 1), ad::slice_rows(g_tokens, m, 1));
    parts.push_back(ad::add_row(ad::matmul(pair, weight), bias));
  }
  for (int n : selection.residual_p) parts.push_back(ad::slice_rows(p_tokens, n, 1));
  for (int m : selection.residual_g) parts.push_back(ad::slice_rows(g_tokens, m, 1));
  return ad::concat_rows(parts);
}

}  // namespace ops

Matrix fuse(const Matrix& p_tokens, const Matrix& g_tokens, const FusionSelection& selection,
            const FusionParams& params) {
  const Eigen::Index d = p_tokens.cols();
  if (g_tokens.cols() != d || params.weight.rows() != 2 * d || params.weight.cols() != d || params.bias.cols() != d) {
    throw PreconditionError("fusion parameters do not match the prototype dimension");
  }
  for (const auto& [n, m] : selection.pairs) {
    if (n < 0 || n >= p_tokens.rows() || m < 0 || m >= g_tokens.rows()) {
      throw PreconditionError("fusion selection indexes outside the prototype sets");
    }
  }
  ad::Tape tape;
  return ops::fuse(tape.constant(p_tokens), tape.constant(g_tokens), selection, tape.constant(params.weight),
                   tape.constant(params.bias))
      .value();
}

}  // namespace protofuse
