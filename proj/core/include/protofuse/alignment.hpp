#pragma once

// Multiview alignment: distribution-wise alignment through a contrastive
// mutual-information estimator plus a diversity regulariser on the genomic
// side, sample-wise alignment through Gram-matrix consistency, and [CLS]
// aggregation over each modality's prototypes.

#include "protofuse/autodiff.hpp"
#include "protofuse/prototyping.hpp"

namespace protofuse {

// f_MI(p, g) = <phi_p(p), phi_g(g)> / temperature, with phi_* affine maps
// into a shared space. With `normalize` the projections are L2-normalised
// first, which turns the score into a scaled cosine.
struct CriticParams {
  Matrix proj_p;  // D x Dc
  Matrix bias_p;  // 1 x Dc
  Matrix proj_g;  // D x Dc
  Matrix bias_g;  // 1 x Dc
  double temperature = 0.07;
  bool normalize = true;

  static CriticParams identity(Eigen::Index dim, double temperature = 0.07, bool normalize = true);
};

// Which denominator the estimator uses. cross_pair sums exp(f(p_i, g_j)) over
// every j in the batch; paired_only sums exp(f(p_k, g_k)) over paired
// indices, as the estimator is sometimes printed.
enum class MiDenominator { cross_pair, paired_only };

struct AlignmentConfig {
  double lambda_reg = 0.1;
  MiDenominator denominator = MiDenominator::cross_pair;
};

struct ClsAggregator {
  RowVector cls;  // 1 x D
  AttentionParams attention;
};

struct AlignmentLosses {
  double mie = 0.0;
  double reg = 0.0;
  double distri = 0.0;
  double sample = 0.0;
  double total = 0.0;
};

struct ClsOutput {
  RowVector global;
  PrototypeSet contextualized;
};

// Importance-weighted mean of the tokens; uniform weights when the set has
// no importance vector.
RowVector pool_prototypes(const PrototypeSet& protos);

// B x B score matrix s_ij = f_MI(p_i, g_j).
Matrix critic_scores(const Matrix& p_batch, const Matrix& g_batch, const CriticParams& critic);

double mi_estimator_loss(const Matrix& p_batch, const Matrix& g_batch, const CriticParams& critic,
                         MiDenominator denominator = MiDenominator::cross_pair);

double diversity_regularizer(const Matrix& g_batch);

double distribution_loss(const Matrix& p_batch, const Matrix& g_batch, const CriticParams& critic,
                         const AlignmentConfig& cfg);

double sample_alignment_loss(const Matrix& p_batch, const Matrix& g_batch);

AlignmentLosses alignment_loss(const Matrix& p_batch, const Matrix& g_batch, const CriticParams& critic,
                               const AlignmentConfig& cfg);

ClsOutput aggregate_with_cls(const PrototypeSet& protos, const ClsAggregator& agg);

// Mean over the batch of cos(p_i, g_i).
double paired_cosine(const Matrix& p_batch, const Matrix& g_batch);

namespace ops {

struct CriticVars {
  ad::Var proj_p, bias_p, proj_g, bias_g;
};

CriticVars constant_critic(ad::Tape& tape, const CriticParams& critic);

ad::Var pool(const ad::Var& tokens, const ad::Var& weights);
ad::Var project(const ad::Var& x, const ad::Var& proj, const ad::Var& bias, bool normalize);
ad::Var critic_scores(const ad::Var& p_batch, const ad::Var& g_batch, const CriticVars& critic, double temperature,
                      bool normalize);
ad::Var mi_loss_from_scores(const ad::Var& scores, MiDenominator denominator);
ad::Var diversity(const ad::Var& g_batch);
ad::Var sample_alignment(const ad::Var& p_batch, const ad::Var& g_batch);

struct AlignmentTerms {
  ad::Var mie, reg, sample, total;
};

AlignmentTerms alignment(const ad::Var& p_batch, const ad::Var& g_batch, const CriticVars& critic,
                         double temperature, bool normalize, const AlignmentConfig& cfg);

// Returns (global 1 x D, contextualised N x D).
std::pair<ad::Var, ad::Var> aggregate_with_cls(const ad::Var& tokens, const ad::Var& cls, const AttentionVars& w);

}  // namespace ops
}  // namespace protofuse
