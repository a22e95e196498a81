#include "protofuse/alignment.hpp"

#include "protofuse/errors.hpp"

namespace protofuse {

CriticParams CriticParams::identity(Eigen::Index dim, double temperature, bool normalize) {
  return {Matrix::Identity(dim, dim), Matrix::Zero(1, dim), Matrix::Identity(dim, dim), Matrix::Zero(1, dim),
          temperature, normalize};
}

namespace ops {

CriticVars constant_critic(ad::Tape& tape, const CriticParams& critic) {
  return {tape.constant(critic.proj_p), tape.constant(critic.bias_p), tape.constant(critic.proj_g),
          tape.constant(critic.bias_g)};
}

ad::Var pool(const ad::Var& tokens, const ad::Var& weights) {
  const ad::Var weighted = ad::col_sum(ad::scale_rows(tokens, weights));
  return ad::scale_by(weighted, ad::reciprocal(ad::sum(weights)));
}

ad::Var project(const ad::Var& x, const ad::Var& proj, const ad::Var& bias, bool normalize) {
  const ad::Var z = ad::add_row(ad::matmul(x, proj), bias);
  return normalize ? ad::normalize_rows(z) : z;
}

ad::Var critic_scores(const ad::Var& p_batch, const ad::Var& g_batch, const CriticVars& critic, double temperature,
                      bool normalize) {
  if (!(temperature > 0.0)) throw ConfigError("critic temperature must be positive");
  const ad::Var zp = project(p_batch, critic.proj_p, critic.bias_p, normalize);
  const ad::Var zg = project(g_batch, critic.proj_g, critic.bias_g, normalize);
  return ad::scale(ad::matmul(zp, ad::transpose(zg)), 1.0 / temperature);
}

ad::Var mi_loss_from_scores(const ad::Var& scores, MiDenominator denominator) {
  const Eigen::Index b = scores.rows();
  if (b < 1) throw PreconditionError("mutual-information estimator needs a non-empty batch");
  ad::Tape& tape = *scores.tape();
  const ad::Var eye = tape.constant(Matrix::Identity(b, b));
  if (denominator == MiDenominator::cross_pair) {
    return ad::scale(ad::sum(ad::mul(ad::log_softmax_rows(scores), eye)), -1.0);
  }
  // Diagonal scores as a single row, normalised against each other.
  const ad::Var diag = ad::transpose(ad::row_sum(ad::mul(scores, eye)));
  return ad::scale(ad::sum(ad::log_softmax_rows(diag)), -1.0);
}

ad::Var diversity(const ad::Var& g_batch) {
  return ad::mean(ad::exp(ad::scale(ad::pairwise_distance(g_batch), -1.0)));
}

ad::Var sample_alignment(const ad::Var& p_batch, const ad::Var& g_batch) {
  const ad::Var pn = ad::normalize_rows(p_batch);
  const ad::Var gn = ad::normalize_rows(g_batch);
  const ad::Var diff = ad::sub(ad::matmul(pn, ad::transpose(pn)), ad::matmul(gn, ad::transpose(gn)));
  return ad::mean(ad::mul(diff, diff));
}

AlignmentTerms alignment(const ad::Var& p_batch, const ad::Var& g_batch, const CriticVars& critic,
                         double temperature, bool normalize, const AlignmentConfig& cfg) {
  if (cfg.lambda_reg < 0.0) throw ConfigError("lambda_reg must be non-negative");
  AlignmentTerms t;
  t.mie = mi_loss_from_scores(critic_scores(p_batch, g_batch, critic, temperature, normalize), cfg.denominator);
  t.reg = diversity(g_batch);
  t.sample = sample_alignment(p_batch, g_batch);
  t.total = ad::add(ad::add(t.sample, t.mie), ad::scale(t.reg, cfg.lambda_reg));
  return t;
}

std::pair<ad::Var, ad::Var> aggregate_with_cls(const ad::Var& tokens, const ad::Var& cls, const AttentionVars& w) {
  const ad::Var parts[] = {cls, tokens};
  const ad::Var all = self_attention(ad::concat_rows(parts), w);
  return {ad::slice_rows(all, 0, 1), ad::slice_rows(all, 1, tokens.rows())};
}

}  // namespace ops

namespace {

void check_batches(const Matrix& p, const Matrix& g) {
  if (p.rows() < 1) throw PreconditionError("alignment losses need a non-empty batch");
  if (p.rows() != g.rows()) throw PreconditionError("histology and genomic batches differ in size");
}

}  // namespace

RowVector pool_prototypes(const PrototypeSet& protos) {
  if (protos.size() < 1) throw PreconditionError("cannot pool an empty prototype set");
  ad::Tape tape;
  const Vector w = protos.importance.value_or(Vector::Ones(protos.size()));
  return ops::pool(tape.constant(protos.tokens), tape.constant(w)).value().row(0);
}

Matrix critic_scores(const Matrix& p_batch, const Matrix& g_batch, const CriticParams& critic) {
  check_batches(p_batch, g_batch);
  ad::Tape tape;
  return ops::critic_scores(tape.constant(p_batch), tape.constant(g_batch), ops::constant_critic(tape, critic),
                            critic.temperature, critic.normalize)
      .value();
}

double mi_estimator_loss(const Matrix& p_batch, const Matrix& g_batch, const CriticParams& critic,
                         MiDenominator denominator) {
  check_batches(p_batch, g_batch);
  ad::Tape tape;
  return ops::mi_loss_from_scores(tape.constant(critic_scores(p_batch, g_batch, critic)), denominator).scalar();
}

double diversity_regularizer(const Matrix& g_batch) {
  if (g_batch.rows() < 1) throw PreconditionError("diversity regulariser needs a non-empty batch");
  ad::Tape tape;
  return ops::diversity(tape.constant(g_batch)).scalar();
}

double distribution_loss(const Matrix& p_batch, const Matrix& g_batch, const CriticParams& critic,
                         const AlignmentConfig& cfg) {
  if (cfg.lambda_reg < 0.0) throw ConfigError("lambda_reg must be non-negative");
  return mi_estimator_loss(p_batch, g_batch, critic, cfg.denominator) + cfg.lambda_reg * diversity_regularizer(g_batch);
}

double sample_alignment_loss(const Matrix& p_batch, const Matrix& g_batch) {
  check_batches(p_batch, g_batch);
  ad::Tape tape;
  return ops::sample_alignment(tape.constant(p_batch), tape.constant(g_batch)).scalar();
}

AlignmentLosses alignment_loss(const Matrix& p_batch, const Matrix& g_batch, const CriticParams& critic,
                               const AlignmentConfig& cfg) {
  check_batches(p_batch, g_batch);
  ad::Tape tape;
  const auto t = ops::alignment(tape.constant(p_batch), tape.constant(g_batch), ops::constant_critic(tape, critic),
                                critic.temperature, critic.normalize, cfg);
  AlignmentLosses out;
  out.mie = t.mie.scalar();
  out.reg = t.reg.scalar();
  out.sample = t.sample.scalar();
  out.distri = out.mie + cfg.lambda_reg * out.reg;
  out.total = t.total.scalar();
  return out;
}

ClsOutput aggregate_with_cls(const PrototypeSet& protos, const ClsAggregator& agg) {
  if (agg.cls.size() != protos.dim()) throw PreconditionError("[CLS] token dimension differs from prototypes");
  agg.attention.check(protos.dim());
  ad::Tape tape;
  const auto [global, ctx] = ops::aggregate_with_cls(tape.constant(protos.tokens), tape.constant(Matrix(agg.cls)),
                                                     ops::constant_attention(tape, agg.attention));
  ClsOutput out;
  out.global = global.value().row(0);
  out.contextualized = protos;
  out.contextualized.tokens = ctx.value();
  return out;
}

double paired_cosine(const Matrix& p_batch, const Matrix& g_batch) {
  check_batches(p_batch, g_batch);
  double total = 0.0;
  for (Eigen::Index i = 0; i < p_batch.rows(); ++i) {
    const double denom = p_batch.row(i).norm() * g_batch.row(i).norm();
    total += denom > 0.0 ? p_batch.row(i).dot(g_batch.row(i)) / denom : 0.0;
  }
  return total / static_cast<double>(p_batch.rows());
}

}  // namespace protofuse
