#include "protofuse/imputation.hpp"

#include <algorithm>

#include "protofuse/errors.hpp"

namespace protofuse {

Translator Translator::identity(Eigen::Index dim, Eigen::Index slots) {
  Translator t;
  t.w1 = Matrix::Zero(dim, dim);
  t.b1 = Matrix::Zero(1, dim);
  t.w2 = Matrix::Zero(dim, dim);
  t.b2 = Matrix::Zero(1, dim);
  if (slots > 0) t.row_bias = Matrix::Zero(slots, dim);
  return t;
}

Discriminator Discriminator::constant_half(Eigen::Index dim, Eigen::Index hidden) {
  return {Matrix::Zero(dim, hidden), Matrix::Zero(1, hidden), Matrix::Zero(hidden, 1), 0.0};
}

namespace ops {

TranslatorVars constant_translator(ad::Tape& tape, const Translator& t) {
  TranslatorVars v;
  v.w1 = tape.constant(t.w1);
  v.b1 = tape.constant(t.b1);
  v.w2 = tape.constant(t.w2);
  v.b2 = tape.constant(t.b2);
  if (t.row_bias.size() > 0) v.row_bias = tape.constant(t.row_bias);
  v.activation = t.activation;
  v.residual = t.residual;
  return v;
}

DiscriminatorVars constant_discriminator(ad::Tape& tape, const Discriminator& d) {
  return {tape.constant(d.u), tape.constant(d.c), tape.constant(d.v), tape.constant(Matrix::Constant(1, 1, d.d))};
}

ad::Var translate(const ad::Var& x, const TranslatorVars& t) {
  ad::Var hidden = ad::add_row(ad::matmul(x, t.w1), t.b1);
  if (t.activation == Activation::tanh) hidden = ad::tanh(hidden);
  ad::Var out = ad::add_row(ad::matmul(hidden, t.w2), t.b2);
  if (t.row_bias.valid()) {
    const Eigen::Index slots = t.row_bias.rows();
    if (x.rows() % slots != 0) throw PreconditionError("token rows are not a multiple of the translator slot count");
    std::vector<ad::Var> tiles(static_cast<std::size_t>(x.rows() / slots), t.row_bias);
    out = ad::add(out, tiles.size() == 1 ? t.row_bias : ad::concat_rows(tiles));
  }
  return t.residual ? ad::add(x, out) : out;
}

ad::Var discriminate(const ad::Var& x, const DiscriminatorVars& d) {
  const ad::Var hidden = ad::tanh(ad::add_row(ad::matmul(x, d.u), d.c));
  const ad::Var prob = ad::sigmoid(ad::add_row(ad::matmul(hidden, d.v), d.d));
  return ad::clamp(prob, kProbabilityClamp, 1.0 - kProbabilityClamp);
}

ad::Var cycle_term(const ad::Var& x, const TranslatorVars& forward, const TranslatorVars& backward) {
  return ad::mean(ad::abs(ad::sub(translate(translate(x, forward), backward), x)));
}

ad::Var adversarial_term(const ad::Var& real, const ad::Var& fake, const DiscriminatorVars& d) {
  const ad::Var real_term = ad::mean(ad::log(discriminate(real, d)));
  const ad::Var fake_term = ad::mean(ad::log(ad::affine(discriminate(fake, d), -1.0, 1.0)));
  return ad::add(real_term, fake_term);
}

ad::Var generator_term(const ad::Var& fake, const DiscriminatorVars& d) {
  return ad::scale(ad::mean(ad::log(discriminate(fake, d))), -1.0);
}

}  // namespace ops

namespace {

const Translator& pick(TranslationDirection direction, const TranslatorPair& t) {
  return direction == TranslationDirection::histology_to_genomic ? t.p_to_g : t.g_to_p;
}

}  // namespace

Matrix translate(const Matrix& x, TranslationDirection direction, const TranslatorPair& t) {
  ad::Tape tape;
  return ops::translate(tape.constant(x), ops::constant_translator(tape, pick(direction, t))).value();
}

CycleLosses cycle_loss(const Matrix& p_tokens, const Matrix& g_tokens, const TranslatorPair& t) {
  if (p_tokens.size() == 0 || g_tokens.size() == 0) throw PreconditionError("cycle loss needs both token sets");
  ad::Tape tape;
  const auto pg = ops::constant_translator(tape, t.p_to_g);
  const auto gp = ops::constant_translator(tape, t.g_to_p);
  CycleLosses out;
  out.histology = ops::cycle_term(tape.constant(p_tokens), pg, gp).scalar();
  out.genomic = ops::cycle_term(tape.constant(g_tokens), gp, pg).scalar();
  return out;
}

AdversarialLosses adversarial_losses(const Matrix& p_tokens, const Matrix& g_tokens, const TranslatorPair& t,
                                     const DiscriminatorPair& d) {
  if (p_tokens.size() == 0 || g_tokens.size() == 0) throw PreconditionError("adversarial loss needs both token sets");
  ad::Tape tape;
  const ad::Var p = tape.constant(p_tokens);
  const ad::Var g = tape.constant(g_tokens);
  const auto pg = ops::constant_translator(tape, t.p_to_g);
  const auto gp = ops::constant_translator(tape, t.g_to_p);
  AdversarialLosses out;
  out.genomic = ops::adversarial_term(g, ops::translate(p, pg), ops::constant_discriminator(tape, d.genomic)).scalar();
  out.histology =
      ops::adversarial_term(p, ops::translate(g, gp), ops::constant_discriminator(tape, d.histology)).scalar();
  return out;
}

double discriminate(const Discriminator& d, const RowVector& x) {
  ad::Tape tape;
  return ops::discriminate(tape.constant(Matrix(x)), ops::constant_discriminator(tape, d)).scalar();
}

double sgi_objective(const Matrix& p_tokens, const Matrix& g_tokens, const TranslatorPair& t,
                     const DiscriminatorPair& d, const SgiConfig& cfg) {
  if (cfg.lambda_cycle < 0.0) throw ConfigError("lambda_cycle must be non-negative");
  const auto adv = adversarial_losses(p_tokens, g_tokens, t, d);
  const auto cyc = cycle_loss(p_tokens, g_tokens, t);
  return adv.genomic + adv.histology + cfg.lambda_cycle * cyc.total();
}

Matrix interpolate_genomics(const std::optional<Matrix>& real_g, const Matrix& generated_g, double m) {
  if (!(m >= 0.0 && m <= 1.0)) throw RangeError("interpolation weight must lie in [0, 1]");
  if (!real_g) {
    if (m != 0.0) throw PreconditionError("interpolation without real genomics requires m = 0");
    return generated_g;
  }
  if (real_g->rows() != generated_g.rows() || real_g->cols() != generated_g.cols()) {
    throw PreconditionError("real and generated genomic tokens differ in shape");
  }
  if (m == 1.0) return *real_g;
  if (m == 0.0) return generated_g;
  return m * *real_g + (1.0 - m) * generated_g;
}

double interpolation_schedule(long step, const SgiConfig& cfg) {
  if (step < 0) throw PreconditionError("schedule step must be non-negative");
  if (cfg.schedule_total_steps <= 0) throw ConfigError("schedule_total_steps must be positive");
  return std::max(0.0, 1.0 - static_cast<double>(step) / static_cast<double>(cfg.schedule_total_steps));
}

Matrix impute_missing(const Matrix& p_tokens, const std::optional<Matrix>& real_g,
                      const std::array<bool, 6>& missing_groups, const TranslatorPair& t) {
  const Matrix generated = translate(p_tokens, TranslationDirection::histology_to_genomic, t);
  if (!real_g) return generated;
  Matrix out = *real_g;
  for (Eigen::Index k = 0; k < out.rows() && k < 6; ++k) {
    if (missing_groups[static_cast<std::size_t>(k)]) out.row(k) = generated.row(k);
  }
  return out;
}

}  // namespace protofuse
