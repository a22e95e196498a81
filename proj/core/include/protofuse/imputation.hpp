#pragma once

// Semantic genomics imputation: a pair of feature translators between the
// histology and genomic prototype spaces trained with cycle-consistency and
// adversarial objectives, and the progressive real/generated interpolation.

#include <array>
#include <optional>

#include "protofuse/autodiff.hpp"

namespace protofuse {

enum class Activation { tanh, identity };

// out = [x if residual] + act(x W1 + b1) W2 + b2 + row_bias[row mod N].
// Applied row-wise to prototype tokens; row_bias gives each prototype slot
// its own offset and may be empty.
struct Translator {
  Matrix w1, b1, w2, b2;
  Matrix row_bias;
  Activation activation = Activation::tanh;
  bool residual = true;

  static Translator identity(Eigen::Index dim, Eigen::Index slots = 0);
};

struct TranslatorPair {
  Translator p_to_g;
  Translator g_to_p;
};

// D(x) = sigmoid(tanh(x U + c) v + d), one probability per row.
struct Discriminator {
  Matrix u, c, v;
  double d = 0.0;

  // Outputs exactly 0.5 everywhere.
  static Discriminator constant_half(Eigen::Index dim, Eigen::Index hidden);
};

struct DiscriminatorPair {
  Discriminator genomic;    // D_G
  Discriminator histology;  // D_P
};

struct SgiConfig {
  double lambda_cycle = 10.0;
  long schedule_total_steps = 1000;
};

enum class TranslationDirection { histology_to_genomic, genomic_to_histology };

inline constexpr double kProbabilityClamp = 1e-7;

struct CycleLosses {
  double histology = 0.0;  // |F_GP(F_PG(p)) - p|
  double genomic = 0.0;    // |F_PG(F_GP(g)) - g|
  double total() const { return histology + genomic; }
};

struct AdversarialLosses {
  double genomic = 0.0;    // E log D_G(g) + E log(1 - D_G(F_PG(p)))
  double histology = 0.0;  // E log D_P(p) + E log(1 - D_P(F_GP(g)))
};

Matrix translate(const Matrix& x, TranslationDirection direction, const TranslatorPair& t);

// Mean absolute error per direction, averaged over rows and features.
CycleLosses cycle_loss(const Matrix& p_tokens, const Matrix& g_tokens, const TranslatorPair& t);

AdversarialLosses adversarial_losses(const Matrix& p_tokens, const Matrix& g_tokens, const TranslatorPair& t,
                                     const DiscriminatorPair& d);

double discriminate(const Discriminator& d, const RowVector& x);

// adv_G + adv_P + lambda (cycle_G + cycle_P).
double sgi_objective(const Matrix& p_tokens, const Matrix& g_tokens, const TranslatorPair& t,
                     const DiscriminatorPair& d, const SgiConfig& cfg);

// m * real + (1 - m) * generated. Without real tokens m must be 0.
Matrix interpolate_genomics(const std::optional<Matrix>& real_g, const Matrix& generated_g, double m);

// Linear decay from 1 at step 0 to 0 at schedule_total_steps.
double interpolation_schedule(long step, const SgiConfig& cfg);

// Generated genomic tokens for a patient. With no real tokens every slot is
// generated; otherwise only the slots flagged in `missing_groups` are.
Matrix impute_missing(const Matrix& p_tokens, const std::optional<Matrix>& real_g,
                      const std::array<bool, 6>& missing_groups, const TranslatorPair& t);

namespace ops {

struct TranslatorVars {
  ad::Var w1, b1, w2, b2, row_bias;  // row_bias invalid when absent
  Activation activation = Activation::tanh;
  bool residual = true;
};

struct DiscriminatorVars {
  ad::Var u, c, v, d;
};

TranslatorVars constant_translator(ad::Tape& tape, const Translator& t);
DiscriminatorVars constant_discriminator(ad::Tape& tape, const Discriminator& d);

ad::Var translate(const ad::Var& x, const TranslatorVars& t);
// Column of probabilities, clamped to [1e-7, 1 - 1e-7].
ad::Var discriminate(const ad::Var& x, const DiscriminatorVars& d);

ad::Var cycle_term(const ad::Var& x, const TranslatorVars& forward, const TranslatorVars& backward);

// E log D(real) + E log(1 - D(fake)).
ad::Var adversarial_term(const ad::Var& real, const ad::Var& fake, const DiscriminatorVars& d);
// Non-saturating generator objective: -E log D(fake).
ad::Var generator_term(const ad::Var& fake, const DiscriminatorVars& d);

}  // namespace ops
}  // namespace protofuse
