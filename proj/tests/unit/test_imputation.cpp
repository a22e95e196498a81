#include <doctest.h>

#include "oracles.hpp"
#include "protofuse/errors.hpp"
#include "protofuse/imputation.hpp"

using namespace protofuse;

namespace {

Translator random_translator(Eigen::Index d, Eigen::Index slots, std::mt19937_64& rng) {
  Translator t;
  t.w1 = oracle::random_matrix(d, d, rng, 0.5);
  t.b1 = oracle::random_matrix(1, d, rng, 0.2);
  t.w2 = oracle::random_matrix(d, d, rng, 0.5);
  t.b2 = oracle::random_matrix(1, d, rng, 0.2);
  t.row_bias = slots > 0 ? oracle::random_matrix(slots, d, rng, 0.2) : Matrix();
  return t;
}

oracle::Mat apply(const Matrix& x, const Translator& t) {
  return oracle::translate(oracle::from_eigen(x), oracle::from_eigen(t.w1), oracle::from_eigen(t.b1),
                           oracle::from_eigen(t.w2), oracle::from_eigen(t.b2),
                           t.row_bias.size() ? oracle::from_eigen(t.row_bias) : oracle::Mat{});
}

Translator scaling(Eigen::Index d, double s) {
  // Residual off, tanh replaced by identity: x -> x W1 W2 with W1 = s I.
  Translator t = Translator::identity(d);
  t.residual = false;
  t.activation = Activation::identity;
  t.w1 = s * Matrix::Identity(d, d);
  t.w2 = Matrix::Identity(d, d);
  return t;
}

Discriminator random_discriminator(Eigen::Index d, Eigen::Index h, std::mt19937_64& rng) {
  return {oracle::random_matrix(d, h, rng, 0.5), oracle::random_matrix(1, h, rng, 0.2),
          oracle::random_matrix(h, 1, rng, 0.8), 0.1};
}

double oracle_adv(const Matrix& real, const Matrix& fake, const Discriminator& d) {
  const auto u = oracle::from_eigen(d.u), c = oracle::from_eigen(d.c), v = oracle::from_eigen(d.v);
  double a = 0.0, b = 0.0;
  for (const auto& r : oracle::from_eigen(real)) a += std::log(oracle::discriminate(r, u, c, v, d.d));
  for (const auto& f : oracle::from_eigen(fake)) b += std::log(1.0 - oracle::discriminate(f, u, c, v, d.d));
  return a / static_cast<double>(real.rows()) + b / static_cast<double>(fake.rows());
}

}  // namespace

TEST_SUITE("imputation") {
  TEST_CASE("identity translator and residual path") {
    std::mt19937_64 rng(1);
    const Matrix x = oracle::random_matrix(6, 4, rng);
    const TranslatorPair id{Translator::identity(4, 6), Translator::identity(4, 6)};
    CHECK(translate(x, TranslationDirection::histology_to_genomic, id) == x);
    CHECK(translate(x, TranslationDirection::genomic_to_histology, id) == x);
  }

  TEST_CASE("translator matches the scalar affine oracle") {
    std::mt19937_64 rng(2);
    const Translator a = random_translator(4, 6, rng), b = random_translator(4, 0, rng);
    const Matrix x = oracle::random_matrix(6, 4, rng);
    CHECK(oracle::max_abs_diff(translate(x, TranslationDirection::histology_to_genomic, {a, b}), apply(x, a)) <
          1e-12);
    CHECK(oracle::max_abs_diff(translate(x, TranslationDirection::genomic_to_histology, {a, b}), apply(x, b)) <
          1e-12);
  }

  TEST_CASE("cycle loss closed forms") {
    std::mt19937_64 rng(3);
    const Matrix p = oracle::random_matrix(6, 3, rng), g = oracle::random_matrix(6, 3, rng);
    const TranslatorPair inverse{scaling(3, 2.0), scaling(3, 0.5)};
    CHECK(cycle_loss(p, g, inverse).total() < 1e-15);

    // F_PG maps everything to (1, 1); F_GP is the identity.
    Translator constant = Translator::identity(2);
    constant.residual = false;
    constant.b2 = Matrix::Ones(1, 2);
    const TranslatorPair shift{constant, Translator::identity(2)};
    const CycleLosses l = cycle_loss(Matrix::Zero(1, 2), Matrix::Ones(1, 2), shift);
    CHECK(std::abs(l.histology - 1.0) < 1e-12);
    CHECK(std::abs(l.genomic) < 1e-12);
  }

  TEST_CASE("cycle loss matches the scalar oracle") {
    std::mt19937_64 rng(4);
    const Translator a = random_translator(4, 6, rng), b = random_translator(4, 6, rng);
    const Matrix p = oracle::random_matrix(6, 4, rng), g = oracle::random_matrix(6, 4, rng);
    const CycleLosses l = cycle_loss(p, g, {a, b});
    const auto back_p = oracle::translate(apply(p, a), oracle::from_eigen(b.w1), oracle::from_eigen(b.b1),
                                          oracle::from_eigen(b.w2), oracle::from_eigen(b.b2),
                                          oracle::from_eigen(b.row_bias));
    const auto back_g = oracle::translate(apply(g, b), oracle::from_eigen(a.w1), oracle::from_eigen(a.b1),
                                          oracle::from_eigen(a.w2), oracle::from_eigen(a.b2),
                                          oracle::from_eigen(a.row_bias));
    CHECK(std::abs(l.histology - oracle::mean_abs_diff(back_p, oracle::from_eigen(p))) < 1e-12);
    CHECK(std::abs(l.genomic - oracle::mean_abs_diff(back_g, oracle::from_eigen(g))) < 1e-12);
  }

  TEST_CASE("adversarial loss closed forms") {
    const Matrix p = Matrix::Constant(6, 3, 0.4), g = Matrix::Constant(6, 3, -0.1);
    const TranslatorPair id{Translator::identity(3), Translator::identity(3)};
    const DiscriminatorPair half{Discriminator::constant_half(3, 5), Discriminator::constant_half(3, 5)};
    const AdversarialLosses l = adversarial_losses(p, g, id, half);
    CHECK(std::abs(l.genomic - 2.0 * std::log(0.5)) < 1e-6);
    CHECK(std::abs(l.histology - 2.0 * std::log(0.5)) < 1e-6);

    // Real genomics at +5, translated histology at -5, a steep discriminator.
    Discriminator sharp{Matrix::Ones(1, 1), Matrix::Zero(1, 1), Matrix::Constant(1, 1, 100.0), 0.0};
    const AdversarialLosses perfect =
        adversarial_losses(Matrix::Constant(2, 1, -5.0), Matrix::Constant(2, 1, 5.0), {Translator::identity(1),
                           Translator::identity(1)}, {sharp, sharp});
    CHECK(perfect.genomic < 0.0);
    CHECK(perfect.genomic > -1e-6);
  }

  TEST_CASE("adversarial loss matches the clamped scalar oracle") {
    std::mt19937_64 rng(5);
    const Translator a = random_translator(4, 6, rng), b = random_translator(4, 6, rng);
    const Discriminator dg = random_discriminator(4, 5, rng), dp = random_discriminator(4, 5, rng);
    const Matrix p = oracle::random_matrix(6, 4, rng), g = oracle::random_matrix(6, 4, rng);
    const AdversarialLosses l = adversarial_losses(p, g, {a, b}, {dg, dp});
    CHECK(std::abs(l.genomic - oracle_adv(g, translate(p, TranslationDirection::histology_to_genomic, {a, b}), dg)) <
          1e-12);
    CHECK(std::abs(l.histology - oracle_adv(p, translate(g, TranslationDirection::genomic_to_histology, {a, b}), dp)) <
          1e-12);
    CHECK(std::abs(discriminate(dg, g.row(0)) -
                   oracle::discriminate({g(0, 0), g(0, 1), g(0, 2), g(0, 3)}, oracle::from_eigen(dg.u),
                                        oracle::from_eigen(dg.c), oracle::from_eigen(dg.v), dg.d)) < 1e-15);
  }

  TEST_CASE("SGI objective composition") {
    std::mt19937_64 rng(6);
    const TranslatorPair t{random_translator(4, 6, rng), random_translator(4, 6, rng)};
    const DiscriminatorPair d{random_discriminator(4, 3, rng), random_discriminator(4, 3, rng)};
    const Matrix p = oracle::random_matrix(6, 4, rng), g = oracle::random_matrix(6, 4, rng);
    const AdversarialLosses adv = adversarial_losses(p, g, t, d);
    CHECK(sgi_objective(p, g, t, d, {0.0, 10}) == doctest::Approx(adv.genomic + adv.histology).epsilon(1e-14));
    const double expected = adv.genomic + adv.histology + 10.0 * cycle_loss(p, g, t).total();
    CHECK(std::abs(sgi_objective(p, g, t, d, {10.0, 10}) - expected) < 1e-12);

    const TranslatorPair inverse{scaling(4, 2.0), scaling(4, 0.5)};
    const AdversarialLosses inv_adv = adversarial_losses(p, g, inverse, d);
    CHECK(std::abs(sgi_objective(p, g, inverse, d, {10.0, 10}) - (inv_adv.genomic + inv_adv.histology)) < 1e-12);
  }

  TEST_CASE("discriminator and generator push the fake score in opposite directions") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 5; ++trial) {
      const Discriminator d = random_discriminator(3, 4, rng);
      const Matrix real = oracle::random_matrix(4, 3, rng);
      Matrix fake = oracle::random_matrix(4, 3, rng);
      auto eval = [&](const Matrix& f, int which) {
        ad::Tape tape;
        const auto dv = ops::constant_discriminator(tape, d);
        const ad::Var fv = tape.constant(f);
        if (which == 0) return ad::mean(ops::discriminate(fv, dv)).scalar();
        if (which == 1) return ops::adversarial_term(tape.constant(real), fv, dv).scalar();
        return ops::generator_term(fv, dv).scalar();
      };
      // Direction that raises the mean fake score, by central differences.
      const double h = 1e-6;
      Matrix dir(fake.rows(), fake.cols());
      for (Eigen::Index k = 0; k < fake.size(); ++k) {
        Matrix up = fake, down = fake;
        up.data()[k] += h;
        down.data()[k] -= h;
        dir.data()[k] = (eval(up, 0) - eval(down, 0)) / (2 * h);
      }
      auto directional = [&](int which) {
        return (eval(fake + h * dir, which) - eval(fake - h * dir, which)) / (2 * h);
      };
      // Ascending the discriminator objective lowers D(fake); descending the
      // generator objective raises it.
      CHECK(directional(1) < 0.0);
      CHECK(directional(2) < 0.0);
    }
  }

  TEST_CASE("interpolation") {
    const Matrix real = (Matrix(1, 2) << 2.0, 4.0).finished();
    const Matrix gen = Matrix::Zero(1, 2);
    CHECK(interpolate_genomics(real, gen, 1.0) == real);
    CHECK(interpolate_genomics(real, gen, 0.0) == gen);
    CHECK(interpolate_genomics(real, gen, 0.5) == (Matrix(1, 2) << 1.0, 2.0).finished());
    CHECK(interpolate_genomics(std::nullopt, gen, 0.0) == gen);
    CHECK_THROWS_AS(interpolate_genomics(real, gen, 1.5), RangeError);
    CHECK_THROWS_AS(interpolate_genomics(real, gen, -0.1), RangeError);
    CHECK_THROWS_AS(interpolate_genomics(std::nullopt, gen, 0.5), PreconditionError);

    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
      const Matrix a = oracle::random_matrix(6, 4, rng), b = oracle::random_matrix(6, 4, rng);
      const Matrix out = interpolate_genomics(a, b, unit(rng));
      CHECK((out.array() <= a.cwiseMax(b).array() + 1e-15).all());
      CHECK((out.array() >= a.cwiseMin(b).array() - 1e-15).all());
    }
  }

  TEST_CASE("interpolation schedule") {
    const SgiConfig cfg{10.0, 200};
    CHECK(interpolation_schedule(0, cfg) == 1.0);
    CHECK(interpolation_schedule(200, cfg) == 0.0);
    CHECK(interpolation_schedule(100, cfg) == 0.5);
    CHECK(interpolation_schedule(500, cfg) == 0.0);
    double prev = 1.0;
    for (long s = 0; s <= 260; ++s) {
      const double m = interpolation_schedule(s, cfg);
      CHECK(m <= prev);
      prev = m;
    }
  }

  TEST_CASE("impute_missing replaces only what is missing") {
    std::mt19937_64 rng(9);
    const TranslatorPair t{random_translator(4, 6, rng), random_translator(4, 6, rng)};
    const Matrix p = oracle::random_matrix(6, 4, rng), g = oracle::random_matrix(6, 4, rng);
    const Matrix generated = translate(p, TranslationDirection::histology_to_genomic, t);

    CHECK(impute_missing(p, g, {}, t) == g);
    CHECK(impute_missing(p, std::nullopt, {}, t) == generated);

    const Matrix one = impute_missing(p, g, {false, false, true, false, false, false}, t);
    int replaced = 0, kept = 0;
    for (int k = 0; k < 6; ++k) {
      if (one.row(k) == generated.row(k)) ++replaced;
      if (one.row(k) == g.row(k)) ++kept;
    }
    CHECK(replaced == 1);
    CHECK(kept == 5);
    CHECK(one.row(2) == generated.row(2));
  }
}
