#include "protofuse/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "protofuse/alignment.hpp"
#include "protofuse/imputation.hpp"
#include "protofuse/model.hpp"
#include "protofuse/prototyping.hpp"
#include "protofuse/tasks.hpp"

namespace protofuse {

namespace {

double relative_error(const Matrix& analytic, const Matrix& numeric) {
  const double diff = (analytic - numeric).norm();
  const double scale = std::max(analytic.norm(), numeric.norm());
  return scale < 1e-8 ? diff : diff / scale;
}

Matrix randn(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> normal(0.0, sd);
  Matrix m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = normal(rng);
  return m;
}

// A random linear read-out turns a matrix-valued op into a scalar.
ad::Var readout(const ad::Var& x, const Matrix& weights) {
  return ad::sum(ad::mul(x, x.tape()->constant(weights)));
}

ops::TranslatorVars translator_vars(std::span<const ad::Var> in, std::size_t at) {
  ops::TranslatorVars t;
  t.w1 = in[at];
  t.b1 = in[at + 1];
  t.w2 = in[at + 2];
  t.b2 = in[at + 3];
  t.row_bias = in[at + 4];
  return t;
}

std::vector<Matrix> translator_inputs(Eigen::Index d, std::mt19937_64& rng) {
  return {randn(d, d, rng, 0.4), randn(1, d, rng, 0.2), randn(d, d, rng, 0.4), randn(1, d, rng, 0.2),
          randn(6, d, rng, 0.2)};
}

GradCheckResult check_model(std::uint64_t seed, double tolerance) {
  // A tiny end-to-end model: task loss of two patients plus the alignment loss.
  Cohort cohort = generate_synthetic(4, 8, 12, seed);
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.task = Task::survival;
  ModelState state = init_model(cohort, cfg);
  std::mt19937_64 rng(seed + 99);
  for (auto& p : state.params) p.value += randn(p.value.rows(), p.value.cols(), rng, 0.05);

  std::vector<GroupSummary> summaries;
  for (const auto& p : cohort.patients) summaries.push_back(summarize_groups(*p.genomic));
  auto loss = [&](ad::Tape& tape, const ParamVars& vars) {
    std::vector<ad::Var> losses, pp, gp;
    for (std::size_t i = 0; i < cohort.size(); ++i) {
      const auto& p = cohort.patients[i];
      GenomicView view{i == 3 ? GenomicView::Kind::interpolated : GenomicView::Kind::real, &summaries[i],
                       FillStrategy::sgi, 0.3};
      const ForwardResult r = forward(tape, state, vars, p.slides.front(), view);
      losses.push_back(ops::survival_loss(r.outputs, survival_bin(p.survival_time, state.cut_points),
                                          p.event_indicator));
      pp.push_back(r.hist_pooled);
      gp.push_back(r.gen_pooled);
    }
    const ops::CriticVars critic{vars[state.index_of("critic.proj_p")], vars[state.index_of("critic.bias_p")],
                                 vars[state.index_of("critic.proj_g")], vars[state.index_of("critic.bias_g")]};
    const auto terms = ops::alignment(ad::concat_rows(pp), ad::concat_rows(gp), critic, cfg.temperature, true,
                                      AlignmentConfig{});
    return ad::add(ad::sum(ad::concat_rows(losses)), terms.total);
  };

  ad::Tape tape;
  const ParamVars vars = bind_parameters(tape, state, {true, true, true, true, true});
  tape.backward(loss(tape, vars));

  GradCheckResult res{"end_to_end_model", 0.0, 0, true};
  const double h = 1e-5;
  for (auto& p : state.params) {
    Matrix numeric(p.value.rows(), p.value.cols());
    for (Eigen::Index k = 0; k < p.value.size(); ++k) {
      const double orig = p.value.data()[k];
      p.value.data()[k] = orig + h;
      ad::Tape t1;
      const double up = loss(t1, bind_constants(t1, state)).scalar();
      p.value.data()[k] = orig - h;
      ad::Tape t2;
      const double down = loss(t2, bind_constants(t2, state)).scalar();
      p.value.data()[k] = orig;
      numeric.data()[k] = (up - down) / (2.0 * h);
    }
    res.max_relative_error = std::max(res.max_relative_error, relative_error(p.grad, numeric));
    res.n_checked += p.value.size();
  }
  res.passed = res.max_relative_error <= tolerance;
  return res;
}

}  // namespace

GradCheckResult check_gradient(const std::string& name, const ScalarFn& f, const std::vector<Matrix>& inputs,
                               double tolerance, double step) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  for (const auto& m : inputs) vars.push_back(tape.variable(m));
  const ad::Var out = f(tape, vars);
  tape.backward(out);

  GradCheckResult res{name, 0.0, 0, true};
  std::vector<Matrix> probe = inputs;
  auto evaluate = [&]() {
    ad::Tape t;
    std::vector<ad::Var> c;
    for (const auto& m : probe) c.push_back(t.constant(m));
    return f(t, c).scalar();
  };
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Matrix numeric(inputs[i].rows(), inputs[i].cols());
    for (Eigen::Index k = 0; k < inputs[i].size(); ++k) {
      const double orig = probe[i].data()[k];
      probe[i].data()[k] = orig + step;
      const double up = evaluate();
      probe[i].data()[k] = orig - step;
      const double down = evaluate();
      probe[i].data()[k] = orig;
      numeric.data()[k] = (up - down) / (2.0 * step);
    }
    res.max_relative_error = std::max(res.max_relative_error, relative_error(tape.grad(vars[i]), numeric));
    res.n_checked += inputs[i].size();
  }
  res.passed = res.max_relative_error <= tolerance;
  return res;
}

std::vector<GradCheckResult> run_gradient_suite(std::uint64_t seed, double tolerance) {
  std::mt19937_64 rng(seed);
  constexpr Eigen::Index d = 8, b = 4, n_patches = 5;
  std::vector<GradCheckResult> out;
  const double inv = 1.0 / std::sqrt(static_cast<double>(d));

  {
    const Matrix w = randn(6, d, rng);
    out.push_back(check_gradient(
        "attention_update",
        [&](ad::Tape&, std::span<const ad::Var> in) {
          return readout(ops::refine_prototypes(in[0], in[1], {in[2], in[3], in[4]}, 2), w);
        },
        {randn(6, d, rng), randn(n_patches, d, rng), randn(d, d, rng, inv), randn(d, d, rng, inv),
         randn(d, d, rng, inv)},
        tolerance));
  }
  {
    const Matrix w = randn(6, d, rng);
    out.push_back(check_gradient(
        "importance_weighting",
        [&](ad::Tape&, std::span<const ad::Var> in) {
          return readout(ad::scale_rows(in[0], ops::importance(in[0], in[1], in[2])), w);
        },
        {randn(6, d, rng), randn(d, 1, rng, 0.5), randn(1, 1, rng)}, tolerance));
  }
  for (MiDenominator denom : {MiDenominator::cross_pair, MiDenominator::paired_only}) {
    out.push_back(check_gradient(
        denom == MiDenominator::cross_pair ? "mi_estimator" : "mi_estimator_paired_only",
        [&](ad::Tape&, std::span<const ad::Var> in) {
          const ops::CriticVars critic{in[2], in[3], in[4], in[5]};
          return ops::mi_loss_from_scores(ops::critic_scores(in[0], in[1], critic, 0.07, true), denom);
        },
        {randn(b, d, rng), randn(b, d, rng), randn(d, d, rng, inv), randn(1, d, rng, 0.1), randn(d, d, rng, inv),
         randn(1, d, rng, 0.1)},
        tolerance));
  }
  out.push_back(check_gradient(
      "diversity_regularizer", [](ad::Tape&, std::span<const ad::Var> in) { return ops::diversity(in[0]); },
      {randn(b, d, rng, 0.3)}, tolerance));
  out.push_back(check_gradient(
      "sample_alignment",
      [](ad::Tape&, std::span<const ad::Var> in) { return ops::sample_alignment(in[0], in[1]); },
      {randn(b, d, rng), randn(b, d, rng)}, tolerance));
  {
    std::vector<Matrix> inputs{randn(6, d, rng), randn(6, d, rng)};
    for (auto& m : translator_inputs(d, rng)) inputs.push_back(m);
    for (auto& m : translator_inputs(d, rng)) inputs.push_back(m);
    out.push_back(check_gradient(
        "cycle_loss",
        [](ad::Tape&, std::span<const ad::Var> in) {
          const auto pg = translator_vars(in, 2), gp = translator_vars(in, 7);
          return ad::add(ops::cycle_term(in[0], pg, gp), ops::cycle_term(in[1], gp, pg));
        },
        inputs, tolerance));
  }
  {
    std::vector<Matrix> inputs{randn(6, d, rng), randn(6, d, rng)};
    for (auto& m : translator_inputs(d, rng)) inputs.push_back(m);
    for (auto& m : translator_inputs(d, rng)) inputs.push_back(m);
    for (int k = 0; k < 2; ++k) {
      inputs.push_back(randn(d, 5, rng, inv));
      inputs.push_back(randn(1, 5, rng, 0.1));
      inputs.push_back(randn(5, 1, rng, 0.5));
      inputs.push_back(randn(1, 1, rng, 0.1));
    }
    auto disc = [](std::span<const ad::Var> in, std::size_t at) {
      return ops::DiscriminatorVars{in[at], in[at + 1], in[at + 2], in[at + 3]};
    };
    out.push_back(check_gradient(
        "adversarial_loss",
        [&](ad::Tape&, std::span<const ad::Var> in) {
          const auto pg = translator_vars(in, 2), gp = translator_vars(in, 7);
          return ad::add(ops::adversarial_term(in[1], ops::translate(in[0], pg), disc(in, 12)),
                         ops::adversarial_term(in[0], ops::translate(in[1], gp), disc(in, 16)));
        },
        inputs, tolerance));
    out.push_back(check_gradient(
        "adversarial_generator",
        [&](ad::Tape&, std::span<const ad::Var> in) {
          const auto pg = translator_vars(in, 2), gp = translator_vars(in, 7);
          return ad::add(ops::generator_term(ops::translate(in[0], pg), disc(in, 12)),
                         ops::generator_term(ops::translate(in[1], gp), disc(in, 16)));
        },
        inputs, tolerance));
  }
  out.push_back(check_gradient(
      "classification_loss",
      [](ad::Tape&, std::span<const ad::Var> in) {
        return ad::add(ops::classification_loss(in[0], 2), ops::classification_loss(in[1], 0));
      },
      {randn(1, 6, rng), randn(1, 3, rng)}, tolerance));
  out.push_back(check_gradient(
      "survival_nll",
      [](ad::Tape&, std::span<const ad::Var> in) {
        ad::Var total = ops::survival_loss(in[0], 0, true);
        total = ad::add(total, ops::survival_loss(in[0], 2, true));
        total = ad::add(total, ops::survival_loss(in[0], 1, false));
        total = ad::add(total, ops::survival_loss(in[0], 3, false));
        return total;
      },
      {randn(1, 4, rng)}, tolerance));
  out.push_back(check_model(seed, tolerance));
  return out;
}

}  // namespace protofuse
