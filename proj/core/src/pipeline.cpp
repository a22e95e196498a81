#include "protofuse/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "protofuse/errors.hpp"

namespace protofuse {

// ---------------------------------------------------------------------------
// Metrics log

std::string TrainLog::header() {
  return "epoch\tphase\tstep\ttask_loss\tma_total\tmie\treg\tsample\tcycle\tadv_generator\tadv_discriminator\t"
         "disc_accuracy\tpaired_cosine\traw_paired_cosine\ttrain_missing_rate\tinterpolation_m\tval_loss\t"
         "alignment_frozen\tchecksum_alignment\tchecksum_imputation";
}

std::string TrainLog::row(const EpochLog& e) const {
  char buf[1024];
  char val[32] = "NA";
  if (e.val_loss) std::snprintf(val, sizeof val, "%.9g", *e.val_loss);
  std::snprintf(buf, sizeof buf,
                "%d\t%d\t%ld\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.6f\t%.9g\t%.9g\t%.4f\t%.6f\t%s\t%d\t"
                "%016llx\t%016llx",
                e.epoch, e.phase, e.step, e.task_loss, e.ma_total, e.mie, e.reg, e.sample, e.cycle, e.adv_generator,
                e.adv_discriminator, e.disc_accuracy, e.paired_cosine, e.raw_paired_cosine, e.train_missing_rate,
                e.interpolation_m, val, e.alignment_frozen ? 1 : 0,
                static_cast<unsigned long long>(e.checksum_alignment),
                static_cast<unsigned long long>(e.checksum_imputation));
  return buf;
}

void TrainLog::write_tsv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write " + path.string());
  out << header() << '\n';
  for (const auto& e : epochs) out << row(e) << '\n';
}

// ---------------------------------------------------------------------------
// Training

namespace {

constexpr std::size_t kGroups = 5;
using GroupMask = std::array<bool, kGroups>;

struct Sample {
  const PatientRecord* patient = nullptr;
  GroupSummary summary;
  bool has_genomics = false;
  bool complete = false;  // genomics with every group observed
  int label = 0;
  int bin = 0;
};

bool is_discriminator(const std::string& name) { return name.rfind("dg.", 0) == 0 || name.rfind("dp.", 0) == 0; }

void adam_step(Parameter& p, long& t, double lr, double grad_scale) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++t;
  const Matrix g = p.grad * grad_scale;
  p.adam_m = b1 * p.adam_m + (1.0 - b1) * g;
  p.adam_v = b2 * p.adam_v + (1.0 - b2) * g.cwiseProduct(g);
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
  p.value.array() -= lr * (p.adam_m.array() / c1) / ((p.adam_v.array() / c2).sqrt() + eps);
  p.zero_grad();
}

void guard(double value, const std::string& component, int epoch, long step) {
  if (!std::isfinite(value)) {
    throw DivergenceError("loss component '" + component + "' became non-finite at epoch " + std::to_string(epoch) +
                          ", step " + std::to_string(step));
  }
}

ad::Var sample_loss(const ModelState& state, const ad::Var& outputs, const Sample& s) {
  if (state.config.task == Task::survival) return ops::survival_loss(outputs, s.bin, s.patient->event_indicator);
  return ops::classification_loss(outputs, s.label);
}

std::vector<Sample> make_samples(const ModelState& state, const Cohort& cohort) {
  std::vector<Sample> out;
  out.reserve(cohort.size());
  for (const auto& p : cohort.patients) {
    if (p.slides.empty()) throw PreconditionError("patient " + p.patient_id + " has no slides");
    Sample s;
    s.patient = &p;
    s.has_genomics = p.has_genomics();
    if (s.has_genomics) {
      s.summary = summarize_groups(*p.genomic);
      s.complete = std::none_of(s.summary.empty.begin(), s.summary.empty.end(), [](bool e) { return e; });
    }
    s.label = state.config.task == Task::grading ? p.label_grade : p.label_diagnosis;
    if (state.config.task == Task::survival) s.bin = survival_bin(p.survival_time, state.cut_points);
    out.push_back(std::move(s));
  }
  return out;
}

double cosine(const RowVector& a, const RowVector& b) {
  const double na = a.norm(), nb = b.norm();
  return na > 0.0 && nb > 0.0 ? a.dot(b) / (na * nb) : 0.0;
}

struct AlignmentSnapshot {
  double shared = 0.0;
  double raw = 0.0;
};

// Paired cosine of pooled representations over the patients with genomics,
// measured on each patient's first slide.
AlignmentSnapshot measure_alignment(const ModelState& state, const std::vector<Sample>& samples) {
  if (state.config.modality == Modality::histology_only) return {};
  const CriticParams critic = state.critic();
  double shared = 0.0, raw = 0.0;
  int n = 0;
  for (const auto& s : samples) {
    if (!s.has_genomics) continue;
    ad::Tape tape;
    const ParamVars vars = bind_constants(tape, state);
    GenomicView view{GenomicView::Kind::real, &s.summary, FillStrategy::mean_fill, 1.0};
    const ForwardResult r = forward(tape, state, vars, s.patient->slides.front(), view);
    const RowVector p = r.hist_pooled.value().row(0);
    const RowVector g = r.gen_pooled.value().row(0);
    const RowVector zp = p * critic.proj_p + critic.bias_p;
    const RowVector zg = g * critic.proj_g + critic.bias_g;
    shared += cosine(zp, zg);
    raw += cosine(p, g);
    ++n;
  }
  if (n == 0) return {};
  return {shared / n, raw / n};
}

double validation_loss(const ModelState& state, const std::vector<Sample>& samples) {
  double total = 0.0;
  for (const auto& s : samples) {
    ad::Tape tape;
    const ParamVars vars = bind_constants(tape, state);
    GenomicView view{s.has_genomics ? GenomicView::Kind::real : GenomicView::Kind::missing, &s.summary,
                     state.config.fill_strategy, 1.0};
    double per_patient = 0.0;
    for (const auto& slide : s.patient->slides) {
      const ForwardResult r = forward(tape, state, vars, slide, view);
      per_patient += sample_loss(state, r.outputs, s).scalar();
    }
    total += per_patient / static_cast<double>(s.patient->slides.size());
  }
  return samples.empty() ? 0.0 : total / static_cast<double>(samples.size());
}

Matrix stack_rows(const std::vector<Matrix>& parts) {
  Eigen::Index rows = 0;
  for (const auto& p : parts) rows += p.rows();
  Matrix out(rows, parts.empty() ? 0 : parts.front().cols());
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p;
    r += p.rows();
  }
  return out;
}

struct SgiStats {
  double cycle = 0.0;
  double generator = 0.0;
  double discriminator = 0.0;
  double accuracy = 0.0;
};

ops::TranslatorVars bind_translator(ad::Tape& tape, ModelState& state, const std::string& prefix, bool trainable) {
  auto bind = [&](const std::string& name) {
    Parameter& p = state.param(prefix + "." + name);
    return trainable ? tape.parameter(p) : tape.constant(p.value);
  };
  ops::TranslatorVars t;
  t.w1 = bind("w1");
  t.b1 = bind("b1");
  t.w2 = bind("w2");
  t.b2 = bind("b2");
  t.row_bias = bind("row_bias");
  return t;
}

ops::DiscriminatorVars bind_discriminator(ad::Tape& tape, ModelState& state, const std::string& prefix,
                                          bool trainable) {
  auto bind = [&](const std::string& name) {
    Parameter& p = state.param(prefix + "." + name);
    return trainable ? tape.parameter(p) : tape.constant(p.value);
  };
  return {bind("u"), bind("c"), bind("v"), bind("d")};
}

double accuracy_of(const Matrix& real_prob, const Matrix& fake_prob) {
  const double correct = (real_prob.array() > 0.5).count() + (fake_prob.array() < 0.5).count();
  return correct / static_cast<double>(real_prob.size() + fake_prob.size());
}

// Discriminator step, then the generator step, on detached tokens. Translator
// gradients are left in place for the caller's optimiser step.
SgiStats sgi_step(ModelState& state, const Matrix& p_tokens, const Matrix& g_tokens, std::vector<long>& adam_t) {
  SgiStats stats;
  const double lr = state.config.learning_rate;
  {
    ad::Tape tape;
    const ad::Var p = tape.constant(p_tokens);
    const ad::Var g = tape.constant(g_tokens);
    const auto pg = bind_translator(tape, state, "pg", false);
    const auto gp = bind_translator(tape, state, "gp", false);
    const auto dg = bind_discriminator(tape, state, "dg", true);
    const auto dp = bind_discriminator(tape, state, "dp", true);
    const ad::Var fake_g = ops::translate(p, pg);
    const ad::Var fake_p = ops::translate(g, gp);
    const ad::Var adv = ad::add(ops::adversarial_term(g, fake_g, dg), ops::adversarial_term(p, fake_p, dp));
    stats.discriminator = adv.scalar();
    const double acc_g = accuracy_of(ops::discriminate(g, dg).value(), ops::discriminate(fake_g, dg).value());
    const double acc_p = accuracy_of(ops::discriminate(p, dp).value(), ops::discriminate(fake_p, dp).value());
    stats.accuracy = 0.5 * (acc_g + acc_p);
    tape.backward(ad::scale(adv, -1.0));
    for (std::size_t i = 0; i < state.params.size(); ++i) {
      if (is_discriminator(state.params[i].name)) adam_step(state.params[i], adam_t[i], lr, 1.0);
    }
  }
  ad::Tape tape;
  const ad::Var p = tape.constant(p_tokens);
  const ad::Var g = tape.constant(g_tokens);
  const auto pg = bind_translator(tape, state, "pg", true);
  const auto gp = bind_translator(tape, state, "gp", true);
  const auto dg = bind_discriminator(tape, state, "dg", false);
  const auto dp = bind_discriminator(tape, state, "dp", false);
  const ad::Var gen =
      ad::add(ops::generator_term(ops::translate(p, pg), dg), ops::generator_term(ops::translate(g, gp), dp));
  const ad::Var cycle = ad::add(ops::cycle_term(p, pg, gp), ops::cycle_term(g, gp, pg));
  stats.generator = gen.scalar();
  stats.cycle = cycle.scalar();
  tape.backward(ad::add(gen, ad::scale(cycle, state.config.lambda_cycle)));
  return stats;
}

}  // namespace

TrainResult train(const Cohort& input, const TrainConfig& cfg, const Cohort* validation) {
  cfg.validate();
  input.validate();
  const Cohort cohort = cfg.missingness ? apply_missingness(input, *cfg.missingness) : input;
  TrainResult result{init_model(cohort, cfg), {}};
  ModelState& state = result.state;
  const std::vector<Sample> samples = make_samples(state, cohort);
  std::vector<Sample> val_samples;
  if (validation != nullptr) val_samples = make_samples(state, *validation);

  std::mt19937_64 rng(cfg.seed);
  std::vector<long> adam_t(state.params.size(), 0);
  const auto n = static_cast<int>(samples.size());
  const int batches_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const int phase2_epochs = cfg.epochs - cfg.phase1_epochs;
  const long schedule_total =
      cfg.schedule_total_steps > 0 ? cfg.schedule_total_steps : std::max(1L, 1L * phase2_epochs * batches_per_epoch);
  const SgiConfig sgi_cfg{cfg.lambda_cycle, schedule_total};
  const AlignmentConfig align_cfg{cfg.lambda_reg, cfg.mi_denominator};
  const bool multimodal = cfg.modality == Modality::multimodal;

  std::vector<int> with_genomics;
  for (int i = 0; i < n; ++i)
    if (samples[i].has_genomics) with_genomics.push_back(i);

  auto snapshot_row = [&](int epoch) {
    EpochLog e;
    e.epoch = epoch;
    e.phase = state.phase;
    e.step = state.step;
    const AlignmentSnapshot a = measure_alignment(state, samples);
    e.paired_cosine = a.shared;
    e.raw_paired_cosine = a.raw;
    e.alignment_frozen = state.alignment_frozen;
    e.checksum_alignment = state.checksum(ParamGroup::alignment);
    e.checksum_imputation = state.checksum(ParamGroup::imputation);
    return e;
  };
  EpochLog initial = snapshot_row(0);
  initial.task_loss = validation_loss(state, samples);
  if (!val_samples.empty()) initial.val_loss = validation_loss(state, val_samples);
  result.log.epochs.push_back(initial);

  long phase2_start = -1;
  int alignment_pending = 0;
  int stall = 0;
  std::optional<double> previous_ma;
  std::optional<double> best_val;
  int since_best = 0;
  std::optional<ModelState> best_state;
  const int final_phase = phase2_epochs > 0 ? 2 : 1;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    state.phase = epoch <= cfg.phase1_epochs ? 1 : 2;
    const bool phase2 = state.phase == 2;
    if (phase2 && phase2_start < 0) phase2_start = state.step;

    // Training-time simulated patient-wise missingness ramps 0 -> max over phase 2.
    double train_rate = 0.0;
    std::vector<bool> simulated(static_cast<std::size_t>(n), false);
    if (phase2 && multimodal) {
      const int idx = epoch - cfg.phase1_epochs - 1;
      train_rate = phase2_epochs > 1 ? cfg.max_train_missing_rate * idx / (phase2_epochs - 1)
                                     : cfg.max_train_missing_rate;
      std::vector<int> order = with_genomics;
      std::shuffle(order.begin(), order.end(), rng);
      const auto count = static_cast<std::size_t>(std::floor(train_rate * static_cast<double>(order.size()) + 1e-9));
      for (std::size_t i = 0; i < count; ++i) simulated[order[i]] = true;
    }

    GroupMask trainable{true, false, false, false, true};
    if (phase2) trainable = {true, !state.alignment_frozen, true, true, true};
    const bool ma_active = phase2 && multimodal && !state.alignment_frozen;

    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    EpochLog log;
    log.epoch = epoch;
    log.phase = state.phase;
    log.train_missing_rate = train_rate;
    int ma_batches = 0, sgi_batches = 0;

    for (int b = 0; b < batches_per_epoch; ++b) {
      const int begin = b * cfg.batch_size;
      const int end = std::min(n, begin + cfg.batch_size);
      const double m = phase2 ? interpolation_schedule(state.step - phase2_start, sgi_cfg) : 1.0;
      log.interpolation_m = m;

      ad::Tape tape;
      ParamVars vars;
      vars.vars.reserve(state.params.size());
      for (std::size_t i = 0; i < state.params.size(); ++i) {
        const bool train_it = trainable[static_cast<std::size_t>(state.groups[i])] && !is_discriminator(state.params[i].name);
        vars.vars.push_back(train_it ? tape.parameter(state.params[i]) : tape.constant(state.params[i].value));
      }

      std::vector<ad::Var> losses;
      std::vector<ad::Var> p_pooled, g_pooled;
      std::vector<Matrix> p_tokens, g_tokens;
      for (int k = begin; k < end; ++k) {
        const Sample& s = samples[order[k]];
        std::uniform_int_distribution<std::size_t> pick(0, s.patient->slides.size() - 1);
        const SlideBag& slide = s.patient->slides[pick(rng)];
        GenomicView view;
        view.summary = &s.summary;
        view.fill = phase2 ? cfg.fill_strategy : FillStrategy::mean_fill;
        if (!s.has_genomics) {
          view.kind = GenomicView::Kind::missing;
        } else if (simulated[order[k]]) {
          view.kind = GenomicView::Kind::interpolated;
          view.m = m;
        } else {
          view.kind = GenomicView::Kind::real;
        }
        const ForwardResult r = forward(tape, state, vars, slide, view);
        losses.push_back(sample_loss(state, r.outputs, s));
        if (multimodal && s.has_genomics) {
          p_pooled.push_back(r.hist_pooled);
          g_pooled.push_back(r.gen_pooled);
        }
        if (multimodal) {
          p_tokens.push_back(r.hist_tokens.value());
          if (s.complete) g_tokens.push_back(r.gen_real.value());
        }
      }
      ad::Var task = ad::scale(ad::sum(ad::concat_rows(losses)), 1.0 / static_cast<double>(losses.size()));
      guard(task.scalar(), "task", epoch, state.step);
      log.task_loss += task.scalar();
      ad::Var total = task;

      if (ma_active && p_pooled.size() >= 2) {
        const ops::CriticVars critic{vars[state.index_of("critic.proj_p")], vars[state.index_of("critic.bias_p")],
                                     vars[state.index_of("critic.proj_g")], vars[state.index_of("critic.bias_g")]};
        const auto terms = ops::alignment(ad::concat_rows(p_pooled), ad::concat_rows(g_pooled), critic,
                                          cfg.temperature, true, align_cfg);
        guard(terms.mie.scalar(), "mutual_information", epoch, state.step);
        guard(terms.reg.scalar(), "diversity", epoch, state.step);
        guard(terms.sample.scalar(), "sample_alignment", epoch, state.step);
        log.ma_total += terms.total.scalar();
        log.mie += terms.mie.scalar();
        log.reg += terms.reg.scalar();
        log.sample += terms.sample.scalar();
        ++ma_batches;
        total = ad::add(total, terms.total);
      }
      tape.backward(total);

      if (phase2 && multimodal && !g_tokens.empty()) {
        const SgiStats sgi = sgi_step(state, stack_rows(p_tokens), stack_rows(g_tokens), adam_t);
        guard(sgi.cycle, "cycle", epoch, state.step);
        guard(sgi.generator, "adversarial_generator", epoch, state.step);
        guard(sgi.discriminator, "adversarial_discriminator", epoch, state.step);
        log.cycle += sgi.cycle;
        log.adv_generator += sgi.generator;
        log.adv_discriminator += sgi.discriminator;
        log.disc_accuracy += sgi.accuracy;
        ++sgi_batches;
      }

      bool step_alignment = false;
      if (trainable[static_cast<std::size_t>(ParamGroup::alignment)]) {
        step_alignment = ++alignment_pending >= cfg.accumulation;
        if (step_alignment) alignment_pending = 0;
      }
      for (std::size_t i = 0; i < state.params.size(); ++i) {
        Parameter& p = state.params[i];
        const ParamGroup g = state.groups[i];
        if (!trainable[static_cast<std::size_t>(g)] || is_discriminator(p.name)) continue;
        if (g == ParamGroup::alignment) {
          if (step_alignment) adam_step(p, adam_t[i], cfg.learning_rate, 1.0 / cfg.accumulation);
        } else {
          adam_step(p, adam_t[i], cfg.learning_rate, 1.0);
        }
      }
      ++state.step;
    }

    log.task_loss /= batches_per_epoch;
    if (ma_batches > 0) {
      log.ma_total /= ma_batches;
      log.mie /= ma_batches;
      log.reg /= ma_batches;
      log.sample /= ma_batches;
    }
    if (sgi_batches > 0) {
      log.cycle /= sgi_batches;
      log.adv_generator /= sgi_batches;
      log.adv_discriminator /= sgi_batches;
      log.disc_accuracy /= sgi_batches;
    }

    if (ma_active && ma_batches > 0) {
      if (previous_ma) {
        const double rel = (*previous_ma - log.ma_total) / std::max(std::abs(*previous_ma), 1e-12);
        stall = rel < cfg.freeze_tolerance ? stall + 1 : 0;
      }
      previous_ma = log.ma_total;
      if (stall >= cfg.freeze_patience) {
        state.alignment_frozen = true;
        state.freeze_epoch = epoch;
        result.log.freeze_epoch = epoch;
        alignment_pending = 0;
        for (std::size_t i = 0; i < state.params.size(); ++i) {
          if (state.groups[i] == ParamGroup::alignment) state.params[i].zero_grad();
        }
      }
    }

    if (multimodal) state.mean_fill_tokens = compute_mean_fill_tokens(state, cohort);
    const EpochLog snap = snapshot_row(epoch);
    log.step = state.step;
    log.paired_cosine = snap.paired_cosine;
    log.raw_paired_cosine = snap.raw_paired_cosine;
    log.alignment_frozen = state.alignment_frozen;
    log.checksum_alignment = snap.checksum_alignment;
    log.checksum_imputation = snap.checksum_imputation;
    if (!val_samples.empty()) log.val_loss = validation_loss(state, val_samples);
    result.log.epochs.push_back(log);

    if (log.val_loss && state.phase == final_phase) {
      if (!best_val || *log.val_loss < *best_val) {
        best_val = log.val_loss;
        best_state = state;
        result.log.best_epoch = epoch;
        since_best = 0;
      } else if (++since_best >= cfg.early_stopping_patience) {
        break;
      }
    }
  }
  if (best_state) state = std::move(*best_state);
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

EvalResult evaluate(const ModelState& state, const Cohort& input, const EvalOptions& options) {
  if (state.params.empty()) throw PreconditionError("evaluate needs an initialised model");
  const Cohort cohort = options.spec ? apply_missingness(input, *options.spec) : input;
  const FillStrategy strategy = options.strategy.value_or(state.config.fill_strategy);
  const Task task = state.config.task;

  EvalResult result;
  for (const auto& p : cohort.patients) {
    if (p.slides.empty()) throw PreconditionError("patient " + p.patient_id + " has no slides");
    GroupSummary summary;
    GenomicView view;
    view.fill = strategy;
    if (p.has_genomics()) {
      summary = summarize_groups(*p.genomic);
      view.kind = GenomicView::Kind::real;
      view.summary = &summary;
    }
    ad::Tape tape;
    const ParamVars vars = bind_constants(tape, state);
    PatientPrediction pred;
    pred.patient_id = p.patient_id;
    for (const auto& slide : p.slides) {
      const ForwardResult r = forward(tape, state, vars, slide, view);
      const RowVector logits = r.outputs.value().row(0);
      if (task == Task::survival) {
        pred.per_slide.push_back(Vector::Constant(1, risk_score(logits)));
      } else {
        pred.per_slide.push_back(class_probabilities(logits));
      }
    }
    pred.scores = Vector::Zero(pred.per_slide.front().size());
    for (const auto& s : pred.per_slide) pred.scores += s;
    pred.scores /= static_cast<double>(pred.per_slide.size());
    result.predictions.push_back(std::move(pred));
  }

  MetricsReport report;
  const auto n = static_cast<Eigen::Index>(result.predictions.size());
  if (task == Task::survival) {
    std::vector<double> risks, times;
    std::vector<bool> events;
    for (Eigen::Index i = 0; i < n; ++i) {
      risks.push_back(result.predictions[i].scores(0));
      times.push_back(cohort.patients[i].survival_time);
      events.push_back(cohort.patients[i].event_indicator);
    }
    report.n_samples = static_cast<int>(n);
    try {
      report.c_index = concordance_index(risks, times, events);
    } catch (const UndefinedMetricError&) {
      report.flags.push_back("c_index_undefined");
    } catch (const PreconditionError&) {
      report.flags.push_back("c_index_undefined");
    }
  } else {
    const Eigen::Index c = num_outputs(task, state.config.survival_bins);
    Matrix scores(n, c);
    std::vector<int> labels;
    for (Eigen::Index i = 0; i < n; ++i) {
      scores.row(i) = result.predictions[i].scores.transpose();
      const auto& p = cohort.patients[i];
      labels.push_back(task == Task::grading ? p.label_grade : p.label_diagnosis);
    }
    if (n > 0) report = classification_metrics(scores, labels);
  }
  report.task = to_string(task);
  report.fold = options.fold;
  report.mode = options.spec ? to_string(options.spec->mode) : "none";
  report.rate = options.spec ? options.spec->rate : 0.0;
  report.strategy = to_string(strategy);
  result.report = std::move(report);
  return result;
}

// ---------------------------------------------------------------------------
// Sweep

std::vector<double> default_sweep_rates() { return {0.0, 0.2, 0.5, 0.8, 1.0}; }

namespace {

void average_into(std::optional<double>& acc, int& count, const std::optional<double>& v) {
  if (!v) return;
  acc = acc.value_or(0.0) + *v;
  ++count;
}

}  // namespace

std::vector<MetricsReport> sweep_units(const std::vector<SweepUnit>& units, const std::vector<MissingnessMode>& modes,
                                       const std::vector<double>& rates, const std::vector<FillStrategy>& strategies,
                                       std::uint64_t seed) {
  if (units.empty()) throw PreconditionError("sweep needs at least one evaluation unit");
  std::vector<MetricsReport> rows;
  for (MissingnessMode mode : modes) {
    for (double rate : rates) {
      for (FillStrategy strategy : strategies) {
        std::vector<MetricsReport> per_unit;
        for (const auto& u : units) {
          EvalOptions opt;
          opt.spec = MissingnessSpec{mode, rate, seed};
          opt.strategy = strategy;
          opt.fold = u.fold;
          per_unit.push_back(evaluate(*u.state, u.cohort, opt).report);
        }
        MetricsReport row = per_unit.front();
        if (per_unit.size() > 1) {
          row.fold = "mean";
          row.n_samples = 0;
          row.flags.clear();
          std::array<std::optional<double>, 6> acc;
          std::array<int, 6> cnt{};
          for (const auto& r : per_unit) {
            row.n_samples += r.n_samples;
            average_into(acc[0], cnt[0], r.auc);
            average_into(acc[1], cnt[1], r.accuracy);
            average_into(acc[2], cnt[2], r.sensitivity);
            average_into(acc[3], cnt[3], r.specificity);
            average_into(acc[4], cnt[4], r.f1);
            average_into(acc[5], cnt[5], r.c_index);
            for (const auto& f : r.flags) {
              const std::string tagged = r.fold + ":" + f;
              if (std::find(row.flags.begin(), row.flags.end(), tagged) == row.flags.end()) row.flags.push_back(tagged);
            }
          }
          std::array<std::optional<double>*, 6> out{&row.auc, &row.accuracy, &row.sensitivity, &row.specificity,
                                                    &row.f1, &row.c_index};
          for (std::size_t k = 0; k < 6; ++k) {
            *out[k] = acc[k] ? std::optional<double>(*acc[k] / cnt[k]) : std::nullopt;
          }
        }
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

SweepResult missingness_sweep(const Cohort& cohort, const TrainConfig& cfg, int folds,
                              const std::vector<MissingnessMode>& modes, const std::vector<double>& rates,
                              const std::vector<FillStrategy>& strategies) {
  cfg.validate();
  const std::vector<Fold> split = split_folds(cohort, folds, cfg.seed);
  SweepResult result;
  std::vector<ModelState> states;
  states.reserve(split.size());
  std::vector<SweepUnit> units;
  for (std::size_t f = 0; f < split.size(); ++f) {
    TrainResult trained = train(subset(cohort, split[f].train_ids), cfg);
    states.push_back(std::move(trained.state));
    result.logs.push_back(std::move(trained.log));
    units.push_back({&states.back(), subset(cohort, split[f].val_ids), "fold" + std::to_string(f)});
  }
  result.rows = sweep_units(units, modes, rates, strategies, cfg.seed);
  return result;
}

void write_results_table(const std::filesystem::path& path, const std::vector<MetricsReport>& rows) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write " + path.string());
  out << MetricsReport::header() << '\n';
  for (const auto& r : rows) out << r.row() << '\n';
}

}  // namespace protofuse
