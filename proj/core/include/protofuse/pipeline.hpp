#pragma once

// Two-phase training, evaluation under missing genomics, the missingness
// sweep, interpretability export and checkpoints.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "protofuse/data_model.hpp"
#include "protofuse/model.hpp"
#include "protofuse/tasks.hpp"

namespace protofuse {

// One row per epoch; epoch 0 describes the initial state before any update.
struct EpochLog {
  int epoch = 0;
  int phase = 1;
  long step = 0;
  double task_loss = 0.0;
  double ma_total = 0.0;
  double mie = 0.0;
  double reg = 0.0;
  double sample = 0.0;
  double cycle = 0.0;
  double adv_generator = 0.0;
  double adv_discriminator = 0.0;
  double disc_accuracy = 0.0;
  double paired_cosine = 0.0;     // pooled representations in the critic space
  double raw_paired_cosine = 0.0; // pooled representations before projection
  double train_missing_rate = 0.0;
  double interpolation_m = 1.0;
  std::optional<double> val_loss;
  bool alignment_frozen = false;
  std::uint64_t checksum_alignment = 0;
  std::uint64_t checksum_imputation = 0;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  int freeze_epoch = -1;
  int best_epoch = -1;

  static std::string header();
  std::string row(const EpochLog& e) const;
  void write_tsv(const std::filesystem::path& path) const;
};

struct TrainResult {
  ModelState state;
  TrainLog log;
};

// Throws DivergenceError naming the loss component that became non-finite.
TrainResult train(const Cohort& cohort, const TrainConfig& cfg, const Cohort* validation = nullptr);

struct PatientPrediction {
  std::string patient_id;
  Vector scores;                       // class probabilities, or a single risk score
  std::vector<Vector> per_slide;
};

struct EvalOptions {
  std::optional<MissingnessSpec> spec;
  std::optional<FillStrategy> strategy;  // defaults to the model's configured strategy
  std::string fold = "all";
};

struct EvalResult {
  MetricsReport report;
  std::vector<PatientPrediction> predictions;
};

EvalResult evaluate(const ModelState& state, const Cohort& cohort, const EvalOptions& options = {});

std::vector<double> default_sweep_rates();

// A trained model paired with the held-out patients it is evaluated on.
struct SweepUnit {
  const ModelState* state = nullptr;
  Cohort cohort;
  std::string fold;
};

// One averaged row per (mode, rate, strategy), in that nesting order.
std::vector<MetricsReport> sweep_units(const std::vector<SweepUnit>& units, const std::vector<MissingnessMode>& modes,
                                       const std::vector<double>& rates, const std::vector<FillStrategy>& strategies,
                                       std::uint64_t seed);

struct SweepResult {
  std::vector<MetricsReport> rows;
  std::vector<TrainLog> logs;  // one per fold
};

// k-fold cross-validation: trains one model per fold, then evaluates every
// condition on that fold's held-out patients and averages over folds.
SweepResult missingness_sweep(const Cohort& cohort, const TrainConfig& cfg, int folds,
                              const std::vector<MissingnessMode>& modes, const std::vector<double>& rates,
                              const std::vector<FillStrategy>& strategies);

void write_results_table(const std::filesystem::path& path, const std::vector<MetricsReport>& rows);

struct SlideAttention {
  std::string patient_id;
  std::string slide_id;
  Matrix attention;  // 6 x n_patches, rows sum to 1
  std::vector<PatchCoord> coords;
};

struct ExplainBundle {
  NameList histology_names;
  NameList gene_group_names;
  std::vector<std::string> patient_ids;
  Matrix importance;             // patients x 12, min-max normalised per patient
  std::vector<Matrix> affinity;  // per patient 6 x 6, mean over slides
  std::vector<SlideAttention> attention;
  std::vector<std::pair<int, double>> alignment_trace;  // (epoch, paired cosine)
};

ExplainBundle explain(const ModelState& state, const Cohort& cohort, const TrainLog* log = nullptr);

// Writes importance.tsv, affinity.tsv, attention.tsv, alignment_trace.tsv and
// index.json under `dir`.
void write_explain(const ExplainBundle& bundle, const std::filesystem::path& dir);

// checkpoint.json plus one PFP1 blob per parameter group.
void save_checkpoint(const ModelState& state, const std::filesystem::path& dir);
ModelState load_checkpoint(const std::filesystem::path& dir);

}  // namespace protofuse
