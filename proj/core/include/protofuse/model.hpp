#pragma once

// The end-to-end multimodal model: parameter store, per-slide forward pass,
// and the bindings that put parameters on a tape.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "protofuse/alignment.hpp"
#include "protofuse/autodiff.hpp"
#include "protofuse/data_model.hpp"
#include "protofuse/fusion.hpp"
#include "protofuse/imputation.hpp"
#include "protofuse/prototyping.hpp"
#include "protofuse/tasks.hpp"

namespace protofuse {

enum class FillStrategy { sgi, mean_fill };
enum class Modality { multimodal, histology_only };

std::string to_string(FillStrategy s);
FillStrategy parse_fill_strategy(const std::string& text);
std::string to_string(Modality m);
Modality parse_modality(const std::string& text);

struct TrainConfig {
  Task task = Task::survival;
  std::uint64_t seed = 7;
  int batch_size = 8;
  double learning_rate = 1e-4;
  int epochs = 30;
  int phase1_epochs = 10;
  double lambda_reg = 0.1;
  double lambda_cycle = 10.0;
  int top_k = kDefaultTopK;
  int accumulation = 4;
  // 0 means "the number of optimisation steps in phase 2".
  long schedule_total_steps = 0;
  std::optional<MissingnessSpec> missingness;
  FillStrategy fill_strategy = FillStrategy::sgi;
  Modality modality = Modality::multimodal;
  int survival_bins = kDefaultSurvivalBins;
  int attention_iterations = 2;
  double temperature = 0.07;
  MiDenominator mi_denominator = MiDenominator::cross_pair;
  double max_train_missing_rate = 0.5;
  double freeze_tolerance = 0.01;
  int freeze_patience = 3;
  int early_stopping_patience = 10;
  int discriminator_hidden = 16;
  std::string prompt_embeddings;  // optional file for a file-backed provider

  // Throws ConfigError on any out-of-range value.
  void validate() const;
  // Flat key/value view using the field names as keys.
  std::map<std::string, std::string> to_map() const;
  void set(const std::string& key, const std::string& value);
  std::uint64_t hash() const;
};

// Reads "key = value" lines ('#' starts a comment) into a config.
void apply_config_file(const std::string& path, TrainConfig& cfg);

enum class ParamGroup { prototyping, alignment, imputation, fusion, heads };
std::string to_string(ParamGroup g);

struct ModelState {
  TrainConfig config;
  Eigen::Index dim = 0;
  NameList histology_names = default_histology_categories();
  NameList gene_group_names = default_gene_groups();
  std::vector<Parameter> params;
  std::vector<ParamGroup> groups;
  std::vector<double> cut_points;
  Matrix mean_fill_tokens;  // 6 x D training-cohort mean genomic tokens
  long step = 0;
  int phase = 1;
  bool alignment_frozen = false;
  int freeze_epoch = -1;

  Parameter& param(const std::string& name);
  const Parameter& param(const std::string& name) const;
  std::size_t index_of(const std::string& name) const;
  // FNV-1a over the raw bytes of every value in a group.
  std::uint64_t checksum(ParamGroup g) const;

  AttentionParams histology_attention() const;
  ImportanceHead histology_importance() const;
  ImportanceHead genomic_importance() const;
  CriticParams critic() const;
  TranslatorPair translators() const;
  DiscriminatorPair discriminators() const;
  FusionParams fusion() const;

 private:
  friend ModelState init_model(const Cohort&, const TrainConfig&);
  std::map<std::string, std::size_t> index_;

 public:
  void rebuild_index();
  void add(std::string name, ParamGroup group, Matrix value);
};

ModelState init_model(const Cohort& cohort, const TrainConfig& cfg);

// Genomics seen by one forward pass.
struct GenomicView {
  enum class Kind {
    real,          // observed profile; fully masked groups are filled per `fill`
    missing,       // no usable genomics; every slot filled per `fill`
    interpolated,  // training-time simulated missingness: m g + (1 - m) g_hat
  };
  Kind kind = Kind::missing;
  const GroupSummary* summary = nullptr;
  FillStrategy fill = FillStrategy::sgi;
  double m = 0.0;
};

struct ParamVars {
  std::vector<ad::Var> vars;
  const ad::Var& operator[](std::size_t i) const { return vars[i]; }
};

// Binds every parameter onto `tape`: trainable groups as gradient leaves,
// the rest as constants.
ParamVars bind_parameters(ad::Tape& tape, ModelState& state, const std::array<bool, 5>& trainable);
ParamVars bind_constants(ad::Tape& tape, const ModelState& state);

struct ForwardResult {
  ad::Var outputs;       // 1 x C logits (or hazard logits)
  ad::Var hist_tokens;   // importance-scaled histology prototypes, 6 x D
  ad::Var gen_tokens;    // genomic tokens fed to fusion, 6 x D (invalid for histology-only)
  ad::Var gen_real;      // importance-scaled real genomic tokens (invalid when absent)
  ad::Var hist_pooled;   // 1 x D
  ad::Var gen_pooled;    // 1 x D, real genomics only
  Vector hist_importance;
  Vector gen_importance;
  Matrix attention;      // 6 x n_patches
  Matrix affinity;       // 6 x 6
  FusionSelection selection;
  std::array<bool, 6> empty_groups{};
  bool used_generated = false;
};

ForwardResult forward(ad::Tape& tape, const ModelState& state, const ParamVars& vars, const SlideBag& slide,
                      const GenomicView& genomics);

// Training-cohort mean of the importance-scaled genomic tokens per group;
// the replacement used by the mean_fill strategy.
Matrix compute_mean_fill_tokens(const ModelState& state, const Cohort& cohort);

Vector class_probabilities(const RowVector& logits);

}  // namespace protofuse
