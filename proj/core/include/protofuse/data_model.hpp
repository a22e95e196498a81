#pragma once

// Cohort data model: patients with slide embedding bags, optional grouped
// genomic profiles, labels, and missingness flags. Also file ingestion,
// synthetic cohort generation, fold splitting and missingness simulation.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "protofuse/autodiff.hpp"

namespace protofuse {

inline constexpr int kNumHistologyCategories = 6;
inline constexpr int kNumGeneGroups = 6;
inline constexpr int kNumDiagnosisClasses = 6;
inline constexpr int kNumGradeClasses = 3;

using NameList = std::array<std::string, 6>;

const NameList& default_histology_categories();
const NameList& default_gene_groups();

struct PatchCoord {
  int row = 0;
  int col = 0;
  bool operator==(const PatchCoord&) const = default;
};

struct SlideBag {
  std::string slide_id;
  Matrix patch_embeddings;             // n_patches x D_embed
  std::vector<PatchCoord> patch_coords;  // empty when absent

  Eigen::Index n_patches() const { return patch_embeddings.rows(); }
  Eigen::Index dim() const { return patch_embeddings.cols(); }
  bool operator==(const SlideBag&) const = default;
};

struct GenomicProfile {
  std::map<std::string, double> gene_values;
  std::map<std::string, int> group_map;
  std::map<std::string, bool> feature_mask;  // false = feature-wise missing

  bool operator==(const GenomicProfile&) const = default;
};

// Per-group masked means of a profile; a group with no observed gene is empty.
struct GroupSummary {
  std::array<double, 6> mean{};
  std::array<int, 6> observed{};
  std::array<bool, 6> empty{};
};

GroupSummary summarize_groups(const GenomicProfile& profile);

struct PatientRecord {
  std::string patient_id;
  std::vector<SlideBag> slides;
  std::optional<GenomicProfile> genomic;
  int label_diagnosis = 0;
  int label_grade = 0;
  double survival_time = 1.0;
  bool event_indicator = false;
  bool genomic_missing = false;

  // Genomics usable downstream: present and not flagged missing.
  bool has_genomics() const { return genomic.has_value() && !genomic_missing; }
  bool operator==(const PatientRecord&) const = default;
};

struct Cohort {
  std::vector<PatientRecord> patients;
  NameList gene_group_names = default_gene_groups();
  NameList histology_category_names = default_histology_categories();
  std::string provenance;

  Eigen::Index embedding_dim() const;
  std::size_t size() const { return patients.size(); }
  // Throws SchemaError when any record violates the data model invariants.
  void validate() const;
  const PatientRecord& find(const std::string& patient_id) const;
  bool operator==(const Cohort&) const = default;
};

enum class MissingnessMode { patient_wise, feature_wise };

struct MissingnessSpec {
  MissingnessMode mode = MissingnessMode::patient_wise;
  double rate = 0.0;
  std::uint64_t seed = 0;
};

std::string to_string(MissingnessMode mode);
MissingnessMode parse_missingness_mode(const std::string& text);

struct Fold {
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
};

// Reads a JSON manifest plus the tables and embedding files it references.
Cohort load_cohort(const std::filesystem::path& manifest_path);

// Writes a cohort as a manifest, tab-delimited tables and PFE1 embedding
// files under `dir`. Returns the manifest path.
std::filesystem::path save_cohort(const Cohort& cohort, const std::filesystem::path& dir);

Cohort generate_synthetic(int n_patients, int d_embed, int n_genes, std::uint64_t seed);

Cohort apply_missingness(const Cohort& cohort, const MissingnessSpec& spec);

std::vector<Fold> split_folds(const Cohort& cohort, int k, std::uint64_t seed);

// Patients whose ids appear in `ids`, in the order of `ids`.
Cohort subset(const Cohort& cohort, const std::vector<std::string>& ids);

// Embedding files. Binary layout: "PFE1", u64 n_patches, u64 D_embed (both
// little-endian), then row-major little-endian float32. Anything without the
// magic is parsed as delimited text, one patch per line.
Matrix read_embeddings(const std::filesystem::path& path);
void write_embeddings(const std::filesystem::path& path, const Matrix& embeddings);

// Shared delimited-text helper: splits on tab or comma.
std::vector<std::string> split_delimited(const std::string& line);

}  // namespace protofuse
