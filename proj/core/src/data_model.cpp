#include "protofuse/data_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "protofuse/errors.hpp"

namespace protofuse {

namespace fs = std::filesystem;
using json = nlohmann::json;

const NameList& default_histology_categories() {
  static const NameList names = {"Neoplastic", "Necrotic", "Inflammatory", "Stromal", "Infiltrative",
                                 "Other Cell Types"};
  return names;
}

const NameList& default_gene_groups() {
  static const NameList names = {"Tumor Suppressor Genes",       "Oncogenes",           "Protein Kinases",
                                 "Cell Differentiation Markers", "Transcription Factors", "Cytokines and Growth Factors"};
  return names;
}

std::string to_string(MissingnessMode mode) {
  return mode == MissingnessMode::patient_wise ? "patient_wise" : "feature_wise";
}

MissingnessMode parse_missingness_mode(const std::string& text) {
  if (text == "patient_wise" || text == "patient") return MissingnessMode::patient_wise;
  if (text == "feature_wise" || text == "feature") return MissingnessMode::feature_wise;
  throw ConfigError("unknown missingness mode '" + text + "' (expected patient_wise or feature_wise)");
}

GroupSummary summarize_groups(const GenomicProfile& profile) {
  GroupSummary s;
  std::array<double, 6> total{};
  for (const auto& [gene, value] : profile.gene_values) {
    const auto g = profile.group_map.find(gene);
    if (g == profile.group_map.end()) throw SchemaError("gene '" + gene + "' has no functional group");
    const auto m = profile.feature_mask.find(gene);
    const bool observed = m == profile.feature_mask.end() || m->second;
    if (!observed) continue;
    total[g->second] += value;
    s.observed[g->second] += 1;
  }
  for (int k = 0; k < kNumGeneGroups; ++k) {
    s.empty[k] = s.observed[k] == 0;
    s.mean[k] = s.empty[k] ? 0.0 : total[k] / s.observed[k];
  }
  return s;
}

Eigen::Index Cohort::embedding_dim() const {
  for (const auto& p : patients) {
    if (!p.slides.empty()) return p.slides.front().dim();
  }
  return 0;
}

const PatientRecord& Cohort::find(const std::string& patient_id) const {
  for (const auto& p : patients) {
    if (p.patient_id == patient_id) return p;
  }
  throw PreconditionError("unknown patient id '" + patient_id + "'");
}

void Cohort::validate() const {
  const Eigen::Index dim = embedding_dim();
  std::set<std::string> seen;
  for (const auto& p : patients) {
    if (!seen.insert(p.patient_id).second) throw SchemaError("duplicate patient id '" + p.patient_id + "'");
    if (p.slides.empty()) throw SchemaError("patient '" + p.patient_id + "' has no slides");
    if (!(p.survival_time > 0.0)) throw SchemaError("patient '" + p.patient_id + "' has non-positive survival time");
    if (p.label_diagnosis < 0 || p.label_diagnosis >= kNumDiagnosisClasses) {
      throw SchemaError("patient '" + p.patient_id + "' has diagnosis label out of range");
    }
    if (p.label_grade < 0 || p.label_grade >= kNumGradeClasses) {
      throw SchemaError("patient '" + p.patient_id + "' has grade label out of range");
    }
    for (const auto& s : p.slides) {
      if (s.n_patches() < 1) throw SchemaError("slide '" + s.slide_id + "' has no patches");
      if (s.dim() != dim) {
        throw SchemaError("slide '" + s.slide_id + "' has embedding dimension " + std::to_string(s.dim()) +
                          ", cohort uses " + std::to_string(dim));
      }
      if (!s.patch_coords.empty() && static_cast<Eigen::Index>(s.patch_coords.size()) != s.n_patches()) {
        throw SchemaError("slide '" + s.slide_id + "' has a coordinate count different from its patch count");
      }
      if (!s.patch_embeddings.allFinite()) throw SchemaError("slide '" + s.slide_id + "' has non-finite values");
    }
    if (p.genomic) {
      for (const auto& [gene, value] : p.genomic->gene_values) {
        const auto g = p.genomic->group_map.find(gene);
        if (g == p.genomic->group_map.end()) throw SchemaError("gene '" + gene + "' has no functional group");
        if (g->second < 0 || g->second >= kNumGeneGroups) {
          throw SchemaError("gene '" + gene + "' has group id out of range");
        }
        if (!std::isfinite(value)) throw SchemaError("gene '" + gene + "' has a non-finite value");
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Manifest ingestion

namespace {

std::vector<std::vector<std::string>> read_table(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open table: " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r" || line[0] == '#') continue;
    rows.push_back(split_delimited(line));
  }
  return rows;
}

bool parse_int(const std::string& s, int& out) {
  try {
    std::size_t used = 0;
    out = std::stoi(s, &used);
    return used == s.size();
  } catch (const std::exception&) {
    return false;
  }
}

double parse_double(const std::string& s, const fs::path& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw SchemaError("non-numeric value '" + s + "' in " + where.string());
  }
}

bool parse_bool(const std::string& s) { return s == "1" || s == "true" || s == "True" || s == "TRUE"; }

std::vector<PatchCoord> read_coords(const fs::path& path) {
  std::vector<PatchCoord> coords;
  for (const auto& row : read_table(path)) {
    int r = 0, c = 0;
    if (row.size() < 2 || !parse_int(row[0], r) || !parse_int(row[1], c)) {
      if (coords.empty()) continue;  // header
      throw SchemaError("bad coordinate row in " + path.string());
    }
    coords.push_back({r, c});
  }
  return coords;
}

NameList read_names(const json& j, const char* key, const NameList& fallback) {
  if (!j.contains(key)) return fallback;
  const auto& arr = j.at(key);
  if (!arr.is_array() || arr.size() != 6) throw SchemaError(std::string(key) + " must list exactly 6 names");
  NameList out;
  for (std::size_t i = 0; i < 6; ++i) out[i] = arr[i].get<std::string>();
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

Cohort load_cohort(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw LoadError("cannot open manifest: " + manifest_path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw SchemaError("manifest is not valid JSON: " + manifest_path.string() + ": " + e.what());
  }
  const fs::path base = manifest_path.parent_path();
  auto resolve = [&](const std::string& rel) { return fs::path(rel).is_absolute() ? fs::path(rel) : base / rel; };

  Cohort cohort;
  try {
    cohort.provenance = j.value("provenance", manifest_path.string());
    cohort.gene_group_names = read_names(j, "gene_group_names", default_gene_groups());
    cohort.histology_category_names = read_names(j, "histology_category_names", default_histology_categories());

    // Gene groups.
    std::map<std::string, int> group_map;
    const fs::path group_path = resolve(j.at("gene_group_table").get<std::string>());
    for (const auto& row : read_table(group_path)) {
      int g = 0;
      if (row.size() < 2 || !parse_int(row[1], g)) {
        if (group_map.empty()) continue;  // header
        throw SchemaError("bad gene-group row in " + group_path.string());
      }
      if (g < 0 || g >= kNumGeneGroups) throw SchemaError("gene '" + row[0] + "' has group id out of range");
      group_map[row[0]] = g;
    }

    // Genomic table: header row of gene ids, one row per patient.
    std::map<std::string, GenomicProfile> genomics;
    const fs::path genomic_path = resolve(j.at("genomic_table").get<std::string>());
    const auto grows = read_table(genomic_path);
    if (!grows.empty()) {
      const auto& header = grows.front();
      for (std::size_t c = 1; c < header.size(); ++c) {
        if (!group_map.count(header[c])) throw SchemaError("gene '" + header[c] + "' has no functional group");
      }
      for (std::size_t r = 1; r < grows.size(); ++r) {
        const auto& row = grows[r];
        if (row.size() != header.size()) throw SchemaError("ragged row in " + genomic_path.string());
        GenomicProfile prof;
        for (std::size_t c = 1; c < header.size(); ++c) {
          const std::string& gene = header[c];
          const bool missing = row[c].empty() || row[c] == "NA" || row[c] == "nan";
          prof.gene_values[gene] = missing ? 0.0 : parse_double(row[c], genomic_path);
          prof.group_map[gene] = group_map.at(gene);
          prof.feature_mask[gene] = !missing;
        }
        genomics[row[0]] = std::move(prof);
      }
    }

    // Labels.
    struct Labels {
      int diagnosis, grade;
      double time;
      bool event;
    };
    std::map<std::string, Labels> labels;
    const fs::path label_path = resolve(j.at("labels_table").get<std::string>());
    for (const auto& row : read_table(label_path)) {
      int d = 0, g = 0;
      if (row.size() < 5 || !parse_int(row[1], d) || !parse_int(row[2], g)) {
        if (labels.empty()) continue;  // header
        throw SchemaError("bad label row in " + label_path.string());
      }
      labels[row[0]] = {d, g, parse_double(row[3], label_path), parse_bool(row[4])};
    }

    for (const auto& pj : j.at("patients")) {
      PatientRecord rec;
      rec.patient_id = pj.at("patient_id").get<std::string>();
      for (const auto& sj : pj.at("slides")) {
        SlideBag bag;
        bag.slide_id = sj.at("slide_id").get<std::string>();
        bag.patch_embeddings = read_embeddings(resolve(sj.at("embeddings").get<std::string>()));
        if (sj.contains("coords")) bag.patch_coords = read_coords(resolve(sj.at("coords").get<std::string>()));
        rec.slides.push_back(std::move(bag));
      }
      const auto lab = labels.find(rec.patient_id);
      if (lab == labels.end()) throw SchemaError("patient '" + rec.patient_id + "' has no labels row");
      rec.label_diagnosis = lab->second.diagnosis;
      rec.label_grade = lab->second.grade;
      rec.survival_time = lab->second.time;
      rec.event_indicator = lab->second.event;
      const auto gen = genomics.find(rec.patient_id);
      if (gen == genomics.end()) {
        rec.genomic_missing = true;
      } else {
        rec.genomic = gen->second;
      }
      cohort.patients.push_back(std::move(rec));
    }
  } catch (const json::exception& e) {
    throw SchemaError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  cohort.validate();
  return cohort;
}

fs::path save_cohort(const Cohort& cohort, const fs::path& dir) {
  fs::create_directories(dir / "slides");
  json j;
  j["format"] = "protofuse-cohort";
  j["version"] = 1;
  j["provenance"] = cohort.provenance;
  j["gene_group_names"] = cohort.gene_group_names;
  j["histology_category_names"] = cohort.histology_category_names;
  j["genomic_table"] = "genomics.tsv";
  j["gene_group_table"] = "gene_groups.tsv";
  j["labels_table"] = "labels.tsv";

  // Union of genes across patients, in sorted order.
  std::map<std::string, int> groups;
  for (const auto& p : cohort.patients) {
    if (p.genomic) groups.insert(p.genomic->group_map.begin(), p.genomic->group_map.end());
  }
  {
    std::ofstream out(dir / "gene_groups.tsv");
    out << "gene_id\tgroup_id\n";
    for (const auto& [gene, g] : groups) out << gene << '\t' << g << '\n';
  }
  {
    std::ofstream out(dir / "genomics.tsv");
    out << "patient_id";
    for (const auto& [gene, g] : groups) out << '\t' << gene;
    out << '\n';
    for (const auto& p : cohort.patients) {
      // A flagged patient is written out as absent.
      if (!p.has_genomics()) continue;
      out << p.patient_id;
      for (const auto& [gene, g] : groups) {
        const auto v = p.genomic->gene_values.find(gene);
        const auto m = p.genomic->feature_mask.find(gene);
        const bool observed = v != p.genomic->gene_values.end() && (m == p.genomic->feature_mask.end() || m->second);
        out << '\t' << (observed ? fmt_double(v->second) : "NA");
      }
      out << '\n';
    }
  }
  {
    std::ofstream out(dir / "labels.tsv");
    out << "patient_id\tdiagnosis\tgrade\tsurvival_time\tevent\n";
    for (const auto& p : cohort.patients) {
      out << p.patient_id << '\t' << p.label_diagnosis << '\t' << p.label_grade << '\t' << fmt_double(p.survival_time)
          << '\t' << (p.event_indicator ? 1 : 0) << '\n';
    }
  }
  json patients = json::array();
  for (const auto& p : cohort.patients) {
    json pj;
    pj["patient_id"] = p.patient_id;
    pj["slides"] = json::array();
    for (const auto& s : p.slides) {
      json sj;
      sj["slide_id"] = s.slide_id;
      const std::string emb = "slides/" + s.slide_id + ".pfe";
      write_embeddings(dir / emb, s.patch_embeddings);
      sj["embeddings"] = emb;
      if (!s.patch_coords.empty()) {
        const std::string coords = "slides/" + s.slide_id + ".coords.tsv";
        std::ofstream out(dir / coords);
        out << "row\tcol\n";
        for (const auto& c : s.patch_coords) out << c.row << '\t' << c.col << '\n';
        sj["coords"] = coords;
      }
      pj["slides"].push_back(sj);
    }
    patients.push_back(pj);
  }
  j["patients"] = patients;
  const fs::path manifest = dir / "manifest.json";
  std::ofstream out(manifest);
  out << j.dump(2) << '\n';
  return manifest;
}

// ---------------------------------------------------------------------------
// Synthetic cohort

Cohort generate_synthetic(int n_patients, int d_embed, int n_genes, std::uint64_t seed) {
  if (n_patients < 2) throw ConfigError("synthetic cohort needs at least 2 patients");
  if (n_genes < kNumGeneGroups) throw ConfigError("synthetic cohort needs at least 6 genes to populate six groups");
  if (d_embed < 1) throw ConfigError("embedding dimension must be positive");

  constexpr int kLatent = 6;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  auto gaussian = [&](Eigen::Index r, Eigen::Index c, double sd) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index k = 0; k < c; ++k) m(i, k) = sd * normal(rng);
    return m;
  };

  // Cohort-level structure.
  // Histology: per-category signatures, a latent projection whose columns are
  // weighted so that the survival coordinates 1 and 3 are only weakly
  // visible, and a latent-dependent category mixture.
  const Matrix signatures = gaussian(kNumHistologyCategories, d_embed, 1.0);
  Matrix projection = gaussian(d_embed, kLatent, 1.0 / std::sqrt(static_cast<double>(kLatent)));
  const std::array<double, kLatent> visibility = {1.0, 0.3, 0.8, 0.1, 0.5, 0.5};
  for (int l = 0; l < kLatent; ++l) projection.col(l) *= visibility[l];
  Matrix mixture = gaussian(kNumHistologyCategories, kLatent, 0.6);
  for (int l = 0; l < kLatent; ++l) mixture.col(l) *= visibility[l];
  // Genomics: group k loads on latent coordinate k, plus weak cross-talk.
  std::vector<int> gene_group(n_genes);
  for (int g = 0; g < n_genes; ++g) gene_group[g] = static_cast<int>((static_cast<long>(g) * kNumGeneGroups) / n_genes);
  Matrix loadings = gaussian(n_genes, kLatent, 0.15);
  for (int g = 0; g < n_genes; ++g) loadings(g, gene_group[g] % kLatent) += 0.5 + uniform(rng);

  const double quant6[] = {-0.967421566101701, -0.430727299295457, 0.0, 0.430727299295457, 0.967421566101701};
  const double quant3[] = {-0.430727299295457, 0.430727299295457};

  Cohort cohort;
  cohort.provenance = "synthetic:n=" + std::to_string(n_patients) + ",d=" + std::to_string(d_embed) +
                      ",genes=" + std::to_string(n_genes) + ",seed=" + std::to_string(seed);
  char idbuf[32];
  for (int i = 0; i < n_patients; ++i) {
    PatientRecord rec;
    std::snprintf(idbuf, sizeof idbuf, "P%04d", i);
    rec.patient_id = idbuf;
    Eigen::VectorXd z(kLatent);
    for (int l = 0; l < kLatent; ++l) z(l) = normal(rng);

    rec.label_diagnosis = static_cast<int>(std::upper_bound(std::begin(quant6), std::end(quant6), z(0)) - std::begin(quant6));
    rec.label_grade = static_cast<int>(std::upper_bound(std::begin(quant3), std::end(quant3), z(1)) - std::begin(quant3));
    const double log_hazard = -3.0 + 0.5 * rec.label_grade + 0.7 * z(1) + 0.8 * z(3);
    const double t_event = -std::log(1.0 - uniform(rng)) / std::exp(log_hazard);
    const double t_censor = -std::log(1.0 - uniform(rng)) / 0.02;
    rec.event_indicator = t_event <= t_censor;
    rec.survival_time = std::max(1e-3, std::min(t_event, t_censor));

    // Category mixture for this patient.
    Eigen::VectorXd logits = mixture * z;
    Eigen::VectorXd probs = (logits.array() - logits.maxCoeff()).exp();
    probs /= probs.sum();
    std::discrete_distribution<int> category(probs.data(), probs.data() + probs.size());
    const Eigen::VectorXd shared = projection * z;

    const int n_slides = 1 + static_cast<int>(rng() % 3);
    for (int s = 0; s < n_slides; ++s) {
      SlideBag bag;
      bag.slide_id = rec.patient_id + "_S" + std::to_string(s);
      const int n_patches = 12 + static_cast<int>(rng() % 29);
      const Matrix offset = gaussian(1, d_embed, 0.3);
      bag.patch_embeddings.resize(n_patches, d_embed);
      const int width = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n_patches))));
      for (int p = 0; p < n_patches; ++p) {
        const int c = category(rng);
        for (int k = 0; k < d_embed; ++k) {
          const double v = signatures(c, k) + 1.2 * shared(k) + offset(0, k) + 1.0 * normal(rng);
          // Round through float so that binary round trips are exact.
          bag.patch_embeddings(p, k) = static_cast<double>(static_cast<float>(v));
        }
        bag.patch_coords.push_back({p / width, p % width});
      }
      rec.slides.push_back(std::move(bag));
    }

    GenomicProfile prof;
    for (int g = 0; g < n_genes; ++g) {
      std::snprintf(idbuf, sizeof idbuf, "G%04d", g);
      const double v = loadings.row(g).dot(z) + 0.5 * normal(rng);
      prof.gene_values[idbuf] = v;
      prof.group_map[idbuf] = gene_group[g];
      prof.feature_mask[idbuf] = true;
    }
    rec.genomic = std::move(prof);
    cohort.patients.push_back(std::move(rec));
  }
  cohort.validate();
  return cohort;
}

// ---------------------------------------------------------------------------
// Missingness and folds

namespace {

std::size_t count_for_rate(double rate, std::size_t n) {
  return static_cast<std::size_t>(std::floor(rate * static_cast<double>(n) + 1e-9));
}

}  // namespace

Cohort apply_missingness(const Cohort& cohort, const MissingnessSpec& spec) {
  if (!(spec.rate >= 0.0 && spec.rate <= 1.0)) throw RangeError("missingness rate must lie in [0, 1]");
  Cohort out = cohort;
  if (spec.rate == 0.0) return out;

  if (spec.mode == MissingnessMode::patient_wise) {
    std::vector<std::size_t> order(out.patients.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(spec.seed);
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t n_flag = count_for_rate(spec.rate, order.size());
    for (std::size_t i = 0; i < n_flag; ++i) out.patients[order[i]].genomic_missing = true;
    return out;
  }

  for (std::size_t i = 0; i < out.patients.size(); ++i) {
    auto& p = out.patients[i];
    if (!p.genomic) continue;
    std::vector<std::string> genes;
    for (const auto& [gene, v] : p.genomic->gene_values) genes.push_back(gene);
    std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                      static_cast<std::uint32_t>(i)};
    std::mt19937_64 rng(seq);
    std::shuffle(genes.begin(), genes.end(), rng);
    const std::size_t n_mask = count_for_rate(spec.rate, genes.size());
    for (std::size_t k = 0; k < n_mask; ++k) p.genomic->feature_mask[genes[k]] = false;
  }
  return out;
}

std::vector<Fold> split_folds(const Cohort& cohort, int k, std::uint64_t seed) {
  const std::size_t n = cohort.patients.size();
  if (k < 2) throw ConfigError("fold count must be at least 2");
  if (static_cast<std::size_t>(k) > n) throw ConfigError("fold count exceeds the number of patients");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> fold_of(n);
  for (std::size_t i = 0; i < n; ++i) fold_of[order[i]] = static_cast<int>(i % static_cast<std::size_t>(k));

  std::vector<Fold> folds(k);
  for (std::size_t i = 0; i < n; ++i) {
    for (int f = 0; f < k; ++f) {
      (fold_of[i] == f ? folds[f].val_ids : folds[f].train_ids).push_back(cohort.patients[i].patient_id);
    }
  }
  return folds;
}

Cohort subset(const Cohort& cohort, const std::vector<std::string>& ids) {
  Cohort out;
  out.gene_group_names = cohort.gene_group_names;
  out.histology_category_names = cohort.histology_category_names;
  out.provenance = cohort.provenance;
  std::map<std::string, const PatientRecord*> by_id;
  for (const auto& p : cohort.patients) by_id[p.patient_id] = &p;
  for (const auto& id : ids) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw PreconditionError("unknown patient id '" + id + "'");
    out.patients.push_back(*it->second);
  }
  return out;
}

}  // namespace protofuse
