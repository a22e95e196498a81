#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

#include "protofuse/errors.hpp"
#include "protofuse/pipeline.hpp"

namespace protofuse {

ExplainBundle explain(const ModelState& state, const Cohort& cohort, const TrainLog* log) {
  ExplainBundle b;
  b.histology_names = state.histology_names;
  b.gene_group_names = state.gene_group_names;
  const bool multimodal = state.config.modality == Modality::multimodal;
  b.importance = Matrix::Zero(static_cast<Eigen::Index>(cohort.size()), 12);

  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const PatientRecord& p = cohort.patients[i];
    b.patient_ids.push_back(p.patient_id);
    GroupSummary summary;
    GenomicView view;
    view.fill = state.config.fill_strategy;
    if (p.has_genomics()) {
      summary = summarize_groups(*p.genomic);
      view.kind = GenomicView::Kind::real;
      view.summary = &summary;
    }
    ad::Tape tape;
    const ParamVars vars = bind_constants(tape, state);
    RowVector imp = RowVector::Zero(12);
    Matrix affinity = Matrix::Zero(6, 6);
    for (const auto& slide : p.slides) {
      const ForwardResult r = forward(tape, state, vars, slide, view);
      imp.head(6) += r.hist_importance.transpose();
      if (multimodal) {
        imp.tail(6) += r.gen_importance.transpose();
        affinity += r.affinity;
      }
      b.attention.push_back({p.patient_id, slide.slide_id, r.attention, slide.patch_coords});
    }
    const double n = static_cast<double>(std::max<std::size_t>(1, p.slides.size()));
    imp /= n;
    const Eigen::Index used = multimodal ? 12 : 6;
    const double lo = imp.head(used).minCoeff(), hi = imp.head(used).maxCoeff();
    for (Eigen::Index k = 0; k < used; ++k) b.importance(static_cast<Eigen::Index>(i), k) = hi > lo ? (imp(k) - lo) / (hi - lo) : 0.0;
    b.affinity.push_back(multimodal ? Matrix(affinity / n) : Matrix());
  }
  if (log != nullptr) {
    for (const auto& e : log->epochs) b.alignment_trace.emplace_back(e.epoch, e.paired_cosine);
  }
  return b;
}

void write_explain(const ExplainBundle& b, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream out(dir / name);
    if (!out) throw LoadError("cannot write " + (dir / name).string());
    return out;
  };
  char buf[64];
  auto fmt = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return std::string(buf);
  };

  {
    std::ofstream out = open("importance.tsv");
    out << "patient_id";
    for (const auto& n : b.histology_names) out << "\thistology:" << n;
    for (const auto& n : b.gene_group_names) out << "\tgenomic:" << n;
    out << '\n';
    for (std::size_t i = 0; i < b.patient_ids.size(); ++i) {
      out << b.patient_ids[i];
      for (Eigen::Index k = 0; k < 12; ++k) out << '\t' << fmt(b.importance(static_cast<Eigen::Index>(i), k));
      out << '\n';
    }
  }
  {
    std::ofstream out = open("affinity.tsv");
    out << "patient_id\thistology_prototype\tgenomic_prototype\taffinity\n";
    for (std::size_t i = 0; i < b.patient_ids.size(); ++i) {
      const Matrix& a = b.affinity[i];
      for (Eigen::Index r = 0; r < a.rows(); ++r)
        for (Eigen::Index c = 0; c < a.cols(); ++c)
          out << b.patient_ids[i] << '\t' << b.histology_names[r] << '\t' << b.gene_group_names[c] << '\t'
              << fmt(a(r, c)) << '\n';
    }
  }
  {
    std::ofstream out = open("attention.tsv");
    out << "patient_id\tslide_id\tprototype\tpatch\trow\tcol\tweight\n";
    for (const auto& s : b.attention) {
      for (Eigen::Index k = 0; k < s.attention.rows(); ++k) {
        for (Eigen::Index j = 0; j < s.attention.cols(); ++j) {
          out << s.patient_id << '\t' << s.slide_id << '\t' << b.histology_names[k] << '\t' << j << '\t';
          if (static_cast<std::size_t>(j) < s.coords.size()) {
            out << s.coords[j].row << '\t' << s.coords[j].col;
          } else {
            out << "NA\tNA";
          }
          std::snprintf(buf, sizeof buf, "%.9g", s.attention(k, j));
          out << '\t' << buf << '\n';
        }
      }
    }
  }
  {
    std::ofstream out = open("alignment_trace.tsv");
    out << "epoch\tpaired_cosine\n";
    for (const auto& [epoch, cosine] : b.alignment_trace) out << epoch << '\t' << fmt(cosine) << '\n';
  }

  nlohmann::json index;
  index["format"] = "protofuse-explain";
  index["version"] = 1;
  index["patients"] = b.patient_ids.size();
  index["slides"] = b.attention.size();
  index["histology_prototypes"] = b.histology_names;
  index["genomic_prototypes"] = b.gene_group_names;
  index["files"] = {
      {{"name", "importance.tsv"}, {"shape", {b.patient_ids.size(), 12}}, {"normalization", "min-max per patient"}},
      {{"name", "affinity.tsv"}, {"layout", "long"}, {"range", {-1.0, 1.0}}},
      {{"name", "attention.tsv"}, {"layout", "long"}, {"normalization", "rows sum to 1 per prototype and slide"}},
      {{"name", "alignment_trace.tsv"}, {"epochs", b.alignment_trace.size()}},
  };
  std::ofstream out = open("index.json");
  out << index.dump(2) << '\n';
}

}  // namespace protofuse
