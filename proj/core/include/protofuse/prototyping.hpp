#pragma once

// Biological prototyping: prompt-initialised histology prototypes refined by
// cross-attention over patch embeddings, genomic prototypes pooled from the
// six functional gene groups and refined by self-attention, and sigmoid
// importance weighting of prototype tokens.

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "protofuse/autodiff.hpp"
#include "protofuse/data_model.hpp"

namespace protofuse {

struct PrototypeSet {
  Matrix tokens;  // N x D
  std::vector<std::string> names;
  std::optional<Vector> importance;

  Eigen::Index size() const { return tokens.rows(); }
  Eigen::Index dim() const { return tokens.cols(); }
};

struct AttentionParams {
  Matrix w_q, w_k, w_v;  // D x D
  int n_iterations = 2;

  static AttentionParams identity(Eigen::Index dim, int n_iterations = 1);
  static AttentionParams zeros(Eigen::Index dim, int n_iterations = 1);
  void check(Eigen::Index dim) const;
};

// f_theta: a single affine map D -> 1 followed by a sigmoid.
struct ImportanceHead {
  Matrix weight;  // D x 1
  double bias = 0.0;

  static ImportanceHead zeros(Eigen::Index dim) { return {Matrix::Zero(dim, 1), 0.0}; }
};

// Per-group affine map applied to the masked mean of that group's genes.
struct GroupEmbedders {
  Matrix scale;  // 6 x D
  Matrix bias;   // 6 x D
};

// Maps prompt strings to fixed embedding vectors.
class EmbeddingProvider {
 public:
  enum class Kind { file_backed, deterministic_hash };

  // Seeded pseudo-random unit vector keyed by the prompt text.
  static EmbeddingProvider deterministic_hash(Eigen::Index dimension);
  // One row per prompt, in prompt order; delimited text.
  static EmbeddingProvider from_file(const std::filesystem::path& path);
  static EmbeddingProvider from_rows(Matrix rows);

  Kind kind() const { return kind_; }
  Eigen::Index dimension() const { return dimension_; }

  // Embeds each prompt; for file-backed providers prompt i maps to row i.
  Matrix embed(const std::vector<std::string>& prompts) const;

 private:
  Kind kind_ = Kind::deterministic_hash;
  Eigen::Index dimension_ = 0;
  Matrix rows_;
};

struct RefinedPrototypes {
  PrototypeSet prototypes;
  Matrix attention;  // N x n_patches, from the final iteration
};

struct GenomicPrototypes {
  PrototypeSet prototypes;
  Matrix pooled;  // tokens before self-attention
  std::array<bool, 6> empty_groups{};
};

PrototypeSet init_histology_prototypes(const std::vector<std::string>& category_names,
                                       const EmbeddingProvider& provider);

RefinedPrototypes refine_histology_prototypes(const PrototypeSet& protos, const SlideBag& patches,
                                              const AttentionParams& params);

GenomicPrototypes build_genomic_prototypes(const GenomicProfile& profile, const GroupEmbedders& embedders,
                                           const AttentionParams& self_attn, const NameList& group_names);

Vector importance_weights(const PrototypeSet& protos, const ImportanceHead& head);

PrototypeSet apply_importance(const PrototypeSet& protos, const Vector& weights);

// Differentiable building blocks shared by the functions above and the model.
namespace ops {

struct AttentionVars {
  ad::Var w_q, w_k, w_v;
};

AttentionVars constant_attention(ad::Tape& tape, const AttentionParams& params);

// softmax(Q W_q (S W_k)^T / sqrt(D)) (S W_v). Writes the attention matrix to
// `attention` when non-null.
ad::Var cross_attention(const ad::Var& queries, const ad::Var& source, const AttentionVars& w,
                        Matrix* attention = nullptr);

// The iterated prototype update; every iteration shares the same weights.
ad::Var refine_prototypes(const ad::Var& prototypes, const ad::Var& patches, const AttentionVars& w,
                          int n_iterations, Matrix* last_attention = nullptr);

// x + softmax(x W_q (x W_k)^T / sqrt(D)) (x W_v).
ad::Var self_attention(const ad::Var& x, const AttentionVars& w);

// Row k = group_mean[k] * scale.row(k) + bias.row(k).
ad::Var group_tokens(const GroupSummary& summary, const ad::Var& scale, const ad::Var& bias);

// N x 1 column of sigmoid(tokens * weight + bias).
ad::Var importance(const ad::Var& tokens, const ad::Var& weight, const ad::Var& bias);

}  // namespace ops
}  // namespace protofuse
