#include "protofuse/prototyping.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "protofuse/errors.hpp"

namespace protofuse {

AttentionParams AttentionParams::identity(Eigen::Index dim, int n_iterations) {
  return {Matrix::Identity(dim, dim), Matrix::Identity(dim, dim), Matrix::Identity(dim, dim), n_iterations};
}

AttentionParams AttentionParams::zeros(Eigen::Index dim, int n_iterations) {
  return {Matrix::Zero(dim, dim), Matrix::Zero(dim, dim), Matrix::Zero(dim, dim), n_iterations};
}

void AttentionParams::check(Eigen::Index dim) const {
  for (const Matrix* m : {&w_q, &w_k, &w_v}) {
    if (m->rows() != dim || m->cols() != dim) {
      throw PreconditionError("attention weights must be " + std::to_string(dim) + "x" + std::to_string(dim));
    }
  }
  if (n_iterations < 1) throw ConfigError("attention needs at least one iteration");
}

// ---------------------------------------------------------------------------
// Embedding providers

EmbeddingProvider EmbeddingProvider::deterministic_hash(Eigen::Index dimension) {
  if (dimension < 1) throw ConfigError("embedding dimension must be positive");
  EmbeddingProvider p;
  p.kind_ = Kind::deterministic_hash;
  p.dimension_ = dimension;
  return p;
}

EmbeddingProvider EmbeddingProvider::from_rows(Matrix rows) {
  if (rows.rows() < 1 || rows.cols() < 1) throw InitializationError("prompt-embedding table is empty");
  EmbeddingProvider p;
  p.kind_ = Kind::file_backed;
  p.dimension_ = rows.cols();
  p.rows_ = std::move(rows);
  return p;
}

EmbeddingProvider EmbeddingProvider::from_file(const std::filesystem::path& path) {
  try {
    return from_rows(read_embeddings(path));
  } catch (const LoadError&) {
    throw;
  } catch (const Error& e) {
    throw InitializationError(std::string("cannot read prompt embeddings: ") + e.what());
  }
}

Matrix EmbeddingProvider::embed(const std::vector<std::string>& prompts) const {
  Matrix out(static_cast<Eigen::Index>(prompts.size()), dimension_);
  if (kind_ == Kind::file_backed) {
    if (static_cast<Eigen::Index>(prompts.size()) > rows_.rows()) {
      throw InitializationError("prompt-embedding file has fewer rows than prompts");
    }
    for (std::size_t i = 0; i < prompts.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = rows_.row(static_cast<Eigen::Index>(i));
    return out;
  }
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    // FNV-1a keyed seed.
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : prompts[i]) {
      h ^= ch;
      h *= 1099511628211ULL;
    }
    std::mt19937_64 rng(h);
    std::normal_distribution<double> normal(0.0, 1.0);
    RowVector v(dimension_);
    for (Eigen::Index k = 0; k < dimension_; ++k) v(k) = normal(rng);
    out.row(static_cast<Eigen::Index>(i)) = v / v.norm();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Differentiable blocks

namespace ops {

AttentionVars constant_attention(ad::Tape& tape, const AttentionParams& params) {
  return {tape.constant(params.w_q), tape.constant(params.w_k), tape.constant(params.w_v)};
}

ad::Var cross_attention(const ad::Var& queries, const ad::Var& source, const AttentionVars& w, Matrix* attention) {
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(queries.cols()));
  const ad::Var q = ad::matmul(queries, w.w_q);
  const ad::Var k = ad::matmul(source, w.w_k);
  const ad::Var v = ad::matmul(source, w.w_v);
  const ad::Var attn = ad::softmax_rows(ad::scale(ad::matmul(q, ad::transpose(k)), inv_sqrt_d));
  if (attention != nullptr) *attention = attn.value();
  return ad::matmul(attn, v);
}

ad::Var refine_prototypes(const ad::Var& prototypes, const ad::Var& patches, const AttentionVars& w,
                          int n_iterations, Matrix* last_attention) {
  ad::Var current = prototypes;
  for (int t = 0; t < n_iterations; ++t) {
    current = cross_attention(current, patches, w, t + 1 == n_iterations ? last_attention : nullptr);
  }
  return current;
}

ad::Var self_attention(const ad::Var& x, const AttentionVars& w) {
  return ad::add(x, cross_attention(x, x, w));
}

ad::Var group_tokens(const GroupSummary& summary, const ad::Var& scale, const ad::Var& bias) {
  Matrix means(kNumGeneGroups, 1);
  for (int k = 0; k < kNumGeneGroups; ++k) means(k, 0) = summary.empty[k] ? 0.0 : summary.mean[k];
  ad::Tape& tape = *scale.tape();
  return ad::add(ad::scale_rows(scale, tape.constant(std::move(means))), bias);
}

ad::Var importance(const ad::Var& tokens, const ad::Var& weight, const ad::Var& bias) {
  const ad::Var logits = ad::add_row(ad::matmul(tokens, weight), bias);
  return ad::sigmoid(logits);
}

}  // namespace ops

// ---------------------------------------------------------------------------
// Public operations

PrototypeSet init_histology_prototypes(const std::vector<std::string>& category_names,
                                       const EmbeddingProvider& provider) {
  if (category_names.size() != static_cast<std::size_t>(kNumHistologyCategories)) {
    throw ArityError("expected 6 histology category names, got " + std::to_string(category_names.size()));
  }
  PrototypeSet set;
  set.tokens = provider.embed(category_names);
  set.names = category_names;
  if (!set.tokens.allFinite()) throw InitializationError("prompt embedding produced non-finite values");
  return set;
}

RefinedPrototypes refine_histology_prototypes(const PrototypeSet& protos, const SlideBag& patches,
                                              const AttentionParams& params) {
  if (patches.n_patches() < 1) throw PreconditionError("cannot refine prototypes over an empty patch bag");
  if (patches.dim() != protos.dim()) throw PreconditionError("patch and prototype dimensions differ");
  params.check(protos.dim());
  ad::Tape tape;
  RefinedPrototypes out;
  const ad::Var refined = ops::refine_prototypes(tape.constant(protos.tokens), tape.constant(patches.patch_embeddings),
                                                 ops::constant_attention(tape, params), params.n_iterations,
                                                 &out.attention);
  out.prototypes.tokens = refined.value();
  out.prototypes.names = protos.names;
  return out;
}

GenomicPrototypes build_genomic_prototypes(const GenomicProfile& profile, const GroupEmbedders& embedders,
                                           const AttentionParams& self_attn, const NameList& group_names) {
  if (embedders.scale.rows() != kNumGeneGroups || embedders.bias.rows() != kNumGeneGroups ||
      embedders.scale.cols() != embedders.bias.cols()) {
    throw PreconditionError("group embedders must be 6 x D");
  }
  self_attn.check(embedders.scale.cols());
  const GroupSummary summary = summarize_groups(profile);
  ad::Tape tape;
  const ad::Var pooled = ops::group_tokens(summary, tape.constant(embedders.scale), tape.constant(embedders.bias));
  const ad::Var refined = ops::self_attention(pooled, ops::constant_attention(tape, self_attn));
  GenomicPrototypes out;
  out.pooled = pooled.value();
  out.prototypes.tokens = refined.value();
  out.prototypes.names.assign(group_names.begin(), group_names.end());
  out.empty_groups = summary.empty;
  return out;
}

Vector importance_weights(const PrototypeSet& protos, const ImportanceHead& head) {
  if (head.weight.rows() != protos.dim() || head.weight.cols() != 1) {
    throw PreconditionError("importance head input dimension differs from prototype dimension");
  }
  ad::Tape tape;
  const ad::Var w = ops::importance(tape.constant(protos.tokens), tape.constant(head.weight),
                                    tape.constant(Matrix::Constant(1, 1, head.bias)));
  return w.value().col(0);
}

PrototypeSet apply_importance(const PrototypeSet& protos, const Vector& weights) {
  if (weights.size() != protos.size()) {
    throw ArityError("importance vector has length " + std::to_string(weights.size()) + ", expected " +
                     std::to_string(protos.size()));
  }
  PrototypeSet out = protos;
  out.tokens = protos.tokens.array().colwise() * weights.array();
  out.importance = weights;
  return out;
}

}  // namespace protofuse
