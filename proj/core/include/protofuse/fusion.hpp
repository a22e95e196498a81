#pragma once

// Bipartite fusion: cosine affinity between histology and genomic prototypes,
// greedy Top-K pair selection without reuse, and fusion of the selected pairs
// with residual concatenation of the unmatched prototypes.

#include <utility>
#include <vector>

#include "protofuse/autodiff.hpp"

namespace protofuse {

inline constexpr int kDefaultTopK = 3;

struct AffinityMatrix {
  Matrix values;  // N_P x N_G, entries in [-1, 1]
};

struct FusionSelection {
  std::vector<std::pair<int, int>> pairs;  // (histology index, genomic index)
  std::vector<int> residual_p;
  std::vector<int> residual_g;
};

// mixer(p ⊕ g) = [p g] W + b.
struct FusionParams {
  Matrix weight;  // 2D x D
  Matrix bias;    // 1 x D
};

AffinityMatrix affinity_matrix(const Matrix& p_tokens, const Matrix& g_tokens);

// Repeatedly takes the largest entry whose row and column are both unused;
// ties go to the lexicographically smaller (n, m).
FusionSelection select_top_k(const AffinityMatrix& affinity, int k);

// [mixer(p_n ⊕ g_m) per pair] ++ [p_j, j in residual_p] ++ [g_j, j in residual_g].
Matrix fuse(const Matrix& p_tokens, const Matrix& g_tokens, const FusionSelection& selection,
            const FusionParams& params);

namespace ops {

ad::Var fuse(const ad::Var& p_tokens, const ad::Var& g_tokens, const FusionSelection& selection,
             const ad::Var& weight, const ad::Var& bias);

}  // namespace ops
}  // namespace protofuse
