// The fixed ensemble of random linear maps applied to embeddings and
// prototypes, and the consensus loss over the transformed assignment
// probabilities.
#pragma once

#include <Eigen/Dense>
#include <vector>

#include "concurl/rng.hpp"
#include "concurl/softclust.hpp"

namespace concurl {

enum class TransformKind { GaussianProjection, Diagonal };
enum class EnsembleKind { GaussianProjection, Diagonal, Mixed };

EnsembleKind ensemble_kind_from_string(const std::string& s);
std::string to_string(EnsembleKind k);

struct Transform {
    TransformKind kind;
    Eigen::MatrixXd proj;   // d x d_out (GaussianProjection)
    Eigen::VectorXd diag;   // d        (Diagonal)

    int in_dim() const;
    int out_dim() const;
};

// Drawn once and fixed for the whole training run.
struct TransformEnsemble {
    std::vector<Transform> transforms;
    std::uint64_t seed = 0;

    int size() const { return static_cast<int>(transforms.size()); }
};

// Gaussian projection entries iid N(0, 1/d_out); diagonal entries iid
// log-uniform in [0.1, 10]. Mixed alternates projection, diagonal, ...
// Projection matrices are checked for full rank.
TransformEnsemble init_ensemble(int m, EnsembleKind kind, int d, int d_out, std::uint64_t seed);

// Applies one map to embeddings (rows) and prototypes (columns) and
// normalizes both. Throws a degenerate-transform error naming
// `transform_index` if any output vector has near-zero norm.
struct TransformedPair {
    Eigen::MatrixXd Z;  // B x d_out, rows unit norm
    Eigen::MatrixXd C;  // d_out x K, columns unit norm
};
TransformedPair apply_transform(const Transform& t, const Eigen::MatrixXd& Z,
                                const Eigen::MatrixXd& C, int transform_index = -1);

struct ConsensusResult {
    double loss = 0.0;
    Eigen::MatrixXd grad_z1;  // dL/dZ1, B x d
    Eigen::MatrixXd grad_z2;  // dL/dZ2, B x d
    Eigen::MatrixXd grad_c;   // dL/dC,  d x K
};

// For each transform m, the swapped-target cross-entropies
//   -(1/2B) sum_ij q2_ij log ptilde1_ij  and  -(1/2B) sum_ij q1_ij log ptilde2_ij
// summed over the ensemble in index order. Targets are constants; gradients
// flow into Z1, Z2 and the prototypes through the transformed softmax.
// q rows must each sum to 1. log arguments are floored at 1e-30.
ConsensusResult consensus_loss(const TransformEnsemble& ens, const Eigen::MatrixXd& Z1,
                               const Eigen::MatrixXd& Z2, const Prototypes& protos,
                               const Eigen::MatrixXd& q1, const Eigen::MatrixXd& q2, double tau);

}  // namespace concurl
