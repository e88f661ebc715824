// Prototype-based soft cluster assignments and Sinkhorn-Knopp target codes
// on the equipartition transportation polytope.
#pragma once

#include <Eigen/Dense>

#include "concurl/rng.hpp"

namespace concurl {

struct Prototypes {
    Eigen::MatrixXd C;  // d x K, one prototype per column

    int k() const { return static_cast<int>(C.cols()); }
    int dim() const { return static_cast<int>(C.rows()); }
};

// Entries N(0,1); registered as trainable parameters by the trainer.
Prototypes init_prototypes(int k, int d, RngStream& rng);

// Numerically stable row-wise softmax (max subtracted per row).
Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits);

// Row i = softmax_j of <zbar_i, cbar_j> / tau. Inputs are normalized
// internally; rescaling any embedding or prototype leaves the result
// unchanged.
Eigen::MatrixXd assignment_probabilities(const Eigen::MatrixXd& Z, const Prototypes& protos,
                                         double tau);

// Codes on the transportation polytope
//   { Q in R+^{KxB} : Q 1_B = (1/K) 1_K,  Q^T 1_K = (1/B) 1_B }.
struct CodeMatrix {
    Eigen::MatrixXd Q;  // K x B; column marginal holds exactly

    // Per-image codes: Q^T scaled by B, so every row sums to 1.
    Eigen::MatrixXd q_rows() const { return Q.transpose() * static_cast<double>(Q.cols()); }
};

// Q proportional to exp(Cbar^T Zbar / epsilon), then alternating row scaling
// to (1/K)1_K and column scaling to (1/B)1_B for n_iters rounds, ending on a
// column scaling. Gradients never flow through this computation: codes are
// targets. Warns to stderr when B < K.
CodeMatrix sinkhorn_codes(const Eigen::MatrixXd& Z, const Prototypes& protos, double epsilon,
                          int n_iters);

// Convergence mode: scale until the row-marginal residual drops below tol
// (infinity norm), capped at max_iters rounds.
CodeMatrix sinkhorn_codes_converged(const Eigen::MatrixXd& Z, const Prototypes& protos,
                                    double epsilon, double tol = 1e-9, int max_iters = 1000);

}  // namespace concurl
