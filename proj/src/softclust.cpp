#include "concurl/softclust.hpp"

#include <cmath>
#include <iostream>
#include <stdexcept>

#include "concurl/nn.hpp"

namespace concurl {

Prototypes init_prototypes(int k, int d, RngStream& rng) {
    if (k < 2) throw std::invalid_argument("init_prototypes: k must be >= 2");
    if (d < 2) throw std::invalid_argument("init_prototypes: d must be >= 2");
    Prototypes p;
    p.C.resize(d, k);
    for (int j = 0; j < k; ++j)
        for (int i = 0; i < d; ++i) p.C(i, j) = rng.normal();
    return p;
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
    Eigen::VectorXd row_max = logits.rowwise().maxCoeff();
    Eigen::MatrixXd e = (logits.colwise() - row_max).array().exp();
    Eigen::VectorXd sums = e.rowwise().sum();
    return e.array().colwise() / sums.array();
}

Eigen::MatrixXd assignment_probabilities(const Eigen::MatrixXd& Z, const Prototypes& protos,
                                         double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("assignment_probabilities: tau must be > 0");
    if (Z.cols() != protos.dim())
        throw std::invalid_argument("assignment_probabilities: embedding/prototype dim mismatch");
    RowNormalized zbar = l2_normalize_rows(Z, "embedding");
    ColNormalized cbar = l2_normalize_cols(protos.C, "prototype");
    return softmax_rows(zbar.normalized * cbar.normalized / tau);
}

namespace {

CodeMatrix sinkhorn_impl(const Eigen::MatrixXd& Z, const Prototypes& protos, double epsilon,
                         int n_iters, bool converge, double tol) {
    if (!(epsilon > 0.0)) throw std::invalid_argument("sinkhorn: epsilon must be > 0");
    if (n_iters < 1) throw std::invalid_argument("sinkhorn: need at least one iteration");
    const int B = static_cast<int>(Z.rows());
    const int K = protos.k();
    if (Z.cols() != protos.dim()) throw std::invalid_argument("sinkhorn: dim mismatch");
    if (B < K) std::cerr << "warning: sinkhorn with B=" << B << " < K=" << K
                         << "; equipartition is infeasible at full confidence\n";

    RowNormalized zbar = l2_normalize_rows(Z, "embedding");
    ColNormalized cbar = l2_normalize_cols(protos.C, "prototype");
    Eigen::MatrixXd S = cbar.normalized.transpose() * zbar.normalized.transpose();  // K x B

    // Max-subtraction keeps exp in range; the constant shift is absorbed by
    // the scalings.
    Eigen::MatrixXd Q = ((S.array() - S.maxCoeff()) / epsilon).exp();
    if ((Q.rowwise().sum().array() <= 0.0).any() || (Q.colwise().sum().array() <= 0.0).any())
        throw std::runtime_error("sinkhorn: zero row or column after exponentiation");

    const double row_target = 1.0 / K;
    const double col_target = 1.0 / B;
    for (int it = 0; it < n_iters; ++it) {
        Eigen::VectorXd r = Q.rowwise().sum();
        if ((r.array() <= 0.0).any()) throw std::runtime_error("sinkhorn: numerically degenerate row");
        Q.array().colwise() *= (row_target / r.array());
        Eigen::RowVectorXd c = Q.colwise().sum();
        if ((c.array() <= 0.0).any()) throw std::runtime_error("sinkhorn: numerically degenerate column");
        Q.array().rowwise() *= (col_target / c.array());
        if (converge) {
            double residual = (Q.rowwise().sum().array() - row_target).abs().maxCoeff();
            if (residual <= tol) break;
        }
    }
    CodeMatrix out;
    out.Q = std::move(Q);
    return out;
}

}  // namespace

CodeMatrix sinkhorn_codes(const Eigen::MatrixXd& Z, const Prototypes& protos, double epsilon,
                          int n_iters) {
    return sinkhorn_impl(Z, protos, epsilon, n_iters, false, 0.0);
}

CodeMatrix sinkhorn_codes_converged(const Eigen::MatrixXd& Z, const Prototypes& protos,
                                    double epsilon, double tol, int max_iters) {
    return sinkhorn_impl(Z, protos, epsilon, max_iters, true, tol);
}

}  // namespace concurl
