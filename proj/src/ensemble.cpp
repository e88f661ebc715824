#include "concurl/ensemble.hpp"

#include <cmath>
#include <stdexcept>

#include "concurl/nn.hpp"

namespace concurl {

namespace {
constexpr double kLogFloor = 1e-30;  // Sinkhorn targets can be numerically one-hot
}

EnsembleKind ensemble_kind_from_string(const std::string& s) {
    if (s == "gaussian_projection") return EnsembleKind::GaussianProjection;
    if (s == "diagonal") return EnsembleKind::Diagonal;
    if (s == "mixed") return EnsembleKind::Mixed;
    throw std::invalid_argument("unknown ensemble kind: " + s);
}

std::string to_string(EnsembleKind k) {
    switch (k) {
        case EnsembleKind::GaussianProjection: return "gaussian_projection";
        case EnsembleKind::Diagonal: return "diagonal";
        case EnsembleKind::Mixed: return "mixed";
    }
    return "?";
}

int Transform::in_dim() const {
    return kind == TransformKind::GaussianProjection ? static_cast<int>(proj.rows())
                                                     : static_cast<int>(diag.size());
}

int Transform::out_dim() const {
    return kind == TransformKind::GaussianProjection ? static_cast<int>(proj.cols())
                                                     : static_cast<int>(diag.size());
}

TransformEnsemble init_ensemble(int m, EnsembleKind kind, int d, int d_out, std::uint64_t seed) {
    if (m < 0) throw std::invalid_argument("init_ensemble: m must be >= 0");
    if (d < 2) throw std::invalid_argument("init_ensemble: d must be >= 2");
    const bool wants_projection = kind != EnsembleKind::Diagonal;
    if (wants_projection && m > 0 && d_out < 2)
        throw std::invalid_argument("init_ensemble: d_out must be >= 2 for projections");

    TransformEnsemble ens;
    ens.seed = seed;
    RngStream rng(seed, "ensemble");
    const double log_lo = std::log(0.1), log_hi = std::log(10.0);
    for (int i = 0; i < m; ++i) {
        Transform t;
        const bool diagonal =
            kind == EnsembleKind::Diagonal || (kind == EnsembleKind::Mixed && i % 2 == 1);
        if (diagonal) {
            t.kind = TransformKind::Diagonal;
            t.diag.resize(d);
            for (int j = 0; j < d; ++j) t.diag[j] = std::exp(rng.uniform(log_lo, log_hi));
        } else {
            t.kind = TransformKind::GaussianProjection;
            t.proj.resize(d, d_out);
            const double std = 1.0 / std::sqrt(static_cast<double>(d_out));
            for (int r = 0; r < d; ++r)
                for (int c = 0; c < d_out; ++c) t.proj(r, c) = std * rng.normal();
            Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(t.proj);
            if (qr.rank() != std::min(d, d_out))
                throw std::runtime_error("init_ensemble: projection " + std::to_string(i) +
                                         " is rank deficient");
        }
        ens.transforms.push_back(std::move(t));
    }
    return ens;
}

namespace {

Eigen::MatrixXd apply_to_rows(const Transform& t, const Eigen::MatrixXd& Z) {
    if (Z.cols() != t.in_dim()) throw std::invalid_argument("transform/embedding dim mismatch");
    if (t.kind == TransformKind::GaussianProjection) return Z * t.proj;
    return Z.array().rowwise() * t.diag.transpose().array();
}

Eigen::MatrixXd apply_to_cols(const Transform& t, const Eigen::MatrixXd& C) {
    if (C.rows() != t.in_dim()) throw std::invalid_argument("transform/prototype dim mismatch");
    if (t.kind == TransformKind::GaussianProjection) return t.proj.transpose() * C;
    return C.array().colwise() * t.diag.array();
}

Eigen::MatrixXd rows_grad_through(const Transform& t, const Eigen::MatrixXd& g) {
    if (t.kind == TransformKind::GaussianProjection) return g * t.proj.transpose();
    return g.array().rowwise() * t.diag.transpose().array();
}

Eigen::MatrixXd cols_grad_through(const Transform& t, const Eigen::MatrixXd& g) {
    if (t.kind == TransformKind::GaussianProjection) return t.proj * g;
    return g.array().colwise() * t.diag.array();
}

std::string transform_tag(int index) {
    return index >= 0 ? "transform " + std::to_string(index) : "transform";
}

void check_targets(const Eigen::MatrixXd& q, int B, int K, const char* name) {
    if (q.rows() != B || q.cols() != K)
        throw std::invalid_argument(std::string("consensus_loss: bad shape for ") + name);
    for (int i = 0; i < B; ++i)
        if (std::abs(q.row(i).sum() - 1.0) > 1e-6)
            throw std::invalid_argument(std::string("consensus_loss: rows of ") + name +
                                        " must sum to 1");
}

double cross_entropy(const Eigen::MatrixXd& q, const Eigen::MatrixXd& p, double scale) {
    return -scale * (q.array() * p.array().max(kLogFloor).log()).sum();
}

}  // namespace

TransformedPair apply_transform(const Transform& t, const Eigen::MatrixXd& Z,
                                const Eigen::MatrixXd& C, int transform_index) {
    TransformedPair out;
    out.Z = l2_normalize_rows(apply_to_rows(t, Z), transform_tag(transform_index) + " embedding")
                .normalized;
    out.C = l2_normalize_cols(apply_to_cols(t, C), transform_tag(transform_index) + " prototype")
                .normalized;
    return out;
}

ConsensusResult consensus_loss(const TransformEnsemble& ens, const Eigen::MatrixXd& Z1,
                               const Eigen::MatrixXd& Z2, const Prototypes& protos,
                               const Eigen::MatrixXd& q1, const Eigen::MatrixXd& q2, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("consensus_loss: tau must be > 0");
    const int B = static_cast<int>(Z1.rows());
    const int K = protos.k();
    if (Z2.rows() != B || Z1.cols() != Z2.cols() || Z1.cols() != protos.dim())
        throw std::invalid_argument("consensus_loss: embedding shape mismatch");
    check_targets(q1, B, K, "q1");
    check_targets(q2, B, K, "q2");

    ConsensusResult res;
    res.grad_z1 = Eigen::MatrixXd::Zero(B, Z1.cols());
    res.grad_z2 = Eigen::MatrixXd::Zero(B, Z2.cols());
    res.grad_c = Eigen::MatrixXd::Zero(protos.dim(), K);

    const double scale = 1.0 / (2.0 * B);
    for (int mi = 0; mi < ens.size(); ++mi) {
        const Transform& t = ens.transforms[mi];
        RowNormalized zt1 =
            l2_normalize_rows(apply_to_rows(t, Z1), transform_tag(mi) + " embedding");
        RowNormalized zt2 =
            l2_normalize_rows(apply_to_rows(t, Z2), transform_tag(mi) + " embedding");
        ColNormalized ct =
            l2_normalize_cols(apply_to_cols(t, protos.C), transform_tag(mi) + " prototype");

        Eigen::MatrixXd p1 = softmax_rows(zt1.normalized * ct.normalized / tau);
        Eigen::MatrixXd p2 = softmax_rows(zt2.normalized * ct.normalized / tau);

        res.loss += cross_entropy(q2, p1, scale);
        res.loss += cross_entropy(q1, p2, scale);

        // Cross-entropy-through-softmax: dL/dlogits = scale * (p - q).
        Eigen::MatrixXd g1 = scale * (p1 - q2);
        Eigen::MatrixXd g2 = scale * (p2 - q1);

        res.grad_z1 += rows_grad_through(
            t, l2_normalize_rows_backward(zt1, g1 * ct.normalized.transpose() / tau));
        res.grad_z2 += rows_grad_through(
            t, l2_normalize_rows_backward(zt2, g2 * ct.normalized.transpose() / tau));

        Eigen::MatrixXd gc_normalized =
            (zt1.normalized.transpose() * g1 + zt2.normalized.transpose() * g2) / tau;
        res.grad_c += cols_grad_through(t, l2_normalize_cols_backward(ct, gc_normalized));
    }
    return res;
}

}  // namespace concurl
