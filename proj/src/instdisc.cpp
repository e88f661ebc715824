#include "concurl/instdisc.hpp"

#include <cmath>
#include <stdexcept>

#include "concurl/nn.hpp"
#include "concurl/softclust.hpp"

namespace concurl {

MemoryBank init_memory_bank(int n, int feat_dim, double momentum, double tau_id, int m_noise,
                            RngStream& rng) {
    if (n < 2 || feat_dim < 1) throw std::invalid_argument("init_memory_bank: bad dimensions");
    if (!(momentum >= 0.0 && momentum <= 1.0)) throw std::invalid_argument("bank momentum must be in [0,1]");
    if (!(tau_id > 0.0)) throw std::invalid_argument("tau_id must be > 0");
    if (m_noise < 1 || m_noise >= n) throw std::invalid_argument("m_noise must be in [1, N)");
    MemoryBank mb;
    mb.momentum = momentum;
    mb.tau_id = tau_id;
    mb.m_noise = m_noise;
    mb.bank.resize(n, feat_dim);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < feat_dim; ++j) mb.bank(i, j) = rng.normal();
        mb.bank.row(i) = l2_normalize(mb.bank.row(i).transpose()).transpose();
    }
    return mb;
}

double id_probability(const MemoryBank& mb, const Eigen::VectorXd& f, int i) {
    if (i < 0 || i >= mb.n()) throw std::invalid_argument("id_probability: invalid id");
    if (f.size() != mb.feat_dim()) throw std::invalid_argument("id_probability: feature dim mismatch");
    Eigen::VectorXd s = mb.bank * f / mb.tau_id;
    const double mx = s.maxCoeff();
    Eigen::VectorXd e = (s.array() - mx).exp();
    return e[i] / e.sum();
}

Eigen::MatrixXi draw_noise_ids(int n, const std::vector<int>& ids, int m_noise,
                               RngStream& noise_rng) {
    const int B = static_cast<int>(ids.size());
    Eigen::MatrixXi noise(B, m_noise);
    for (int b = 0; b < B; ++b) {
        for (int l = 0; l < m_noise; ++l) {
            // Uniform over the n-1 ids other than the sample's own.
            std::int64_t u = noise_rng.uniform_int(n - 1);
            noise(b, l) = static_cast<int>(u >= ids[b] ? u + 1 : u);
        }
    }
    return noise;
}

NceResult nce_loss_with_noise(const MemoryBank& mb, const Eigen::MatrixXd& feats,
                              const std::vector<int>& ids, const Eigen::MatrixXi& noise_ids) {
    const int B = static_cast<int>(feats.rows());
    const int N = mb.n();
    if (static_cast<int>(ids.size()) != B) throw std::invalid_argument("nce_loss: ids size mismatch");
    if (feats.cols() != mb.feat_dim()) throw std::invalid_argument("nce_loss: feature dim mismatch");
    if (mb.m_noise >= N) throw std::invalid_argument("nce_loss: m_noise must be < N");
    if (noise_ids.rows() != B || noise_ids.cols() != mb.m_noise)
        throw std::invalid_argument("nce_loss: noise_ids shape mismatch");
    for (int b = 0; b < B; ++b) {
        if (ids[b] < 0 || ids[b] >= N) throw std::invalid_argument("nce_loss: invalid id");
        if (std::abs(feats.row(b).norm() - 1.0) > 1e-6)
            throw std::invalid_argument("nce_loss: features must be normalized");
    }

    const double m = static_cast<double>(mb.m_noise);
    const double c = m / static_cast<double>(N);  // m * P_n

    Eigen::MatrixXd P = softmax_rows(feats * mb.bank.transpose() / mb.tau_id);  // B x N
    Eigen::MatrixXd dP = Eigen::MatrixXd::Zero(B, N);

    double loss = 0.0;
    for (int b = 0; b < B; ++b) {
        const double pi = P(b, ids[b]);
        // -log h(i, f) = log(p + c) - log p, nonnegative since h < 1.
        loss += std::log(pi + c) - std::log(pi);
        dP(b, ids[b]) += -c / (pi * (pi + c));
        for (int l = 0; l < mb.m_noise; ++l) {
            const int j = noise_ids(b, l);
            if (j < 0 || j >= N || j == ids[b]) throw std::invalid_argument("nce_loss: bad noise id");
            const double pj = P(b, j);
            loss += std::log1p(pj / c);  // -log(1 - h(j, f)), nonnegative
            dP(b, j) += 1.0 / (pj + c);
        }
    }
    loss /= B;
    dP /= B;

    // Through the softmax rows, then the bank (a constant) back to feats.
    Eigen::VectorXd inner = (dP.array() * P.array()).rowwise().sum();
    Eigen::MatrixXd dlogits = P.array() * (dP.array().colwise() - inner.array());
    NceResult res;
    res.loss = loss;
    res.grad_feats = dlogits * mb.bank / mb.tau_id;
    return res;
}

NceResult nce_loss(const MemoryBank& mb, const Eigen::MatrixXd& feats, const std::vector<int>& ids,
                   RngStream& noise_rng) {
    return nce_loss_with_noise(mb, feats, ids,
                               draw_noise_ids(mb.n(), ids, mb.m_noise, noise_rng));
}

void bank_update(MemoryBank& mb, const Eigen::MatrixXd& feats, const std::vector<int>& ids,
                 double momentum) {
    if (!(momentum >= 0.0 && momentum <= 1.0)) throw std::invalid_argument("bank momentum must be in [0,1]");
    if (momentum == 1.0) return;
    const int B = static_cast<int>(feats.rows());
    if (static_cast<int>(ids.size()) != B) throw std::invalid_argument("bank_update: ids size mismatch");
    for (int b = 0; b < B; ++b) {
        const int i = ids[b];
        if (i < 0 || i >= mb.n()) throw std::invalid_argument("bank_update: invalid id");
        Eigen::VectorXd mixed =
            momentum * mb.bank.row(i).transpose() + (1.0 - momentum) * feats.row(b).transpose();
        mb.bank.row(i) = l2_normalize(mixed).transpose();
    }
}

}  // namespace concurl
