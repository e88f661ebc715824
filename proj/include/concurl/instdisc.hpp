// Instance-discrimination loss with a memory bank of normalized features.
// The recognition softmax uses the exact partition function over all N
// bank rows (cheap at this scale, and it makes gradient checks exact).
#pragma once

#include <Eigen/Dense>
#include <vector>

#include "concurl/rng.hpp"

namespace concurl {

struct MemoryBank {
    Eigen::MatrixXd bank;   // N x feat_dim, every row unit norm
    double momentum = 0.5;
    double tau_id = 0.5;
    int m_noise = 0;

    int n() const { return static_cast<int>(bank.rows()); }
    int feat_dim() const { return static_cast<int>(bank.cols()); }
};

// Rows initialized to random unit vectors.
MemoryBank init_memory_bank(int n, int feat_dim, double momentum, double tau_id, int m_noise,
                            RngStream& rng);

// P(i | f): softmax over all bank rows of <bank_j, f> / tau_id.
double id_probability(const MemoryBank& mb, const Eigen::VectorXd& f, int i);

struct NceResult {
    double loss = 0.0;
    Eigen::MatrixXd grad_feats;  // dL/dfeats (at the normalized features)
};

// Per sample: -log h(i, f) for its own id plus -log(1 - h(j, f)) over
// m_noise uniformly drawn other ids j, h(j, f) = P(j|f) / (P(j|f) + m/N);
// batch mean. Features must be row-normalized.
NceResult nce_loss(const MemoryBank& mb, const Eigen::MatrixXd& feats, const std::vector<int>& ids,
                   RngStream& noise_rng);

// Deterministic core with the noise ids supplied explicitly (B x m_noise);
// used by nce_loss and by finite-difference checks that must hold the noise
// sample fixed.
NceResult nce_loss_with_noise(const MemoryBank& mb, const Eigen::MatrixXd& feats,
                              const std::vector<int>& ids, const Eigen::MatrixXi& noise_ids);

// For each of the B samples, m_noise ids drawn uniformly from all others.
Eigen::MatrixXi draw_noise_ids(int n, const std::vector<int>& ids, int m_noise,
                               RngStream& noise_rng);

// row_i <- normalize(momentum * row_i + (1 - momentum) * f_i). No gradient
// flows through the bank.
void bank_update(MemoryBank& mb, const Eigen::MatrixXd& feats, const std::vector<int>& ids,
                 double momentum);

}  // namespace concurl
