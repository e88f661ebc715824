// Small feed-forward networks with exact analytic gradients, L2
// normalization helpers and SGD-with-momentum updates. The computation
// graph is fixed (MLP encoder, MLP head, prototype softmax losses), so
// backprop is hand-rolled per block rather than via a general tape.
#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "concurl/rng.hpp"

namespace concurl {

// Norms below this are treated as degenerate (normalization would explode).
inline constexpr double kTinyNorm = 1e-12;

struct LinearLayer {
    Eigen::MatrixXd W;  // out x in
    Eigen::VectorXd b;  // out
};

// Multilayer perceptron with ReLU between layers (none after the last).
struct Mlp {
    std::vector<LinearLayer> layers;

    int in_dim() const { return static_cast<int>(layers.front().W.cols()); }
    int out_dim() const { return static_cast<int>(layers.back().W.rows()); }
    void validate() const;  // throws if dimensions do not chain or entries non-finite
};

// Weights N(0, 1/sqrt(fan_in)), zero biases.
Mlp mlp_init(const std::vector<int>& dims, RngStream& rng);

struct MlpCache {
    Eigen::MatrixXd input;              // B x in
    std::vector<Eigen::MatrixXd> pre;   // pre-activations per layer, B x out_l
};

struct MlpGrads {
    std::vector<LinearLayer> layers;  // same shapes as the Mlp

    static MlpGrads zeros_like(const Mlp& m);
    void setZero();
    void add_scaled(const MlpGrads& other, double scale);
};

// Rows of x are samples. Pass a cache to enable backward.
Eigen::MatrixXd mlp_forward(const Mlp& m, const Eigen::MatrixXd& x, MlpCache* cache = nullptr);

// Accumulates parameter gradients into `grads` and returns dL/dinput.
Eigen::MatrixXd mlp_backward(const Mlp& m, const MlpCache& cache, const Eigen::MatrixXd& grad_out,
                             MlpGrads& grads);

// v / ||v||; throws on a near-zero norm.
Eigen::VectorXd l2_normalize(const Eigen::VectorXd& v);

// Row-wise normalization with cached norms (for the backward pass).
struct RowNormalized {
    Eigen::MatrixXd normalized;
    Eigen::VectorXd norms;
};
RowNormalized l2_normalize_rows(const Eigen::MatrixXd& x, const std::string& what = "embedding");

// dL/dx given dL/dxbar for a row-normalized matrix: per row,
// (g - xbar (xbar . g)) / norm.
Eigen::MatrixXd l2_normalize_rows_backward(const RowNormalized& fwd, const Eigen::MatrixXd& grad_normalized);

// Column-wise variants (used for prototype matrices, d x K).
struct ColNormalized {
    Eigen::MatrixXd normalized;
    Eigen::RowVectorXd norms;
};
ColNormalized l2_normalize_cols(const Eigen::MatrixXd& x, const std::string& what = "prototype");
Eigen::MatrixXd l2_normalize_cols_backward(const ColNormalized& fwd, const Eigen::MatrixXd& grad_normalized);

// Classic momentum SGD: v <- mu v + (g + wd p); p <- p - lr v.
// Velocity is owned by the caller and must match the parameter shape.
// Non-finite gradients abort with the block name in the message.
void sgd_update(Eigen::MatrixXd& param, const Eigen::MatrixXd& grad, Eigen::MatrixXd& velocity,
                double lr, double momentum, double weight_decay, const std::string& block_name);
void sgd_update(Eigen::VectorXd& param, const Eigen::VectorXd& grad, Eigen::VectorXd& velocity,
                double lr, double momentum, double weight_decay, const std::string& block_name);

// Velocity buffers for one Mlp.
struct MlpVelocity {
    std::vector<LinearLayer> layers;
    static MlpVelocity zeros_like(const Mlp& m);
};
void sgd_step_mlp(Mlp& m, const MlpGrads& grads, MlpVelocity& vel, double lr, double momentum,
                  double weight_decay, const std::string& block_prefix);

}  // namespace concurl
