#include "concurl/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace concurl {

void Mlp::validate() const {
    if (layers.empty()) throw std::invalid_argument("mlp has no layers");
    for (size_t l = 0; l < layers.size(); ++l) {
        if (layers[l].b.size() != layers[l].W.rows())
            throw std::invalid_argument("mlp bias/weight shape mismatch at layer " + std::to_string(l));
        if (l > 0 && layers[l].W.cols() != layers[l - 1].W.rows())
            throw std::invalid_argument("mlp layer dimensions do not chain at layer " + std::to_string(l));
        if (!layers[l].W.allFinite() || !layers[l].b.allFinite())
            throw std::invalid_argument("mlp has non-finite parameters at layer " + std::to_string(l));
    }
}

Mlp mlp_init(const std::vector<int>& dims, RngStream& rng) {
    if (dims.size() < 2) throw std::invalid_argument("mlp_init needs at least input and output dims");
    Mlp m;
    for (size_t l = 0; l + 1 < dims.size(); ++l) {
        LinearLayer layer;
        const int fan_in = dims[l], fan_out = dims[l + 1];
        if (fan_in < 1 || fan_out < 1) throw std::invalid_argument("mlp_init: dims must be positive");
        layer.W.resize(fan_out, fan_in);
        const double std = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (int i = 0; i < fan_out; ++i)
            for (int j = 0; j < fan_in; ++j) layer.W(i, j) = std * rng.normal();
        layer.b = Eigen::VectorXd::Zero(fan_out);
        m.layers.push_back(std::move(layer));
    }
    return m;
}

MlpGrads MlpGrads::zeros_like(const Mlp& m) {
    MlpGrads g;
    for (const auto& l : m.layers)
        g.layers.push_back({Eigen::MatrixXd::Zero(l.W.rows(), l.W.cols()),
                            Eigen::VectorXd::Zero(l.b.size())});
    return g;
}

void MlpGrads::setZero() {
    for (auto& l : layers) {
        l.W.setZero();
        l.b.setZero();
    }
}

void MlpGrads::add_scaled(const MlpGrads& other, double scale) {
    for (size_t l = 0; l < layers.size(); ++l) {
        layers[l].W += scale * other.layers[l].W;
        layers[l].b += scale * other.layers[l].b;
    }
}

Eigen::MatrixXd mlp_forward(const Mlp& m, const Eigen::MatrixXd& x, MlpCache* cache) {
    if (x.cols() != m.in_dim())
        throw std::invalid_argument("mlp_forward: input has " + std::to_string(x.cols()) +
                                    " columns, expected " + std::to_string(m.in_dim()));
    if (!x.allFinite()) throw std::invalid_argument("mlp_forward: non-finite input");
    if (cache) {
        cache->input = x;
        cache->pre.clear();
    }
    Eigen::MatrixXd h = x;
    for (size_t l = 0; l < m.layers.size(); ++l) {
        Eigen::MatrixXd z = h * m.layers[l].W.transpose();
        z.rowwise() += m.layers[l].b.transpose();
        if (cache) cache->pre.push_back(z);
        if (l + 1 < m.layers.size())
            h = z.cwiseMax(0.0);
        else
            h = std::move(z);
    }
    return h;
}

Eigen::MatrixXd mlp_backward(const Mlp& m, const MlpCache& cache, const Eigen::MatrixXd& grad_out,
                             MlpGrads& grads) {
    const int L = static_cast<int>(m.layers.size());
    if (static_cast<int>(cache.pre.size()) != L)
        throw std::invalid_argument("mlp_backward: cache does not match network");
    if (grad_out.rows() != cache.input.rows() || grad_out.cols() != m.out_dim())
        throw std::invalid_argument("mlp_backward: grad_out shape mismatch");

    Eigen::MatrixXd g = grad_out;
    for (int l = L - 1; l >= 0; --l) {
        const Eigen::MatrixXd input =
            l == 0 ? cache.input : Eigen::MatrixXd(cache.pre[l - 1].cwiseMax(0.0));
        grads.layers[l].W.noalias() += g.transpose() * input;
        grads.layers[l].b += g.colwise().sum().transpose();
        if (l > 0) {
            Eigen::MatrixXd gin = g * m.layers[l].W;
            // ReLU mask from the previous layer's pre-activations.
            g = gin.cwiseProduct((cache.pre[l - 1].array() > 0.0).cast<double>().matrix());
        } else {
            g = g * m.layers[l].W;
        }
    }
    return g;  // dL/dinput
}

Eigen::VectorXd l2_normalize(const Eigen::VectorXd& v) {
    const double n = v.norm();
    if (!(n > kTinyNorm)) throw std::runtime_error("l2_normalize: degenerate (near-zero) vector");
    return v / n;
}

RowNormalized l2_normalize_rows(const Eigen::MatrixXd& x, const std::string& what) {
    RowNormalized r;
    r.norms = x.rowwise().norm();
    for (Eigen::Index i = 0; i < r.norms.size(); ++i)
        if (!(r.norms[i] > kTinyNorm))
            throw std::runtime_error("degenerate " + what + ": row " + std::to_string(i) +
                                     " has near-zero norm");
    r.normalized = x.array().colwise() / r.norms.array();
    return r;
}

Eigen::MatrixXd l2_normalize_rows_backward(const RowNormalized& fwd, const Eigen::MatrixXd& g) {
    Eigen::VectorXd dots = (fwd.normalized.array() * g.array()).rowwise().sum();
    Eigen::MatrixXd out = g - (fwd.normalized.array().colwise() * dots.array()).matrix();
    out.array().colwise() /= fwd.norms.array();
    return out;
}

ColNormalized l2_normalize_cols(const Eigen::MatrixXd& x, const std::string& what) {
    ColNormalized r;
    r.norms = x.colwise().norm();
    for (Eigen::Index j = 0; j < r.norms.size(); ++j)
        if (!(r.norms[j] > kTinyNorm))
            throw std::runtime_error("degenerate " + what + ": column " + std::to_string(j) +
                                     " has near-zero norm");
    r.normalized = x.array().rowwise() / r.norms.array();
    return r;
}

Eigen::MatrixXd l2_normalize_cols_backward(const ColNormalized& fwd, const Eigen::MatrixXd& g) {
    Eigen::RowVectorXd dots = (fwd.normalized.array() * g.array()).colwise().sum();
    Eigen::MatrixXd out = g - (fwd.normalized.array().rowwise() * dots.array()).matrix();
    out.array().rowwise() /= fwd.norms.array();
    return out;
}

namespace {

template <typename T>
void sgd_update_impl(T& param, const T& grad, T& velocity, double lr, double momentum,
                     double weight_decay, const std::string& block_name) {
    if (!(lr >= 0.0)) throw std::invalid_argument("sgd: lr must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("sgd: momentum must be in [0,1)");
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("sgd: weight_decay must be >= 0");
    if (param.rows() != grad.rows() || param.cols() != grad.cols() ||
        param.rows() != velocity.rows() || param.cols() != velocity.cols())
        throw std::invalid_argument("sgd: shape mismatch for block " + block_name);
    if (!grad.allFinite())
        throw std::runtime_error("sgd: non-finite gradient in block " + block_name);
    velocity = momentum * velocity + (grad + weight_decay * param);
    param -= lr * velocity;
}

}  // namespace

void sgd_update(Eigen::MatrixXd& param, const Eigen::MatrixXd& grad, Eigen::MatrixXd& velocity,
                double lr, double momentum, double weight_decay, const std::string& block_name) {
    sgd_update_impl(param, grad, velocity, lr, momentum, weight_decay, block_name);
}

void sgd_update(Eigen::VectorXd& param, const Eigen::VectorXd& grad, Eigen::VectorXd& velocity,
                double lr, double momentum, double weight_decay, const std::string& block_name) {
    sgd_update_impl(param, grad, velocity, lr, momentum, weight_decay, block_name);
}

MlpVelocity MlpVelocity::zeros_like(const Mlp& m) {
    MlpVelocity v;
    for (const auto& l : m.layers)
        v.layers.push_back({Eigen::MatrixXd::Zero(l.W.rows(), l.W.cols()),
                            Eigen::VectorXd::Zero(l.b.size())});
    return v;
}

void sgd_step_mlp(Mlp& m, const MlpGrads& grads, MlpVelocity& vel, double lr, double momentum,
                  double weight_decay, const std::string& block_prefix) {
    for (size_t l = 0; l < m.layers.size(); ++l) {
        sgd_update(m.layers[l].W, grads.layers[l].W, vel.layers[l].W, lr, momentum, weight_decay,
                   block_prefix + ".layer" + std::to_string(l) + ".W");
        sgd_update(m.layers[l].b, grads.layers[l].b, vel.layers[l].b, lr, momentum, weight_decay,
                   block_prefix + ".layer" + std::to_string(l) + ".b");
    }
}

}  // namespace concurl
