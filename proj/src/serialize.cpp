#include "concurl/serialize.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace concurl {

json matrix_to_json(const Eigen::MatrixXd& m) {
    json data = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
    return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Eigen::MatrixXd matrix_from_json(const json& j) {
    Eigen::MatrixXd m(j.at("rows").get<Eigen::Index>(), j.at("cols").get<Eigen::Index>());
    const auto& data = j.at("data");
    if (static_cast<Eigen::Index>(data.size()) != m.size())
        throw std::runtime_error("checkpoint: matrix payload size mismatch");
    Eigen::Index idx = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index jj = 0; jj < m.cols(); ++jj) m(i, jj) = data[idx++].get<double>();
    return m;
}

json vector_to_json(const Eigen::VectorXd& v) {
    json data = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) data.push_back(v[i]);
    return data;
}

Eigen::VectorXd vector_from_json(const json& j) {
    Eigen::VectorXd v(j.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = j[i].get<double>();
    return v;
}

json config_to_json(const TrainConfig& cfg) {
    return json{
        {"epochs", cfg.epochs},
        {"batch_size", cfg.batch_size},
        {"lr", cfg.lr},
        {"lr_decay_epochs", cfg.lr_decay_epochs},
        {"lr_decay_factor", cfg.lr_decay_factor},
        {"momentum", cfg.momentum},
        {"weight_decay", cfg.weight_decay},
        {"alpha", cfg.alpha},
        {"beta", cfg.beta},
        {"k", cfg.k},
        {"tau_cluster", cfg.tau_cluster},
        {"tau_id", cfg.tau_id},
        {"epsilon", cfg.epsilon},
        {"sinkhorn_iters", cfg.sinkhorn_iters},
        {"ensemble_size", cfg.ensemble_size},
        {"ensemble_kind", to_string(cfg.ensemble_kind)},
        {"proj_dim", cfg.proj_dim},
        {"enc_hidden", cfg.enc_hidden},
        {"feat_dim", cfg.feat_dim},
        {"head_hidden", cfg.head_hidden},
        {"embed_dim", cfg.embed_dim},
        {"bank_momentum", cfg.bank_momentum},
        {"m_noise", cfg.m_noise},
        {"augment",
         {{"noise_sigma", cfg.augment.noise_sigma},
          {"dropout_p", cfg.augment.dropout_p},
          {"scale_jitter", cfg.augment.scale_jitter}}},
        {"seed", cfg.seed},
        {"eval_every", cfg.eval_every},
        {"kmeans_n_init", cfg.kmeans_n_init},
        {"kmeans_max_iter", cfg.kmeans_max_iter},
    };
}

TrainConfig config_from_json(const json& j) {
    TrainConfig cfg;
    cfg.epochs = j.at("epochs").get<int>();
    cfg.batch_size = j.at("batch_size").get<int>();
    cfg.lr = j.at("lr").get<double>();
    cfg.lr_decay_epochs = j.at("lr_decay_epochs").get<std::vector<int>>();
    cfg.lr_decay_factor = j.at("lr_decay_factor").get<double>();
    cfg.momentum = j.at("momentum").get<double>();
    cfg.weight_decay = j.at("weight_decay").get<double>();
    cfg.alpha = j.at("alpha").get<double>();
    cfg.beta = j.at("beta").get<double>();
    cfg.k = j.at("k").get<int>();
    cfg.tau_cluster = j.at("tau_cluster").get<double>();
    cfg.tau_id = j.at("tau_id").get<double>();
    cfg.epsilon = j.at("epsilon").get<double>();
    cfg.sinkhorn_iters = j.at("sinkhorn_iters").get<int>();
    cfg.ensemble_size = j.at("ensemble_size").get<int>();
    cfg.ensemble_kind = ensemble_kind_from_string(j.at("ensemble_kind").get<std::string>());
    cfg.proj_dim = j.at("proj_dim").get<int>();
    cfg.enc_hidden = j.at("enc_hidden").get<int>();
    cfg.feat_dim = j.at("feat_dim").get<int>();
    cfg.head_hidden = j.at("head_hidden").get<int>();
    cfg.embed_dim = j.at("embed_dim").get<int>();
    cfg.bank_momentum = j.at("bank_momentum").get<double>();
    cfg.m_noise = j.at("m_noise").get<int>();
    cfg.augment.noise_sigma = j.at("augment").at("noise_sigma").get<double>();
    cfg.augment.dropout_p = j.at("augment").at("dropout_p").get<double>();
    cfg.augment.scale_jitter = j.at("augment").at("scale_jitter").get<double>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.eval_every = j.at("eval_every").get<int>();
    cfg.kmeans_n_init = j.at("kmeans_n_init").get<int>();
    cfg.kmeans_max_iter = j.at("kmeans_max_iter").get<int>();
    return cfg;
}

std::string config_hash(const TrainConfig& cfg) {
    // nlohmann objects are key-sorted, so the dump is order-independent.
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << fnv1a(config_to_json(cfg).dump());
    return os.str();
}

namespace {

json mlp_to_json(const Mlp& m) {
    json layers = json::array();
    for (const auto& l : m.layers)
        layers.push_back(json{{"W", matrix_to_json(l.W)}, {"b", vector_to_json(l.b)}});
    return layers;
}

Mlp mlp_from_json(const json& j) {
    Mlp m;
    for (const auto& l : j)
        m.layers.push_back({matrix_from_json(l.at("W")), vector_from_json(l.at("b"))});
    m.validate();
    return m;
}

json velocity_to_json(const MlpVelocity& v) {
    json layers = json::array();
    for (const auto& l : v.layers)
        layers.push_back(json{{"W", matrix_to_json(l.W)}, {"b", vector_to_json(l.b)}});
    return layers;
}

MlpVelocity velocity_from_json(const json& j) {
    MlpVelocity v;
    for (const auto& l : j)
        v.layers.push_back({matrix_from_json(l.at("W")), vector_from_json(l.at("b"))});
    return v;
}

json ensemble_to_json(const TransformEnsemble& ens) {
    json transforms = json::array();
    for (const auto& t : ens.transforms) {
        if (t.kind == TransformKind::GaussianProjection)
            transforms.push_back(json{{"kind", "gaussian_projection"}, {"map", matrix_to_json(t.proj)}});
        else
            transforms.push_back(json{{"kind", "diagonal"}, {"map", vector_to_json(t.diag)}});
    }
    return json{{"seed", ens.seed}, {"transforms", std::move(transforms)}};
}

TransformEnsemble ensemble_from_json(const json& j) {
    TransformEnsemble ens;
    ens.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& t : j.at("transforms")) {
        Transform tr;
        const std::string kind = t.at("kind").get<std::string>();
        if (kind == "gaussian_projection") {
            tr.kind = TransformKind::GaussianProjection;
            tr.proj = matrix_from_json(t.at("map"));
        } else if (kind == "diagonal") {
            tr.kind = TransformKind::Diagonal;
            tr.diag = vector_from_json(t.at("map"));
        } else {
            throw std::runtime_error("checkpoint: unknown transform kind " + kind);
        }
        ens.transforms.push_back(std::move(tr));
    }
    return ens;
}

}  // namespace

json state_to_json(const ModelState& st) {
    return json{
        {"format", "concurl-checkpoint-v1"},
        {"config", config_to_json(st.cfg)},
        {"config_hash", st.config_hash},
        {"epoch", st.epoch},
        {"encoder", mlp_to_json(st.encoder)},
        {"head", mlp_to_json(st.head)},
        {"prototypes", matrix_to_json(st.protos.C)},
        {"bank",
         {{"rows", matrix_to_json(st.bank.bank)},
          {"momentum", st.bank.momentum},
          {"tau_id", st.bank.tau_id},
          {"m_noise", st.bank.m_noise}}},
        {"ensemble", ensemble_to_json(st.ensemble)},
        {"velocity",
         {{"encoder", velocity_to_json(st.enc_vel)},
          {"head", velocity_to_json(st.head_vel)},
          {"prototypes", matrix_to_json(st.proto_vel)}}},
        {"rng",
         {{"shuffle", st.shuffle_rng.serialize()},
          {"augment", st.augment_rng.serialize()},
          {"noise", st.noise_rng.serialize()}}},
    };
}

ModelState state_from_json(const json& j) {
    if (j.value("format", "") != "concurl-checkpoint-v1")
        throw std::runtime_error("checkpoint: unrecognized format tag");
    ModelState st;
    st.cfg = config_from_json(j.at("config"));
    st.config_hash = j.at("config_hash").get<std::string>();
    if (st.config_hash != config_hash(st.cfg))
        throw std::runtime_error("checkpoint: config hash mismatch");
    st.epoch = j.at("epoch").get<int>();
    st.encoder = mlp_from_json(j.at("encoder"));
    st.head = mlp_from_json(j.at("head"));
    st.protos.C = matrix_from_json(j.at("prototypes"));
    st.bank.bank = matrix_from_json(j.at("bank").at("rows"));
    st.bank.momentum = j.at("bank").at("momentum").get<double>();
    st.bank.tau_id = j.at("bank").at("tau_id").get<double>();
    st.bank.m_noise = j.at("bank").at("m_noise").get<int>();
    st.ensemble = ensemble_from_json(j.at("ensemble"));
    st.enc_vel = velocity_from_json(j.at("velocity").at("encoder"));
    st.head_vel = velocity_from_json(j.at("velocity").at("head"));
    st.proto_vel = matrix_from_json(j.at("velocity").at("prototypes"));
    st.shuffle_rng.deserialize(j.at("rng").at("shuffle").get<std::string>());
    st.augment_rng.deserialize(j.at("rng").at("augment").get<std::string>());
    st.noise_rng.deserialize(j.at("rng").at("noise").get<std::string>());
    return st;
}

void save_checkpoint(const ModelState& st, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out << state_to_json(st).dump();
    if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

ModelState load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    json j;
    in >> j;
    return state_from_json(j);
}

}  // namespace concurl
