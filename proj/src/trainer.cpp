#include "concurl/trainer.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

#include "concurl/serialize.hpp"

namespace concurl {

void TrainConfig::validate() const {
    if (epochs < 0) throw std::invalid_argument("config: epochs must be >= 0");
    if (batch_size < 2) throw std::invalid_argument("config: batch_size must be >= 2");
    if (!(lr >= 0.0)) throw std::invalid_argument("config: lr must be >= 0");
    if (!(lr_decay_factor > 0.0)) throw std::invalid_argument("config: lr_decay_factor must be > 0");
    for (size_t i = 1; i < lr_decay_epochs.size(); ++i)
        if (lr_decay_epochs[i] <= lr_decay_epochs[i - 1])
            throw std::invalid_argument("config: lr_decay_epochs must be strictly increasing");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("config: momentum must be in [0,1)");
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("config: weight_decay must be >= 0");
    if (!(alpha >= 0.0)) throw std::invalid_argument("config: alpha must be >= 0");
    if (!(beta >= 0.0)) throw std::invalid_argument("config: beta must be >= 0");
    if (k < 0) throw std::invalid_argument("config: k must be >= 0");
    if (!(tau_cluster > 0.0)) throw std::invalid_argument("config: tau_cluster must be > 0");
    if (!(tau_id > 0.0)) throw std::invalid_argument("config: tau_id must be > 0");
    if (!(epsilon > 0.0)) throw std::invalid_argument("config: epsilon must be > 0");
    if (sinkhorn_iters < 1) throw std::invalid_argument("config: sinkhorn_iters must be >= 1");
    if (ensemble_size < 0) throw std::invalid_argument("config: ensemble_size must be >= 0");
    if (proj_dim < 0) throw std::invalid_argument("config: proj_dim must be >= 0");
    if (enc_hidden < 1 || feat_dim < 1 || head_hidden < 1 || embed_dim < 2)
        throw std::invalid_argument("config: network dims must be positive (embed_dim >= 2)");
    if (!(bank_momentum >= 0.0 && bank_momentum <= 1.0))
        throw std::invalid_argument("config: bank_momentum must be in [0,1]");
    if (m_noise < 0) throw std::invalid_argument("config: m_noise must be >= 0");
    augment.validate();
    if (eval_every < 1) throw std::invalid_argument("config: eval_every must be >= 1");
    if (kmeans_n_init < 1 || kmeans_max_iter < 1)
        throw std::invalid_argument("config: kmeans settings must be positive");
}

double total_loss(double alpha, double beta, double l_z, double l_b) {
    if (!std::isfinite(l_z)) throw std::runtime_error("total_loss: non-finite consensus loss");
    if (!std::isfinite(l_b)) throw std::runtime_error("total_loss: non-finite id loss");
    return alpha * l_z + beta * l_b;
}

double effective_lr(const TrainConfig& cfg, int epoch) {
    double lr = cfg.lr;
    for (int d : cfg.lr_decay_epochs)
        if (epoch > d) lr *= cfg.lr_decay_factor;
    return lr;
}

ModelState init_model(const TrainConfig& cfg_in, const Dataset& ds) {
    TrainConfig cfg = cfg_in;
    cfg.validate();
    ds.validate();
    const int N = ds.n();
    if (cfg.batch_size > N) throw std::invalid_argument("config: batch_size exceeds dataset size");
    if (cfg.k == 0) {
        if (!ds.labels) throw std::invalid_argument("config: k=0 requires a labeled dataset");
        cfg.k = ds.num_classes();
    }
    if (cfg.k < 2) throw std::invalid_argument("config: need at least 2 prototypes");
    if (cfg.proj_dim == 0) cfg.proj_dim = std::max(2, cfg.embed_dim / 2);
    if (cfg.m_noise == 0) cfg.m_noise = std::min(4096, N - 1);

    ModelState st;
    st.cfg = cfg;
    RngStream enc_rng(cfg.seed, "init.encoder");
    st.encoder = mlp_init({ds.dim(), cfg.enc_hidden, cfg.feat_dim}, enc_rng);
    RngStream head_rng(cfg.seed, "init.head");
    st.head = mlp_init({cfg.feat_dim, cfg.head_hidden, cfg.embed_dim}, head_rng);
    RngStream proto_rng(cfg.seed, "init.prototypes");
    st.protos = init_prototypes(cfg.k, cfg.embed_dim, proto_rng);
    RngStream bank_rng(cfg.seed, "init.bank");
    st.bank = init_memory_bank(N, cfg.feat_dim, cfg.bank_momentum, cfg.tau_id, cfg.m_noise, bank_rng);
    st.ensemble = init_ensemble(cfg.ensemble_size, cfg.ensemble_kind, cfg.embed_dim, cfg.proj_dim,
                                derive_seed(cfg.seed, "init.ensemble"));
    st.enc_vel = MlpVelocity::zeros_like(st.encoder);
    st.head_vel = MlpVelocity::zeros_like(st.head);
    st.proto_vel = Eigen::MatrixXd::Zero(cfg.embed_dim, cfg.k);
    st.shuffle_rng = RngStream(cfg.seed, "shuffle");
    st.augment_rng = RngStream(cfg.seed, "augment");
    st.noise_rng = RngStream(cfg.seed, "noise");
    st.epoch = 0;
    st.config_hash = config_hash(cfg);
    return st;
}

StepGradients compute_step_gradients(const ModelState& st, const Batch& batch,
                                     const Eigen::MatrixXi& noise_ids,
                                     const Eigen::MatrixXd* frozen_q1,
                                     const Eigen::MatrixXd* frozen_q2) {
    const TrainConfig& cfg = st.cfg;
    const int B = static_cast<int>(batch.view1.rows());
    if (B < 2 || batch.view2.rows() != B || static_cast<int>(batch.indices.size()) != B)
        throw std::invalid_argument("train_step: malformed batch");

    // Forward both views through the encoder, then the head.
    MlpCache enc_cache1, enc_cache2;
    Eigen::MatrixXd feat1 = mlp_forward(st.encoder, batch.view1, &enc_cache1);
    Eigen::MatrixXd feat2 = mlp_forward(st.encoder, batch.view2, &enc_cache2);

    // Instance-discrimination loss on view-1 features.
    RowNormalized feat1n = l2_normalize_rows(feat1, "feature");
    NceResult nce = nce_loss_with_noise(st.bank, feat1n.normalized, batch.indices, noise_ids);
    if (!std::isfinite(nce.loss)) throw std::runtime_error("train_step: non-finite id loss L_b");

    MlpCache head_cache1, head_cache2;
    Eigen::MatrixXd z1 = mlp_forward(st.head, feat1, &head_cache1);
    Eigen::MatrixXd z2 = mlp_forward(st.head, feat2, &head_cache2);

    StepGradients out;
    out.losses.l_b = nce.loss;
    out.view1_features = feat1n.normalized;

    ConsensusResult cons;
    const bool have_ensemble = st.ensemble.size() > 0;
    if (have_ensemble) {
        // Codes are targets: computed outside the gradient path.
        Eigen::MatrixXd q1 = frozen_q1
                                 ? *frozen_q1
                                 : sinkhorn_codes(z1, st.protos, cfg.epsilon, cfg.sinkhorn_iters)
                                       .q_rows();
        Eigen::MatrixXd q2 = frozen_q2
                                 ? *frozen_q2
                                 : sinkhorn_codes(z2, st.protos, cfg.epsilon, cfg.sinkhorn_iters)
                                       .q_rows();
        cons = consensus_loss(st.ensemble, z1, z2, st.protos, q1, q2, cfg.tau_cluster);
        if (!std::isfinite(cons.loss))
            throw std::runtime_error("train_step: non-finite consensus loss L_Z");
        out.losses.l_z = cons.loss;
    }
    out.losses.l_total = total_loss(cfg.alpha, cfg.beta, out.losses.l_z, out.losses.l_b);

    // Backward. The consensus path is skipped entirely when weighted to
    // zero or the ensemble is empty.
    out.encoder = MlpGrads::zeros_like(st.encoder);
    out.head = MlpGrads::zeros_like(st.head);
    out.prototypes = Eigen::MatrixXd::Zero(st.protos.dim(), st.protos.k());
    Eigen::MatrixXd dfeat1 = Eigen::MatrixXd::Zero(B, cfg.feat_dim);
    Eigen::MatrixXd dfeat2;

    const bool consensus_backward = have_ensemble && cfg.alpha != 0.0;
    if (consensus_backward) {
        dfeat1 += mlp_backward(st.head, head_cache1, cfg.alpha * cons.grad_z1, out.head);
        dfeat2 = mlp_backward(st.head, head_cache2, cfg.alpha * cons.grad_z2, out.head);
        out.prototypes = cfg.alpha * cons.grad_c;
    }
    if (cfg.beta != 0.0)
        dfeat1 += cfg.beta * l2_normalize_rows_backward(feat1n, nce.grad_feats);

    mlp_backward(st.encoder, enc_cache1, dfeat1, out.encoder);
    if (consensus_backward) mlp_backward(st.encoder, enc_cache2, dfeat2, out.encoder);
    return out;
}

StepLosses train_step(ModelState& st, const Batch& batch, double lr) {
    const TrainConfig& cfg = st.cfg;
    Eigen::MatrixXi noise_ids =
        draw_noise_ids(st.bank.n(), batch.indices, st.bank.m_noise, st.noise_rng);
    StepGradients g = compute_step_gradients(st, batch, noise_ids);

    sgd_step_mlp(st.encoder, g.encoder, st.enc_vel, lr, cfg.momentum, cfg.weight_decay, "encoder");
    if (st.ensemble.size() > 0 && cfg.alpha != 0.0) {
        sgd_step_mlp(st.head, g.head, st.head_vel, lr, cfg.momentum, cfg.weight_decay, "head");
        sgd_update(st.protos.C, g.prototypes, st.proto_vel, lr, cfg.momentum, cfg.weight_decay,
                   "prototypes");
    }
    bank_update(st.bank, g.view1_features, batch.indices, cfg.bank_momentum);
    return g.losses;
}

namespace {

void take_snapshot(const ModelState& st, const Dataset& ds, EpochStats& stats) {
    if (ds.labels) {
        MetricReport r = evaluate_clustering(st, ds);
        stats.eval = EvalSummary{r.acc, r.nmi, r.ari};
    }
    if (st.ensemble.size() >= 2) stats.diversity_nmi = diversity_snapshot(st, ds);
}

}  // namespace

std::vector<EpochStats> fit_continue(ModelState& st, const Dataset& ds,
                                     const FitCallbacks& callbacks) {
    const TrainConfig& cfg = st.cfg;
    std::vector<EpochStats> all_stats;
    for (int epoch = st.epoch + 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        EpochStats stats;
        stats.epoch = epoch;

        const bool snapshot =
            epoch == 1 || epoch % cfg.eval_every == 0 || epoch == cfg.epochs;
        // The epoch-1 row snapshots the state the run started from, so the
        // stats series begins with the untrained model's diversity; later
        // snapshot rows describe the model after that epoch.
        if (snapshot && epoch == 1 && cfg.epochs > 1) take_snapshot(st, ds, stats);

        const double lr = effective_lr(cfg, epoch);
        BatchIterator it(ds, cfg.batch_size, cfg.augment, st.shuffle_rng, st.augment_rng);
        Batch batch;
        int steps = 0;
        while (it.next(batch)) {
            StepLosses l = train_step(st, batch, lr);
            stats.l_b_mean += l.l_b;
            stats.l_z_mean += l.l_z;
            stats.l_total_mean += l.l_total;
            ++steps;
        }
        if (steps > 0) {
            stats.l_b_mean /= steps;
            stats.l_z_mean /= steps;
            stats.l_total_mean /= steps;
        }
        st.epoch = epoch;
        if (snapshot && !(epoch == 1 && cfg.epochs > 1)) take_snapshot(st, ds, stats);
        stats.wall_time_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (callbacks.on_epoch) callbacks.on_epoch(stats);
        all_stats.push_back(std::move(stats));

        bool checkpoint = epoch == cfg.epochs;
        for (int d : cfg.lr_decay_epochs) checkpoint = checkpoint || epoch == d;
        if (checkpoint && callbacks.on_checkpoint) callbacks.on_checkpoint(st);
    }
    return all_stats;
}

std::pair<ModelState, std::vector<EpochStats>> fit(const TrainConfig& cfg, const Dataset& ds,
                                                   const FitCallbacks& callbacks) {
    ModelState st = init_model(cfg, ds);
    std::vector<EpochStats> stats = fit_continue(st, ds, callbacks);
    return {std::move(st), std::move(stats)};
}

Eigen::MatrixXd extract_features(const ModelState& st, const Dataset& ds, bool normalized) {
    Eigen::MatrixXd feats = mlp_forward(st.encoder, ds.features);
    if (normalized) feats = l2_normalize_rows(feats, "feature").normalized;
    return feats;
}

MetricReport evaluate_clustering(const ModelState& st, const Dataset& ds) {
    if (!ds.labels) throw std::invalid_argument("evaluate_clustering requires labels");
    Eigen::MatrixXd feats = extract_features(st, ds, /*normalized=*/true);
    const int k = ds.num_classes();
    KMeansResult km = kmeans(feats, k, st.cfg.kmeans_n_init, st.cfg.kmeans_max_iter,
                             derive_seed(st.cfg.seed, "eval.kmeans"));
    Partition truth{*ds.labels, k};
    truth.validate();
    return evaluate_partition(truth, km.partition);
}

std::pair<double, double> diversity_snapshot(const ModelState& st, const Dataset& ds) {
    if (st.ensemble.size() < 2)
        throw std::invalid_argument("diversity_snapshot requires an ensemble of at least 2");
    Eigen::MatrixXd z = mlp_forward(st.head, mlp_forward(st.encoder, ds.features));
    std::vector<Partition> parts;
    for (int mi = 0; mi < st.ensemble.size(); ++mi) {
        TransformedPair tp = apply_transform(st.ensemble.transforms[mi], z, st.protos.C, mi);
        // argmax of the transformed assignment probabilities; the softmax is
        // monotone so the logits give the same partition.
        Partition p = argmax_assignment(tp.Z * tp.C);
        p.k = st.protos.k();
        parts.push_back(std::move(p));
    }
    return pairwise_nmi_diversity(parts);
}

}  // namespace concurl
