// The end-to-end training loop: per-batch forward, instance-discrimination
// and consensus losses, exact backward, SGD updates, schedules, periodic
// evaluation and checkpointing.
#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "concurl/dataio.hpp"
#include "concurl/ensemble.hpp"
#include "concurl/instdisc.hpp"
#include "concurl/metrics.hpp"
#include "concurl/nn.hpp"
#include "concurl/softclust.hpp"

namespace concurl {

struct TrainConfig {
    int epochs = 200;
    int batch_size = 128;
    double lr = 0.03;
    std::vector<int> lr_decay_epochs = {60, 120, 160};
    double lr_decay_factor = 0.1;
    double momentum = 0.9;
    double weight_decay = 0.0;
    double alpha = 1.0;  // weight of the consensus loss
    double beta = 1.0;   // weight of the instance-discrimination loss
    int k = 0;           // prototype count; 0 = number of label classes
    double tau_cluster = 0.1;
    double tau_id = 0.5;
    double epsilon = 0.05;
    int sinkhorn_iters = 3;
    int ensemble_size = 4;  // M
    EnsembleKind ensemble_kind = EnsembleKind::GaussianProjection;
    int proj_dim = 0;  // 0 = embed_dim / 2
    int enc_hidden = 64;
    int feat_dim = 128;
    int head_hidden = 256;
    int embed_dim = 64;  // d
    double bank_momentum = 0.5;
    int m_noise = 0;  // 0 = min(4096, N-1)
    AugmentConfig augment{0.1, 0.0, 0.1};  // dropout off by default: an all-dropped
                                           // low-dim row would zero the embedding
    std::uint64_t seed = 0;
    int eval_every = 10;
    int kmeans_n_init = 20;
    int kmeans_max_iter = 300;

    void validate() const;
};

// Everything the training loop mutates, kept together so checkpoints can
// resume training bit-exactly (parameters, optimizer velocities, memory
// bank, the fixed ensemble and the live random streams).
struct ModelState {
    TrainConfig cfg;  // resolved (dataset-dependent defaults materialized)
    Mlp encoder;
    Mlp head;
    Prototypes protos;
    MemoryBank bank;
    TransformEnsemble ensemble;
    MlpVelocity enc_vel;
    MlpVelocity head_vel;
    Eigen::MatrixXd proto_vel;
    RngStream shuffle_rng;
    RngStream augment_rng;
    RngStream noise_rng;
    int epoch = 0;
    std::string config_hash;
};

struct StepLosses {
    double l_b = 0.0;
    double l_z = 0.0;
    double l_total = 0.0;
};

struct EvalSummary {
    double acc = 0.0;
    double nmi = 0.0;
    double ari = 0.0;
};

struct EpochStats {
    int epoch = 0;
    double l_b_mean = 0.0;
    double l_z_mean = 0.0;
    double l_total_mean = 0.0;
    double wall_time_seconds = 0.0;
    // Snapshot cadence: epoch 1, every eval_every epochs, and the final
    // epoch. The epoch-1 row snapshots the initial (untrained) state; later
    // snapshot rows describe the model after that epoch's updates.
    std::optional<EvalSummary> eval;
    std::optional<std::pair<double, double>> diversity_nmi;  // mean, std
};

// L_total = alpha * L_Z + beta * L_b.
double total_loss(double alpha, double beta, double l_z, double l_b);

// Learning rate entering `epoch` (1-based): lr * factor^(#decay epochs passed).
double effective_lr(const TrainConfig& cfg, int epoch);

ModelState init_model(const TrainConfig& cfg, const Dataset& ds);

struct StepGradients {
    StepLosses losses;
    MlpGrads encoder;
    MlpGrads head;
    Eigen::MatrixXd prototypes;
    Eigen::MatrixXd view1_features;  // normalized view-1 features (bank update input)
};

// Losses and parameter gradients for one batch; mutates nothing. Noise ids
// are supplied explicitly. Codes are recomputed from the batch unless
// frozen copies are given; either way they are constants in the gradient.
// The consensus backward path is skipped when alpha == 0 or the ensemble is
// empty, so disabled-consensus runs are bit-identical to a pure
// instance-discrimination step.
StepGradients compute_step_gradients(const ModelState& state, const Batch& batch,
                                     const Eigen::MatrixXi& noise_ids,
                                     const Eigen::MatrixXd* frozen_q1 = nullptr,
                                     const Eigen::MatrixXd* frozen_q2 = nullptr);

// One optimization step on one batch: draw noise ids, compute gradients,
// apply SGD to encoder/head/prototypes, update the memory bank.
StepLosses train_step(ModelState& state, const Batch& batch, double lr);

struct FitCallbacks {
    std::function<void(const EpochStats&)> on_epoch;
    std::function<void(const ModelState&)> on_checkpoint;  // at decay epochs and the end
};

// Runs remaining epochs (state.epoch..cfg.epochs) on the dataset.
std::vector<EpochStats> fit_continue(ModelState& state, const Dataset& ds,
                                     const FitCallbacks& callbacks = {});

std::pair<ModelState, std::vector<EpochStats>> fit(const TrainConfig& cfg, const Dataset& ds,
                                                   const FitCallbacks& callbacks = {});

// Deterministic encoder output for the whole dataset, no augmentation.
Eigen::MatrixXd extract_features(const ModelState& state, const Dataset& ds,
                                 bool normalized = false);

// k-means on row-normalized extracted features, scored against labels.
// k comes from the dataset's labels.
MetricReport evaluate_clustering(const ModelState& state, const Dataset& ds);

// Partitions induced by each transform (argmax of the transformed
// assignment probabilities over the whole dataset), reduced to the mean/std
// of pairwise NMI. Requires an ensemble of at least 2.
std::pair<double, double> diversity_snapshot(const ModelState& state, const Dataset& ds);

}  // namespace concurl
