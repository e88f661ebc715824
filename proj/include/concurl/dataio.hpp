// Dataset representation, synthetic blob generation, feature-space view
// augmentation, epoch batching and CSV I/O.
#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "concurl/rng.hpp"

namespace concurl {

struct Dataset {
    Eigen::MatrixXd features;          // N x F, row per point
    std::optional<std::vector<int>> labels;  // class indices in [0, k_true)
    std::vector<int> ids;              // permutation of 0..N-1

    int n() const { return static_cast<int>(features.rows()); }
    int dim() const { return static_cast<int>(features.cols()); }
    // Number of distinct label values (requires labels).
    int num_classes() const;
    void validate() const;  // throws on broken invariants
};

struct Batch {
    std::vector<int> indices;  // dataset ids, length B
    Eigen::MatrixXd view1;     // B x F
    Eigen::MatrixXd view2;     // B x F
};

struct AugmentConfig {
    double noise_sigma = 0.0;   // std of additive Gaussian noise
    double dropout_p = 0.0;     // per-coordinate zeroing probability, in [0,1)
    double scale_jitter = 0.0;  // half-width of uniform multiplicative jitter
    void validate() const;
};

// Isotropic Gaussian blobs with centers at pairwise distance >= separation.
// Labels are set to the generating cluster.
Dataset make_gaussian_blobs(int k, int n_per_cluster, int dim, double spread,
                            double separation, std::uint64_t seed);

// CSV schema: header "f0,f1,...,f{F-1}[,label]", one row per point.
Dataset load_feature_dataset(const std::string& path, bool has_labels);
void save_feature_dataset(const Dataset& ds, const std::string& path);

// y = (x .* jitter + noise) with coordinates independently zeroed with
// probability dropout_p. Draw order per coordinate: jitter, noise, dropout.
Eigen::VectorXd augment_view(const Eigen::VectorXd& x, const AugmentConfig& cfg, RngStream& rng);

// One epoch = a seeded shuffle of all ids split into floor(N/B) batches of
// exactly B; a short remainder is dropped. Each batch carries two
// independent augmentations of the same rows.
class BatchIterator {
  public:
    BatchIterator(const Dataset& ds, int batch_size, const AugmentConfig& cfg,
                  RngStream& shuffle_rng, RngStream& augment_rng);

    // Returns false once the epoch is exhausted.
    bool next(Batch& out);
    int batches_per_epoch() const { return static_cast<int>(order_.size()) / batch_size_; }

  private:
    const Dataset& ds_;
    int batch_size_;
    AugmentConfig cfg_;
    RngStream& augment_rng_;
    std::vector<int> order_;
    int cursor_ = 0;
};

}  // namespace concurl
