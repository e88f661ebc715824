// Clustering evaluation: accuracy via Hungarian matching, NMI, ARI,
// k-means, argmax assignment, pairwise-NMI ensemble diversity, confusion
// matrices and nearest-neighbor retrieval.
#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace concurl {

struct Partition {
    std::vector<int> labels;  // cluster index per point, in [0, k)
    int k = 0;                // number of clusters (empty clusters allowed)

    static Partition from_labels(std::vector<int> labels);  // k = max+1
    int n() const { return static_cast<int>(labels.size()); }
    void validate() const;
};

struct MetricReport {
    double acc = 0.0;
    double nmi = 0.0;
    double ari = 0.0;
    Eigen::MatrixXi matched_confusion;  // k x k counts; rows = true classes
    std::vector<int> permutation;       // predicted cluster -> matched true class
};

// Minimum-cost assignment on a square cost matrix (Kuhn-Munkres).
// Returns row -> column; ties resolved toward lower column indices.
std::vector<int> hungarian_match(const Eigen::MatrixXd& cost);

// ACC after the optimal relabeling of predicted clusters, plus the
// permutation and the remapped confusion matrix (rows = true classes).
struct AccuracyResult {
    double acc;
    std::vector<int> permutation;
    Eigen::MatrixXi matched_confusion;
};
AccuracyResult clustering_accuracy(const Partition& y_true, const Partition& y_pred);

// Normalized mutual information, natural log, NMI = MI/sqrt(H(U)H(V)).
// Defined as 0 (with a warning) when either partition is a single cluster.
double nmi(const Partition& u, const Partition& v);

// Adjusted Rand index via the contingency-table formula.
double ari(const Partition& u, const Partition& v);

// Full-batch Lloyd k-means with k-means++ seeding; best inertia over n_init
// restarts (ties to the lower restart seed); empty clusters reseeded to the
// farthest point.
struct KMeansResult {
    Partition partition;
    Eigen::MatrixXd centers;  // k x F
    double inertia = 0.0;
};
KMeansResult kmeans(const Eigen::MatrixXd& features, int k, int n_init, int max_iter,
                    std::uint64_t seed);

// Row-wise argmax; ties to the lowest index.
Partition argmax_assignment(const Eigen::MatrixXd& q_rows);

// Mean/std of NMI over all unordered pairs of the given partitions.
std::pair<double, double> pairwise_nmi_diversity(const std::vector<Partition>& assignments);

// k ids nearest to the query row by cosine distance, ascending; the query
// itself excluded; ties to the lower id.
std::vector<int> nearest_neighbors(const Eigen::MatrixXd& features, int query, int k);

// Each row as integer percentages of its row sum, rounded half away from zero.
Eigen::MatrixXi confusion_percentages(const Eigen::MatrixXi& matched_confusion);

MetricReport evaluate_partition(const Partition& y_true, const Partition& y_pred);

}  // namespace concurl
