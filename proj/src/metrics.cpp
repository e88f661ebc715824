#include "concurl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <stdexcept>

#include "concurl/rng.hpp"

namespace concurl {

Partition Partition::from_labels(std::vector<int> labels) {
    Partition p;
    p.labels = std::move(labels);
    for (int c : p.labels) p.k = std::max(p.k, c + 1);
    p.validate();
    return p;
}

void Partition::validate() const {
    for (int c : labels)
        if (c < 0 || c >= k) throw std::invalid_argument("partition label out of range");
}

std::vector<int> hungarian_match(const Eigen::MatrixXd& cost) {
    if (cost.rows() != cost.cols()) throw std::invalid_argument("hungarian_match: cost matrix must be square");
    if (!cost.allFinite()) throw std::invalid_argument("hungarian_match: cost matrix must be finite");
    const int n = static_cast<int>(cost.rows());

    // Shortest-augmenting-path formulation with potentials, O(n^3).
    // 1-based internals; p[j] = row matched to column j. Scanning columns in
    // ascending order with strict comparisons keeps ties at the lowest index.
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            int i0 = p[j0], j1 = 0;
            double delta = inf;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    std::vector<int> row_to_col(n, -1);
    for (int j = 1; j <= n; ++j)
        if (p[j]) row_to_col[p[j] - 1] = j - 1;
    return row_to_col;
}

AccuracyResult clustering_accuracy(const Partition& y_true, const Partition& y_pred) {
    if (y_true.n() != y_pred.n()) throw std::invalid_argument("clustering_accuracy: length mismatch");
    const int N = y_true.n();
    const int k = std::max(y_true.k, y_pred.k);  // pad the smaller side with empty clusters

    Eigen::MatrixXd contingency = Eigen::MatrixXd::Zero(k, k);  // true x pred
    for (int i = 0; i < N; ++i) contingency(y_true.labels[i], y_pred.labels[i]) += 1.0;

    // Maximize agreement = minimize negated counts over pred -> true maps.
    std::vector<int> pred_to_true = hungarian_match(-contingency.transpose());

    AccuracyResult r;
    r.permutation = pred_to_true;
    r.matched_confusion = Eigen::MatrixXi::Zero(k, k);
    long agree = 0;
    for (int i = 0; i < N; ++i) {
        int mapped = pred_to_true[y_pred.labels[i]];
        r.matched_confusion(y_true.labels[i], mapped) += 1;
        if (mapped == y_true.labels[i]) ++agree;
    }
    r.acc = static_cast<double>(agree) / N;
    return r;
}

namespace {

// Contingency counts plus marginals for a pair of partitions.
struct Contingency {
    Eigen::MatrixXd n_ij;
    Eigen::VectorXd a;  // row sums (|U_i|)
    Eigen::VectorXd b;  // col sums (|V_j|)
    int n;
};

Contingency contingency_table(const Partition& u, const Partition& v) {
    if (u.n() != v.n()) throw std::invalid_argument("partition length mismatch");
    if (u.n() < 1) throw std::invalid_argument("empty partitions");
    Contingency c;
    c.n = u.n();
    c.n_ij = Eigen::MatrixXd::Zero(u.k, v.k);
    for (int i = 0; i < u.n(); ++i) c.n_ij(u.labels[i], v.labels[i]) += 1.0;
    c.a = c.n_ij.rowwise().sum();
    c.b = c.n_ij.colwise().sum();
    return c;
}

double entropy_from_counts(const Eigen::VectorXd& counts, double n) {
    double h = 0.0;
    for (Eigen::Index i = 0; i < counts.size(); ++i)
        if (counts[i] > 0.0) h -= (counts[i] / n) * std::log(counts[i] / n);
    return h;
}

}  // namespace

double nmi(const Partition& u, const Partition& v) {
    Contingency c = contingency_table(u, v);
    const double n = static_cast<double>(c.n);
    double mi = 0.0;
    for (int i = 0; i < c.n_ij.rows(); ++i)
        for (int j = 0; j < c.n_ij.cols(); ++j)
            if (c.n_ij(i, j) > 0.0)
                mi += (c.n_ij(i, j) / n) * std::log(n * c.n_ij(i, j) / (c.a[i] * c.b[j]));
    const double hu = entropy_from_counts(c.a, n);
    const double hv = entropy_from_counts(c.b, n);
    if (hu <= 0.0 || hv <= 0.0) {
        std::cerr << "warning: nmi of a single-cluster partition defined as 0\n";
        return 0.0;
    }
    return mi / std::sqrt(hu * hv);
}

double ari(const Partition& u, const Partition& v) {
    Contingency c = contingency_table(u, v);
    if (c.n < 2) throw std::invalid_argument("ari requires N >= 2");
    auto comb2 = [](double x) { return x * (x - 1.0) / 2.0; };
    double sum_ij = 0.0;
    for (int i = 0; i < c.n_ij.rows(); ++i)
        for (int j = 0; j < c.n_ij.cols(); ++j) sum_ij += comb2(c.n_ij(i, j));
    double sum_a = 0.0, sum_b = 0.0;
    for (Eigen::Index i = 0; i < c.a.size(); ++i) sum_a += comb2(c.a[i]);
    for (Eigen::Index j = 0; j < c.b.size(); ++j) sum_b += comb2(c.b[j]);
    const double total = comb2(static_cast<double>(c.n));
    const double expected = sum_a * sum_b / total;
    const double maximum = 0.5 * (sum_a + sum_b);
    if (maximum == expected) {
        std::cerr << "warning: degenerate ari denominator\n";
        return u.labels == v.labels ? 1.0 : 0.0;
    }
    return (sum_ij - expected) / (maximum - expected);
}

namespace {

// Squared distances from every row of X to a single center.
Eigen::VectorXd sq_dist_to(const Eigen::MatrixXd& X, const Eigen::RowVectorXd& center) {
    return (X.rowwise() - center).rowwise().squaredNorm();
}

struct LloydRun {
    std::vector<int> labels;
    Eigen::MatrixXd centers;
    double inertia;
};

LloydRun lloyd_once(const Eigen::MatrixXd& X, int k, int max_iter, RngStream& rng) {
    const int N = static_cast<int>(X.rows());
    const int F = static_cast<int>(X.cols());

    // k-means++ seeding.
    Eigen::MatrixXd centers(k, F);
    centers.row(0) = X.row(static_cast<int>(rng.uniform_int(N)));
    Eigen::VectorXd d2 = sq_dist_to(X, centers.row(0));
    for (int c = 1; c < k; ++c) {
        double total = d2.sum();
        int pick;
        if (total <= 0.0) {
            pick = static_cast<int>(rng.uniform_int(N));
        } else {
            double r = rng.uniform() * total;
            double acc = 0.0;
            pick = N - 1;
            for (int i = 0; i < N; ++i) {
                acc += d2[i];
                if (acc >= r) {
                    pick = i;
                    break;
                }
            }
        }
        centers.row(c) = X.row(pick);
        d2 = d2.cwiseMin(sq_dist_to(X, centers.row(c)));
    }

    std::vector<int> labels(N, 0);
    double inertia = 0.0;
    for (int iter = 0; iter < max_iter; ++iter) {
        // Assign.
        Eigen::MatrixXd dist(N, k);
        for (int c = 0; c < k; ++c) dist.col(c) = sq_dist_to(X, centers.row(c));
        bool changed = (iter == 0);
        inertia = 0.0;
        for (int i = 0; i < N; ++i) {
            int best = 0;
            for (int c = 1; c < k; ++c)
                if (dist(i, c) < dist(i, best)) best = c;
            if (labels[i] != best) {
                labels[i] = best;
                changed = true;
            }
            inertia += dist(i, labels[i]);
        }
        if (!changed) break;
        // Update; reseed empty clusters to the point farthest from its center.
        Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, F);
        std::vector<int> counts(k, 0);
        for (int i = 0; i < N; ++i) {
            sums.row(labels[i]) += X.row(i);
            ++counts[labels[i]];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[c] > 0) {
                centers.row(c) = sums.row(c) / counts[c];
            } else {
                int far = 0;
                double best = -1.0;
                for (int i = 0; i < N; ++i) {
                    double d = dist(i, labels[i]);
                    if (d > best) {
                        best = d;
                        far = i;
                    }
                }
                centers.row(c) = X.row(far);
            }
        }
    }
    // Final inertia against the last centers.
    inertia = 0.0;
    for (int i = 0; i < N; ++i) inertia += (X.row(i) - centers.row(labels[i])).squaredNorm();
    return {std::move(labels), std::move(centers), inertia};
}

}  // namespace

KMeansResult kmeans(const Eigen::MatrixXd& features, int k, int n_init, int max_iter,
                    std::uint64_t seed) {
    if (features.rows() < k) throw std::invalid_argument("kmeans: N < k");
    if (k < 1 || n_init < 1) throw std::invalid_argument("kmeans: k and n_init must be >= 1");
    LloydRun best;
    best.inertia = std::numeric_limits<double>::infinity();
    for (int restart = 0; restart < n_init; ++restart) {
        RngStream rng(derive_seed(seed, "kmeans-restart-" + std::to_string(restart)));
        LloydRun run = lloyd_once(features, k, max_iter, rng);
        if (run.inertia < best.inertia) best = std::move(run);  // ties keep the lower restart index
    }
    KMeansResult res;
    res.partition.labels = std::move(best.labels);
    res.partition.k = k;
    res.centers = std::move(best.centers);
    res.inertia = best.inertia;
    return res;
}

Partition argmax_assignment(const Eigen::MatrixXd& q_rows) {
    if (!q_rows.allFinite()) throw std::invalid_argument("argmax_assignment: rows must be finite");
    Partition p;
    p.k = static_cast<int>(q_rows.cols());
    p.labels.resize(q_rows.rows());
    for (int i = 0; i < q_rows.rows(); ++i) {
        int best = 0;
        for (int j = 1; j < q_rows.cols(); ++j)
            if (q_rows(i, j) > q_rows(i, best)) best = j;
        p.labels[i] = best;
    }
    return p;
}

std::pair<double, double> pairwise_nmi_diversity(const std::vector<Partition>& assignments) {
    const int M = static_cast<int>(assignments.size());
    if (M < 2) throw std::invalid_argument("pairwise_nmi_diversity requires at least 2 partitions");
    std::vector<double> vals;
    for (int i = 0; i < M; ++i)
        for (int j = i + 1; j < M; ++j) vals.push_back(nmi(assignments[i], assignments[j]));
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= vals.size();
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    var /= vals.size();
    return {mean, std::sqrt(var)};
}

std::vector<int> nearest_neighbors(const Eigen::MatrixXd& features, int query, int k) {
    const int N = static_cast<int>(features.rows());
    if (query < 0 || query >= N) throw std::invalid_argument("nearest_neighbors: bad query id");
    if (k < 1 || k >= N) throw std::invalid_argument("nearest_neighbors: k must be in [1, N)");
    const double qn = features.row(query).norm();
    std::vector<std::pair<double, int>> scored;
    scored.reserve(N - 1);
    for (int i = 0; i < N; ++i) {
        if (i == query) continue;
        const double denom = qn * features.row(i).norm();
        const double cos = denom > 0.0 ? features.row(query).dot(features.row(i)) / denom : 0.0;
        scored.emplace_back(1.0 - cos, i);
    }
    std::sort(scored.begin(), scored.end());  // pair ordering breaks ties by lower id
    std::vector<int> out(k);
    for (int i = 0; i < k; ++i) out[i] = scored[i].second;
    return out;
}

Eigen::MatrixXi confusion_percentages(const Eigen::MatrixXi& m) {
    Eigen::MatrixXi out(m.rows(), m.cols());
    for (int i = 0; i < m.rows(); ++i) {
        long row_sum = 0;
        for (int j = 0; j < m.cols(); ++j) {
            if (m(i, j) < 0) throw std::invalid_argument("confusion_percentages: negative count");
            row_sum += m(i, j);
        }
        if (row_sum == 0) throw std::invalid_argument("confusion_percentages: zero row " + std::to_string(i));
        for (int j = 0; j < m.cols(); ++j) {
            double pct = 100.0 * m(i, j) / static_cast<double>(row_sum);
            out(i, j) = static_cast<int>(std::round(pct));  // round halves away from zero
        }
    }
    return out;
}

MetricReport evaluate_partition(const Partition& y_true, const Partition& y_pred) {
    MetricReport r;
    AccuracyResult a = clustering_accuracy(y_true, y_pred);
    r.acc = a.acc;
    r.permutation = a.permutation;
    r.matched_confusion = a.matched_confusion;
    r.nmi = nmi(y_true, y_pred);
    r.ari = ari(y_true, y_pred);
    return r;
}

}  // namespace concurl
