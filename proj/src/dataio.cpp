#include "concurl/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

namespace concurl {

int Dataset::num_classes() const {
    if (!labels) throw std::runtime_error("dataset has no labels");
    int k = 0;
    for (int c : *labels) k = std::max(k, c + 1);
    return k;
}

void Dataset::validate() const {
    const int N = n();
    if (N == 0 || dim() < 1) throw std::runtime_error("dataset is empty");
    if (!features.allFinite()) throw std::runtime_error("dataset contains non-finite values");
    if (static_cast<int>(ids.size()) != N) throw std::runtime_error("ids size mismatch");
    std::vector<char> seen(N, 0);
    for (int id : ids) {
        if (id < 0 || id >= N || seen[id]) throw std::runtime_error("ids are not a permutation of 0..N-1");
        seen[id] = 1;
    }
    if (labels) {
        if (static_cast<int>(labels->size()) != N) throw std::runtime_error("labels size mismatch");
        const int k = num_classes();
        std::vector<int> count(k, 0);
        for (int c : *labels) {
            if (c < 0 || c >= k) throw std::runtime_error("label out of range");
            ++count[c];
        }
        for (int c = 0; c < k; ++c)
            if (count[c] == 0) throw std::runtime_error("empty ground-truth class " + std::to_string(c));
    }
}

void AugmentConfig::validate() const {
    if (!(std::isfinite(noise_sigma) && noise_sigma >= 0.0))
        throw std::invalid_argument("noise_sigma must be finite and >= 0");
    if (!(std::isfinite(dropout_p) && dropout_p >= 0.0 && dropout_p < 1.0))
        throw std::invalid_argument("dropout_p must be in [0,1)");
    if (!(std::isfinite(scale_jitter) && scale_jitter >= 0.0))
        throw std::invalid_argument("scale_jitter must be finite and >= 0");
}

Dataset make_gaussian_blobs(int k, int n_per_cluster, int dim, double spread,
                            double separation, std::uint64_t seed) {
    if (k < 2) throw std::invalid_argument("make_gaussian_blobs: k must be >= 2");
    if (n_per_cluster < 2) throw std::invalid_argument("make_gaussian_blobs: n_per_cluster must be >= 2");
    if (dim < 2) throw std::invalid_argument("make_gaussian_blobs: dim must be >= 2");
    if (!(spread > 0.0)) throw std::invalid_argument("make_gaussian_blobs: spread must be > 0");
    if (!(separation > 0.0)) throw std::invalid_argument("make_gaussian_blobs: separation must be > 0");

    RngStream rng(seed, "blobs");

    // Centers drawn from N(0, separation^2 I); whole placement retried until
    // all pairwise distances clear the separation.
    Eigen::MatrixXd centers(k, dim);
    const int kMaxTries = 1000;
    bool placed = false;
    for (int attempt = 0; attempt < kMaxTries && !placed; ++attempt) {
        for (int c = 0; c < k; ++c)
            for (int j = 0; j < dim; ++j) centers(c, j) = separation * rng.normal();
        placed = true;
        for (int a = 0; a < k && placed; ++a)
            for (int b = a + 1; b < k && placed; ++b)
                if ((centers.row(a) - centers.row(b)).norm() < separation) placed = false;
    }
    if (!placed)
        throw std::runtime_error("make_gaussian_blobs: could not place " + std::to_string(k) +
                                 " centers at separation " + std::to_string(separation) +
                                 " in dim " + std::to_string(dim));

    const int N = k * n_per_cluster;
    Dataset ds;
    ds.features.resize(N, dim);
    std::vector<int> labels(N);
    for (int c = 0; c < k; ++c) {
        for (int i = 0; i < n_per_cluster; ++i) {
            const int row = c * n_per_cluster + i;
            for (int j = 0; j < dim; ++j) ds.features(row, j) = centers(c, j) + spread * rng.normal();
            labels[row] = c;
        }
    }
    ds.labels = std::move(labels);
    ds.ids.resize(N);
    for (int i = 0; i < N; ++i) ds.ids[i] = i;
    ds.validate();
    return ds;
}

namespace {

std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);  // round-trips doubles exactly
    os << v;
    return os.str();
}

double parse_cell(const std::string& cell, int row, int col) {
    try {
        size_t pos = 0;
        double v = std::stod(cell, &pos);
        while (pos < cell.size() && std::isspace(static_cast<unsigned char>(cell[pos]))) ++pos;
        if (pos != cell.size()) throw std::invalid_argument("trailing characters");
        if (!std::isfinite(v)) throw std::invalid_argument("non-finite");
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error("csv row " + std::to_string(row) + ", column " + std::to_string(col) +
                                 ": bad numeric cell '" + cell + "'");
    }
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            cells.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    cells.push_back(cur);
    return cells;
}

}  // namespace

Dataset load_feature_dataset(const std::string& path, bool has_labels) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open dataset file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty dataset file: " + path);
    auto header = split_csv_line(line);
    int ncols = static_cast<int>(header.size());
    const int F = has_labels ? ncols - 1 : ncols;
    if (F < 1) throw std::runtime_error("dataset header has no feature columns");
    for (int j = 0; j < F; ++j)
        if (header[j] != "f" + std::to_string(j))
            throw std::runtime_error("unexpected header column " + std::to_string(j) + ": '" + header[j] + "'");
    if (has_labels && header[F] != "label")
        throw std::runtime_error("expected trailing 'label' column in header");

    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto cells = split_csv_line(line);
        if (static_cast<int>(cells.size()) != ncols)
            throw std::runtime_error("csv row " + std::to_string(lineno) + ": expected " +
                                     std::to_string(ncols) + " cells, got " + std::to_string(cells.size()));
        std::vector<double> r(F);
        for (int j = 0; j < F; ++j) r[j] = parse_cell(cells[j], lineno, j);
        if (has_labels) {
            double lv = parse_cell(cells[F], lineno, F);
            int li = static_cast<int>(lv);
            if (li < 0 || static_cast<double>(li) != lv)
                throw std::runtime_error("csv row " + std::to_string(lineno) + ": label must be a nonnegative integer");
            labels.push_back(li);
        }
        rows.push_back(std::move(r));
    }
    if (rows.empty()) throw std::runtime_error("dataset file has no data rows: " + path);

    Dataset ds;
    ds.features.resize(static_cast<int>(rows.size()), F);
    for (int i = 0; i < static_cast<int>(rows.size()); ++i)
        for (int j = 0; j < F; ++j) ds.features(i, j) = rows[i][j];
    if (has_labels) ds.labels = std::move(labels);
    ds.ids.resize(ds.n());
    for (int i = 0; i < ds.n(); ++i) ds.ids[i] = i;
    ds.validate();
    return ds;
}

void save_feature_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write dataset file: " + path);
    for (int j = 0; j < ds.dim(); ++j) out << (j ? "," : "") << "f" << j;
    if (ds.labels) out << ",label";
    out << "\n";
    for (int i = 0; i < ds.n(); ++i) {
        for (int j = 0; j < ds.dim(); ++j) out << (j ? "," : "") << format_double(ds.features(i, j));
        if (ds.labels) out << "," << (*ds.labels)[i];
        out << "\n";
    }
}

Eigen::VectorXd augment_view(const Eigen::VectorXd& x, const AugmentConfig& cfg, RngStream& rng) {
    cfg.validate();
    if (!x.allFinite()) throw std::invalid_argument("augment_view: input must be finite");
    Eigen::VectorXd y(x.size());
    for (Eigen::Index j = 0; j < x.size(); ++j) {
        const double jitter = 1.0 + cfg.scale_jitter * (2.0 * rng.uniform() - 1.0);
        const double noise = cfg.noise_sigma * rng.normal();
        const bool drop = rng.uniform() < cfg.dropout_p;
        y[j] = drop ? 0.0 : x[j] * jitter + noise;
    }
    return y;
}

BatchIterator::BatchIterator(const Dataset& ds, int batch_size, const AugmentConfig& cfg,
                             RngStream& shuffle_rng, RngStream& augment_rng)
    : ds_(ds), batch_size_(batch_size), cfg_(cfg), augment_rng_(augment_rng) {
    if (batch_size < 2 || batch_size > ds.n())
        throw std::invalid_argument("batch_size must be in [2, N]");
    cfg.validate();
    order_ = ds.ids;
    std::shuffle(order_.begin(), order_.end(), shuffle_rng.engine());
}

bool BatchIterator::next(Batch& out) {
    if (cursor_ + batch_size_ > static_cast<int>(order_.size())) return false;
    out.indices.assign(order_.begin() + cursor_, order_.begin() + cursor_ + batch_size_);
    cursor_ += batch_size_;
    out.view1.resize(batch_size_, ds_.dim());
    out.view2.resize(batch_size_, ds_.dim());
    for (int b = 0; b < batch_size_; ++b)
        out.view1.row(b) = augment_view(ds_.features.row(out.indices[b]), cfg_, augment_rng_);
    for (int b = 0; b < batch_size_; ++b)
        out.view2.row(b) = augment_view(ds_.features.row(out.indices[b]), cfg_, augment_rng_);
    return true;
}

}  // namespace concurl
