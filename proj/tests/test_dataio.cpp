#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "concurl/dataio.hpp"
#include "concurl/metrics.hpp"
#include "test_util.hpp"

using namespace concurl;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("gaussian blobs: shape, labels and separation") {
    Dataset ds = make_gaussian_blobs(3, 50, 2, 0.3, 4.0, 7);
    CHECK(ds.n() == 150);
    CHECK(ds.dim() == 2);
    REQUIRE(ds.labels.has_value());
    CHECK(ds.num_classes() == 3);
    // Generating labels group points around well-separated centers.
    Eigen::MatrixXd centers = Eigen::MatrixXd::Zero(3, 2);
    for (int i = 0; i < ds.n(); ++i) centers.row((*ds.labels)[i]) += ds.features.row(i);
    centers /= 50.0;
    for (int a = 0; a < 3; ++a)
        for (int b = a + 1; b < 3; ++b) CHECK((centers.row(a) - centers.row(b)).norm() > 3.0);
}

TEST_CASE("gaussian blobs: near-zero spread keeps pairs coincident with centers") {
    Dataset ds = make_gaussian_blobs(2, 2, 2, 1e-12, 10.0, 3);
    CHECK(ds.n() == 4);
    CHECK((ds.features.row(0) - ds.features.row(1)).norm() < 1e-9);
    CHECK((ds.features.row(2) - ds.features.row(3)).norm() < 1e-9);
    // Raw-feature k-means recovers the generating labels exactly.
    KMeansResult km = kmeans(ds.features, 2, 5, 100, 0);
    Partition truth{*ds.labels, 2};
    CHECK(clustering_accuracy(truth, km.partition).acc == 1.0);
    CHECK(km.inertia < 1e-18);
}

TEST_CASE("gaussian blobs: raw-feature k-means oracle on the 10-blob dataset") {
    Dataset ds = make_gaussian_blobs(10, 100, 32, 0.5, 8.0, 1);
    KMeansResult km = kmeans(ds.features, 10, 20, 300, 0);
    Partition truth{*ds.labels, 10};
    CHECK(clustering_accuracy(truth, km.partition).acc >= 0.99);
}

TEST_CASE("gaussian blobs: rejects bad arguments") {
    CHECK_THROWS(make_gaussian_blobs(3, 50, 2, 0.0, 4.0, 0));
    CHECK_THROWS(make_gaussian_blobs(3, 50, 2, 0.3, -1.0, 0));
    CHECK_THROWS(make_gaussian_blobs(1, 50, 2, 0.3, 4.0, 0));
    // Far too many centers for the requested separation in 2 dimensions.
    CHECK_THROWS(make_gaussian_blobs(2000, 2, 2, 0.1, 1e6, 0));
}

TEST_CASE("csv load: direct parse with labels") {
    const std::string path = temp_path("concurl_test_load.csv");
    {
        std::ofstream out(path);
        out << "f0,f1,f2,label\n";
        out << "0.5,1.5,-2.25,0\n1,2,3,1\n-1,0,0.125,1\n4,5,6,0\n";
    }
    Dataset ds = load_feature_dataset(path, true);
    CHECK(ds.n() == 4);
    CHECK(ds.dim() == 3);
    REQUIRE(ds.labels.has_value());
    CHECK((*ds.labels)[2] == 1);
    CHECK(ds.features(0, 2) == -2.25);
    std::remove(path.c_str());
}

TEST_CASE("csv save/load round-trip is bit-identical") {
    Dataset ds = make_gaussian_blobs(3, 10, 4, 0.7, 5.0, 11);
    const std::string path = temp_path("concurl_test_roundtrip.csv");
    save_feature_dataset(ds, path);
    Dataset back = load_feature_dataset(path, true);
    CHECK(back.features == ds.features);
    CHECK(*back.labels == *ds.labels);
    std::remove(path.c_str());
}

TEST_CASE("csv load: errors name the offending row") {
    const std::string path = temp_path("concurl_test_bad.csv");
    auto write = [&path](const std::string& body) {
        std::ofstream out(path);
        out << body;
    };

    write("f0,f1\n1,2\n3\n");
    CHECK_THROWS_WITH_AS(load_feature_dataset(path, false),
                         doctest::Contains("row 3"), std::runtime_error);
    write("f0,f1\n1,2\n3,abc\n");
    CHECK_THROWS_WITH_AS(load_feature_dataset(path, false),
                         doctest::Contains("row 3"), std::runtime_error);
    write("f0,f1\n1,NaN\n");
    CHECK_THROWS_WITH_AS(load_feature_dataset(path, false),
                         doctest::Contains("row 2"), std::runtime_error);
    write("");
    CHECK_THROWS(load_feature_dataset(path, false));
    std::remove(path.c_str());
}

TEST_CASE("augment: all-zero config is the identity") {
    RngStream rng(123);
    Eigen::VectorXd x(3);
    x << 1.0, -2.0, 0.5;
    Eigen::VectorXd y = augment_view(x, AugmentConfig{}, rng);
    CHECK(y == x);
}

TEST_CASE("augment: same rng state gives identical outputs") {
    AugmentConfig cfg{0.1, 0.2, 0.3};
    Eigen::VectorXd x(4);
    x << 1, 2, 3, 4;
    RngStream a(55), b(55);
    CHECK(augment_view(x, cfg, a) == augment_view(x, cfg, b));
}

TEST_CASE("augment: Monte-Carlo noise std and unbiasedness") {
    AugmentConfig cfg;
    cfg.noise_sigma = 0.1;
    RngStream rng(99);
    Eigen::VectorXd x = Eigen::VectorXd::Constant(1, 2.0);
    const int kDraws = 100000;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < kDraws; ++i) {
        const double d = augment_view(x, cfg, rng)[0] - x[0];
        sum += d;
        sumsq += d * d;
    }
    const double mean = sum / kDraws;
    const double stddev = std::sqrt(sumsq / kDraws - mean * mean);
    CHECK(stddev == doctest::Approx(0.1).epsilon(0.05));
    CHECK(std::abs(mean) < 0.005);
}

TEST_CASE("augment: rejects bad config and non-finite input") {
    RngStream rng(1);
    Eigen::VectorXd x = Eigen::VectorXd::Ones(2);
    AugmentConfig bad;
    bad.dropout_p = 1.0;
    CHECK_THROWS(augment_view(x, bad, rng));
    Eigen::VectorXd nan = x;
    nan[0] = std::nan("");
    CHECK_THROWS(augment_view(nan, AugmentConfig{}, rng));
}

TEST_CASE("batch iterator: epoch partition drops the short remainder") {
    Dataset ds = make_gaussian_blobs(2, 5, 2, 0.5, 4.0, 5);  // N = 10
    RngStream shuffle(1), augment(2);
    BatchIterator it(ds, 3, AugmentConfig{}, shuffle, augment);
    std::set<int> seen;
    Batch b;
    int batches = 0;
    while (it.next(b)) {
        ++batches;
        CHECK(b.indices.size() == 3);
        for (int id : b.indices) CHECK(seen.insert(id).second);  // no repeats in the epoch
    }
    CHECK(batches == 3);
    CHECK(seen.size() == 9);
}

TEST_CASE("batch iterator: single batch when B == N, exact cover when B | N") {
    Dataset ds = make_gaussian_blobs(2, 64, 4, 0.5, 6.0, 5);  // N = 128
    RngStream shuffle(1), augment(2);
    BatchIterator it(ds, 128, AugmentConfig{}, shuffle, augment);
    Batch b;
    REQUIRE(it.next(b));
    std::set<int> ids(b.indices.begin(), b.indices.end());
    CHECK(ids.size() == 128);
    CHECK_FALSE(it.next(b));
}

TEST_CASE("batch iterator: same seed reproduces order and views") {
    Dataset ds = make_gaussian_blobs(3, 8, 3, 0.5, 5.0, 9);
    AugmentConfig cfg{0.1, 0.0, 0.1};
    auto run = [&] {
        RngStream shuffle(42), augment(43);
        BatchIterator it(ds, 6, cfg, shuffle, augment);
        std::vector<Batch> out;
        Batch b;
        while (it.next(b)) out.push_back(b);
        return out;
    };
    auto a = run(), c = run();
    REQUIRE(a.size() == c.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].indices == c[i].indices);
        CHECK(a[i].view1 == c[i].view1);
        CHECK(a[i].view2 == c[i].view2);
    }
}

TEST_CASE("batch iterator: batch size out of range") {
    Dataset ds = make_gaussian_blobs(2, 3, 2, 0.5, 4.0, 5);
    RngStream shuffle(1), augment(2);
    CHECK_THROWS(BatchIterator(ds, 1, AugmentConfig{}, shuffle, augment));
    CHECK_THROWS(BatchIterator(ds, 7, AugmentConfig{}, shuffle, augment));
}

TEST_CASE("dataset validation catches broken invariants") {
    Dataset ds = make_gaussian_blobs(2, 3, 2, 0.5, 4.0, 5);
    ds.validate();
    Dataset broken = ds;
    broken.ids[0] = broken.ids[1];
    CHECK_THROWS(broken.validate());
    broken = ds;
    (*broken.labels)[0] = 99;
    CHECK_THROWS(broken.validate());
    broken = ds;
    broken.features(0, 0) = std::nan("");
    CHECK_THROWS(broken.validate());
}
