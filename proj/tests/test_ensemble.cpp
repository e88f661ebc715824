#include <doctest.h>

#include <cmath>

#include "concurl/ensemble.hpp"
#include "concurl/nn.hpp"
#include "concurl/serialize.hpp"
#include "test_util.hpp"

using namespace concurl;

namespace {

Prototypes protos_from(const Eigen::MatrixXd& C) {
    Prototypes p;
    p.C = C;
    return p;
}

Transform identity_diagonal(int d) {
    Transform t;
    t.kind = TransformKind::Diagonal;
    t.diag = Eigen::VectorXd::Ones(d);
    return t;
}

// Uniform targets: each row sums to 1.
Eigen::MatrixXd uniform_targets(int B, int K) {
    return Eigen::MatrixXd::Constant(B, K, 1.0 / K);
}

}  // namespace

TEST_CASE("init ensemble: empty, deterministic, and kinds") {
    TransformEnsemble empty = init_ensemble(0, EnsembleKind::GaussianProjection, 8, 4, 1);
    CHECK(empty.size() == 0);

    TransformEnsemble a = init_ensemble(3, EnsembleKind::GaussianProjection, 8, 4, 99);
    TransformEnsemble b = init_ensemble(3, EnsembleKind::GaussianProjection, 8, 4, 99);
    for (int i = 0; i < 3; ++i) CHECK(a.transforms[i].proj == b.transforms[i].proj);

    TransformEnsemble mixed = init_ensemble(4, EnsembleKind::Mixed, 8, 4, 7);
    CHECK(mixed.transforms[0].kind == TransformKind::GaussianProjection);
    CHECK(mixed.transforms[1].kind == TransformKind::Diagonal);
    CHECK(mixed.transforms[2].kind == TransformKind::GaussianProjection);
    CHECK(mixed.transforms[3].kind == TransformKind::Diagonal);

    TransformEnsemble diag = init_ensemble(2, EnsembleKind::Diagonal, 8, 4, 7);
    for (const auto& t : diag.transforms) {
        CHECK(t.kind == TransformKind::Diagonal);
        CHECK((t.diag.array() >= 0.1).all());
        CHECK((t.diag.array() <= 10.0).all());
    }
}

TEST_CASE("init ensemble: projection row norms concentrate near one") {
    // d=64, d_out=32: mean row norm within 10% of 1 over 1000 rows.
    double total = 0.0;
    int rows = 0;
    for (int seed = 0; seed < 16; ++seed) {
        TransformEnsemble ens = init_ensemble(1, EnsembleKind::GaussianProjection, 64, 32, seed);
        const Eigen::MatrixXd& P = ens.transforms[0].proj;
        for (int r = 0; r < P.rows(); ++r) {
            total += P.row(r).norm();
            ++rows;
        }
    }
    REQUIRE(rows >= 1000);
    CHECK(total / rows == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("init ensemble: projections have full rank") {
    for (int seed = 0; seed < 5; ++seed) {
        TransformEnsemble ens = init_ensemble(2, EnsembleKind::GaussianProjection, 16, 8, seed);
        for (const auto& t : ens.transforms) {
            Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(t.proj);
            CHECK(qr.rank() == 8);
        }
    }
}

TEST_CASE("apply transform: identity diagonal reduces to plain normalization") {
    RngStream rng(3);
    Eigen::MatrixXd Z = testutil::random_matrix(5, 4, rng);
    Eigen::MatrixXd C = testutil::random_matrix(4, 3, rng);
    TransformedPair tp = apply_transform(identity_diagonal(4), Z, C);
    CHECK((tp.Z - l2_normalize_rows(Z).normalized).cwiseAbs().maxCoeff() <= 1e-15);
    CHECK((tp.C - l2_normalize_cols(C).normalized).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("apply transform: uniform scaling cancels under normalization") {
    RngStream rng(4);
    Eigen::MatrixXd Z = testutil::random_matrix(5, 4, rng);
    Eigen::MatrixXd C = testutil::random_matrix(4, 3, rng);
    Transform two = identity_diagonal(4);
    two.diag *= 2.0;
    TransformedPair a = apply_transform(identity_diagonal(4), Z, C);
    TransformedPair b = apply_transform(two, Z, C);
    CHECK((a.Z - b.Z).cwiseAbs().maxCoeff() <= 1e-15);
    CHECK((a.C - b.C).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("apply transform: degenerate output names the transform") {
    Transform t;
    t.kind = TransformKind::GaussianProjection;
    t.proj = Eigen::MatrixXd::Zero(3, 2);  // annihilates everything
    RngStream rng(5);
    Eigen::MatrixXd Z = testutil::random_matrix(2, 3, rng);
    Eigen::MatrixXd C = testutil::random_matrix(3, 2, rng);
    CHECK_THROWS_WITH_AS(apply_transform(t, Z, C, 4), doctest::Contains("transform 4"),
                         std::runtime_error);
}

TEST_CASE("consensus loss: uniform probabilities give M log K") {
    // Identical prototype columns force every transformed softmax row to
    // 1/K, so each transform contributes exactly log K.
    const int B = 6, K = 4, d = 5, M = 3;
    RngStream rng(6);
    Eigen::MatrixXd Z1 = testutil::random_matrix(B, d, rng);
    Eigen::MatrixXd Z2 = testutil::random_matrix(B, d, rng);
    Eigen::MatrixXd C(d, K);
    Eigen::VectorXd base = testutil::random_matrix(d, 1, rng).col(0);
    for (int j = 0; j < K; ++j) C.col(j) = base;

    // Arbitrary valid targets (rows summing to one).
    Eigen::MatrixXd q1 = uniform_targets(B, K), q2(B, K);
    for (int i = 0; i < B; ++i) {
        Eigen::VectorXd row = testutil::random_matrix(K, 1, rng).col(0).array().abs() + 0.1;
        q2.row(i) = (row / row.sum()).transpose();
    }

    TransformEnsemble ens = init_ensemble(M, EnsembleKind::Mixed, d, 3, 8);
    ConsensusResult r = consensus_loss(ens, Z1, Z2, protos_from(C), q1, q2, 0.1);
    CHECK(r.loss == doctest::Approx(M * std::log(static_cast<double>(K))).epsilon(1e-9));
}

TEST_CASE("consensus loss: perfect one-hot consensus is (near) zero") {
    // Prototypes at the coordinate axes, embeddings exactly on them, targets
    // the matching one-hots, huge margin via small tau.
    const int B = 4, K = 4;
    Eigen::MatrixXd Z(B, K);
    Z.setZero();
    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(B, K);
    for (int i = 0; i < B; ++i) {
        Z(i, i) = 1.0;
        q(i, i) = 1.0;
    }
    Eigen::MatrixXd C = Eigen::MatrixXd::Identity(K, K);
    TransformEnsemble ens;
    ens.transforms.push_back(identity_diagonal(K));
    ConsensusResult r = consensus_loss(ens, Z, Z, protos_from(C), q, q, 0.05);
    CHECK(r.loss >= 0.0);
    CHECK(r.loss <= 1e-8);
}

TEST_CASE("consensus loss: identity transform equals the direct swapped loss") {
    const int B = 5, K = 3, d = 4;
    RngStream rng(9);
    Eigen::MatrixXd Z1 = testutil::random_matrix(B, d, rng);
    Eigen::MatrixXd Z2 = testutil::random_matrix(B, d, rng);
    Eigen::MatrixXd C = testutil::random_matrix(d, K, rng);
    Eigen::MatrixXd q1(B, K), q2(B, K);
    for (int i = 0; i < B; ++i) {
        Eigen::VectorXd r1 = testutil::random_matrix(K, 1, rng).col(0).array().abs() + 0.05;
        Eigen::VectorXd r2 = testutil::random_matrix(K, 1, rng).col(0).array().abs() + 0.05;
        q1.row(i) = (r1 / r1.sum()).transpose();
        q2.row(i) = (r2 / r2.sum()).transpose();
    }
    const double tau = 0.1;

    TransformEnsemble ens;
    ens.transforms.push_back(identity_diagonal(d));
    ConsensusResult r = consensus_loss(ens, Z1, Z2, protos_from(C), q1, q2, tau);

    // Direct evaluation from the assignment-probability formula.
    Eigen::MatrixXd p1 = assignment_probabilities(Z1, protos_from(C), tau);
    Eigen::MatrixXd p2 = assignment_probabilities(Z2, protos_from(C), tau);
    double direct = 0.0;
    for (int i = 0; i < B; ++i)
        for (int j = 0; j < K; ++j) {
            direct += -q2(i, j) * std::log(p1(i, j)) / (2.0 * B);
            direct += -q1(i, j) * std::log(p2(i, j)) / (2.0 * B);
        }
    CHECK(r.loss == doctest::Approx(direct).epsilon(1e-10));
}

TEST_CASE("consensus loss: swap symmetry is exact") {
    const int B = 4, K = 3, d = 6;
    RngStream rng(10);
    Eigen::MatrixXd Z1 = testutil::random_matrix(B, d, rng);
    Eigen::MatrixXd Z2 = testutil::random_matrix(B, d, rng);
    Eigen::MatrixXd C = testutil::random_matrix(d, K, rng);
    Eigen::MatrixXd q1 = uniform_targets(B, K), q2 = uniform_targets(B, K);
    q1(0, 0) += 0.1;
    q1(0, 1) -= 0.1;
    TransformEnsemble ens = init_ensemble(2, EnsembleKind::Mixed, d, 4, 11);

    ConsensusResult fwd = consensus_loss(ens, Z1, Z2, protos_from(C), q1, q2, 0.1);
    ConsensusResult swp = consensus_loss(ens, Z2, Z1, protos_from(C), q2, q1, 0.1);
    CHECK(fwd.loss == swp.loss);
    CHECK(fwd.grad_z1 == swp.grad_z2);
    CHECK(fwd.grad_z2 == swp.grad_z1);
    CHECK(fwd.grad_c == swp.grad_c);
}

TEST_CASE("consensus loss: additivity over transforms") {
    const int B = 4, K = 3, d = 6;
    RngStream rng(12);
    Eigen::MatrixXd Z1 = testutil::random_matrix(B, d, rng);
    Eigen::MatrixXd Z2 = testutil::random_matrix(B, d, rng);
    Eigen::MatrixXd C = testutil::random_matrix(d, K, rng);
    Eigen::MatrixXd q = uniform_targets(B, K);
    TransformEnsemble full = init_ensemble(3, EnsembleKind::Mixed, d, 4, 13);

    ConsensusResult whole = consensus_loss(full, Z1, Z2, protos_from(C), q, q, 0.1);
    double sum = 0.0;
    for (int i = 0; i < 3; ++i) {
        TransformEnsemble single;
        single.transforms.push_back(full.transforms[i]);
        sum += consensus_loss(single, Z1, Z2, protos_from(C), q, q, 0.1).loss;
    }
    CHECK(whole.loss == doctest::Approx(sum).epsilon(1e-12));
}

TEST_CASE("consensus loss: nonnegative on random instances, zero for empty ensembles") {
    const int B = 5, K = 4, d = 6;
    RngStream rng(14);
    for (int trial = 0; trial < 10; ++trial) {
        Eigen::MatrixXd Z1 = testutil::random_matrix(B, d, rng);
        Eigen::MatrixXd Z2 = testutil::random_matrix(B, d, rng);
        Eigen::MatrixXd C = testutil::random_matrix(d, K, rng);
        Eigen::MatrixXd q = uniform_targets(B, K);
        TransformEnsemble ens = init_ensemble(2, EnsembleKind::GaussianProjection, d, 3,
                                              static_cast<std::uint64_t>(trial));
        CHECK(consensus_loss(ens, Z1, Z2, protos_from(C), q, q, 0.1).loss >= 0.0);
    }
    TransformEnsemble empty;
    Eigen::MatrixXd Z = testutil::random_matrix(B, d, rng);
    Eigen::MatrixXd C = testutil::random_matrix(d, K, rng);
    ConsensusResult r = consensus_loss(empty, Z, Z, protos_from(C), uniform_targets(B, K),
                                       uniform_targets(B, K), 0.1);
    CHECK(r.loss == 0.0);
    CHECK(r.grad_z1.cwiseAbs().maxCoeff() == 0.0);
    CHECK(r.grad_c.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("consensus loss: rejects malformed targets") {
    const int B = 3, K = 2, d = 4;
    RngStream rng(15);
    Eigen::MatrixXd Z = testutil::random_matrix(B, d, rng);
    Eigen::MatrixXd C = testutil::random_matrix(d, K, rng);
    TransformEnsemble ens = init_ensemble(1, EnsembleKind::Diagonal, d, d, 16);
    Eigen::MatrixXd bad = Eigen::MatrixXd::Constant(B, K, 0.3);  // rows sum to 0.6
    CHECK_THROWS(consensus_loss(ens, Z, Z, protos_from(C), bad, uniform_targets(B, K), 0.1));
    CHECK_THROWS(consensus_loss(ens, Z, Z, protos_from(C), uniform_targets(B, K),
                                uniform_targets(B + 1, K), 0.1));
}

TEST_CASE("consensus loss: gradients match finite differences") {
    const int B = 4, K = 3, d = 5;
    RngStream rng(17);
    Eigen::MatrixXd Z1 = testutil::random_matrix(B, d, rng);
    Eigen::MatrixXd Z2 = testutil::random_matrix(B, d, rng);
    Eigen::MatrixXd C = testutil::random_matrix(d, K, rng);
    Eigen::MatrixXd q1(B, K), q2(B, K);
    for (int i = 0; i < B; ++i) {
        Eigen::VectorXd r1 = testutil::random_matrix(K, 1, rng).col(0).array().abs() + 0.1;
        Eigen::VectorXd r2 = testutil::random_matrix(K, 1, rng).col(0).array().abs() + 0.1;
        q1.row(i) = (r1 / r1.sum()).transpose();
        q2.row(i) = (r2 / r2.sum()).transpose();
    }
    TransformEnsemble ens = init_ensemble(2, EnsembleKind::Mixed, d, 3, 18);
    auto loss = [&] { return consensus_loss(ens, Z1, Z2, protos_from(C), q1, q2, 0.1).loss; };
    ConsensusResult r = consensus_loss(ens, Z1, Z2, protos_from(C), q1, q2, 0.1);

    CHECK(testutil::block_relative_error(r.grad_z1, testutil::finite_difference(Z1, loss)) <= 1e-4);
    CHECK(testutil::block_relative_error(r.grad_z2, testutil::finite_difference(Z2, loss)) <= 1e-4);
    CHECK(testutil::block_relative_error(r.grad_c, testutil::finite_difference(C, loss)) <= 1e-4);
}

TEST_CASE("ensemble serialization is byte-stable") {
    TransformEnsemble ens = init_ensemble(4, EnsembleKind::Mixed, 8, 4, 21);
    // Round-trip through the checkpoint encoding reproduces the matrices and
    // the dump bytes exactly (fixedness across save/load cycles).
    json j1 = json::object();
    j1["seed"] = ens.seed;
    j1["transforms"] = json::array();
    for (const auto& t : ens.transforms) {
        if (t.kind == TransformKind::GaussianProjection)
            j1["transforms"].push_back(json{{"kind", "gaussian_projection"}, {"map", matrix_to_json(t.proj)}});
        else
            j1["transforms"].push_back(json{{"kind", "diagonal"}, {"map", vector_to_json(t.diag)}});
    }
    const std::string dump1 = j1.dump();
    const std::string dump2 = j1.dump();
    CHECK(dump1 == dump2);
}
