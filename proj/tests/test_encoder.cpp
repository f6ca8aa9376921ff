#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "bdd/encoder.hpp"
#include "oracles.hpp"

using namespace bdd;

namespace {

SparseVector random_input(Rng &rng, std::size_t V, std::size_t nnz) {
    SparseVector x;
    x.dim = V;
    std::set<std::size_t> cols;
    while (cols.size() < nnz)
        cols.insert(rng.below(V));
    for (auto c : cols)
        x.entries.emplace_back(c, rng.uniform(-1.0, 1.0));
    return x;
}

EncoderParams random_params(Rng &rng, Eigen::Index V, Eigen::Index H, Eigen::Index D) {
    auto p = EncoderParams::glorot(V, H, D, rng);
    for (Eigen::Index i = 0; i < H; ++i)
        p.b1(i) = rng.uniform(-0.5, 0.5);
    for (Eigen::Index i = 0; i < D; ++i)
        p.b2(i) = rng.uniform(-0.5, 0.5);
    return p;
}

// Flattened view of all parameters, for finite differences.
Eigen::VectorXd pack(const EncoderParams &p) {
    Eigen::VectorXd v(p.W1.size() + p.b1.size() + p.W2.size() + p.b2.size());
    v << oracle::flatten(p.W1), p.b1, oracle::flatten(p.W2), p.b2;
    return v;
}

EncoderParams unpack(const Eigen::VectorXd &v, const EncoderParams &shape) {
    EncoderParams p = shape;
    Eigen::Index o = 0;
    auto take = [&](Eigen::MatrixXd &m) {
        m = oracle::unflatten(v.segment(o, m.size()), m.rows(), m.cols());
        o += m.size();
    };
    auto takev = [&](Eigen::VectorXd &b) {
        b = v.segment(o, b.size());
        o += b.size();
    };
    take(p.W1);
    takev(p.b1);
    take(p.W2);
    takev(p.b2);
    return p;
}

} // namespace

TEST(Encoder, ZeroParametersGiveZeroOutput) {
    Rng rng(1);
    const auto x = random_input(rng, 6, 3);
    const auto f = forward(x, EncoderParams::zeros(6, 4, 3));
    EXPECT_EQ(f, Eigen::VectorXd::Zero(3));
}

TEST(Encoder, ScalarExampleMatchesTanhOfOne) {
    SparseVector x;
    x.dim = 2;
    x.entries = {{0, 0.6}, {1, 0.8}};
    auto p = EncoderParams::zeros(2, 1, 1);
    p.W1(0, 0) = 0.6;
    p.W1(1, 0) = 0.8; // pre-activation = ||x||^2 = 1
    p.W2(0, 0) = 1.0;
    EncoderCache cache;
    const auto f = forward(x, p, &cache);
    EXPECT_NEAR(f(0), 0.76159, 1e-5);
    EXPECT_DOUBLE_EQ(f(0), std::tanh(1.0));

    const auto g = backward(Eigen::VectorXd::Ones(1), cache, p);
    EXPECT_DOUBLE_EQ(g.W2(0, 0), std::tanh(1.0));
    EXPECT_DOUBLE_EQ(g.b2(0), 1.0);
}

TEST(Encoder, ForwardIsPure) {
    Rng rng(2);
    const auto p = random_params(rng, 10, 5, 4);
    const auto x = random_input(rng, 10, 4);
    EXPECT_EQ(forward(x, p), forward(x, p));
}

TEST(Encoder, ZeroUpstreamGradientGivesZeroGradients) {
    Rng rng(3);
    const auto p = random_params(rng, 8, 4, 3);
    const auto x = random_input(rng, 8, 3);
    EncoderCache cache;
    forward(x, p, &cache);
    const auto g = backward(Eigen::VectorXd::Zero(3), cache, p);
    EXPECT_EQ(pack(g).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Encoder, DimensionMismatchAndStaleCacheAreContractViolations) {
    Rng rng(4);
    auto p = random_params(rng, 8, 4, 3);
    const auto bad = random_input(rng, 9, 2);
    EXPECT_THROW(forward(bad, p), ContractViolation);
    const auto x = random_input(rng, 8, 2);
    EncoderCache cache;
    forward(x, p, &cache);
    ++p.version;
    EXPECT_THROW(backward(Eigen::VectorXd::Ones(3), cache, p), ContractViolation);
}

TEST(Encoder, GradientsMatchFiniteDifferences) {
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        Rng rng(seed);
        const auto V = 3 + static_cast<Eigen::Index>(rng.below(6));
        const auto H = 1 + static_cast<Eigen::Index>(rng.below(8));
        const auto D = 1 + static_cast<Eigen::Index>(rng.below(8));
        const auto p = random_params(rng, V, H, D);
        const auto x = random_input(rng, static_cast<std::size_t>(V), 1 + rng.below(static_cast<std::size_t>(V)));
        Eigen::VectorXd up(D);
        for (Eigen::Index i = 0; i < D; ++i)
            up(i) = rng.uniform(-1.0, 1.0);

        EncoderCache cache;
        forward(x, p, &cache);
        const auto analytic = pack(backward(up, cache, p));
        const auto numeric = oracle::numeric_gradient(
            [&](const Eigen::VectorXd &v) { return forward(x, unpack(v, p)).dot(up); }, pack(p), 1e-5);
        EXPECT_LE(oracle::relative_error(analytic, numeric), 1e-5) << "seed " << seed;
    }
}

TEST(Encoder, ForwardStaysFiniteOnFuzzedInputs) {
    Rng rng(5);
    const auto p = random_params(rng, 20, 8, 4);
    for (int t = 0; t < 200; ++t) {
        auto x = random_input(rng, 20, 1 + rng.below(20));
        for (auto &[_, v] : x.entries)
            v *= std::pow(10.0, rng.uniform(-3.0, 6.0));
        EXPECT_TRUE(forward(x, p).allFinite());
    }
}

TEST(Ema, ScalarUpdateAndFixedPoint) {
    auto live = EncoderParams::zeros(1, 1, 1);
    live.W1.setOnes();
    live.b1.setOnes();
    live.W2.setOnes();
    live.b2.setOnes();
    EmaShadow shadow{EncoderParams::zeros(1, 1, 1), Eigen::MatrixXd::Zero(1, 1), 0.999};
    ema_update(live, Eigen::MatrixXd::Ones(1, 1), shadow);
    EXPECT_NEAR(shadow.encoder.W1(0, 0), 0.001, 1e-15);
    EXPECT_NEAR(shadow.head(0, 0), 0.001, 1e-15);

    EmaShadow same{live, Eigen::MatrixXd::Ones(1, 1), 0.9};
    ema_update(live, Eigen::MatrixXd::Ones(1, 1), same);
    EXPECT_EQ(same.encoder.W1, live.W1);
    EXPECT_EQ(same.head, Eigen::MatrixXd::Ones(1, 1));
}

TEST(Ema, DecayOutsideOpenUnitIntervalIsRejected) {
    const auto live = EncoderParams::zeros(1, 1, 1);
    for (double d : {0.0, 1.0, 1.5, -0.1}) {
        EmaShadow s{live, Eigen::MatrixXd::Zero(1, 1), d};
        EXPECT_THROW(ema_update(live, Eigen::MatrixXd::Zero(1, 1), s), ArgumentError);
    }
}

TEST(Checkpoint, BinaryRoundTripIsBitExactAndJsonKeepsDigits) {
    Rng rng(6);
    const auto p = random_params(rng, 7, 3, 2);
    TensorArchive ar;
    store_encoder(ar, "enc.", p);
    const auto path = std::filesystem::temp_directory_path() / "bdd_test_encoder.bin";
    ar.write_binary(path.string());
    const auto back = load_encoder(TensorArchive::read_binary(path.string()), "enc.");
    std::filesystem::remove(path);
    EXPECT_EQ(pack(back), pack(p));

    const auto via_json = load_encoder(TensorArchive::from_json(nlohmann::json::parse(ar.to_json().dump())), "enc.");
    EXPECT_LE((pack(via_json) - pack(p)).cwiseAbs().maxCoeff(), 1e-15 * pack(p).cwiseAbs().maxCoeff());
}

TEST(Checkpoint, MissingTensorIsAMissingArtifact) {
    TensorArchive ar;
    EXPECT_THROW(load_encoder(ar, "enc."), MissingArtifactError);
}
