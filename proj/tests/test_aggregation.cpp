#include <filesystem>

#include "doctest.h"
#include "oracles.hpp"
#include "semcorr/aggregation.hpp"
#include "semcorr/rng.hpp"

using namespace semcorr;

namespace {

CostVolume random_volume(Rng& rng, GridShape ss, GridShape ts, double lo = -1.0, double hi = 1.0) {
    CostVolume c;
    c.shape_s = ss;
    c.shape_t = ts;
    c.values = MatrixX<double>(ss.size(), ts.size());
    for (int i = 0; i < ss.size(); ++i)
        for (int j = 0; j < ts.size(); ++j) c.values(i, j) = rng.uniform(lo, hi);
    return c;
}

std::vector<double> kernel_weights(const Conv4dKernel& k) {
    return {k.weights.data(), k.weights.data() + k.weights.size()};
}

}  // namespace

TEST_SUITE("aggregation") {

TEST_CASE("delta kernel is the identity on nonnegative input") {
    Rng rng(40);
    const CostVolume c = random_volume(rng, {2, 2}, {2, 2}, 0.0, 1.0);
    const CostVolume a = aggregate(c, Conv4dKernel::delta(3));
    CHECK(a.values == c.values);
    CHECK(a.kind == CostKind::aggregated);
}

TEST_CASE("zero kernel with negative bias clamps to zero") {
    Rng rng(41);
    const CostVolume c = random_volume(rng, {2, 2}, {2, 2});
    Conv4dKernel k(3);
    k.bias = -1.0;
    const CostVolume a = aggregate(c, k);
    CHECK(a.values.isZero(0.0));
}

TEST_CASE("matches the naive eight-loop convolution") {
    Rng rng(42);
    for (const GridShape g : {GridShape{2, 2}, GridShape{3, 3}, GridShape{2, 3}}) {
        const CostVolume c = random_volume(rng, g, g);
        Conv4dKernel k(3);
        for (Eigen::Index i = 0; i < k.weights.size(); ++i) k.weights[i] = rng.uniform(-0.5, 0.5);
        k.bias = rng.uniform(-0.2, 0.2);
        const CostVolume a = aggregate(c, k);
        const auto expect =
            oracle::naive_conv4d(oracle::to_rows(c.values), g, g, kernel_weights(k), 3, k.bias, true);
        for (int i = 0; i < g.size(); ++i)
            for (int j = 0; j < g.size(); ++j)
                CHECK(std::abs(a.values(i, j) - expect[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) <
                      1e-12);
    }
}

TEST_CASE("shape preserved for any odd kernel size") {
    Rng rng(43);
    const CostVolume c = random_volume(rng, {2, 3}, {3, 2});
    for (const int k : {1, 3, 5}) {
        Conv4dKernel kern(k);
        for (Eigen::Index i = 0; i < kern.weights.size(); ++i) kern.weights[i] = rng.uniform(-0.3, 0.3);
        const CostVolume a = aggregate(c, kern);
        CHECK(a.values.rows() == c.values.rows());
        CHECK(a.values.cols() == c.values.cols());
        CHECK(a.shape_s == c.shape_s);
        CHECK(a.shape_t == c.shape_t);
    }
    CHECK_THROWS_AS(Conv4dKernel(2), std::invalid_argument);
    CHECK_THROWS_AS(Conv4dKernel(0), std::invalid_argument);
}

TEST_CASE("linear before the ReLU") {
    Rng rng(44);
    const CostVolume c1 = random_volume(rng, {2, 2}, {2, 2});
    const CostVolume c2 = random_volume(rng, {2, 2}, {2, 2});
    Conv4dKernel k(3);
    for (Eigen::Index i = 0; i < k.weights.size(); ++i) k.weights[i] = rng.uniform(-0.1, 0.1);
    k.bias = 100.0;  // big enough that the ReLU never clamps
    const double a = 0.8, b = -1.3;
    CostVolume mix = c1;
    mix.values = a * c1.values + b * c2.values;
    const MatrixX<double> lhs = aggregate(mix, k).values.array() - k.bias;
    const MatrixX<double> r1 = aggregate(c1, k).values.array() - k.bias;
    const MatrixX<double> r2 = aggregate(c2, k).values.array() - k.bias;
    CHECK((lhs - (a * r1 + b * r2)).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("backward: zero cotangent and delta pass-through") {
    Rng rng(45);
    const CostVolume c = random_volume(rng, {2, 2}, {2, 2}, 0.1, 1.0);
    Conv4dKernel k = Conv4dKernel::delta(3);
    const MatrixX<double> gz = aggregate_backward(c, k, MatrixX<double>::Zero(4, 4));
    CHECK(gz.isZero(0.0));
    CHECK(k.weight_grad.isZero(0.0));
    CHECK(k.bias_grad == 0.0);

    MatrixX<double> probe(4, 4);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) probe(i, j) = rng.uniform(-1.0, 1.0);
    k.zero_grad();
    const MatrixX<double> g = aggregate_backward(c, k, probe);
    CHECK(g == probe);  // positive input through the delta kernel
}

TEST_CASE("backward overloads agree") {
    Rng rng(46);
    const CostVolume c = random_volume(rng, {2, 3}, {2, 2});
    Conv4dKernel k(3);
    for (Eigen::Index i = 0; i < k.weights.size(); ++i) k.weights[i] = rng.uniform(-0.4, 0.4);
    k.bias = 0.1;
    MatrixX<double> probe(6, 4);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 4; ++j) probe(i, j) = rng.uniform(-1.0, 1.0);

    Conv4dKernel k1 = k, k2 = k;
    const MatrixX<double> g1 = aggregate_backward(c, k1, probe);
    const MatrixX<double> g2 = aggregate_backward(c, k2, probe, aggregate(c, k));
    CHECK(g1 == g2);
    CHECK(k1.weight_grad == k2.weight_grad);
    CHECK(k1.bias_grad == k2.bias_grad);
    CHECK_THROWS_AS(aggregate_backward(c, k1, MatrixX<double>::Zero(3, 3)), std::invalid_argument);
}

TEST_CASE("backward matches finite differences") {
    Rng rng(47);
    CostVolume c = random_volume(rng, {2, 2}, {2, 2});
    Conv4dKernel k = Conv4dKernel::delta(3);
    for (Eigen::Index i = 0; i < k.weights.size(); ++i) k.weights[i] += rng.uniform(-0.2, 0.2);
    k.bias = 0.3;  // keeps pre-activations clear of the kink for this seed
    MatrixX<double> probe(4, 4);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) probe(i, j) = rng.uniform(-1.0, 1.0);
    REQUIRE(conv4d(c, k).values.array().abs().minCoeff() > 1e-3);

    Conv4dKernel grads = k;
    grads.zero_grad();
    const MatrixX<double> grad_c = aggregate_backward(c, grads, probe);
    const auto loss = [&] { return (probe.array() * aggregate(c, k).values.array()).sum(); };
    for (Eigen::Index i = 0; i < k.weights.size(); ++i)
        CHECK(oracle::rel_err(grads.weight_grad[i], oracle::fd(&k.weights[i], loss)) < 1e-4);
    CHECK(oracle::rel_err(grads.bias_grad, oracle::fd(&k.bias, loss)) < 1e-4);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            CHECK(oracle::rel_err(grad_c(i, j), oracle::fd(&c.values(i, j), loss)) < 1e-4);
}

TEST_CASE("checkpoint bytes round trip") {
    Rng rng(48);
    Conv4dKernel k = Conv4dKernel::near_identity(3, rng);
    k.bias = -0.125;
    const std::string bytes = kernel_to_bytes(k);
    CHECK(bytes.size() == 4 + 4 + 8 * (81 + 1));
    CHECK(bytes.substr(0, 4) == "C4D1");
    CHECK(static_cast<unsigned char>(bytes[4]) == 3);  // k as u32 LE
    CHECK(bytes[5] == 0);
    const Conv4dKernel back = kernel_from_bytes(bytes);
    CHECK(back.size == k.size);
    CHECK(back.weights == k.weights);
    CHECK(back.bias == k.bias);
    CHECK_THROWS_AS(kernel_from_bytes("XXXX"), std::runtime_error);

    const auto path = std::filesystem::temp_directory_path() / "semcorr_kernel_test.bin";
    save_kernel(path, k);
    const Conv4dKernel loaded = load_kernel(path);
    CHECK(loaded.weights == k.weights);
    std::filesystem::remove(path);
}

TEST_CASE("near-identity initialization stays close to the delta") {
    Rng rng(49);
    const Conv4dKernel k = Conv4dKernel::near_identity(3, rng);
    const int center = k.index(1, 1, 1, 1);
    CHECK(k.weights[center] > 0.98);
    for (Eigen::Index i = 0; i < k.weights.size(); ++i) {
        if (i == center) continue;
        CHECK(std::abs(k.weights[i]) <= 0.01);
    }
    CHECK(k.bias == 0.0);
}

}  // TEST_SUITE
