#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "semcorr/consistency.hpp"
#include "semcorr/rng.hpp"

using namespace semcorr;

namespace {

CostVolume random_volume(Rng& rng, GridShape ss, GridShape ts) {
    CostVolume c;
    c.shape_s = ss;
    c.shape_t = ts;
    c.values = MatrixX<double>(ss.size(), ts.size());
    for (int i = 0; i < ss.size(); ++i)
        for (int j = 0; j < ts.size(); ++j) c.values(i, j) = rng.uniform(-1.0, 1.0);
    return c;
}

CostVolume identity_volume(GridShape s) {
    CostVolume c;
    c.shape_s = s;
    c.shape_t = s;
    c.values = MatrixX<double>::Identity(s.size(), s.size());
    return c;
}

}  // namespace

TEST_SUITE("consistency") {

TEST_CASE("identity volume yields zero flow") {
    const FlowField f = wta_flow(identity_volume({3, 3}));
    for (int i = 0; i < 9; ++i) CHECK(f(i) == Displacement{0, 0});
}

TEST_CASE("row peak at flat index 4 on a 3x3 grid maps cell 0 to (1,1)") {
    CostVolume c = identity_volume({3, 3});
    c.values.row(0).setZero();
    c.values(0, 4) = 2.0;
    const FlowField f = wta_flow(c);
    CHECK(f(0) == Displacement{1, 1});
}

TEST_CASE("argmax ties break to the lowest flat index") {
    CostVolume c;
    c.shape_s = {1, 2};
    c.shape_t = {1, 4};
    c.values = MatrixX<double>::Zero(2, 4);
    c.values(0, 1) = 1.0;
    c.values(0, 3) = 1.0;  // tie with index 1
    const FlowField f = wta_flow(c);
    CHECK(f(0) == Displacement{0, 1});
}

TEST_CASE("matches exhaustive per-row scan on random volumes") {
    Rng rng(20);
    for (int trial = 0; trial < 25; ++trial) {
        const GridShape ss{rng.uniform_int(1, 3), rng.uniform_int(1, 3)};
        const GridShape ts{rng.uniform_int(1, 3), rng.uniform_int(1, 3)};
        const CostVolume c = random_volume(rng, ss, ts);
        const FlowField f = wta_flow(c);
        const auto expect = oracle::naive_wta(oracle::to_rows(c.values), ss, ts);
        for (int i = 0; i < ss.size(); ++i) CHECK(f(i) == expect[static_cast<std::size_t>(i)]);
    }
}

TEST_CASE("wta is invariant under strictly increasing transforms") {
    Rng rng(21);
    const CostVolume c = random_volume(rng, {3, 3}, {3, 3});
    const FlowField base = wta_flow(c);
    CostVolume scaled = c;
    scaled.values = 3.0 * c.values.array() + 0.7;
    CostVolume warped = c;
    warped.values = c.values.array().exp();
    for (const CostVolume* v : {&scaled, &warped}) {
        const FlowField f = wta_flow(*v);
        for (int i = 0; i < 9; ++i) CHECK(f(i) == base(i));
    }
}

TEST_CASE("worked tolerance examples") {
    // forward (0,2) met by backward (0,-1): residual 1 >= 0.1*(4+1)+0.05
    const GridShape g{1, 5};
    FlowField fwd(g, g), bwd(g, g);
    fwd(0) = {0, 2};
    bwd(2) = {0, -1};
    ConfidenceMask m = consistency_mask(fwd, bwd, {0.1, 0.05});
    CHECK(!m(0));

    // exact inverse: residual 0 < 0.1*8+0.05
    bwd(2) = {0, -2};
    m = consistency_mask(fwd, bwd, {0.1, 0.05});
    CHECK(m(0));
}

TEST_CASE("zero flows are consistent everywhere") {
    const GridShape g{3, 4};
    const FlowField fwd(g, g), bwd(g, g);
    const ConfidenceMask m = consistency_mask(fwd, bwd, {0.1, 0.05});
    CHECK(m.count == g.size());
}

TEST_CASE("forward match leaving the grid clears the bit") {
    const GridShape g{2, 2};
    FlowField fwd(g, g), bwd(g, g);
    fwd(3) = {1, 1};  // walks off the grid
    const ConfidenceMask m = consistency_mask(fwd, bwd, {0.1, 0.05});
    CHECK(!m(3));
    CHECK(m(0));
}

TEST_CASE("grid mismatch is rejected") {
    FlowField fwd({2, 2}, {3, 3});
    FlowField bwd({2, 2}, {2, 2});
    CHECK_THROWS_AS(consistency_mask(fwd, bwd, {0.1, 0.05}), std::invalid_argument);
}

TEST_CASE("enlarging tolerances never clears a bit") {
    Rng rng(22);
    for (int trial = 0; trial < 20; ++trial) {
        const CostVolume c = random_volume(rng, {3, 3}, {3, 3});
        const FlowField fwd = wta_flow(c);
        const FlowField bwd = wta_flow(transpose(c));
        const ConfidenceMask small = consistency_mask(fwd, bwd, {0.05, 0.02});
        const ConfidenceMask big = consistency_mask(fwd, bwd, {0.2, 0.3});
        for (int i = 0; i < 9; ++i) {
            if (small(i)) CHECK(big(i));
        }
        CHECK(big.count >= small.count);
    }
}

TEST_CASE("bijective argmaxes give an all-ones mask for any positive alpha2") {
    // permutation volume: argmax rows and columns are mutually inverse
    CostVolume c;
    c.shape_s = {2, 2};
    c.shape_t = {2, 2};
    c.values = MatrixX<double>::Zero(4, 4);
    const int perm[4] = {2, 0, 3, 1};
    for (int i = 0; i < 4; ++i) c.values(i, perm[i]) = 1.0;
    for (const double a2 : {1e-9, 0.05, 1.0}) {
        const FlowsAndMask fm = mask_and_flows(c, {0.0, a2});
        CHECK(fm.mask.count == 4);
    }
}

TEST_CASE("identity volume gives zero flows and a full mask") {
    const FlowsAndMask fm = mask_and_flows(identity_volume({3, 3}), {0.1, 0.05});
    CHECK(fm.mask.count == 9);
    for (int i = 0; i < 9; ++i) {
        CHECK(fm.fwd(i) == Displacement{0, 0});
        CHECK(fm.bwd(i) == Displacement{0, 0});
    }
}

TEST_CASE("mask count equals popcount") {
    Rng rng(23);
    const CostVolume c = random_volume(rng, {3, 3}, {3, 3});
    const FlowsAndMask fm = mask_and_flows(c, {0.1, 0.05});
    int pop = 0;
    for (int i = 0; i < 9; ++i) pop += fm.mask(i) ? 1 : 0;
    CHECK(fm.mask.count == pop);
}

TEST_CASE("mask_and_flows equals composing the three operations") {
    Rng rng(24);
    for (int trial = 0; trial < 10; ++trial) {
        const CostVolume c = random_volume(rng, {2, 3}, {3, 2});
        const FlowsAndMask fm = mask_and_flows(c, {0.1, 0.05});
        const FlowField fwd = wta_flow(c);
        const FlowField bwd = wta_flow(transpose(c));
        const ConfidenceMask m = consistency_mask(fwd, bwd, {0.1, 0.05});
        for (int i = 0; i < c.shape_s.size(); ++i) {
            CHECK(fm.fwd(i) == fwd(i));
            CHECK(fm.mask(i) == m(i));
        }
        for (int j = 0; j < c.shape_t.size(); ++j) CHECK(fm.bwd(j) == bwd(j));
    }
}

TEST_CASE("mask oracle agreement on random flows") {
    Rng rng(25);
    for (int trial = 0; trial < 20; ++trial) {
        const GridShape g{3, 3};
        FlowField fwd(g, g), bwd(g, g);
        for (int i = 0; i < 9; ++i) {
            fwd(i) = {rng.uniform_int(-2, 2), rng.uniform_int(-2, 2)};
            bwd(i) = {rng.uniform_int(-2, 2), rng.uniform_int(-2, 2)};
        }
        const ConfidenceMask m = consistency_mask(fwd, bwd, {0.1, 0.05});
        const auto bits = oracle::naive_mask(fwd.vectors, g, bwd.vectors, g, 0.1, 0.05);
        for (int i = 0; i < 9; ++i) CHECK(static_cast<int>(m(i)) == bits[static_cast<std::size_t>(i)]);
    }
}

TEST_CASE("pgm and csv exports") {
    const GridShape g{2, 2};
    FlowField fwd(g, g), bwd(g, g);
    fwd(3) = {1, 1};
    const ConfidenceMask m = consistency_mask(fwd, bwd, {0.1, 0.05});
    CHECK(mask_to_pgm(m) == "P2\n2 2\n1\n1 1\n1 0\n");
    CHECK(flow_to_csv(fwd) == "i,dy,dx\n0,0,0\n1,0,0\n2,0,0\n3,1,1\n");
}

}  // TEST_SUITE
