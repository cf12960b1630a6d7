#include "ccnet/backbone.hpp"
#include "ccnet/prior.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <set>

using namespace ccnet;

namespace {

CCNetConfig prior_config() {
    CCNetConfig c;
    c.dim = 8;
    c.grid = 4;
    c.levels = 3;
    return c;
}

SceneSpec scene_for(int class_id, std::uint64_t seed) {
    Rng rng(seed);
    return make_scene(class_id, rng);
}

}  // namespace

TEST_CASE("prompt points sit at patch centres") {
    CHECK(prompt_points(2, 32, 32) == std::vector<PromptPoint>{{8, 8}, {8, 24}, {24, 8}, {24, 24}});
    CHECK(prompt_points(1, 32, 32) == std::vector<PromptPoint>{{16, 16}});
    const auto p4 = prompt_points(4, 32, 32);
    REQUIRE(p4.size() == 16);
    for (std::size_t i = 0; i < p4.size(); ++i) {
        CHECK(p4[i].y == 4 + 8 * static_cast<int>(i / 4));
        CHECK(p4[i].x == 4 + 8 * static_cast<int>(i % 4));
    }
    CHECK_THROWS(prompt_points(0, 32, 32));
    CHECK_THROWS(prompt_points(40, 32, 32));
}

TEST_CASE("oracle masks are nested and background prompts share one mask") {
    const auto points = prompt_points(4, 32, 32);
    int background = 0, foreground = 0;
    for (int cls = 0; cls < 4; ++cls) {
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            const SceneSpec scene = scene_for(cls, 100 + seed);
            const RegionMap regions = rasterize(scene, 32, 32);
            const MaskSet m = oracle_masks(regions, points);
            REQUIRE(m.points == 16);
            REQUIRE(m.levels == 3);
            for (int i = 0; i < 16; ++i) {
                const PromptPoint p = points[static_cast<std::size_t>(i)];
                const bool on_object = regions.at(2, p.y, p.x) != 0;
                for (int l = 0; l < 3; ++l) CHECK(m.at(i, l, p.y, p.x) == 1);
                if (!on_object) {
                    ++background;
                    for (int l = 1; l < 3; ++l) {
                        for (int y = 0; y < 32; ++y) {
                            for (int x = 0; x < 32; ++x) REQUIRE(m.at(i, l, y, x) == m.at(i, 0, y, x));
                        }
                    }
                    continue;
                }
                if (regions.at(0, p.y, p.x) == 0) continue;  // inside a part but between its sub-parts
                ++foreground;
                CHECK(m.area(i, 0) <= m.area(i, 1));
                CHECK(m.area(i, 1) <= m.area(i, 2));
                for (int y = 0; y < 32; ++y) {
                    for (int x = 0; x < 32; ++x) {
                        if (m.at(i, 0, y, x)) REQUIRE(m.at(i, 1, y, x));
                        if (m.at(i, 1, y, x)) REQUIRE(m.at(i, 2, y, x));
                    }
                }
            }
        }
    }
    CHECK(background > 0);
    CHECK(foreground > 0);
}

TEST_CASE("mask planning deduplicates") {
    const auto points = prompt_points(4, 32, 32);
    const RegionMap a = rasterize(scene_for(0, 1), 32, 32);
    const RegionMap b = rasterize(scene_for(2, 2), 32, 32);
    const MaskSet ma = oracle_masks(a, points), mb = oracle_masks(b, points);
    const std::vector<MaskSet> both{ma, mb};
    const PriorPlan plan = plan_masks(both);
    CHECK(plan.gather.size() == 2 * 16 * 3);
    std::set<Index> distinct(plan.gather.begin(), plan.gather.end());
    CHECK(static_cast<Index>(distinct.size()) == plan.masks.dim(0));
    CHECK(plan.masks.dim(0) < 2 * 16 * 3);

    // The region-id planner makes the same masks in the same slots.
    const std::vector<const RegionMap*> regions{&a, &b};
    const PriorPlan fast = plan_oracle_prior(regions, points);
    REQUIRE(fast.gather.size() == plan.gather.size());
    const Index plane = 32 * 32;
    for (std::size_t s = 0; s < plan.gather.size(); ++s) {
        CHECK(plan.masks.data().segment(plan.gather[s] * plane, plane) ==
              fast.masks.data().segment(fast.gather[s] * plane, plane));
    }
}

TEST_CASE("mask encoder") {
    const CCNetConfig c = prior_config();
    const ParamSet p = init_ccnet_params(c, 21);
    const auto points = prompt_points(4, 32, 32);

    SUBCASE("equal masks give equal embeddings") {
        const MaskSet m = oracle_masks(scene_for(1, 5), points, 32, 32);
        const Tensor e = encode_masks(p, m, c);
        CHECK(e.shape() == Shape{16, 3, 8});
        for (int i = 0; i < 16; ++i) {
            for (int j = 0; j < 16; ++j) {
                for (int l = 0; l < 3; ++l) {
                    for (int k = 0; k < 3; ++k) {
                        bool same = true;
                        for (int px = 0; px < 32 * 32 && same; ++px) same = m.at(i, l, px / 32, px % 32) == m.at(j, k, px / 32, px % 32);
                        if (!same) continue;
                        CHECK(e.data().segment((i * 3 + l) * 8, 8) == e.data().segment((j * 3 + k) * 8, 8));
                    }
                }
            }
        }
    }
    SUBCASE("bias-free encoder maps an empty mask to zero") {
        CCNetConfig nb = c;
        nb.bias = false;
        const ParamSet q = init_ccnet_params(nb, 22);
        MaskSet empty;
        empty.points = 16;
        empty.levels = 3;
        empty.height = empty.width = 32;
        empty.bits.assign(16 * 3 * 32 * 32, 0);
        CHECK(encode_masks(q, empty, nb).data().cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("a mask and its complement encode differently") {
        Rng rng(23);
        for (int trial = 0; trial < 100; ++trial) {
            Tensor masks(Shape{2, 32, 32, 1});
            for (Index px = 0; px < 32 * 32; ++px) {
                masks[px] = uniform(rng, 0.0, 1.0) < 0.3 ? 1.0 : 0.0;
                masks[32 * 32 + px] = 1.0 - masks[px];
            }
            Tape tape;
            ParamVars v(tape, p, false);
            const Tensor e = mask_encoder(v, tape.constant(masks), c).value();
            CHECK((e.data().head(8) - e.data().tail(8)).cwiseAbs().maxCoeff() > 1e-9);
        }
    }
}

TEST_CASE("random prior") {
    const Tensor a = random_prior(16, 3, 8, 5);
    CHECK(a.shape() == Shape{16, 3, 8});
    CHECK(bitwise_equal(a, random_prior(16, 3, 8, 5)));
    CHECK_FALSE(bitwise_equal(a, random_prior(16, 3, 8, 6)));
    const int dim = 16;
    const Tensor big = random_prior(625, 1, dim, 7);  // 10^4 draws
    const double mean = big.data().mean();
    const double var = (big.data().array() - mean).square().sum() / static_cast<double>(big.numel() - 1);
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(var - 1.0 / dim) < 0.2 / dim);
}

TEST_CASE("initial state layout") {
    Tape tape;
    const Tensor tokens = testutil::random_tensor(Shape{2, 4, 3}, 30);
    const Tensor prior = testutil::random_tensor(Shape{2, 4, 2, 3}, 31);
    const LevelState z = init_state(tape.constant(tokens), tape.constant(prior));
    REQUIRE(z.levels.size() == 3);
    CHECK(z.t == 0);
    CHECK(bitwise_equal(z.levels[0].value(), tokens));
    for (Index b = 0; b < 2; ++b) {
        for (Index i = 0; i < 4; ++i) {
            for (Index l = 0; l < 2; ++l) {
                for (Index k = 0; k < 3; ++k) {
                    CHECK(z.levels[static_cast<std::size_t>(l + 1)].value()[(b * 4 + i) * 3 + k] == prior[((b * 4 + i) * 2 + l) * 3 + k]);
                }
            }
        }
    }
    CHECK_THROWS_AS(init_state(tape.constant(tokens), tape.constant(Tensor(Shape{2, 4, 2, 5}))), std::invalid_argument);

    // Zero prior: every upper level starts at zero.
    const CCNetBackbone net(prior_config(), PriorMode::zero);
    const ParamSet p = net.init(32);
    ParamVars v(tape, p, false);
    const Dataset ds = generate_dataset({3, 2, 32});
    const auto trace = net.trace(tape, v, make_batch({&ds.domains[1][0]}));
    for (int l = 1; l <= 3; ++l) CHECK(trace.z0.levels[static_cast<std::size_t>(l)].value().data().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("oracle prior ignores the rendering domain") {
    const CCNetConfig c = prior_config();
    const CCNetBackbone net(c, PriorMode::oracle);
    const ParamSet p = net.init(40);
    const SceneSpec scene = scene_for(3, 41);
    std::vector<Sample> renders;
    for (int d = 0; d < kDomains; ++d) {
        Rng rng(50 + static_cast<std::uint64_t>(d));
        renders.push_back(render(scene, domain_style(d), rng));
        renders.back().domain = d;
    }
    Tape tape;
    ParamVars v(tape, p, false);
    const Tensor first = net.prior(tape, v, make_batch({&renders[0]})).value();
    for (int d = 1; d < kDomains; ++d) {
        CHECK_FALSE(bitwise_equal(renders[0].image, renders[static_cast<std::size_t>(d)].image));
        CHECK(bitwise_equal(net.prior(tape, v, make_batch({&renders[static_cast<std::size_t>(d)]})).value(), first));
    }
}

TEST_CASE("a level-2 prior perturbation stays at level 2 in the initial state") {
    Tape tape;
    const Tensor tokens = testutil::random_tensor(Shape{1, 4, 3}, 60);
    Tensor prior = testutil::random_tensor(Shape{1, 4, 3, 3}, 61);
    const LevelState a = init_state(tape.constant(tokens), tape.constant(prior));
    for (Index i = 0; i < 4; ++i) prior[(i * 3 + 1) * 3] += 1.0;
    const LevelState b = init_state(tape.constant(tokens), tape.constant(prior));
    for (std::size_t l = 0; l < 4; ++l) CHECK(bitwise_equal(a.levels[l].value(), b.levels[l].value()) == (l != 2));
}

TEST_CASE("mask corruption swaps regions at the requested rate") {
    const auto points = prompt_points(4, 32, 32);
    const RegionMap r = rasterize(scene_for(2, 70), 32, 32);
    const auto clean = prompt_region_ids(r, points);
    Rng none(1);
    CHECK(prompt_region_ids(r, points, 0.0, &none) == clean);
    Rng all(2);
    const auto swapped = prompt_region_ids(r, points, 1.0, &all);
    REQUIRE(swapped.size() == clean.size());
    for (std::size_t i = 0; i < clean.size(); ++i) CHECK(swapped[i] != clean[i]);
    CHECK_THROWS(prompt_region_ids(r, points, 0.5, nullptr));
}
