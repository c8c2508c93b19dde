#include <doctest.h>

#include "harness.hpp"
#include "oracles.hpp"
#include "volseg/patching.hpp"

using namespace volseg;

namespace {

// Every slice of [0, extent) counted once per covering window.
std::vector<int> coverage(const WindowPlan& p, int extent)
{
    std::vector<int> c(static_cast<std::size_t>(extent), 0);
    for (int off : p.axial_offsets)
        for (int z = off; z < off + p.patch_shape.depth; ++z)
            ++c[static_cast<std::size_t>(z)];
    return c;
}

}  // namespace

TEST_CASE("plan_windows examples")
{
    CHECK(plan_windows(104, 104, 0.75).axial_offsets == std::vector<int>{0});
    CHECK(plan_windows(150, 104, 0.75).axial_offsets == std::vector<int>{0, 26, 46});
    CHECK(plan_windows(300, 104, 0.75).axial_offsets ==
          std::vector<int>{0, 26, 52, 78, 104, 130, 156, 182, 196});
    CHECK(plan_windows(10, 4, 0.0).axial_offsets == std::vector<int>{0, 4, 6});
    // Stride never drops below one slice.
    CHECK(plan_windows(5, 2, 0.99).axial_offsets == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("plan_windows errors")
{
    CHECK_THROWS_AS((void)plan_windows(10, 11, 0.5), DomainError);
    CHECK_THROWS_AS((void)plan_windows(10, 0, 0.5), DomainError);
    CHECK_THROWS_AS((void)plan_windows(10, 4, 1.0), DomainError);
    CHECK_THROWS_AS((void)plan_windows(10, 4, -0.1), DomainError);
}

TEST_CASE("window plans cover every slice and end flush")
{
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const int depth = 1 + static_cast<int>(rng.below(40));
        const int extent = depth + static_cast<int>(rng.below(120));
        const double ov = trial % 2 ? 0.75 : rng.uniform(0.0, 0.95);
        const WindowPlan p = plan_windows(extent, depth, ov);
        REQUIRE(p.axial_offsets.front() == 0);
        REQUIRE(p.axial_offsets.back() == extent - depth);
        for (std::size_t i = 1; i < p.size(); ++i)
            REQUIRE(p.axial_offsets[i] > p.axial_offsets[i - 1]);
        const auto c = coverage(p, extent);
        for (int n : c)
            REQUIRE(n >= 1);
        // Away from the two ends (one stride each) slices are seen at least twice.
        const int stride = std::max(1, static_cast<int>(std::lround(depth * (1.0 - ov))));
        if (ov == 0.75 && stride < depth)
            for (int z = stride; z < extent - stride; ++z)
                REQUIRE(c[static_cast<std::size_t>(z)] >= 2);
    }
}

TEST_CASE("extract_patch")
{
    Volume v(Dims{150, 2, 3});
    for (std::size_t i = 0; i < v.size(); ++i)
        v[i] = static_cast<float>(i);
    const WindowPlan plan = plan_windows(v.dims(), 104, 0.75);
    const Volume p = extract_patch(v, plan, 1);
    CHECK(p.dims() == Dims{104, 2, 3});
    CHECK(p(0, 0, 0) == v(26, 0, 0));
    CHECK(p(103, 1, 2) == v(129, 1, 2));
    CHECK_THROWS_AS((void)extract_patch(v, plan, 3), DomainError);

    const Volume five(Dims{12, 3, 3}, {1, 1, 1}, 5.0f);
    const Volume q = extract_patch(five, plan_windows(five.dims(), 4, 0.5), 2);
    for (float e : q.data())
        CHECK(e == 5.0f);
}

TEST_CASE("extracting and re-embedding every patch touches every voxel")
{
    Rng rng(8);
    const Volume v = harness::random_volume(rng, {37, 4, 5});
    const WindowPlan plan = plan_windows(v.dims(), 8, 0.75);
    Volume back(v.dims(), v.spacing(), -1.0f);
    for (std::size_t i = 0; i < plan.size(); ++i)
        embed_box(extract_patch(v, plan, i), {plan.axial_offsets[i], 0, 0}, back);
    CHECK(back == v);
}

TEST_CASE("taper_profile examples")
{
    CHECK(taper_value(15, 30, 70, 100) == doctest::Approx(0.25));
    CHECK(taper_value(50, 30, 70, 100) == 1.0);
    CHECK(taper_value(85, 30, 70, 100) == doctest::Approx(0.25));
    CHECK(taper_value(15, 30, 70, 100) == doctest::Approx(oracle::taper(15, 30, 70, 100)));

    const TaperProfile flat = taper_profile({0, 0, 0}, {6, 5, 4}, {6, 5, 4});
    for (int z = 0; z < 6; ++z)
        for (int y = 0; y < 5; ++y)
            for (int x = 0; x < 4; ++x)
                CHECK(flat.weight(z, y, x) == 1.0f);

    // Continuity at both corners.
    for (double eps : {1e-3, 1e-6, 1e-9}) {
        CHECK(std::abs(taper_value(30 - eps, 30, 70, 100) - 1.0) < 3 * eps / 30);
        CHECK(std::abs(taper_value(70 + eps, 30, 70, 100) - 1.0) < 3 * eps / 30);
    }
}

TEST_CASE("taper_profile evaluates at voxel centres and is separable")
{
    const TaperProfile t = taper_profile({2, 1, 0.5}, {6, 3, 2.5}, {8, 4, 3});
    for (int z = 0; z < 8; ++z)
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 3; ++x) {
                const double ref = oracle::taper(z + 0.5, 2, 6, 8) * oracle::taper(y + 0.5, 1, 3, 4) *
                                   oracle::taper(x + 0.5, 0.5, 2.5, 3);
                CHECK(t.weight(z, y, x) == doctest::Approx(ref).epsilon(1e-6));
                CHECK(t.weight(z, y, x) > 0.0f);
            }
}

TEST_CASE("taper_profile rejects bad ordering")
{
    CHECK_THROWS_AS((void)taper_profile({5, 0, 0}, {4, 1, 1}, {10, 1, 1}), DomainError);
    CHECK_THROWS_AS((void)taper_profile({0, 0, 0}, {11, 1, 1}, {10, 1, 1}), DomainError);
    CHECK_THROWS_AS((void)taper_profile({-1, 0, 0}, {4, 1, 1}, {10, 1, 1}), DomainError);
}

TEST_CASE("symmetric_taper caps the shrinkage at half the patch")
{
    const TaperProfile t = symmetric_taper({16, 32, 32}, {14, 14, 14});
    CHECK(t.x_l[0] == 8.0);
    CHECK(t.x_r[0] == 8.0);
    CHECK(t.x_l[1] == 14.0);
    CHECK(t.x_r[1] == 18.0);
}

TEST_CASE("reconstruct examples")
{
    Rng rng(21);
    SUBCASE("single window with a flat taper is the identity")
    {
        const Volume v = harness::random_volume(rng, {10, 3, 4});
        const WindowPlan plan = plan_windows(v.dims(), 10, 0.75);
        const TaperProfile flat = taper_profile({0, 0, 0}, {10, 3, 4}, {10, 3, 4});
        const Volume patches[] = {v};
        CHECK(reconstruct(patches, plan, flat, v.dims()) == v);
    }
    SUBCASE("consistent overlapping windows reproduce the source volume")
    {
        const Volume v = harness::random_volume(rng, {30, 3, 4});
        const WindowPlan plan = plan_windows(v.dims(), 16, 0.75);
        std::vector<Volume> outs;
        for (std::size_t i = 0; i < plan.size(); ++i)
            outs.push_back(extract_patch(v, plan, i));
        const Volume r = reconstruct(outs, plan, symmetric_taper(plan.patch_shape, {5, 1, 1}), v.dims());
        for (std::size_t i = 0; i < v.size(); ++i)
            REQUIRE(std::abs(r[i] - v[i]) <= 1e-6);
    }
    SUBCASE("constant 0 and 1 with equal weights average to 0.5")
    {
        WindowPlan plan = plan_windows(6, 4, 0.5);  // offsets 0, 2
        plan.patch_shape = {4, 1, 1};
        const TaperProfile flat = taper_profile({0, 0, 0}, {4, 1, 1}, {4, 1, 1});
        const std::vector<Volume> outs{Volume(Dims{4, 1, 1}, {1, 1, 1}, 0.0f),
                                       Volume(Dims{4, 1, 1}, {1, 1, 1}, 1.0f)};
        const Volume r = reconstruct(outs, plan, flat, {6, 1, 1});
        CHECK(r[0] == 0.0f);
        CHECK(r[2] == 0.5f);
        CHECK(r[3] == 0.5f);
        CHECK(r[5] == 1.0f);
    }
}

TEST_CASE("reconstruct stays within the contributing values")
{
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        const Dims full{20 + static_cast<int>(rng.below(20)), 2, 3};
        const WindowPlan plan = plan_windows(full, 8, 0.75);
        std::vector<Volume> outs;
        for (std::size_t i = 0; i < plan.size(); ++i)
            outs.push_back(harness::random_volume(rng, plan.patch_shape, -2.0, 2.0));
        const Volume r = reconstruct(outs, plan, symmetric_taper(plan.patch_shape, {3, 0, 0}), full);
        for (int z = 0; z < full.depth; ++z)
            for (int y = 0; y < 2; ++y)
                for (int x = 0; x < 3; ++x) {
                    float lo = INFINITY, hi = -INFINITY;
                    for (std::size_t i = 0; i < plan.size(); ++i) {
                        const int local = z - plan.axial_offsets[i];
                        if (local < 0 || local >= 8)
                            continue;
                        lo = std::min(lo, outs[i](local, y, x));
                        hi = std::max(hi, outs[i](local, y, x));
                    }
                    REQUIRE(r(z, y, x) >= lo - 1e-6f);
                    REQUIRE(r(z, y, x) <= hi + 1e-6f);
                }
    }
}

TEST_CASE("reconstruct errors")
{
    const WindowPlan plan = plan_windows(Dims{10, 2, 2}, 4, 0.5);
    const TaperProfile t = symmetric_taper(plan.patch_shape, {1, 0, 0});
    std::vector<Volume> outs(plan.size(), Volume(plan.patch_shape));
    CHECK_NOTHROW((void)reconstruct(outs, plan, t, {10, 2, 2}));
    outs.pop_back();
    CHECK_THROWS_AS((void)reconstruct(outs, plan, t, {10, 2, 2}), DomainError);
    outs.push_back(Volume(Dims{4, 2, 3}));
    CHECK_THROWS_AS((void)reconstruct(outs, plan, t, {10, 2, 2}), DomainError);
    outs.back() = Volume(plan.patch_shape);
    CHECK_THROWS_AS((void)reconstruct(outs, plan, symmetric_taper({5, 2, 2}, {1, 0, 0}), {10, 2, 2}),
                    DomainError);
}
