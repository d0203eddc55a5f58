#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "directl/gaussian_raycaster.hpp"
#include "scenes.hpp"

using namespace directl;
using testscene::random_scene;
using testscene::single;

namespace {

Ray random_ray(std::mt19937& rng, double dist = 3.0, double spread = 1.0) {
    std::normal_distribution<double> g;
    std::uniform_real_distribution<double> u(-spread, spread);
    const Vec3 o = dist * Vec3(g(rng), g(rng), g(rng)).normalized();
    const Vec3 target(u(rng), u(rng), u(rng));
    return Ray{o, (target - o).normalized()};
}

double sq_err(const Rgb& a, const Rgb& b) { return (a - b).squaredNorm(); }

// Walks the tree and checks box nesting; returns the Gaussians found in leaves.
void walk(const Bvh& bvh, std::uint32_t node, std::vector<int>& seen) {
    const BvhNode& n = bvh.nodes[node];
    ASSERT_GE(n.child_count, 1u);
    ASSERT_LE(n.child_count, bvh.branching);
    for (std::uint32_t c = 0; c < n.child_count; ++c) {
        const BvhChild& ch = bvh.children[n.child_begin + c];
        ASSERT_TRUE(n.box.contains(ch.box));
        if (ch.leaf()) {
            for (std::uint32_t p = 0; p < ch.count; ++p) {
                const std::uint32_t g = bvh.prim_order[ch.first + p];
                ASSERT_TRUE(ch.box.contains(bvh.prim_boxes[g]));
                ++seen[g];
            }
        } else {
            ASSERT_EQ(bvh.nodes[ch.first].box.min, ch.box.min);
            ASSERT_EQ(bvh.nodes[ch.first].box.max, ch.box.max);
            walk(bvh, ch.first, seen);
        }
    }
}

} // namespace

TEST(GaussianAabb, HandExamples) {
    const auto s = single(Vec3::Zero(), 1.0, 0.5);
    const Aabb b = gaussian_aabb(s, 0, 3.0);
    EXPECT_EQ(b.min, Vec3::Constant(-3));
    EXPECT_EQ(b.max, Vec3::Constant(3));

    GaussianScene t = single(Vec3(1, 1, 1), 1.0, 0.5);
    t.scales[0] = Vec3(1, 2, 3);
    t.prepare();
    const Aabb c = gaussian_aabb(t, 0, 3.0);
    EXPECT_LT((c.max - Vec3(4, 7, 10)).norm(), 1e-12);
    EXPECT_LT((c.min - Vec3(-2, -5, -8)).norm(), 1e-12);
}

TEST(GaussianAabb, ContainsRotatedEllipsoid) {
    const auto s = random_scene(20, 17, 1.0, 0, 0.05, 0.8);
    std::mt19937 rng(1);
    std::normal_distribution<double> g;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const Aabb b = gaussian_aabb(s, i, 3.0);
        const Mat3 M = s.rotations[i].toRotationMatrix() * s.scales[i].asDiagonal();
        for (int k = 0; k < 500; ++k) {
            const Vec3 p = s.means[i] + 3.0 * M * Vec3(g(rng), g(rng), g(rng)).normalized();
            const Vec3 tol = Vec3::Constant(1e-12 * (1.0 + p.norm()));
            ASSERT_TRUE((p.array() >= (b.min - tol).array()).all() && (p.array() <= (b.max + tol).array()).all());
        }
    }
}

TEST(HitHeap, KeepsNearestWithIndexTieBreak) {
    HitHeap h(3);
    for (std::uint32_t i = 0; i < 10; ++i) h.push({static_cast<double>(10 - i), 0.5, i});
    h.push({2.0, 0.5, 0}); // ties t=2 (index 8); lower index wins
    const auto kept = h.take_sorted();
    ASSERT_EQ(kept.size(), 3u);
    EXPECT_EQ(kept[0].index, 9u);
    EXPECT_EQ(kept[1].index, 0u);
    EXPECT_EQ(kept[2].index, 8u);
    EXPECT_THROW(HitHeap(0), UsageError);
}

TEST(Bvh, SingleGaussianIsOneLeaf) {
    const auto s = single(Vec3(1, 2, 3), 0.5, 0.5);
    const Bvh bvh = build_bvh(s);
    ASSERT_EQ(bvh.nodes.size(), 1u);
    ASSERT_EQ(bvh.children.size(), 1u);
    EXPECT_TRUE(bvh.children[0].leaf());
    EXPECT_EQ(bvh.children[0].count, 1u);
    const Aabb want = gaussian_aabb(s, 0, 3.0);
    EXPECT_TRUE(bvh.nodes[0].box.contains(want));
    EXPECT_LT((bvh.nodes[0].box.min - want.min).norm(), 1e-6);
    EXPECT_LT((bvh.nodes[0].box.max - want.max).norm(), 1e-6);
}

TEST(Bvh, TwoDistantGaussiansSplit) {
    GaussianScene s = single(Vec3(-10, 0, 0), 1.0, 0.5);
    s.means.emplace_back(10, 0, 0);
    s.scales.push_back(Vec3::Ones());
    s.rotations.push_back(Eigen::Quaterniond::Identity());
    s.opacities.push_back(0.5);
    s.sh.insert(s.sh.end(), {0, 0, 0});
    s.prepare();
    const Bvh bvh = build_bvh(s);
    ASSERT_EQ(bvh.nodes.size(), 1u);
    ASSERT_EQ(bvh.nodes[0].child_count, 2u);
    EXPECT_TRUE(bvh.children[0].leaf() && bvh.children[1].leaf());
    // Boxes are 6x6x6 (area 216) under a 26x6x6 root (area 696). One leaf of two costs
    // 2; the split costs one node plus two leaves of one.
    const double split = 1.0 + 2.0 * 216.0 / 696.0;
    EXPECT_NEAR(bvh.sah_cost, split, 1e-6);
    EXPECT_LT(split, 2.0);
}

TEST(Bvh, StructureInvariants) {
    for (std::size_t branching : {2u, 4u, 8u}) {
        const auto s = random_scene(700, 5, 1.0, 0);
        BvhOptions o;
        o.branching = branching;
        const Bvh bvh = build_bvh(s, o);
        std::vector<int> seen(s.size(), 0);
        walk(bvh, 0, seen);
        for (int c : seen) ASSERT_EQ(c, 1);
        for (std::size_t i = 0; i < s.size(); ++i) EXPECT_TRUE(bvh.prim_boxes[i].contains(gaussian_aabb(s, i, 3.0)));
        EXPECT_GT(bvh.sah_cost, 0.0);
    }
    EXPECT_THROW(build_bvh(GaussianScene{}), UsageError);
    BvhOptions o;
    o.branching = 1;
    EXPECT_THROW(build_bvh(single(Vec3::Zero(), 1, 1), o), UsageError);
}

TEST(Bvh, Deterministic) {
    const auto s = random_scene(300, 9, 1.0, 0);
    const Bvh a = build_bvh(s), b = build_bvh(s);
    EXPECT_EQ(a.prim_order, b.prim_order);
    EXPECT_EQ(a.nodes.size(), b.nodes.size());
    EXPECT_EQ(a.sah_cost, b.sah_cost);
}

TEST(TraceRay, HandExamples) {
    const Ray ray{Vec3(-5, 0, 0), Vec3(1, 0, 0)};
    RaycastOptions o;
    o.background = Rgb(0.1, 0.2, 0.3);
    const auto s = single(Vec3::Zero(), 1.0, 0.8);
    auto hit = intersect_gaussian(s, 0, ray, 3.0, o.alpha_floor);
    ASSERT_TRUE(hit);
    EXPECT_NEAR(hit->t, 5.0, 1e-12);
    EXPECT_NEAR(hit->alpha, 0.8, 1e-12);
    const Rgb c = trace_ray(build_bvh(s), s, ray, o);
    EXPECT_LT((c - (0.8 * Rgb::Constant(0.5) + 0.2 * o.background)).norm(), 1e-12);
    EXPECT_LT((brute_force_ray(s, ray, o) - c).norm(), 1e-15);

    const auto off = single(Vec3(0, 1, 0), 1.0, 0.8);
    hit = intersect_gaussian(off, 0, ray, 3.0, o.alpha_floor);
    ASSERT_TRUE(hit);
    EXPECT_NEAR(hit->t, 5.0, 1e-12);
    EXPECT_NEAR(hit->alpha, 0.8 * std::exp(-0.5), 1e-12);
}

TEST(TraceRay, MissesAndCulls) {
    RaycastOptions o;
    o.background = Rgb(0.3, 0.3, 0.3);
    const auto s = single(Vec3::Zero(), 1.0, 0.8);
    const Bvh bvh = build_bvh(s);
    // Behind the origin, beyond k_sigma, and below the alpha floor.
    EXPECT_EQ(trace_ray(bvh, s, Ray{Vec3(5, 0, 0), Vec3(1, 0, 0)}, o), o.background);
    EXPECT_EQ(trace_ray(bvh, s, Ray{Vec3(-5, 3.5, 0), Vec3(1, 0, 0)}, o), o.background);
    const auto faint = single(Vec3::Zero(), 1.0, 0.003);
    EXPECT_EQ(trace_ray(build_bvh(faint), faint, Ray{Vec3(-5, 0, 0), Vec3(1, 0, 0)}, o), o.background);
    EXPECT_EQ(trace_ray(bvh, s, Ray{Vec3(-5, 0, 0), Vec3(0, 1, 0)}, o),
              volume_render(std::vector<VolumeSample>{}, o.background).color);
}

TEST(TraceRay, MatchesBruteForceWithFullHeap) {
    std::mt19937 rng(21);
    for (unsigned seed : {1u, 2u, 3u}) {
        const auto s = random_scene(1000, seed, 1.0, seed % 3 + 1);
        RaycastOptions o;
        o.heap_capacity = s.size();
        o.background = Rgb(0.2, 0.4, 0.6);
        const Bvh bvh = build_bvh(s);
        for (int i = 0; i < 300; ++i) {
            const Ray r = random_ray(rng);
            const Rgb a = trace_ray(bvh, s, r, o), b = brute_force_ray(s, r, o);
            ASSERT_LE((a - b).cwiseAbs().maxCoeff(), 1e-5);
        }
    }
}

TEST(TraceRay, TraversalKeepsEveryHit) {
    std::mt19937 rng(22);
    const auto s = random_scene(800, 4, 1.0, 0);
    RaycastOptions o;
    o.heap_capacity = s.size();
    o.alpha_floor = 0.0;
    const Bvh bvh = build_bvh(s);
    for (int i = 0; i < 300; ++i) {
        const Ray r = random_ray(rng);
        std::set<std::uint32_t> want;
        for (std::size_t g = 0; g < s.size(); ++g)
            if (intersect_gaussian(s, g, r, 3.0, 0.0)) want.insert(static_cast<std::uint32_t>(g));
        std::set<std::uint32_t> got;
        const auto hits = collect_hits(bvh, s, r, o);
        for (const auto& h : hits) got.insert(h.index);
        ASSERT_EQ(got, want);
        for (std::size_t k = 1; k < hits.size(); ++k) ASSERT_LE(hits[k - 1].t, hits[k].t);
    }
}

TEST(TraceRay, ErrorShrinksAsHeapGrows) {
    // Holds with a black background and non-negative colors: each extra kept hit only adds a
    // non-negative term.
    std::mt19937 rng(23);
    const auto s = random_scene(1000, 8, 0.6, 0, 0.05, 0.2);
    const Bvh bvh = build_bvh(s);
    double total_small = 0.0, total_large = 0.0;
    for (int i = 0; i < 300; ++i) {
        const Ray r = random_ray(rng, 3.0, 0.5);
        const Rgb ref = brute_force_ray(s, r);
        double prev = std::numeric_limits<double>::infinity();
        for (std::size_t ch : {16u, 32u, 64u, 128u, 256u}) {
            RaycastOptions o;
            o.heap_capacity = ch;
            const double e = sq_err(trace_ray(bvh, s, r, o), ref);
            ASSERT_LE(e, prev + 1e-15) << "c_h " << ch;
            prev = e;
            if (ch == 16) total_small += e;
            if (ch == 256) total_large += e;
        }
    }
    EXPECT_GT(total_small, total_large);
}

TEST(TraceRay, TranslationEquivariant) {
    std::mt19937 rng(24);
    auto s = random_scene(500, 12, 1.0, 2);
    const Bvh bvh = build_bvh(s);
    const Vec3 shift(3.0, -2.0, 5.0);
    auto moved = s;
    for (auto& m : moved.means) m += shift;
    moved.prepare();
    const Bvh bvh2 = build_bvh(moved);
    for (int i = 0; i < 200; ++i) {
        const Ray r = random_ray(rng);
        const Rgb a = trace_ray(bvh, s, r), b = trace_ray(bvh2, moved, Ray{r.origin + shift, r.direction});
        ASSERT_LE((a - b).cwiseAbs().maxCoeff(), 1e-6);
    }
}

TEST(TraceRay, WeightsSumToOne) {
    std::mt19937 rng(25);
    const auto s = random_scene(400, 13, 1.0, 1);
    const Bvh bvh = build_bvh(s);
    for (int i = 0; i < 200; ++i) {
        const Composite c = trace_ray_composite(bvh, s, random_ray(rng));
        ASSERT_NEAR(c.weight_sum + c.t_final, 1.0, 1e-12);
    }
}

TEST(GaussianField, ShadesThroughInterface) {
    const auto s = random_scene(100, 14);
    const GaussianField f(s);
    std::mt19937 rng(26);
    const Ray r = random_ray(rng);
    EXPECT_EQ(f.shade(r), trace_ray(f.bvh(), f.scene(), r));
}
