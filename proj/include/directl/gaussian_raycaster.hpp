#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "directl/errors.hpp"
#include "directl/gaussian_scene.hpp"
#include "directl/radiance.hpp"
#include "directl/ray_geometry.hpp"

namespace directl {

struct RaycastOptions {
    std::size_t heap_capacity = 128;
    double k_sigma = 3.0;
    double alpha_floor = 1.0 / 255.0;
    Rgb background = Rgb::Zero();
};

/// Box around the k_sigma ellipsoid: half-extent k_sigma * sqrt(diag(Sigma)) per axis.
inline Aabb gaussian_aabb(const GaussianScene& scene, std::size_t i, double k_sigma) {
    if (i >= scene.size()) throw UsageError("gaussian_aabb: index out of range");
    const Mat3 cov = covariance_from_rs(scene.scales[i], scene.rotations[i]);
    const Vec3 half = k_sigma * cov.diagonal().cwiseMax(0.0).cwiseSqrt();
    Aabb b;
    b.min = scene.means[i] - half;
    b.max = scene.means[i] + half;
    return b;
}

/// A Gaussian the ray passes: depth of its peak along the ray and the resulting alpha.
struct GaussianHit {
    double t = 0.0;
    double alpha = 0.0;
    std::uint32_t index = 0;
};

inline bool hit_before(const GaussianHit& a, const GaussianHit& b) { return a.t != b.t ? a.t < b.t : a.index < b.index; }

/// Peak response of Gaussian i along the ray. Gaussians are truncated at k_sigma, so the
/// response is zero outside the ellipsoid bounded by gaussian_aabb.
inline std::optional<GaussianHit> intersect_gaussian(const GaussianScene& scene, std::size_t i, const Ray& ray,
                                                     double k_sigma, double alpha_floor) {
    const Mat3& P = scene.cov_inv[i];
    const Vec3 Pd = P * ray.direction;
    const double denom = ray.direction.dot(Pd);
    if (!(denom > 0.0)) return std::nullopt;
    const Vec3 mo = scene.means[i] - ray.origin;
    const double t = mo.dot(Pd) / denom;
    if (!(t > 0.0)) return std::nullopt;
    const Vec3 r = ray.origin + t * ray.direction - scene.means[i];
    const double m2 = r.dot(P * r);
    if (m2 > k_sigma * k_sigma) return std::nullopt;
    const double alpha = scene.opacities[i] * std::exp(-0.5 * m2);
    if (alpha < alpha_floor) return std::nullopt;
    return GaussianHit{t, alpha, static_cast<std::uint32_t>(i)};
}

/// Bounded set of the nearest hits. Ties on t go to the lower Gaussian index, so the kept set
/// does not depend on the order hits arrive in.
class HitHeap {
public:
    explicit HitHeap(std::size_t capacity) : capacity_(capacity) {
        if (capacity_ == 0) throw UsageError("heap capacity must be at least 1");
        hits_.reserve(std::min<std::size_t>(capacity_, 1024));
    }

    void push(const GaussianHit& h) {
        if (hits_.size() < capacity_) {
            hits_.push_back(h);
            std::push_heap(hits_.begin(), hits_.end(), hit_before);
        } else if (hit_before(h, hits_.front())) {
            std::pop_heap(hits_.begin(), hits_.end(), hit_before);
            hits_.back() = h;
            std::push_heap(hits_.begin(), hits_.end(), hit_before);
        }
    }

    bool full() const { return hits_.size() == capacity_; }
    std::size_t size() const { return hits_.size(); }
    std::size_t capacity() const { return capacity_; }
    const GaussianHit& farthest() const { return hits_.front(); }

    /// Kept hits, nearest first. Empties the heap.
    std::vector<GaussianHit> take_sorted() {
        std::sort_heap(hits_.begin(), hits_.end(), hit_before);
        return std::move(hits_);
    }

private:
    std::size_t capacity_;
    std::vector<GaussianHit> hits_;
};

// ---------------------------------------------------------------------------------------------
// BVH

struct BvhOptions {
    std::size_t branching = 8;
    double k_sigma = 3.0;
    double c_node = 1.0;
    double c_prim = 1.0;
    std::size_t max_leaf = 8;
    std::size_t bins = 16;
};

/// Child slot of an interior node: either another node or a run of prim_order.
struct BvhChild {
    Aabb box;
    std::uint32_t first = 0; // node index, or offset into prim_order
    std::uint32_t count = 0; // primitives in a leaf, 0 for an interior child
    bool leaf() const { return count > 0; }
};

struct BvhNode {
    Aabb box;
    std::uint32_t child_begin = 0;
    std::uint32_t child_count = 0;
};

struct Bvh {
    std::vector<BvhNode> nodes; // nodes[0] is the root
    std::vector<BvhChild> children;
    std::vector<std::uint32_t> prim_order;
    std::vector<Aabb> prim_boxes; // indexed by Gaussian
    std::size_t branching = 8;
    double k_sigma = 3.0;
    double sah_cost = 0.0;
};

/// SAH cost of a tree: interior nodes pay c_node, leaves pay c_prim per primitive, each
/// weighted by surface area relative to the root.
inline double bvh_sah_cost(const Bvh& bvh, double c_node, double c_prim) {
    if (bvh.nodes.empty()) return 0.0;
    const double root = bvh.nodes[0].box.surface_area();
    if (!(root > 0.0)) return c_node + c_prim * static_cast<double>(bvh.prim_order.size());
    double cost = 0.0;
    for (const auto& n : bvh.nodes) cost += n.box.surface_area() / root * c_node;
    for (const auto& c : bvh.children)
        if (c.leaf()) cost += c.box.surface_area() / root * static_cast<double>(c.count) * c_prim;
    return cost;
}

namespace detail {

class BvhBuilder {
public:
    BvhBuilder(const std::vector<Aabb>& boxes, const BvhOptions& opts) : boxes_(boxes), opts_(opts) {
        centroids_.reserve(boxes.size());
        for (const auto& b : boxes) centroids_.push_back(b.center());
    }

    Bvh run() {
        std::vector<std::uint32_t> order(boxes_.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::uint32_t>(i);
        order_ = &order;
        const int root = build(0, order.size());
        Bvh bvh;
        bvh.branching = opts_.branching;
        bvh.k_sigma = opts_.k_sigma;
        bvh.prim_boxes = boxes_;
        bvh.prim_order = std::move(order);
        if (tmp_[root].leaf) {
            // A lone leaf still hangs off a root node so traversal has one shape.
            bvh.nodes.push_back(BvhNode{tmp_[root].box, 0, 1});
            bvh.children.push_back(BvhChild{tmp_[root].box, tmp_[root].first, tmp_[root].count});
        } else {
            emit(root, bvh);
        }
        bvh.sah_cost = bvh_sah_cost(bvh, opts_.c_node, opts_.c_prim);
        return bvh;
    }

private:
    struct Tmp {
        Aabb box;
        int left = -1, right = -1;
        std::uint32_t first = 0, count = 0;
        bool leaf = false;
    };

    int make_leaf(const Aabb& box, std::size_t b, std::size_t e) {
        Tmp t;
        t.box = box;
        t.first = static_cast<std::uint32_t>(b);
        t.count = static_cast<std::uint32_t>(e - b);
        t.leaf = true;
        tmp_.push_back(t);
        return static_cast<int>(tmp_.size() - 1);
    }

    int build(std::size_t b, std::size_t e) {
        auto& order = *order_;
        Aabb box, cbox;
        for (std::size_t i = b; i < e; ++i) {
            box.expand(boxes_[order[i]]);
            cbox.expand(centroids_[order[i]]);
        }
        const std::size_t n = e - b;
        if (n == 1) return make_leaf(box, b, e);

        const double area = box.surface_area();
        const double leaf_cost = opts_.c_prim * static_cast<double>(n);
        double best_cost = std::numeric_limits<double>::infinity();
        int best_axis = -1;
        std::size_t best_split = 0;
        const std::size_t nb = opts_.bins;
        for (int axis = 0; axis < 3; ++axis) {
            const double lo = cbox.min[axis], ext = cbox.max[axis] - cbox.min[axis];
            if (!(ext > 0.0)) continue;
            std::vector<Aabb> bin_box(nb);
            std::vector<std::size_t> bin_n(nb, 0);
            for (std::size_t i = b; i < e; ++i) {
                const std::size_t k = bin_of(centroids_[order[i]][axis], lo, ext);
                bin_box[k].expand(boxes_[order[i]]);
                ++bin_n[k];
            }
            std::vector<double> right_area(nb, 0.0);
            std::vector<std::size_t> right_n(nb, 0);
            Aabb acc;
            std::size_t cnt = 0;
            for (std::size_t k = nb; k-- > 1;) {
                acc.expand(bin_box[k]);
                cnt += bin_n[k];
                right_area[k] = acc.surface_area();
                right_n[k] = cnt;
            }
            acc = Aabb{};
            cnt = 0;
            for (std::size_t k = 0; k + 1 < nb; ++k) {
                acc.expand(bin_box[k]);
                cnt += bin_n[k];
                if (cnt == 0 || right_n[k + 1] == 0) continue;
                const double cost = opts_.c_node + opts_.c_prim *
                                                       (acc.surface_area() * static_cast<double>(cnt) +
                                                        right_area[k + 1] * static_cast<double>(right_n[k + 1])) /
                                                       area;
                if (cost < best_cost) {
                    best_cost = cost;
                    best_axis = axis;
                    best_split = k + 1;
                }
            }
        }
        if (n <= opts_.max_leaf && !(best_cost < leaf_cost)) return make_leaf(box, b, e);

        std::size_t mid;
        if (best_axis >= 0) {
            const double lo = cbox.min[best_axis], ext = cbox.max[best_axis] - cbox.min[best_axis];
            auto it = std::stable_partition(order.begin() + static_cast<std::ptrdiff_t>(b),
                                            order.begin() + static_cast<std::ptrdiff_t>(e), [&](std::uint32_t p) {
                                                return bin_of(centroids_[p][best_axis], lo, ext) < best_split;
                                            });
            mid = static_cast<std::size_t>(it - order.begin());
        } else {
            // All centroids coincide: split the range in half.
            mid = b + n / 2;
        }
        const int l = build(b, mid);
        const int r = build(mid, e);
        Tmp t;
        t.box = box;
        t.left = l;
        t.right = r;
        tmp_.push_back(t);
        return static_cast<int>(tmp_.size() - 1);
    }

    std::size_t bin_of(double c, double lo, double ext) const {
        const auto nb = static_cast<double>(opts_.bins);
        const double k = std::floor((c - lo) / ext * nb);
        return static_cast<std::size_t>(std::clamp(k, 0.0, nb - 1.0));
    }

    // Writes binary node `t` as a wide node, pulling up the largest interior children.
    std::uint32_t emit(int t, Bvh& bvh) {
        std::vector<int> kids{tmp_[t].left, tmp_[t].right};
        while (kids.size() < opts_.branching) {
            int pick = -1;
            double best = -1.0;
            for (std::size_t i = 0; i < kids.size(); ++i) {
                const auto& k = tmp_[kids[i]];
                if (!k.leaf && k.box.surface_area() > best) {
                    best = k.box.surface_area();
                    pick = static_cast<int>(i);
                }
            }
            if (pick < 0) break;
            const int expand = kids[pick];
            kids[pick] = tmp_[expand].left;
            kids.insert(kids.begin() + pick + 1, tmp_[expand].right);
        }
        const auto idx = static_cast<std::uint32_t>(bvh.nodes.size());
        bvh.nodes.push_back(BvhNode{tmp_[t].box, 0, 0});
        const auto begin = static_cast<std::uint32_t>(bvh.children.size());
        bvh.children.resize(bvh.children.size() + kids.size());
        bvh.nodes[idx].child_begin = begin;
        bvh.nodes[idx].child_count = static_cast<std::uint32_t>(kids.size());
        for (std::size_t i = 0; i < kids.size(); ++i) {
            const auto& k = tmp_[kids[i]];
            BvhChild c;
            c.box = k.box;
            if (k.leaf) {
                c.first = k.first;
                c.count = k.count;
            } else {
                c.first = emit(kids[i], bvh);
            }
            bvh.children[begin + i] = c;
        }
        return idx;
    }

    const std::vector<Aabb>& boxes_;
    BvhOptions opts_;
    std::vector<Vec3> centroids_;
    std::vector<Tmp> tmp_;
    std::vector<std::uint32_t>* order_ = nullptr;
};

// Widens a box by a relative margin so rounding in the slab test never drops a hit that lies
// on its surface.
inline Aabb pad(Aabb b) {
    const Vec3 m = (b.min.cwiseAbs().cwiseMax(b.max.cwiseAbs()).array() + 1.0) * 1e-9;
    b.min -= m;
    b.max += m;
    return b;
}

} // namespace detail

inline Bvh build_bvh(const GaussianScene& scene, const BvhOptions& opts = {}) {
    if (scene.size() == 0) throw UsageError("build_bvh: empty scene");
    if (opts.branching < 2) throw UsageError("build_bvh: branching factor must be at least 2");
    if (opts.bins < 2 || opts.max_leaf < 1) throw UsageError("build_bvh: bad bin or leaf settings");
    if (!(opts.k_sigma > 0.0)) throw UsageError("build_bvh: k_sigma must be positive");
    if (scene.size() >= std::numeric_limits<std::uint32_t>::max()) throw UsageError("build_bvh: scene too large");
    std::vector<Aabb> boxes;
    boxes.reserve(scene.size());
    for (std::size_t i = 0; i < scene.size(); ++i) boxes.push_back(detail::pad(gaussian_aabb(scene, i, opts.k_sigma)));
    return detail::BvhBuilder(boxes, opts).run();
}

// ---------------------------------------------------------------------------------------------
// Shading

inline Composite composite_hits(const GaussianScene& scene, const std::vector<GaussianHit>& hits, const Ray& ray,
                                const Rgb& background) {
    Compositor comp;
    for (const auto& h : hits) comp.add(h.alpha, eval_sh(scene.sh_degree, scene.sh_of(h.index), ray.direction));
    return comp.finish(background);
}

/// Kept hits for one ray, nearest first.
inline std::vector<GaussianHit> collect_hits(const Bvh& bvh, const GaussianScene& scene, const Ray& ray,
                                             const RaycastOptions& opts) {
    HitHeap heap(opts.heap_capacity);
    if (bvh.nodes.empty()) return heap.take_sorted();
    double t0, t1;
    if (!intersect(bvh.nodes[0].box, ray, t0, t1)) return heap.take_sorted();
    struct Entry {
        std::uint32_t node;
        double t_enter;
    };
    std::vector<Entry> stack{{0, t0}};
    std::array<std::pair<double, std::uint32_t>, 64> order{};
    while (!stack.empty()) {
        const Entry top = stack.back();
        stack.pop_back();
        // Every hit inside a box lies at or beyond its entry distance.
        if (heap.full() && top.t_enter > heap.farthest().t) continue;
        const BvhNode& node = bvh.nodes[top.node];
        std::size_t n_push = 0;
        for (std::uint32_t c = 0; c < node.child_count; ++c) {
            const BvhChild& child = bvh.children[node.child_begin + c];
            if (!intersect(child.box, ray, t0, t1)) continue;
            if (heap.full() && t0 > heap.farthest().t) continue;
            if (child.leaf()) {
                for (std::uint32_t p = 0; p < child.count; ++p) {
                    const std::uint32_t g = bvh.prim_order[child.first + p];
                    if (!intersect(bvh.prim_boxes[g], ray, t0, t1)) continue;
                    if (auto h = intersect_gaussian(scene, g, ray, opts.k_sigma, opts.alpha_floor)) heap.push(*h);
                }
            } else if (n_push < order.size()) {
                order[n_push++] = {t0, child.first};
            } else {
                stack.push_back({child.first, t0});
            }
        }
        // Push far children first so the nearest is visited next.
        std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_push),
                  [](const auto& a, const auto& b) { return a.first > b.first; });
        for (std::size_t i = 0; i < n_push; ++i) stack.push_back({order[i].second, order[i].first});
    }
    return heap.take_sorted();
}

inline Composite trace_ray_composite(const Bvh& bvh, const GaussianScene& scene, const Ray& ray,
                                     const RaycastOptions& opts = {}) {
    return composite_hits(scene, collect_hits(bvh, scene, ray, opts), ray, opts.background);
}

inline Rgb trace_ray(const Bvh& bvh, const GaussianScene& scene, const Ray& ray, const RaycastOptions& opts = {}) {
    return trace_ray_composite(bvh, scene, ray, opts).color;
}

/// Every Gaussian tested, every hit kept, full sort. Shares the per-Gaussian math with trace_ray.
inline Composite brute_force_composite(const GaussianScene& scene, const Ray& ray, const RaycastOptions& opts = {}) {
    std::vector<GaussianHit> hits;
    for (std::size_t i = 0; i < scene.size(); ++i)
        if (auto h = intersect_gaussian(scene, i, ray, opts.k_sigma, opts.alpha_floor)) hits.push_back(*h);
    std::sort(hits.begin(), hits.end(), hit_before);
    return composite_hits(scene, hits, ray, opts.background);
}

inline Rgb brute_force_ray(const GaussianScene& scene, const Ray& ray, const RaycastOptions& opts = {}) {
    return brute_force_composite(scene, ray, opts).color;
}

/// Gaussian scene behind the RadianceField interface.
class GaussianField : public RadianceField {
public:
    GaussianField(GaussianScene scene, RaycastOptions opts = {}, BvhOptions bvh_opts = {})
        : scene_(std::move(scene)), opts_(std::move(opts)) {
        if (scene_.cov_inv.size() != scene_.size()) scene_.prepare();
        bvh_opts.k_sigma = opts_.k_sigma;
        bvh_ = build_bvh(scene_, bvh_opts);
    }

    Rgb shade(const Ray& ray) const override { return trace_ray(bvh_, scene_, ray, opts_); }

    const GaussianScene& scene() const { return scene_; }
    const Bvh& bvh() const { return bvh_; }

private:
    GaussianScene scene_;
    RaycastOptions opts_;
    Bvh bvh_;
};

} // namespace directl
