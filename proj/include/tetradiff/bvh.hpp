#pragma once

/**
 * Bounding-volume hierarchy over the triangles of a SurfaceMesh: exact
 * closest-point queries and ray-parity inside tests.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "mesh.hpp"
#include "rng.hpp"

namespace tetradiff
{
    /// Closest point to p on triangle (a, b, c), by Voronoi-region case analysis.
    inline Vec3 closest_point_on_triangle(const Vec3 & p, const Vec3 & a, const Vec3 & b, const Vec3 & c)
    {
        const Vec3 ab = b - a, ac = c - a, ap = p - a;
        const double d1 = dot(ab, ap), d2 = dot(ac, ap);
        if (d1 <= 0.0 && d2 <= 0.0) return a;

        const Vec3 bp = p - b;
        const double d3 = dot(ab, bp), d4 = dot(ac, bp);
        if (d3 >= 0.0 && d4 <= d3) return b;

        const double vc = d1 * d4 - d3 * d2;
        if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + (d1 / (d1 - d3)) * ab;

        const Vec3 cp = p - c;
        const double d5 = dot(ab, cp), d6 = dot(ac, cp);
        if (d6 >= 0.0 && d5 <= d6) return c;

        const double vb = d5 * d2 - d1 * d6;
        if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + (d2 / (d2 - d6)) * ac;

        const double va = d3 * d6 - d5 * d4;
        if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0)
        {
            return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);
        }
        const double denom = 1.0 / (va + vb + vc);
        return a + ab * (vb * denom) + ac * (vc * denom);
    }

    struct ClosestHit
    {
        std::size_t triangle = 0;
        Vec3 point;
        double squared_distance = std::numeric_limits<double>::infinity();
    };

    class TriangleBvh
    {
    public:
        /// The mesh must outlive the hierarchy.
        explicit TriangleBvh(const SurfaceMesh & mesh) : mesh_(&mesh)
        {
            const std::size_t n = mesh.triangles.size();
            order_.resize(n);
            std::iota(order_.begin(), order_.end(), 0u);
            boxes_.resize(n);
            centroids_.resize(n);
            for (std::size_t i = 0; i < n; ++i)
            {
                const auto & t = mesh.triangles[i];
                for (auto v : t) boxes_[i].expand(mesh.vertices[v]);
                centroids_[i] = (mesh.vertices[t[0]] + mesh.vertices[t[1]] + mesh.vertices[t[2]]) / 3.0;
            }
            if (n > 0) build(0, n);
        }

        const SurfaceMesh & mesh() const { return *mesh_; }

        ClosestHit closest(const Vec3 & p) const
        {
            ClosestHit best;
            if (!nodes_.empty()) closest(0, p, best);
            return best;
        }

        /**
         * Ray-parity inside test. Rays that pass within 1e-9 (barycentric) of a
         * triangle edge, or run nearly parallel to a hit triangle, are re-cast
         * along a jittered direction derived from `key`.
         */
        bool inside(const Vec3 & p, std::uint64_t key = 0) const
        {
            Vec3 dir{1.0, 0.0, 0.0};
            const CounterRng rng(0x7e7a5eedULL);
            for (std::uint64_t attempt = 0; attempt < 64; ++attempt)
            {
                int crossings = 0;
                bool ambiguous = false;
                if (!nodes_.empty()) cast(0, p, dir, crossings, ambiguous);
                if (!ambiguous)
                {
                    return crossings % 2 == 1;
                }
                dir = Vec3{1.0, rng.uniform(key, 2 * attempt) - 0.5, rng.uniform(key, 2 * attempt + 1) - 0.5};
                dir = dir / norm(dir);
            }
            throw Error("ray parity: no unambiguous ray found");
        }

    private:
        struct Node
        {
            Aabb box;
            std::uint32_t begin = 0, end = 0, left = 0, right = 0; // left == 0 marks a leaf
        };

        std::uint32_t build(std::size_t begin, std::size_t end)
        {
            const auto id = static_cast<std::uint32_t>(nodes_.size());
            nodes_.push_back({});
            Aabb box, cbox;
            for (std::size_t i = begin; i < end; ++i)
            {
                box.expand(boxes_[order_[i]]);
                cbox.expand(centroids_[order_[i]]);
            }
            nodes_[id].box = box;
            nodes_[id].begin = static_cast<std::uint32_t>(begin);
            nodes_[id].end = static_cast<std::uint32_t>(end);
            if (end - begin <= 4)
            {
                return id;
            }
            const Vec3 ext = cbox.extent();
            const int axis = ext.x >= ext.y && ext.x >= ext.z ? 0 : (ext.y >= ext.z ? 1 : 2);
            const std::size_t mid = (begin + end) / 2;
            std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin), order_.begin() + static_cast<std::ptrdiff_t>(mid),
                             order_.begin() + static_cast<std::ptrdiff_t>(end), [&](std::uint32_t a, std::uint32_t b) {
                                 return centroids_[a][axis] < centroids_[b][axis];
                             });
            const auto l = build(begin, mid);
            const auto r = build(mid, end);
            nodes_[id].left = l;
            nodes_[id].right = r;
            return id;
        }

        void closest(std::uint32_t id, const Vec3 & p, ClosestHit & best) const
        {
            const Node & n = nodes_[id];
            if (n.left == 0)
            {
                for (std::uint32_t i = n.begin; i < n.end; ++i)
                {
                    const auto & t = mesh_->triangles[order_[i]];
                    const Vec3 q = closest_point_on_triangle(p, mesh_->vertices[t[0]], mesh_->vertices[t[1]], mesh_->vertices[t[2]]);
                    const double d2 = squared_distance(p, q);
                    if (d2 < best.squared_distance || (d2 == best.squared_distance && order_[i] < best.triangle))
                    {
                        best = {order_[i], q, d2};
                    }
                }
                return;
            }
            const double dl = nodes_[n.left].box.squared_distance_to(p);
            const double dr = nodes_[n.right].box.squared_distance_to(p);
            const auto first = dl <= dr ? n.left : n.right;
            const auto second = dl <= dr ? n.right : n.left;
            if (std::min(dl, dr) <= best.squared_distance) closest(first, p, best);
            if (std::max(dl, dr) <= best.squared_distance) closest(second, p, best);
        }

        static bool ray_hits_box(const Aabb & b, const Vec3 & o, const Vec3 & d)
        {
            double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < 3; ++i)
            {
                if (d[i] == 0.0)
                {
                    if (o[i] < b.lo[i] || o[i] > b.hi[i]) return false;
                    continue;
                }
                double ta = (b.lo[i] - o[i]) / d[i], tb = (b.hi[i] - o[i]) / d[i];
                if (ta > tb) std::swap(ta, tb);
                t0 = std::max(t0, ta);
                t1 = std::min(t1, tb);
                if (t0 > t1) return false;
            }
            return true;
        }

        void cast(std::uint32_t id, const Vec3 & o, const Vec3 & d, int & crossings, bool & ambiguous) const
        {
            const Node & n = nodes_[id];
            if (ambiguous || !ray_hits_box(n.box, o, d))
            {
                return;
            }
            if (n.left != 0)
            {
                cast(n.left, o, d, crossings, ambiguous);
                cast(n.right, o, d, crossings, ambiguous);
                return;
            }
            constexpr double tol = 1e-9;
            for (std::uint32_t i = n.begin; i < n.end && !ambiguous; ++i)
            {
                const auto & t = mesh_->triangles[order_[i]];
                const Vec3 & a = mesh_->vertices[t[0]];
                const Vec3 e1 = mesh_->vertices[t[1]] - a, e2 = mesh_->vertices[t[2]] - a;
                const Vec3 pv = cross(d, e2);
                const double det = dot(e1, pv);
                const double scale = norm(e1) * norm(e2);
                const Vec3 tv = o - a;
                if (std::abs(det) <= 1e-12 * scale)
                {
                    // parallel: only a problem if the ray lies in the triangle's plane
                    if (std::abs(dot(tv, cross(e1, e2))) <= tol * scale) ambiguous = true;
                    continue;
                }
                const double inv = 1.0 / det;
                const double u = dot(tv, pv) * inv;
                const Vec3 qv = cross(tv, e1);
                const double v = dot(d, qv) * inv;
                const double tt = dot(e2, qv) * inv;
                if (u < -tol || v < -tol || u + v > 1.0 + tol || tt < -tol)
                {
                    continue;
                }
                if (u < tol || v < tol || u + v > 1.0 - tol || tt < tol)
                {
                    ambiguous = true; // grazes an edge/vertex, or starts on the surface
                    continue;
                }
                ++crossings;
            }
        }

        const SurfaceMesh * mesh_;
        std::vector<std::uint32_t> order_;
        std::vector<Aabb> boxes_;
        std::vector<Vec3> centroids_;
        std::vector<Node> nodes_;
    };
} // namespace tetradiff
