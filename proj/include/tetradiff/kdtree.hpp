#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "common.hpp"

namespace tetradiff
{
    struct Neighbor
    {
        std::size_t index = 0;
        double squared_distance = 0.0;

        /// Ordering used by every query: distance first, then lower index.
        friend bool operator<(const Neighbor & a, const Neighbor & b)
        {
            return a.squared_distance < b.squared_distance ||
                   (a.squared_distance == b.squared_distance && a.index < b.index);
        }
        friend bool operator==(const Neighbor &, const Neighbor &) = default;
    };

    /// Static 3-d tree over a point set; the points must outlive the tree.
    class KdTree
    {
    public:
        KdTree() = default;

        explicit KdTree(std::span<const Vec3> points) : points_(points)
        {
            order_.resize(points.size());
            for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<std::uint32_t>(i);
            if (!order_.empty())
            {
                nodes_.reserve(2 * order_.size() / kLeaf + 2);
                build(0, order_.size());
            }
        }

        std::size_t size() const { return points_.size(); }

        Neighbor nearest(const Vec3 & q) const
        {
            if (points_.empty())
            {
                throw ValidationError("KdTree::nearest on empty point set");
            }
            std::vector<Neighbor> best;
            search(0, q, 1, best);
            return best.front();
        }

        /// The min(k, size) closest points, sorted.
        std::vector<Neighbor> knn(const Vec3 & q, std::size_t k) const
        {
            std::vector<Neighbor> best;
            k = std::min(k, points_.size());
            if (k == 0)
            {
                return best;
            }
            best.reserve(k + 1);
            search(0, q, k, best);
            return best;
        }

    private:
        static constexpr std::size_t kLeaf = 8;

        struct Node
        {
            std::uint32_t begin = 0, end = 0;
            std::uint32_t left = 0, right = 0; // 0 = leaf (node 0 is the root, never a child)
            std::uint8_t axis = 0;
            double split = 0.0;
            Aabb box;
        };

        std::uint32_t build(std::size_t begin, std::size_t end)
        {
            const auto id = static_cast<std::uint32_t>(nodes_.size());
            nodes_.push_back({});
            Aabb box;
            for (std::size_t i = begin; i < end; ++i) box.expand(points_[order_[i]]);
            nodes_[id].begin = static_cast<std::uint32_t>(begin);
            nodes_[id].end = static_cast<std::uint32_t>(end);
            nodes_[id].box = box;
            if (end - begin <= kLeaf)
            {
                return id;
            }
            const Vec3 ext = box.extent();
            const std::uint8_t axis = ext.x >= ext.y && ext.x >= ext.z ? 0 : (ext.y >= ext.z ? 1 : 2);
            const std::size_t mid = (begin + end) / 2;
            std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                             order_.begin() + static_cast<std::ptrdiff_t>(mid),
                             order_.begin() + static_cast<std::ptrdiff_t>(end), [&](std::uint32_t a, std::uint32_t b) {
                                 return points_[a][axis] < points_[b][axis];
                             });
            const std::uint32_t l = build(begin, mid);
            const std::uint32_t r = build(mid, end);
            nodes_[id].axis = axis;
            nodes_[id].split = points_[order_[mid]][axis];
            nodes_[id].left = l;
            nodes_[id].right = r;
            return id;
        }

        static void offer(std::vector<Neighbor> & best, std::size_t k, Neighbor cand)
        {
            if (best.size() == k && !(cand < best.back()))
            {
                return;
            }
            best.insert(std::upper_bound(best.begin(), best.end(), cand), cand);
            if (best.size() > k) best.pop_back();
        }

        void search(std::uint32_t id, const Vec3 & q, std::size_t k, std::vector<Neighbor> & best) const
        {
            const Node & n = nodes_[id];
            // strict comparison keeps equal-distance boxes so index tie-breaks match a linear scan
            if (best.size() == k && n.box.squared_distance_to(q) > best.back().squared_distance)
            {
                return;
            }
            if (n.left == 0)
            {
                for (std::uint32_t i = n.begin; i < n.end; ++i)
                {
                    const std::uint32_t p = order_[i];
                    offer(best, k, {p, squared_distance(points_[p], q)});
                }
                return;
            }
            const bool go_left = q[n.axis] < n.split;
            search(go_left ? n.left : n.right, q, k, best);
            search(go_left ? n.right : n.left, q, k, best);
        }

        std::span<const Vec3> points_;
        std::vector<std::uint32_t> order_;
        std::vector<Node> nodes_;
    };

    inline std::vector<Neighbor> brute_force_knn(std::span<const Vec3> points, const Vec3 & q, std::size_t k)
    {
        std::vector<Neighbor> all(points.size());
        for (std::size_t i = 0; i < points.size(); ++i) all[i] = {i, squared_distance(points[i], q)};
        k = std::min(k, all.size());
        std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end());
        all.resize(k);
        return all;
    }

    /**
     * Inverse-distance blend of `values` (rows aligned with the indexed points)
     * over the k nearest points, weights 1/d^4. A point closer than 1e-12
     * (or a lone neighbor) supplies its value verbatim.
     */
    template <class Values>
    std::vector<double> idw_blend(std::span<const Neighbor> nbrs, const Values & values, std::size_t width)
    {
        std::vector<double> out(width, 0.0);
        if (nbrs.empty())
        {
            return out;
        }
        if (nbrs.size() == 1 || std::sqrt(nbrs.front().squared_distance) < 1e-12)
        {
            for (std::size_t c = 0; c < width; ++c) out[c] = values(nbrs.front().index, c);
            return out;
        }
        double wsum = 0.0;
        for (const auto & nb : nbrs)
        {
            const double w = 1.0 / (nb.squared_distance * nb.squared_distance);
            wsum += w;
            for (std::size_t c = 0; c < width; ++c) out[c] += w * values(nb.index, c);
        }
        for (auto & v : out) v /= wsum;
        return out;
    }
} // namespace tetradiff
