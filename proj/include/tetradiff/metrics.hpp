#pragma once

/**
 * Point-cloud distances and the 1-NNA two-sample statistic.
 *
 * chamfer: mean squared nearest distance a->b plus b->a.
 * emd: minimum mean Euclidean cost over perfect matchings, solved exactly
 * with the O(n^3) shortest-augmenting-path Hungarian method.
 */

#include <limits>
#include <string>
#include <vector>

#include "kdtree.hpp"
#include "mesh.hpp"
#include "parallel.hpp"

namespace tetradiff
{
    using PointCloud = std::vector<Vec3>;

    inline constexpr std::size_t kEmdMaxPoints = 512;

    enum class CloudMetric { Chamfer, Emd };

    inline CloudMetric cloud_metric_from_name(const std::string & name)
    {
        if (name == "cd") return CloudMetric::Chamfer;
        if (name == "emd") return CloudMetric::Emd;
        throw ValidationError("unknown metric '" + name + "' (expected cd or emd)");
    }

    inline const char * cloud_metric_name(CloudMetric m) { return m == CloudMetric::Chamfer ? "cd" : "emd"; }

    /// Area-weighted uniform samples; the same sampler the baker uses.
    inline PointCloud sample_mesh_points(const SurfaceMesh & mesh, std::size_t n, std::uint64_t seed)
    {
        return sample_surface(mesh, n, seed).points;
    }

    inline double chamfer(std::span<const Vec3> a, std::span<const Vec3> b)
    {
        if (a.empty() || b.empty()) throw ValidationError("chamfer: empty point cloud");
        auto one_way = [](std::span<const Vec3> from, std::span<const Vec3> to) {
            const KdTree tree(to);
            double s = 0.0;
            for (const auto & p : from) s += tree.nearest(p).squared_distance;
            return s / static_cast<double>(from.size());
        };
        return one_way(a, b) + one_way(b, a);
    }

    /**
     * Optimal assignment for a square cost matrix (row-major n x n).
     * Returns assignment[row] = column.
     */
    inline std::vector<std::size_t> solve_assignment(const std::vector<double> & cost, std::size_t n)
    {
        if (cost.size() != n * n) throw ShapeError("solve_assignment: cost matrix is not n x n");
        constexpr double inf = std::numeric_limits<double>::infinity();
        // 1-based potentials u (rows), v (columns); p[j] = row matched to column j
        std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
        std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
        std::vector<char> used(n + 1);
        for (std::size_t i = 1; i <= n; ++i)
        {
            p[0] = i;
            std::size_t j0 = 0;
            std::fill(minv.begin(), minv.end(), inf);
            std::fill(used.begin(), used.end(), 0);
            do
            {
                used[j0] = 1;
                const std::size_t i0 = p[j0];
                double delta = inf;
                std::size_t j1 = 0;
                for (std::size_t j = 1; j <= n; ++j)
                {
                    if (used[j]) continue;
                    const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if (cur < minv[j])
                    {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if (minv[j] < delta)
                    {
                        delta = minv[j];
                        j1 = j;
                    }
                }
                for (std::size_t j = 0; j <= n; ++j)
                {
                    if (used[j])
                    {
                        u[p[j]] += delta;
                        v[j] -= delta;
                    }
                    else
                    {
                        minv[j] -= delta;
                    }
                }
                j0 = j1;
            } while (p[j0] != 0);
            do
            {
                const std::size_t j1 = way[j0];
                p[j0] = p[j1];
                j0 = j1;
            } while (j0 != 0);
        }
        std::vector<std::size_t> assignment(n);
        for (std::size_t j = 1; j <= n; ++j) assignment[p[j] - 1] = j - 1;
        return assignment;
    }

    inline double emd(std::span<const Vec3> a, std::span<const Vec3> b)
    {
        if (a.size() != b.size()) throw ValidationError("emd: clouds differ in size");
        if (a.empty()) throw ValidationError("emd: empty point cloud");
        if (a.size() > kEmdMaxPoints)
        {
            throw ValidationError("emd: " + std::to_string(a.size()) + " points exceeds the exact-solver cap of " +
                                  std::to_string(kEmdMaxPoints));
        }
        const std::size_t n = a.size();
        std::vector<double> cost(n * n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) cost[i * n + j] = distance(a[i], b[j]);
        const auto match = solve_assignment(cost, n);
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += cost[i * n + match[i]];
        return s / static_cast<double>(n);
    }

    inline double cloud_distance(std::span<const Vec3> a, std::span<const Vec3> b, CloudMetric m)
    {
        return m == CloudMetric::Chamfer ? chamfer(a, b) : emd(a, b);
    }

    /**
     * Leave-one-out 1-nearest-neighbor accuracy (percent) on the pooled sets
     * [gen..., ref...]. Equal distances resolve to the lower pool index.
     */
    inline double one_nna(const std::vector<PointCloud> & gen, const std::vector<PointCloud> & ref, CloudMetric metric)
    {
        if (gen.empty() || ref.empty()) throw ValidationError("one_nna: both sets must be non-empty");
        std::vector<const PointCloud *> pool;
        for (const auto & c : gen) pool.push_back(&c);
        for (const auto & c : ref) pool.push_back(&c);
        const std::size_t n = pool.size();
        std::vector<double> d(n * n, 0.0);
        std::vector<std::pair<std::size_t, std::size_t>> pairs;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
        parallel_for(pairs.size(), [&](std::size_t k) {
            const auto [i, j] = pairs[k];
            d[i * n + j] = d[j * n + i] = cloud_distance(*pool[i], *pool[j], metric);
        });
        std::size_t correct = 0;
        for (std::size_t i = 0; i < n; ++i)
        {
            std::size_t best = n;
            for (std::size_t j = 0; j < n; ++j)
            {
                if (j != i && (best == n || d[i * n + j] < d[i * n + best])) best = j;
            }
            if ((i < gen.size()) == (best < gen.size())) ++correct;
        }
        return 100.0 * static_cast<double>(correct) / static_cast<double>(n);
    }
} // namespace tetradiff
