#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <utility>
#include <vector>

#include "common.hpp"
#include "rng.hpp"

namespace tetradiff
{
    using Triangle = std::array<std::uint32_t, 3>;

    /// Triangle soup with shared vertices; colors are either empty or one rgb per vertex.
    struct SurfaceMesh
    {
        std::vector<Vec3> vertices;
        std::vector<Triangle> triangles;
        std::vector<Vec3> colors;

        bool has_colors() const { return !colors.empty(); }
        bool empty() const { return triangles.empty(); }

        friend bool operator==(const SurfaceMesh &, const SurfaceMesh &) = default;
    };

    inline void validate(const SurfaceMesh & m)
    {
        if (!m.colors.empty() && m.colors.size() != m.vertices.size())
        {
            throw ValidationError("mesh: color count does not match vertex count");
        }
        for (const auto & t : m.triangles)
            for (auto i : t)
                if (i >= m.vertices.size()) throw ValidationError("mesh: triangle references missing vertex");
        for (const auto & v : m.vertices)
            if (!std::isfinite(v.x) || !std::isfinite(v.y) || !std::isfinite(v.z))
                throw ValidationError("mesh: non-finite vertex position");
    }

    inline double triangle_area(const SurfaceMesh & m, const Triangle & t)
    {
        return 0.5 * norm(cross(m.vertices[t[1]] - m.vertices[t[0]], m.vertices[t[2]] - m.vertices[t[0]]));
    }

    struct MeshMeasures
    {
        double volume = 0.0;
        double surface_area = 0.0;
        bool is_watertight = false;
    };

    /// Every undirected edge used exactly once in each direction.
    inline bool is_watertight(const SurfaceMesh & m)
    {
        if (m.triangles.empty())
        {
            return false;
        }
        std::map<std::pair<std::uint32_t, std::uint32_t>, int> directed;
        for (const auto & t : m.triangles)
        {
            for (int e = 0; e < 3; ++e)
            {
                if (++directed[{t[e], t[(e + 1) % 3]}] > 1)
                {
                    return false;
                }
            }
        }
        for (const auto & [edge, count] : directed)
        {
            if (!directed.contains({edge.second, edge.first}))
            {
                return false;
            }
        }
        return true;
    }

    inline MeshMeasures mesh_measures(const SurfaceMesh & m)
    {
        MeshMeasures out;
        for (const auto & t : m.triangles)
        {
            const Vec3 & a = m.vertices[t[0]];
            const Vec3 & b = m.vertices[t[1]];
            const Vec3 & c = m.vertices[t[2]];
            out.volume += dot(a, cross(b, c)) / 6.0;
            out.surface_area += 0.5 * norm(cross(b - a, c - a));
        }
        out.is_watertight = is_watertight(m);
        return out;
    }

    /// Unique undirected edges of the triangles as adjacency lists per vertex.
    inline std::vector<std::vector<std::uint32_t>> vertex_neighbors(const SurfaceMesh & m)
    {
        std::vector<std::vector<std::uint32_t>> nb(m.vertices.size());
        for (const auto & t : m.triangles)
        {
            for (int e = 0; e < 3; ++e)
            {
                nb[t[e]].push_back(t[(e + 1) % 3]);
                nb[t[(e + 1) % 3]].push_back(t[e]);
            }
        }
        for (auto & l : nb)
        {
            std::sort(l.begin(), l.end());
            l.erase(std::unique(l.begin(), l.end()), l.end());
        }
        return nb;
    }

    /// Mean over vertices with neighbors of |p_i - mean of neighbor p_j|.
    inline double mean_laplacian_magnitude(const SurfaceMesh & m)
    {
        const auto nb = vertex_neighbors(m);
        double sum = 0.0;
        std::size_t n = 0;
        for (std::size_t i = 0; i < nb.size(); ++i)
        {
            if (nb[i].empty()) continue;
            Vec3 c{};
            for (auto j : nb[i]) c += m.vertices[j];
            sum += norm(m.vertices[i] - c / static_cast<double>(nb[i].size()));
            ++n;
        }
        return n == 0 ? 0.0 : sum / static_cast<double>(n);
    }

    // ------------------------------------------------------------------------------------------
    // Surface sampling

    struct SampledSurface
    {
        std::vector<Vec3> points;
        std::vector<Vec3> colors;
        std::vector<std::uint32_t> triangle; // source triangle of each point
    };

    /**
     * n points, triangle chosen proportionally to area, uniform inside it via
     * the square-root barycentric map. Draw i depends only on (seed, i).
     */
    inline SampledSurface sample_surface(const SurfaceMesh & m, std::size_t n, std::uint64_t seed)
    {
        if (n == 0)
        {
            throw ValidationError("sample_surface: need at least one point");
        }
        std::vector<double> cdf(m.triangles.size());
        double total = 0.0;
        for (std::size_t i = 0; i < m.triangles.size(); ++i)
        {
            total += triangle_area(m, m.triangles[i]);
            cdf[i] = total;
        }
        if (!(total > 0.0))
        {
            throw ValidationError("sample_surface: mesh has zero surface area");
        }
        const CounterRng rng(seed);
        SampledSurface out;
        out.points.resize(n);
        out.triangle.resize(n);
        if (m.has_colors()) out.colors.resize(n);
        for (std::size_t i = 0; i < n; ++i)
        {
            const double u = rng.uniform(0, i) * total;
            auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
            if (it == cdf.end()) --it;
            const auto tri = static_cast<std::size_t>(it - cdf.begin());
            const double r1 = std::sqrt(rng.uniform(1, i));
            const double r2 = rng.uniform(2, i);
            const double wa = 1.0 - r1, wb = r1 * (1.0 - r2), wc = r1 * r2;
            const Triangle & t = m.triangles[tri];
            out.points[i] = wa * m.vertices[t[0]] + wb * m.vertices[t[1]] + wc * m.vertices[t[2]];
            out.triangle[i] = static_cast<std::uint32_t>(tri);
            if (m.has_colors()) out.colors[i] = wa * m.colors[t[0]] + wb * m.colors[t[1]] + wc * m.colors[t[2]];
        }
        return out;
    }

    // ------------------------------------------------------------------------------------------
    // Analytic test shapes (outward winding)

    inline SurfaceMesh box_mesh(const Vec3 & lo, const Vec3 & hi)
    {
        SurfaceMesh m;
        for (int i = 0; i < 8; ++i)
        {
            m.vertices.push_back({(i & 1) ? hi.x : lo.x, (i & 2) ? hi.y : lo.y, (i & 4) ? hi.z : lo.z});
        }
        m.triangles = {{0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6}, {0, 1, 4}, {1, 5, 4},
                       {2, 6, 3}, {3, 6, 7}, {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5}};
        return m;
    }

    inline SurfaceMesh icosphere(double radius, int subdivisions, const Vec3 & center = {})
    {
        const double p = (1.0 + std::sqrt(5.0)) / 2.0;
        SurfaceMesh m;
        m.vertices = {{-1, p, 0}, {1, p, 0}, {-1, -p, 0}, {1, -p, 0}, {0, -1, p}, {0, 1, p},
                      {0, -1, -p}, {0, 1, -p}, {p, 0, -1}, {p, 0, 1}, {-p, 0, -1}, {-p, 0, 1}};
        m.triangles = {{0, 11, 5}, {0, 5, 1}, {0, 1, 7}, {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                       {11, 10, 2}, {10, 7, 6}, {7, 1, 8}, {3, 9, 4}, {3, 4, 2}, {3, 2, 6}, {3, 6, 8},
                       {3, 8, 9}, {4, 9, 5}, {2, 4, 11}, {6, 2, 10}, {8, 6, 7}, {9, 8, 1}};
        for (auto & v : m.vertices) v = v / norm(v);
        for (int s = 0; s < subdivisions; ++s)
        {
            std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> mid;
            auto midpoint = [&](std::uint32_t a, std::uint32_t b) {
                const auto key = std::minmax(a, b);
                auto [it, fresh] = mid.try_emplace(key, static_cast<std::uint32_t>(m.vertices.size()));
                if (fresh)
                {
                    const Vec3 c = m.vertices[a] + m.vertices[b];
                    m.vertices.push_back(c / norm(c));
                }
                return it->second;
            };
            std::vector<Triangle> next;
            next.reserve(m.triangles.size() * 4);
            for (const auto & t : m.triangles)
            {
                const auto ab = midpoint(t[0], t[1]), bc = midpoint(t[1], t[2]), ca = midpoint(t[2], t[0]);
                next.push_back({t[0], ab, ca});
                next.push_back({t[1], bc, ab});
                next.push_back({t[2], ca, bc});
                next.push_back({ab, bc, ca});
            }
            m.triangles = std::move(next);
        }
        for (auto & v : m.vertices) v = center + radius * v;
        return m;
    }
} // namespace tetradiff
