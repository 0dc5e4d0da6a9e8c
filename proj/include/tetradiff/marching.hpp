#pragma once

/**
 * Marching tetrahedra on a deformed grid level.
 *
 * Grid vertex v sits at p_v = v + disp_v. Each tet is classified by which of
 * its vertices have s > 0 (exact zeros count as +1e-12); crossing vertices on
 * grid edges are shared between tets through the sorted edge key. Triangle
 * winding is fixed from the undeformed tet so that normals point from the
 * positive (inside) side to the negative side.
 */

#include <algorithm>
#include <array>
#include <bit>
#include <span>
#include <unordered_map>
#include <vector>

#include "diffusion.hpp"
#include "kdtree.hpp"
#include "mesh.hpp"
#include "tetgrid.hpp"

namespace tetradiff
{
    namespace detail
    {
        inline double perturb_zero(double s) { return s == 0.0 ? 1e-12 : s; }

        inline std::uint64_t edge_key(Index a, Index b)
        {
            if (a > b) std::swap(a, b);
            return (static_cast<std::uint64_t>(a) << 32) | b;
        }

        inline Vec3 crossing(const Vec3 & pa, double sa, const Vec3 & pb, double sb)
        {
            return (pa * sb - pb * sa) / (sb - sa);
        }
    } // namespace detail

    /// Deformed positions v + disp of a field on `level`.
    inline std::vector<Vec3> deformed_positions(const GridLevel & level, const Tensor & field)
    {
        if (field.rows() != level.num_vertices() || field.cols() < 4)
        {
            throw ShapeError("field " + field.shape_string() + " does not match grid level with " +
                             std::to_string(level.num_vertices()) + " vertices");
        }
        std::vector<Vec3> p(level.num_vertices());
        for (std::size_t v = 0; v < p.size(); ++v)
        {
            p[v] = level.vertices[v] + Vec3{field(v, channel::disp), field(v, channel::disp + 1), field(v, channel::disp + 2)};
        }
        return p;
    }

    /// Number of triangles a tet with the given inside mask (bit i = vertex i inside) produces.
    constexpr int marching_case_triangles(unsigned mask)
    {
        const int n = std::popcount(mask & 0xFu);
        return n == 0 || n == 4 ? 0 : (n == 2 ? 2 : 1);
    }

    /// Extracts the s = 0 surface of a physical (de-standardized) field.
    inline SurfaceMesh marching_tetrahedra(const GridLevel & level, const Tensor & field)
    {
        const auto p = deformed_positions(level, field);
        const auto & v0 = level.vertices;
        std::vector<double> s(level.num_vertices());
        for (std::size_t v = 0; v < s.size(); ++v) s[v] = detail::perturb_zero(field(v, channel::sdf));

        SurfaceMesh mesh;
        std::unordered_map<std::uint64_t, std::uint32_t> lookup;
        auto vertex_on = [&](Index a, Index b) {
            if (a > b) std::swap(a, b);
            auto [it, fresh] = lookup.try_emplace(detail::edge_key(a, b), static_cast<std::uint32_t>(mesh.vertices.size()));
            if (fresh) mesh.vertices.push_back(detail::crossing(p[a], s[a], p[b], s[b]));
            return it->second;
        };
        // orientation reference: midpoint of the undeformed edge
        auto mid = [&](Index a, Index b) { return (v0[a] + v0[b]) * 0.5; };

        for (const Tet & t : level.tets)
        {
            std::array<Index, 4> in{}, out{};
            int ni = 0, no = 0;
            for (Index v : t)
            {
                if (s[v] > 0.0)
                    in[ni++] = v;
                else
                    out[no++] = v;
            }
            if (ni == 0 || no == 0)
            {
                continue;
            }
            Vec3 ci{}, co{};
            for (int i = 0; i < ni; ++i) ci += v0[in[i]];
            for (int i = 0; i < no; ++i) co += v0[out[i]];
            const Vec3 dir = co / static_cast<double>(no) - ci / static_cast<double>(ni);

            if (ni == 1 || no == 1)
            {
                const Index apex = ni == 1 ? in[0] : out[0];
                const auto & ring = ni == 1 ? out : in;
                std::array<Index, 3> r{ring[0], ring[1], ring[2]};
                const Vec3 n = cross(mid(apex, r[1]) - mid(apex, r[0]), mid(apex, r[2]) - mid(apex, r[0]));
                if (dot(n, dir) < 0.0) std::swap(r[1], r[2]);
                mesh.triangles.push_back({vertex_on(apex, r[0]), vertex_on(apex, r[1]), vertex_on(apex, r[2])});
                continue;
            }

            // quad cycle (a,c) -> (a,d) -> (b,d) -> (b,c)
            const Index a = in[0], b = in[1];
            Index c = out[0], d = out[1];
            {
                const Vec3 n = cross(mid(a, d) - mid(a, c), mid(b, d) - mid(a, c));
                if (dot(n, dir) < 0.0) std::swap(c, d);
            }
            const std::array<std::pair<Index, Index>, 4> cyc{{{a, c}, {a, d}, {b, d}, {b, c}}};
            std::array<std::uint64_t, 4> keys{};
            for (int i = 0; i < 4; ++i) keys[i] = detail::edge_key(cyc[i].first, cyc[i].second);
            const int smallest = static_cast<int>(std::min_element(keys.begin(), keys.end()) - keys.begin());
            // split along the diagonal through the crossing on the smallest edge key
            std::array<std::uint32_t, 4> q{};
            for (int i = 0; i < 4; ++i)
            {
                const auto & e = cyc[(smallest + i) % 4];
                q[i] = vertex_on(e.first, e.second);
            }
            mesh.triangles.push_back({q[0], q[1], q[2]});
            mesh.triangles.push_back({q[0], q[2], q[3]});
        }
        return mesh;
    }

    /// Per-vertex colors: 1/d^4 blend of the 10 nearest deformed grid vertices, clamped to [0,1].
    inline void colorize(SurfaceMesh & mesh, const GridLevel & level, const Tensor & field, std::size_t k = 10)
    {
        if (field.cols() < 7)
        {
            throw ShapeError("colorize: field has no rgb channels");
        }
        const auto p = deformed_positions(level, field);
        const KdTree tree(p);
        mesh.colors.assign(mesh.vertices.size(), Vec3{});
        auto rgb = [&](std::size_t v, std::size_t c) { return field(v, channel::rgb + c); };
        for (std::size_t i = 0; i < mesh.vertices.size(); ++i)
        {
            const auto nb = tree.knn(mesh.vertices[i], k);
            const auto c = idw_blend(std::span<const Neighbor>(nb), rgb, 3);
            mesh.colors[i] = {std::clamp(c[0], 0.0, 1.0), std::clamp(c[1], 0.0, 1.0), std::clamp(c[2], 0.0, 1.0)};
        }
    }

    /// Extraction plus colors when the field carries rgb.
    inline SurfaceMesh extract_mesh(const GridLevel & level, const Tensor & field)
    {
        auto mesh = marching_tetrahedra(level, field);
        if (field.cols() >= 7) colorize(mesh, level, field);
        return mesh;
    }
} // namespace tetradiff
