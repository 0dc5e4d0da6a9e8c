#pragma once

/**
 * Multi-resolution tetrahedral grid.
 *
 * Level 0 is a Kuhn (Freudenthal) tetrahedralization of an axis-aligned
 * cuboid. Every further level splits each tetrahedron into eight by inserting
 * edge midpoints, so parent/child relations between consecutive levels are
 * fixed and can drive pooling and unpooling.
 *
 * Vertex order across levels: the first V_l vertices of level l+1 are the
 * vertices of level l (same index), followed by one midpoint per unique edge
 * of level l in lexicographic edge order. The eight children of coarse
 * tetrahedron k are tets 8k .. 8k+7 of the finer level.
 */

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <span>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "common.hpp"

namespace tetradiff
{
    using Index = std::uint32_t;
    using Tet = std::array<Index, 4>;
    using Edge = std::pair<Index, Index>; // always first < second

    /// Origin of a vertex relative to the next-coarser level.
    struct ParentRef
    {
        enum class Kind : std::uint8_t { Self, Pair };

        Kind kind = Kind::Self;
        Index a = 0; // coarse index (Self) or first edge endpoint (Pair)
        Index b = 0; // second edge endpoint (Pair only)

        static constexpr ParentRef self(Index i) { return {Kind::Self, i, i}; }
        static constexpr ParentRef pair(Index i, Index j) { return {Kind::Pair, std::min(i, j), std::max(i, j)}; }

        friend constexpr bool operator==(const ParentRef &, const ParentRef &) = default;
    };

    /// Edge-connected neighbors in compressed-row form; list order is the kernel slot order.
    struct Adjacency
    {
        std::vector<std::size_t> offsets; // size V+1
        std::vector<Index> indices;
        std::size_t max_degree = 0;

        std::span<const Index> neighbors(std::size_t v) const
        {
            return {indices.data() + offsets[v], offsets[v + 1] - offsets[v]};
        }

        std::size_t degree(std::size_t v) const { return offsets[v + 1] - offsets[v]; }

        /// Kernel slot (1-based; slot 0 is the center) of neighbor j of v, or 0 if j is not a neighbor.
        std::size_t slot_of(std::size_t v, Index j) const
        {
            const auto nb = neighbors(v);
            for (std::size_t s = 0; s < nb.size(); ++s)
            {
                if (nb[s] == j)
                {
                    return s + 1;
                }
            }
            return 0;
        }

        friend bool operator==(const Adjacency &, const Adjacency &) = default;
    };

    struct GridLevel
    {
        std::vector<Vec3> vertices;
        std::vector<Tet> tets;
        std::vector<ParentRef> parents; // empty on level 0
        Adjacency adjacency;

        std::size_t num_vertices() const { return vertices.size(); }
        std::size_t num_tets() const { return tets.size(); }

        /// Maximum neighbor count; convolution kernels on this level have m + 1 slots.
        std::size_t m() const { return adjacency.max_degree; }
        std::span<const Index> neighbors(std::size_t v) const { return adjacency.neighbors(v); }
    };

    struct TetGrid
    {
        Aabb bounds;
        std::vector<GridLevel> levels; // 0 = coarsest

        std::size_t num_levels() const { return levels.size(); }
        const GridLevel & finest() const { return levels.back(); }
        const GridLevel & level(std::size_t l) const { return levels.at(l); }
    };

    inline double signed_volume(const GridLevel & level, const Tet & t)
    {
        const auto & v = level.vertices;
        return tet_volume(v[t[0]], v[t[1]], v[t[2]], v[t[3]]);
    }

    inline double total_volume(const GridLevel & level)
    {
        double sum = 0.0;
        for (const auto & t : level.tets)
        {
            sum += signed_volume(level, t);
        }
        return sum;
    }

    /// Sorted unique edges of a tetrahedral mesh.
    inline std::vector<Edge> unique_edges(std::span<const Tet> tets)
    {
        std::vector<Edge> edges;
        edges.reserve(tets.size() * 6);
        for (const auto & t : tets)
        {
            for (int i = 0; i < 4; ++i)
            {
                for (int j = i + 1; j < 4; ++j)
                {
                    edges.emplace_back(std::min(t[i], t[j]), std::max(t[i], t[j]));
                }
            }
        }
        std::sort(edges.begin(), edges.end());
        edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
        return edges;
    }

    inline double max_edge_length(const GridLevel & level)
    {
        double longest = 0.0;
        for (const auto & [a, b] : unique_edges(level.tets))
        {
            longest = std::max(longest, distance(level.vertices[a], level.vertices[b]));
        }
        return longest;
    }

    /// Local polar coordinates of `p` around `center` in the global axis frame.
    struct PolarKey
    {
        double theta; // inclination from +z, [0, pi]
        double phi;   // azimuth from +x, [0, 2 pi)
        double r;
    };

    inline PolarKey polar_key(const Vec3 & center, const Vec3 & p)
    {
        const Vec3 d = p - center;
        const double r = norm(d);
        const double theta = r > 0.0 ? std::acos(std::clamp(d.z / r, -1.0, 1.0)) : 0.0;
        double phi = std::atan2(d.y, d.x);
        if (phi < 0.0)
        {
            phi += 2.0 * std::numbers::pi;
        }
        if (phi >= 2.0 * std::numbers::pi)
        {
            phi = 0.0;
        }
        return {theta, phi, r};
    }

    /**
     * Edge adjacency with neighbors sorted by (theta, phi, r, index) around each vertex.
     * Slots are filled densely: the s-th sorted neighbor occupies kernel slot s + 1.
     */
    inline Adjacency compute_adjacency(std::span<const Vec3> vertices, std::span<const Tet> tets)
    {
        const auto edges = unique_edges(tets);
        std::vector<std::vector<Index>> lists(vertices.size());
        for (const auto & [a, b] : edges)
        {
            lists[a].push_back(b);
            lists[b].push_back(a);
        }

        Adjacency adj;
        adj.offsets.assign(vertices.size() + 1, 0);
        adj.indices.reserve(edges.size() * 2);
        std::vector<std::pair<PolarKey, Index>> keyed;
        for (std::size_t v = 0; v < vertices.size(); ++v)
        {
            keyed.clear();
            for (Index j : lists[v])
            {
                keyed.emplace_back(polar_key(vertices[v], vertices[j]), j);
            }
            std::sort(keyed.begin(), keyed.end(), [](const auto & l, const auto & r) {
                const auto & [a, ia] = l;
                const auto & [b, ib] = r;
                if (a.theta != b.theta) return a.theta < b.theta;
                if (a.phi != b.phi) return a.phi < b.phi;
                if (a.r != b.r) return a.r < b.r;
                return ia < ib;
            });
            for (const auto & kj : keyed)
            {
                adj.indices.push_back(kj.second);
            }
            adj.offsets[v + 1] = adj.indices.size();
            adj.max_degree = std::max(adj.max_degree, keyed.size());
        }
        return adj;
    }

    inline void compute_adjacency(GridLevel & level)
    {
        level.adjacency = compute_adjacency(level.vertices, level.tets);
    }

    namespace detail
    {
        /// Reorders the last two vertices when needed so the tet has positive orientation.
        inline Tet orient_positive(std::span<const Vec3> v, Tet t)
        {
            if (orient3d(v[t[0]], v[t[1]], v[t[2]], v[t[3]]) < 0.0)
            {
                std::swap(t[2], t[3]);
            }
            return t;
        }
    } // namespace detail

    /**
     * Single-level grid: `cells_per_axis`^3 cubes over `bounds`, each split into six
     * tetrahedra around the cube's (0,0,0)-(1,1,1) diagonal.
     */
    inline TetGrid build_base_grid(int cells_per_axis, const Aabb & bounds = Aabb{{-1, -1, -1}, {1, 1, 1}})
    {
        if (cells_per_axis < 1)
        {
            throw ValidationError("build_base_grid: cells_per_axis must be >= 1");
        }
        const std::size_t n = static_cast<std::size_t>(cells_per_axis);
        const std::size_t np = n + 1;
        const Vec3 ext = bounds.extent();

        GridLevel level;
        level.vertices.reserve(np * np * np);
        for (std::size_t k = 0; k < np; ++k)
        {
            for (std::size_t j = 0; j < np; ++j)
            {
                for (std::size_t i = 0; i < np; ++i)
                {
                    level.vertices.push_back({bounds.lo.x + ext.x * static_cast<double>(i) / static_cast<double>(n),
                                              bounds.lo.y + ext.y * static_cast<double>(j) / static_cast<double>(n),
                                              bounds.lo.z + ext.z * static_cast<double>(k) / static_cast<double>(n)});
                }
            }
        }

        auto id = [np](std::size_t i, std::size_t j, std::size_t k) {
            return static_cast<Index>(i + np * (j + np * k));
        };
        static constexpr std::array<std::array<int, 3>, 6> perms{{
            {0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};

        level.tets.reserve(n * n * n * 6);
        for (std::size_t k = 0; k < n; ++k)
        {
            for (std::size_t j = 0; j < n; ++j)
            {
                for (std::size_t i = 0; i < n; ++i)
                {
                    for (const auto & p : perms)
                    {
                        std::array<std::size_t, 3> c{i, j, k};
                        Tet t{};
                        t[0] = id(c[0], c[1], c[2]);
                        for (int s = 0; s < 3; ++s)
                        {
                            ++c[static_cast<std::size_t>(p[static_cast<std::size_t>(s)])];
                            t[static_cast<std::size_t>(s) + 1] = id(c[0], c[1], c[2]);
                        }
                        level.tets.push_back(detail::orient_positive(level.vertices, t));
                    }
                }
            }
        }
        compute_adjacency(level);

        TetGrid grid;
        grid.bounds = bounds;
        grid.levels.push_back(std::move(level));
        return grid;
    }

    /**
     * Appends one level: each tet of the current finest level becomes four corner
     * tets plus four tets filling the interior octahedron, split along its
     * shortest diagonal (ties to the lowest vertex-index pair).
     */
    inline TetGrid subdivide(const TetGrid & grid)
    {
        const GridLevel & coarse = grid.finest();
        const auto edges = unique_edges(coarse.tets);
        const std::size_t nv = coarse.num_vertices();

        GridLevel fine;
        fine.vertices = coarse.vertices;
        fine.vertices.reserve(nv + edges.size());
        fine.parents.reserve(nv + edges.size());
        for (std::size_t i = 0; i < nv; ++i)
        {
            fine.parents.push_back(ParentRef::self(static_cast<Index>(i)));
        }
        for (const auto & [a, b] : edges)
        {
            fine.vertices.push_back((coarse.vertices[a] + coarse.vertices[b]) * 0.5);
            fine.parents.push_back(ParentRef::pair(a, b));
        }

        auto midpoint = [&](Index a, Index b) {
            const Edge e{std::min(a, b), std::max(a, b)};
            const auto it = std::lower_bound(edges.begin(), edges.end(), e);
            return static_cast<Index>(nv + static_cast<std::size_t>(it - edges.begin()));
        };

        fine.tets.reserve(coarse.num_tets() * 8);
        for (const auto & t : coarse.tets)
        {
            const auto [a, b, c, d] = t;
            const Index ab = midpoint(a, b), ac = midpoint(a, c), ad = midpoint(a, d);
            const Index bc = midpoint(b, c), bd = midpoint(b, d), cd = midpoint(c, d);

            for (const Tet & corner : {Tet{a, ab, ac, ad}, Tet{b, ab, bc, bd}, Tet{c, ac, bc, cd}, Tet{d, ad, bd, cd}})
            {
                fine.tets.push_back(detail::orient_positive(fine.vertices, corner));
            }

            // The octahedron's opposite vertex pairs are midpoints of disjoint edges.
            const std::array<Edge, 3> diagonals{{{ab, cd}, {ac, bd}, {ad, bc}}};
            std::size_t best = 0;
            auto diag_key = [&](std::size_t i) {
                const auto [p, q] = diagonals[i];
                return std::make_tuple(squared_distance(fine.vertices[p], fine.vertices[q]), std::min(p, q), std::max(p, q));
            };
            for (std::size_t i = 1; i < 3; ++i)
            {
                if (diag_key(i) < diag_key(best))
                {
                    best = i;
                }
            }
            const auto [p, q] = diagonals[best];
            const auto & e1 = diagonals[(best + 1) % 3];
            const auto & e2 = diagonals[(best + 2) % 3];
            // Equator cycle alternates between the two remaining opposite pairs.
            const std::array<Index, 4> ring{e1.first, e2.first, e1.second, e2.second};
            for (std::size_t i = 0; i < 4; ++i)
            {
                fine.tets.push_back(detail::orient_positive(fine.vertices, Tet{p, q, ring[i], ring[(i + 1) % 4]}));
            }
        }
        compute_adjacency(fine);

        TetGrid out = grid;
        out.levels.push_back(std::move(fine));
        return out;
    }

    inline TetGrid build_grid(int cells_per_axis, std::size_t num_levels)
    {
        TetGrid g = build_base_grid(cells_per_axis);
        while (g.num_levels() < num_levels)
        {
            g = subdivide(g);
        }
        return g;
    }

    /// Throws ValidationError describing the first violated invariant.
    inline void validate(const TetGrid & grid)
    {
        if (grid.levels.empty())
        {
            throw ValidationError("tetgrid: no levels");
        }
        const Vec3 ext = grid.bounds.extent();
        const double cuboid = ext.x * ext.y * ext.z;
        if (!(cuboid > 0.0))
        {
            throw ValidationError("tetgrid: degenerate bounds");
        }
        for (std::size_t l = 0; l < grid.num_levels(); ++l)
        {
            const auto & lv = grid.levels[l];
            const std::string where = "tetgrid level " + std::to_string(l) + ": ";
            for (const auto & t : lv.tets)
            {
                for (int i = 0; i < 4; ++i)
                {
                    if (t[i] >= lv.num_vertices())
                    {
                        throw ValidationError(where + "tet references invalid vertex");
                    }
                    for (int j = i + 1; j < 4; ++j)
                    {
                        if (t[i] == t[j])
                        {
                            throw ValidationError(where + "tet has repeated vertex");
                        }
                    }
                }
                if (!(signed_volume(lv, t) > 0.0))
                {
                    throw ValidationError(where + "tet with non-positive volume");
                }
            }
            const double vol = total_volume(lv);
            if (std::abs(vol - cuboid) > 1e-9 * cuboid)
            {
                throw ValidationError(where + "tets do not tessellate the cuboid");
            }
            if (l == 0)
            {
                if (!lv.parents.empty())
                {
                    throw ValidationError(where + "coarsest level has parents");
                }
                continue;
            }

            const auto & coarse = grid.levels[l - 1];
            const auto edges = unique_edges(coarse.tets);
            if (lv.num_vertices() != coarse.num_vertices() + edges.size())
            {
                throw ValidationError(where + "vertex count is not V + E of the coarser level");
            }
            if (lv.num_tets() != 8 * coarse.num_tets())
            {
                throw ValidationError(where + "tet count is not 8K of the coarser level");
            }
            if (lv.parents.size() != lv.num_vertices())
            {
                throw ValidationError(where + "parent map size mismatch");
            }
            for (std::size_t v = 0; v < lv.num_vertices(); ++v)
            {
                const auto & p = lv.parents[v];
                if (v < coarse.num_vertices())
                {
                    if (p != ParentRef::self(static_cast<Index>(v)) || !(lv.vertices[v] == coarse.vertices[v]))
                    {
                        throw ValidationError(where + "retained vertex has wrong parent");
                    }
                    continue;
                }
                if (p.kind != ParentRef::Kind::Pair || p.b >= coarse.num_vertices() ||
                    !std::binary_search(edges.begin(), edges.end(), Edge{p.a, p.b}))
                {
                    throw ValidationError(where + "midpoint parents are not a coarse edge");
                }
                const Vec3 mid = (coarse.vertices[p.a] + coarse.vertices[p.b]) * 0.5;
                if (distance(mid, lv.vertices[v]) > 1e-12 * (1.0 + norm(mid)))
                {
                    throw ValidationError(where + "midpoint vertex is not at its parents' midpoint");
                }
            }
        }
    }

    // ---------------------------------------------------------------------------------------
    // JSON serialization

    inline nlohmann::json to_json(const TetGrid & grid)
    {
        using nlohmann::json;
        json j;
        j["format"] = "tetgrid";
        j["version"] = 1;
        j["bounds"] = {{"min", {grid.bounds.lo.x, grid.bounds.lo.y, grid.bounds.lo.z}},
                       {"max", {grid.bounds.hi.x, grid.bounds.hi.y, grid.bounds.hi.z}}};
        json levels = json::array();
        for (const auto & lv : grid.levels)
        {
            json verts = json::array();
            for (const auto & v : lv.vertices)
            {
                verts.push_back({v.x, v.y, v.z});
            }
            json tets = json::array();
            for (const auto & t : lv.tets)
            {
                tets.push_back({t[0], t[1], t[2], t[3]});
            }
            json parents = json::array();
            for (const auto & p : lv.parents)
            {
                if (p.kind == ParentRef::Kind::Self)
                {
                    parents.push_back({p.a});
                }
                else
                {
                    parents.push_back({p.a, p.b});
                }
            }
            levels.push_back({{"vertices", std::move(verts)}, {"tets", std::move(tets)}, {"parents", std::move(parents)}});
        }
        j["levels"] = std::move(levels);
        return j;
    }

    inline TetGrid grid_from_json(const nlohmann::json & j)
    {
        if (!j.is_object() || j.value("format", std::string{}) != "tetgrid")
        {
            throw FormatError("tetgrid: missing or wrong format tag");
        }
        if (j.value("version", -1) != 1)
        {
            throw FormatError("tetgrid: unsupported version");
        }
        TetGrid grid;
        try
        {
            const auto & lo = j.at("bounds").at("min");
            const auto & hi = j.at("bounds").at("max");
            grid.bounds = Aabb{{lo.at(0), lo.at(1), lo.at(2)}, {hi.at(0), hi.at(1), hi.at(2)}};
            for (const auto & jl : j.at("levels"))
            {
                GridLevel lv;
                for (const auto & v : jl.at("vertices"))
                {
                    lv.vertices.push_back({v.at(0).get<double>(), v.at(1).get<double>(), v.at(2).get<double>()});
                }
                for (const auto & t : jl.at("tets"))
                {
                    lv.tets.push_back({t.at(0).get<Index>(), t.at(1).get<Index>(), t.at(2).get<Index>(), t.at(3).get<Index>()});
                }
                for (const auto & p : jl.at("parents"))
                {
                    if (p.size() == 1)
                    {
                        lv.parents.push_back(ParentRef::self(p.at(0).get<Index>()));
                    }
                    else if (p.size() == 2)
                    {
                        lv.parents.push_back(ParentRef::pair(p.at(0).get<Index>(), p.at(1).get<Index>()));
                    }
                    else
                    {
                        throw ValidationError("tetgrid: parent entry must have 1 or 2 indices");
                    }
                }
                grid.levels.push_back(std::move(lv));
            }
        }
        catch (const nlohmann::json::exception & e)
        {
            throw ValidationError(std::string("tetgrid: malformed document: ") + e.what());
        }
        validate(grid);
        for (auto & lv : grid.levels)
        {
            compute_adjacency(lv);
        }
        return grid;
    }

    inline void save_grid(const TetGrid & grid, const std::filesystem::path & path)
    {
        std::ofstream out(path);
        if (!out)
        {
            throw IoError("cannot open " + path.string() + " for writing");
        }
        out << to_json(grid).dump();
        if (!out)
        {
            throw IoError("failed writing " + path.string());
        }
    }

    inline TetGrid load_grid(const std::filesystem::path & path)
    {
        std::ifstream in(path);
        if (!in)
        {
            throw IoError("cannot open " + path.string());
        }
        nlohmann::json j;
        try
        {
            j = nlohmann::json::parse(in);
        }
        catch (const nlohmann::json::parse_error & e)
        {
            throw FormatError("tetgrid: not a JSON document: " + std::string(e.what()));
        }
        return grid_from_json(j);
    }
} // namespace tetradiff
