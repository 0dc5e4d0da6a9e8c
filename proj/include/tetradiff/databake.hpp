#pragma once

/**
 * Ground-truth fields from watertight triangle meshes, and the on-disk dataset.
 *
 * A baked field is an [N x 4] or [N x 7] tensor on one grid level:
 * signed distance (positive inside), displacement to the nearest sampled
 * surface point (norm clipped to the level's longest edge), optional rgb.
 */

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "binio.hpp"
#include "bvh.hpp"
#include "diffusion.hpp"
#include "kdtree.hpp"
#include "mesh.hpp"
#include "parallel.hpp"
#include "tetgrid.hpp"

namespace tetradiff
{
    /// Centers on the bounding-box center and scales the largest half-extent to 0.9.
    inline SurfaceMesh normalize_mesh(SurfaceMesh mesh, double margin = 0.9)
    {
        if (mesh.vertices.empty())
        {
            throw ValidationError("normalize_mesh: empty mesh");
        }
        Aabb box;
        for (const auto & v : mesh.vertices) box.expand(v);
        const Vec3 half = box.extent() * 0.5;
        const double h = std::max({half.x, half.y, half.z});
        if (!(h > 0.0))
        {
            throw ValidationError("normalize_mesh: bounding box has zero extent");
        }
        const Vec3 c = box.center();
        for (auto & v : mesh.vertices) v = (v - c) * (margin / h);
        return mesh;
    }

    /// Exact distance to the closest face, positive where the ray parity says inside.
    inline std::vector<double> compute_sdf(std::span<const Vec3> points, const SurfaceMesh & mesh)
    {
        validate(mesh);
        if (!is_watertight(mesh))
        {
            throw ValidationError("compute_sdf: mesh is not watertight");
        }
        const TriangleBvh bvh(mesh);
        std::vector<double> s(points.size());
        parallel_for(points.size(), [&](std::size_t i) {
            const double d = std::sqrt(bvh.closest(points[i]).squared_distance);
            s[i] = d < 1e-12 ? 0.0 : (bvh.inside(points[i], i) ? d : -d);
        });
        return s;
    }

    inline std::vector<double> compute_sdf(const GridLevel & level, const SurfaceMesh & mesh)
    {
        return compute_sdf(std::span<const Vec3>(level.vertices), mesh);
    }

    /// Offset to the nearest sampled point, rescaled to norm max_length when longer.
    inline std::vector<Vec3> compute_displacement(const GridLevel & level, std::span<const Vec3> points, double max_length)
    {
        if (points.empty())
        {
            throw ValidationError("compute_displacement: empty point set");
        }
        const KdTree tree(points);
        std::vector<Vec3> d(level.num_vertices());
        parallel_for(d.size(), [&](std::size_t v) {
            Vec3 off = points[tree.nearest(level.vertices[v]).index] - level.vertices[v];
            const double len = norm(off);
            if (len > max_length) off = off * (max_length / len);
            d[v] = off;
        });
        return d;
    }

    /// 1/d^4 blend of the k nearest colored points at every grid vertex.
    inline std::vector<Vec3> idw_colors(const GridLevel & level, const SampledSurface & surf, std::size_t k = 10)
    {
        if (surf.colors.size() != surf.points.size() || surf.points.empty())
        {
            throw ValidationError("idw_colors: sampled surface carries no colors");
        }
        const KdTree tree(surf.points);
        auto rgb = [&](std::size_t i, std::size_t c) { return surf.colors[i][c]; };
        std::vector<Vec3> out(level.num_vertices());
        parallel_for(out.size(), [&](std::size_t v) {
            const auto nb = tree.knn(level.vertices[v], k);
            const auto c = idw_blend(std::span<const Neighbor>(nb), rgb, 3);
            out[v] = {std::clamp(c[0], 0.0, 1.0), std::clamp(c[1], 0.0, 1.0), std::clamp(c[2], 0.0, 1.0)};
        });
        return out;
    }

    struct BakeOptions
    {
        std::size_t points = 100000;
        bool color = false;
        bool normalize = true;
        std::uint64_t seed = 0;
    };

    struct BakedShape
    {
        Tensor field;
        ChannelScalers scalers;
    };

    inline BakedShape bake(SurfaceMesh mesh, const TetGrid & grid, std::size_t level_index, const BakeOptions & opt = {})
    {
        const GridLevel & level = grid.level(level_index);
        validate(mesh);
        if (opt.color && !mesh.has_colors())
        {
            throw ValidationError("bake: colors requested but the mesh has no vertex colors");
        }
        if (opt.normalize) mesh = normalize_mesh(std::move(mesh));
        const auto surf = sample_surface(mesh, opt.points, opt.seed);
        const auto sdf = compute_sdf(level, mesh);
        const auto disp = compute_displacement(level, surf.points, max_edge_length(level));
        const std::size_t c = opt.color ? 7 : 4;
        BakedShape out{Tensor(level.num_vertices(), c), {}};
        for (std::size_t v = 0; v < level.num_vertices(); ++v)
        {
            out.field(v, channel::sdf) = sdf[v];
            for (std::size_t k = 0; k < 3; ++k) out.field(v, channel::disp + k) = disp[v][k];
        }
        if (opt.color)
        {
            const auto rgb = idw_colors(level, surf);
            for (std::size_t v = 0; v < level.num_vertices(); ++v)
                for (std::size_t k = 0; k < 3; ++k) out.field(v, channel::rgb + k) = rgb[v][k];
        }
        out.scalers = ChannelScalers::fit(std::span<const Tensor>(&out.field, 1));
        return out;
    }

    // ------------------------------------------------------------------------------------------
    // Dataset directory: manifest.json + grid.json + one binary blob per shape.

    struct Dataset
    {
        TetGrid grid;
        std::size_t level = 0;
        std::size_t channels = 4;
        std::vector<std::string> names;
        std::vector<Tensor> fields;
        std::vector<ChannelScalers> scalers;

        std::size_t size() const { return fields.size(); }
    };

    namespace detail
    {
        inline constexpr char kShapeMagic[4] = {'T', 'D', 'S', 'H'};
        inline constexpr std::uint32_t kShapeVersion = 1;

        inline void write_shape_blob(const std::filesystem::path & path, const Tensor & field)
        {
            std::ofstream out(path, std::ios::binary);
            if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
            out.write(kShapeMagic, 4);
            binio::put_u32(out, kShapeVersion);
            binio::put_tensor(out, field);
            if (!out) throw IoError("write to '" + path.string() + "' failed");
        }

        inline Tensor read_shape_blob(const std::filesystem::path & path)
        {
            std::ifstream in(path, std::ios::binary);
            if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
            char magic[4];
            binio::read_exact(in, magic, 4);
            if (!std::equal(magic, magic + 4, kShapeMagic)) throw FormatError(path.string() + ": not a shape blob");
            if (binio::get_u32(in) != kShapeVersion) throw FormatError(path.string() + ": unsupported shape blob version");
            return binio::get_tensor(in);
        }
    } // namespace detail

    inline void save_dataset(const Dataset & ds, const std::filesystem::path & dir)
    {
        if (ds.fields.size() != ds.names.size() || ds.scalers.size() != ds.fields.size())
        {
            throw ValidationError("dataset: names/fields/scalers length mismatch");
        }
        std::filesystem::create_directories(dir);
        save_grid(ds.grid, dir / "grid.json");
        nlohmann::json shapes = nlohmann::json::array();
        for (std::size_t i = 0; i < ds.size(); ++i)
        {
            const std::string file = ds.names[i] + ".tdsh";
            detail::write_shape_blob(dir / file, ds.fields[i]);
            shapes.push_back({{"name", ds.names[i]},
                              {"file", file},
                              {"scalers", {{"mean", ds.scalers[i].mean}, {"std", ds.scalers[i].std}}}});
        }
        const nlohmann::json manifest{{"format", "tetradiff-dataset"}, {"version", 1},     {"grid", "grid.json"},
                                      {"level", ds.level},             {"channels", ds.channels}, {"shapes", shapes}};
        std::ofstream out(dir / "manifest.json");
        if (!out) throw IoError("cannot write manifest in '" + dir.string() + "'");
        out << manifest.dump(2) << '\n';
    }

    inline Dataset load_dataset(const std::filesystem::path & dir)
    {
        std::ifstream in(dir / "manifest.json");
        if (!in) throw IoError("no manifest.json in '" + dir.string() + "'");
        nlohmann::json j;
        try
        {
            j = nlohmann::json::parse(in);
        }
        catch (const nlohmann::json::exception & e)
        {
            throw FormatError(std::string("dataset manifest: ") + e.what());
        }
        if (j.value("format", "") != "tetradiff-dataset" || j.value("version", 0) != 1)
        {
            throw FormatError("dataset manifest: unsupported format or version");
        }
        Dataset ds;
        try
        {
            ds.grid = load_grid(dir / j.at("grid").get<std::string>());
            ds.level = j.at("level").get<std::size_t>();
            ds.channels = j.at("channels").get<std::size_t>();
            if (ds.level >= ds.grid.num_levels()) throw ValidationError("dataset: level not present in grid");
            if (ds.channels != 4 && ds.channels != 7) throw ValidationError("dataset: channel count must be 4 or 7");
            for (const auto & s : j.at("shapes"))
            {
                ds.names.push_back(s.at("name").get<std::string>());
                Tensor f = detail::read_shape_blob(dir / s.at("file").get<std::string>());
                if (f.rows() != ds.grid.level(ds.level).num_vertices() || f.cols() != ds.channels || !f.all_finite())
                {
                    throw ValidationError("dataset: shape '" + ds.names.back() + "' does not match grid level/channels");
                }
                ds.fields.push_back(std::move(f));
                ds.scalers.push_back({s.at("scalers").at("mean").get<std::vector<double>>(),
                                      s.at("scalers").at("std").get<std::vector<double>>()});
            }
        }
        catch (const nlohmann::json::exception & e)
        {
            throw FormatError(std::string("dataset manifest: ") + e.what());
        }
        return ds;
    }
} // namespace tetradiff
