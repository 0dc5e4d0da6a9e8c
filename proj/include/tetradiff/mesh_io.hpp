#pragma once

/**
 * Wavefront OBJ and ASCII PLY reading/writing.
 *
 * OBJ colors use the common "v x y z r g b" extension with floats in [0,1];
 * PLY colors are uchar red/green/blue, quantized as floor(255 c + 0.5).
 * Positions are written with 17 significant digits.
 */

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mesh.hpp"

namespace tetradiff
{
    enum class MeshFormat { Obj, Ply };

    inline MeshFormat mesh_format_from_name(const std::string & name)
    {
        std::string n = name;
        std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        if (n == "obj" || n == ".obj") return MeshFormat::Obj;
        if (n == "ply" || n == ".ply") return MeshFormat::Ply;
        throw ValidationError("unknown mesh format '" + name + "' (expected obj or ply)");
    }

    inline MeshFormat mesh_format_of(const std::filesystem::path & path)
    {
        return mesh_format_from_name(path.extension().string());
    }

    inline unsigned char quantize_color(double c)
    {
        return static_cast<unsigned char>(std::clamp(std::floor(c * 255.0 + 0.5), 0.0, 255.0));
    }

    namespace detail
    {
        inline std::string fmt17(double v)
        {
            char buf[40];
            std::snprintf(buf, sizeof buf, "%.17g", v);
            return buf;
        }

        inline std::ofstream open_out(const std::filesystem::path & path)
        {
            std::ofstream out(path, std::ios::binary);
            if (!out)
            {
                throw IoError("cannot open '" + path.string() + "' for writing");
            }
            return out;
        }

        inline std::ifstream open_in(const std::filesystem::path & path)
        {
            std::ifstream in(path, std::ios::binary);
            if (!in)
            {
                throw IoError("cannot open '" + path.string() + "' for reading");
            }
            return in;
        }

        inline void push_polygon(SurfaceMesh & m, const std::vector<long long> & idx)
        {
            if (idx.size() < 3)
            {
                throw FormatError("mesh face with fewer than 3 vertices");
            }
            for (std::size_t i = 1; i + 1 < idx.size(); ++i)
            {
                m.triangles.push_back({static_cast<std::uint32_t>(idx[0]), static_cast<std::uint32_t>(idx[i]),
                                       static_cast<std::uint32_t>(idx[i + 1])});
            }
        }
    } // namespace detail

    inline void write_obj(std::ostream & out, const SurfaceMesh & m)
    {
        validate(m);
        for (std::size_t i = 0; i < m.vertices.size(); ++i)
        {
            const Vec3 & v = m.vertices[i];
            out << "v " << detail::fmt17(v.x) << ' ' << detail::fmt17(v.y) << ' ' << detail::fmt17(v.z);
            if (m.has_colors())
            {
                const Vec3 & c = m.colors[i];
                out << ' ' << detail::fmt17(c.x) << ' ' << detail::fmt17(c.y) << ' ' << detail::fmt17(c.z);
            }
            out << '\n';
        }
        for (const auto & t : m.triangles) out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
    }

    inline void write_ply(std::ostream & out, const SurfaceMesh & m)
    {
        validate(m);
        out << "ply\nformat ascii 1.0\nelement vertex " << m.vertices.size()
            << "\nproperty double x\nproperty double y\nproperty double z\n";
        if (m.has_colors()) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
        out << "element face " << m.triangles.size() << "\nproperty list uchar int vertex_indices\nend_header\n";
        for (std::size_t i = 0; i < m.vertices.size(); ++i)
        {
            const Vec3 & v = m.vertices[i];
            out << detail::fmt17(v.x) << ' ' << detail::fmt17(v.y) << ' ' << detail::fmt17(v.z);
            if (m.has_colors())
            {
                const Vec3 & c = m.colors[i];
                out << ' ' << int(quantize_color(c.x)) << ' ' << int(quantize_color(c.y)) << ' ' << int(quantize_color(c.z));
            }
            out << '\n';
        }
        for (const auto & t : m.triangles) out << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
    }

    inline SurfaceMesh read_obj(std::istream & in)
    {
        SurfaceMesh m;
        std::string line;
        std::size_t colored = 0;
        while (std::getline(in, line))
        {
            std::istringstream ls(line);
            std::string tag;
            ls >> tag;
            if (tag == "v")
            {
                Vec3 p;
                if (!(ls >> p.x >> p.y >> p.z))
                {
                    throw FormatError("obj: malformed vertex line '" + line + "'");
                }
                m.vertices.push_back(p);
                Vec3 c;
                if (ls >> c.x >> c.y >> c.z)
                {
                    m.colors.resize(m.vertices.size() - 1);
                    m.colors.push_back(c);
                    ++colored;
                }
            }
            else if (tag == "f")
            {
                std::vector<long long> idx;
                std::string tok;
                while (ls >> tok)
                {
                    long long i = 0;
                    try
                    {
                        i = std::stoll(tok.substr(0, tok.find('/')));
                    }
                    catch (const std::exception &)
                    {
                        throw FormatError("obj: malformed face index '" + tok + "'");
                    }
                    i = i < 0 ? static_cast<long long>(m.vertices.size()) + i : i - 1;
                    if (i < 0 || i >= static_cast<long long>(m.vertices.size()))
                    {
                        throw FormatError("obj: face index out of range");
                    }
                    idx.push_back(i);
                }
                detail::push_polygon(m, idx);
            }
        }
        if (colored != 0 && colored != m.vertices.size())
        {
            throw FormatError("obj: colors present on only some vertices");
        }
        return m;
    }

    inline SurfaceMesh read_ply(std::istream & in)
    {
        std::string line;
        if (!std::getline(in, line) || line.rfind("ply", 0) != 0)
        {
            throw FormatError("ply: missing magic");
        }
        std::size_t nv = 0, nf = 0;
        std::vector<std::string> vprops;
        bool in_vertex = false;
        while (true)
        {
            if (!std::getline(in, line))
            {
                throw FormatError("ply: unexpected end of header");
            }
            std::istringstream ls(line);
            std::string tag;
            ls >> tag;
            if (tag == "format")
            {
                std::string f;
                ls >> f;
                if (f != "ascii")
                {
                    throw FormatError("ply: only ascii encoding is supported");
                }
            }
            else if (tag == "element")
            {
                std::string name;
                std::size_t n = 0;
                ls >> name >> n;
                in_vertex = name == "vertex";
                if (name == "vertex") nv = n;
                else if (name == "face") nf = n;
            }
            else if (tag == "property" && in_vertex)
            {
                std::string type, name;
                ls >> type >> name;
                vprops.push_back(name);
            }
            else if (tag == "end_header")
            {
                break;
            }
        }
        auto find = [&](const char * name) {
            const auto it = std::find(vprops.begin(), vprops.end(), name);
            return it == vprops.end() ? -1 : static_cast<int>(it - vprops.begin());
        };
        const int ix = find("x"), iy = find("y"), iz = find("z");
        const int ir = find("red"), ig = find("green"), ib = find("blue");
        if (ix < 0 || iy < 0 || iz < 0)
        {
            throw FormatError("ply: vertex element lacks x/y/z");
        }
        const bool colors = ir >= 0 && ig >= 0 && ib >= 0;
        SurfaceMesh m;
        std::vector<double> vals(vprops.size());
        for (std::size_t i = 0; i < nv; ++i)
        {
            for (auto & v : vals)
            {
                if (!(in >> v))
                {
                    throw FormatError("ply: truncated vertex data");
                }
            }
            m.vertices.push_back({vals[ix], vals[iy], vals[iz]});
            if (colors) m.colors.push_back(Vec3{vals[ir], vals[ig], vals[ib]} / 255.0);
        }
        for (std::size_t f = 0; f < nf; ++f)
        {
            std::size_t k = 0;
            if (!(in >> k))
            {
                throw FormatError("ply: truncated face data");
            }
            std::vector<long long> idx(k);
            for (auto & i : idx)
            {
                if (!(in >> i) || i < 0 || i >= static_cast<long long>(nv))
                {
                    throw FormatError("ply: bad face index");
                }
            }
            detail::push_polygon(m, idx);
        }
        return m;
    }

    inline void write_mesh(const SurfaceMesh & m, const std::filesystem::path & path, MeshFormat fmt)
    {
        auto out = detail::open_out(path);
        fmt == MeshFormat::Obj ? write_obj(out, m) : write_ply(out, m);
        if (!out)
        {
            throw IoError("write to '" + path.string() + "' failed");
        }
    }

    inline void write_mesh(const SurfaceMesh & m, const std::filesystem::path & path)
    {
        write_mesh(m, path, mesh_format_of(path));
    }

    inline SurfaceMesh read_mesh(const std::filesystem::path & path)
    {
        const auto fmt = mesh_format_of(path);
        auto in = detail::open_in(path);
        auto m = fmt == MeshFormat::Obj ? read_obj(in) : read_ply(in);
        validate(m);
        return m;
    }
} // namespace tetradiff
