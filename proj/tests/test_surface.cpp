#include <gtest/gtest.h>

#include <filesystem>
#include <set>
#include <sstream>

#include <tetradiff/marching.hpp>
#include <tetradiff/mesh_io.hpp>

#include "gradcheck.hpp"

using namespace tetradiff;

namespace
{
    GridLevel single_tet(const std::array<Vec3, 4> & v = {Vec3{0, 0, 0}, Vec3{1, 0, 0}, Vec3{0, 1, 0}, Vec3{0, 0, 1}})
    {
        GridLevel lv;
        lv.vertices.assign(v.begin(), v.end());
        lv.tets = {Tet{0, 1, 2, 3}};
        compute_adjacency(lv);
        return lv;
    }

    Tensor sdf_field(const GridLevel & lv, const std::function<double(const Vec3 &)> & f, std::size_t channels = 4)
    {
        Tensor t(lv.num_vertices(), channels);
        for (std::size_t v = 0; v < lv.num_vertices(); ++v) t(v, 0) = f(lv.vertices[v]);
        return t;
    }

    Vec3 normal(const SurfaceMesh & m, const Triangle & t)
    {
        return cross(m.vertices[t[1]] - m.vertices[t[0]], m.vertices[t[2]] - m.vertices[t[0]]);
    }

    std::filesystem::path temp_path(const std::string & name)
    {
        const auto dir = std::filesystem::temp_directory_path() / "tetradiff_test_surface";
        std::filesystem::create_directories(dir);
        return dir / name;
    }
} // namespace

TEST(MarchingTets, AllSixteenSignCases)
{
    const auto lv = single_tet();
    for (unsigned mask = 0; mask < 16; ++mask)
    {
        Tensor f(4, 4);
        for (int i = 0; i < 4; ++i) f(i, 0) = (mask >> i) & 1u ? 1.0 : -1.0;
        const auto mesh = marching_tetrahedra(lv, f);
        const int expected = std::popcount(mask) % 4 == 0 ? 0 : (std::popcount(mask) == 2 ? 2 : 1);
        EXPECT_EQ(static_cast<int>(mesh.triangles.size()), expected) << mask;
        EXPECT_EQ(marching_case_triangles(mask), expected);
        EXPECT_EQ(mesh.vertices.size(), static_cast<std::size_t>(std::popcount(mask) * (4 - std::popcount(mask))));
    }
}

TEST(MarchingTets, SymmetricEdgeCrossesAtMidpoint)
{
    const auto lv = single_tet();
    Tensor f(4, 4);
    f(0, 0) = 1.0;
    f(1, 0) = f(2, 0) = f(3, 0) = -1.0;
    const auto mesh = marching_tetrahedra(lv, f);
    ASSERT_EQ(mesh.vertices.size(), 3u);
    std::set<std::array<double, 3>> pts;
    for (const auto & p : mesh.vertices) pts.insert({p.x, p.y, p.z});
    EXPECT_TRUE(pts.contains({0.5, 0.0, 0.0}));
    EXPECT_TRUE(pts.contains({0.0, 0.5, 0.0}));
    EXPECT_TRUE(pts.contains({0.0, 0.0, 0.5}));
    // normal points away from the inside vertex at the origin
    EXPECT_GT(dot(normal(mesh, mesh.triangles[0]), Vec3{1, 1, 1}), 0.0);
}

TEST(MarchingTets, ExactZeroCountsAsInside)
{
    const auto lv = single_tet();
    Tensor f(4, 4, -1.0);
    f(2, 0) = 0.0;
    for (std::size_t v = 0; v < 4; ++v) f(v, 1) = f(v, 2) = f(v, 3) = 0.0;
    EXPECT_EQ(marching_tetrahedra(lv, f).triangles.size(), 1u);
}

TEST(MarchingTets, InterpolatedSdfVanishesAtOutputVertices)
{
    const auto lv = single_tet({Vec3{0.1, -0.2, 0.0}, Vec3{1.3, 0.1, 0.2}, Vec3{0.2, 0.9, -0.1}, Vec3{0.3, 0.2, 1.1}});
    for (int trial = 0; trial < 20; ++trial)
    {
        Tensor f(4, 4);
        const auto r = tetradiff::testing::random_tensor(4, 1, 100 + trial);
        for (int i = 0; i < 4; ++i) f(i, 0) = r[i];
        const auto mesh = marching_tetrahedra(lv, f);
        // affine interpolant of s over the tet via barycentric coordinates
        const auto & v = lv.vertices;
        const double vol = tet_volume(v[0], v[1], v[2], v[3]);
        for (const auto & p : mesh.vertices)
        {
            const double b0 = tet_volume(p, v[1], v[2], v[3]) / vol;
            const double b1 = tet_volume(v[0], p, v[2], v[3]) / vol;
            const double b2 = tet_volume(v[0], v[1], p, v[3]) / vol;
            const double b3 = tet_volume(v[0], v[1], v[2], p) / vol;
            EXPECT_NEAR(b0 * r[0] + b1 * r[1] + b2 * r[2] + b3 * r[3], 0.0, 1e-10);
        }
    }
}

TEST(MarchingTets, QuadSplitUsesDiagonalThroughSmallestEdge)
{
    const auto lv = single_tet();
    Tensor f(4, 4);
    f(0, 0) = f(1, 0) = 1.0;
    f(2, 0) = f(3, 0) = -1.0;
    const auto mesh = marching_tetrahedra(lv, f);
    ASSERT_EQ(mesh.triangles.size(), 2u);
    // crossing on edge (0,2) is the midpoint (0, 0.5, 0); on (1,3) it is (0.5, 0, 0.5)
    auto find = [&](const Vec3 & p) {
        for (std::uint32_t i = 0; i < mesh.vertices.size(); ++i)
            if (distance(mesh.vertices[i], p) < 1e-15) return i;
        return ~0u;
    };
    const auto a = find({0, 0.5, 0}), b = find({0.5, 0, 0.5});
    ASSERT_NE(a, ~0u);
    ASSERT_NE(b, ~0u);
    for (const auto & t : mesh.triangles)
    {
        EXPECT_TRUE(std::find(t.begin(), t.end(), a) != t.end());
        EXPECT_TRUE(std::find(t.begin(), t.end(), b) != t.end());
    }
}

TEST(MarchingTets, SphereOnThreeTimesSubdividedGrid)
{
    const auto g = build_grid(1, 4);
    const auto & lv = g.finest();
    const double R = 0.5;
    const auto mesh = marching_tetrahedra(lv, sdf_field(lv, [&](const Vec3 & p) { return R - norm(p); }));
    const double h = max_edge_length(lv);
    for (const auto & p : mesh.vertices) EXPECT_LT(std::abs(norm(p) - R), h);
    const auto m = mesh_measures(mesh);
    EXPECT_TRUE(m.is_watertight);
    EXPECT_GT(m.volume, 0.0);
    for (const auto & t : mesh.triangles)
    {
        const Vec3 c = (mesh.vertices[t[0]] + mesh.vertices[t[1]] + mesh.vertices[t[2]]) / 3.0;
        EXPECT_GT(dot(normal(mesh, t), c), 0.0);
    }
}

TEST(MarchingTets, SphereVolumeOnThreeLevelGrid)
{
    const auto g = build_grid(3, 3);
    const auto & lv = g.finest();
    const double R = 0.5;
    const auto mesh = marching_tetrahedra(lv, sdf_field(lv, [&](const Vec3 & p) { return R - norm(p); }));
    const auto m = mesh_measures(mesh);
    EXPECT_TRUE(m.is_watertight);
    EXPECT_NEAR(m.volume, 4.0 / 3.0 * std::numbers::pi * R * R * R, 0.1 * 4.0 / 3.0 * std::numbers::pi * R * R * R);
}

TEST(MarchingTets, RandomInteriorFieldsAreWatertight)
{
    const auto g = build_grid(2, 2);
    const auto & lv = g.finest();
    for (int trial = 0; trial < 10; ++trial)
    {
        const auto r = tetradiff::testing::random_tensor(lv.num_vertices(), 1, 500 + trial);
        Tensor f(lv.num_vertices(), 4);
        for (std::size_t v = 0; v < lv.num_vertices(); ++v)
        {
            const Vec3 & p = lv.vertices[v];
            const bool boundary = std::max({std::abs(p.x), std::abs(p.y), std::abs(p.z)}) > 1.0 - 1e-12;
            f(v, 0) = boundary ? -1.0 : (r[v] == 0.0 ? 0.1 : r[v]);
        }
        const auto mesh = marching_tetrahedra(lv, f);
        if (!mesh.empty())
        {
            EXPECT_TRUE(is_watertight(mesh)) << trial;
        }
    }
}

TEST(MarchingTets, RigidTranslationEquivariance)
{
    const auto g = build_grid(1, 3);
    const auto & lv = g.finest();
    Tensor f = sdf_field(lv, [](const Vec3 & p) { return 0.6 - norm(p - Vec3{0.1, 0, 0}); });
    const auto base = marching_tetrahedra(lv, f);
    const Vec3 shift{0.3, -0.2, 0.05};
    for (std::size_t v = 0; v < lv.num_vertices(); ++v)
    {
        f(v, 1) = shift.x;
        f(v, 2) = shift.y;
        f(v, 3) = shift.z;
    }
    const auto moved = marching_tetrahedra(lv, f);
    ASSERT_EQ(moved.triangles, base.triangles);
    for (std::size_t i = 0; i < base.vertices.size(); ++i) EXPECT_LT(distance(moved.vertices[i], base.vertices[i] + shift), 1e-12);
}

TEST(MarchingTets, FieldShapeChecked)
{
    const auto lv = single_tet();
    EXPECT_THROW(marching_tetrahedra(lv, Tensor(5, 4)), ShapeError);
    EXPECT_THROW(marching_tetrahedra(lv, Tensor(4, 2)), ShapeError);
}

TEST(Colorize, UniformExactHitAndHandBlend)
{
    const auto g = build_grid(1, 2);
    const auto & lv = g.finest();
    Tensor f = sdf_field(lv, [](const Vec3 & p) { return 0.5 - norm(p); }, 7);
    for (std::size_t v = 0; v < lv.num_vertices(); ++v)
    {
        f(v, 4) = 0.2;
        f(v, 5) = 0.4;
        f(v, 6) = 0.9;
    }
    auto mesh = extract_mesh(lv, f);
    ASSERT_TRUE(mesh.has_colors());
    for (const auto & c : mesh.colors) EXPECT_LT(distance(c, Vec3{0.2, 0.4, 0.9}), 1e-12);

    f(5, 4) = 1.0;
    SurfaceMesh probe;
    probe.vertices = {lv.vertices[5]};
    colorize(probe, lv, f);
    EXPECT_EQ(probe.colors[0].x, 1.0);

    GridLevel two;
    two.vertices = {{0, 0, 0}, {3, 0, 0}};
    Tensor tf(2, 7);
    tf(0, 4) = 1.0;
    tf(1, 6) = 1.0;
    SurfaceMesh q;
    q.vertices = {{1, 0, 0}};
    colorize(q, two, tf);
    EXPECT_NEAR(q.colors[0].x, 16.0 / 17.0, 1e-12);
    EXPECT_NEAR(q.colors[0].y, 0.0, 1e-15);
    EXPECT_NEAR(q.colors[0].z, 1.0 / 17.0, 1e-12);
}

TEST(MeshMeasures, UnitCube)
{
    const auto cube = box_mesh({0, 0, 0}, {1, 1, 1});
    const auto m = mesh_measures(cube);
    EXPECT_NEAR(m.volume, 1.0, 1e-15);
    EXPECT_NEAR(m.surface_area, 6.0, 1e-15);
    EXPECT_TRUE(m.is_watertight);

    auto open = cube;
    open.triangles.pop_back();
    EXPECT_FALSE(mesh_measures(open).is_watertight);

    auto flipped = cube;
    std::swap(flipped.triangles[0][1], flipped.triangles[0][2]);
    EXPECT_FALSE(is_watertight(flipped));
}

TEST(MeshMeasures, Icosphere)
{
    const auto s = icosphere(0.5, 4);
    const auto m = mesh_measures(s);
    EXPECT_TRUE(m.is_watertight);
    EXPECT_NEAR(m.volume, 4.0 / 3.0 * std::numbers::pi * 0.125, 0.01);
}

TEST(MeshIo, RoundTripBothFormats)
{
    auto mesh = icosphere(0.7, 2, {0.1, 0.2, -0.3});
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i)
    {
        const Vec3 & p = mesh.vertices[i];
        mesh.colors.push_back({std::abs(p.x), std::abs(p.y), std::abs(p.z)});
    }
    for (const char * ext : {"obj", "ply"})
    {
        const auto path = temp_path(std::string("sphere.") + ext);
        write_mesh(mesh, path);
        const auto back = read_mesh(path);
        ASSERT_EQ(back.vertices.size(), mesh.vertices.size());
        EXPECT_EQ(back.triangles, mesh.triangles);
        ASSERT_TRUE(back.has_colors());
        for (std::size_t i = 0; i < mesh.vertices.size(); ++i)
        {
            EXPECT_LT(distance(back.vertices[i], mesh.vertices[i]), 1e-6);
            EXPECT_LE(std::abs(back.colors[i].x - mesh.colors[i].x), 1.0 / 255.0);
            EXPECT_LE(std::abs(back.colors[i].z - mesh.colors[i].z), 1.0 / 255.0);
        }
    }
}

TEST(MeshIo, ColorQuantization)
{
    EXPECT_EQ(quantize_color(0.5), 128);
    EXPECT_EQ(quantize_color(0.0), 0);
    EXPECT_EQ(quantize_color(1.0), 255);
    EXPECT_EQ(quantize_color(1.7), 255);
    SurfaceMesh m;
    m.vertices = {{0, 0, 0}};
    m.colors = {{0.5, 0.5, 0.5}};
    std::ostringstream out;
    write_ply(out, m);
    EXPECT_NE(out.str().find("\n0 0 0 128 128 128\n"), std::string::npos);
}

TEST(MeshIo, EmptyMeshIsValid)
{
    for (const char * ext : {"obj", "ply"})
    {
        const auto path = temp_path(std::string("empty.") + ext);
        write_mesh(SurfaceMesh{}, path);
        const auto back = read_mesh(path);
        EXPECT_TRUE(back.vertices.empty());
        EXPECT_TRUE(back.triangles.empty());
    }
    std::ostringstream out;
    write_ply(out, SurfaceMesh{});
    EXPECT_NE(out.str().find("element vertex 0"), std::string::npos);
    EXPECT_NE(out.str().find("element face 0"), std::string::npos);
}

TEST(MeshIo, Errors)
{
    EXPECT_THROW(write_mesh(SurfaceMesh{}, temp_path("x.stl")), ValidationError);
    EXPECT_THROW(read_mesh(temp_path("does_not_exist.obj")), IoError);
    EXPECT_THROW(write_mesh(SurfaceMesh{}, "/nonexistent_dir_xyz/a.obj"), IoError);
    std::istringstream bad("ply\nformat binary_little_endian 1.0\nend_header\n");
    EXPECT_THROW(read_ply(bad), FormatError);
    std::istringstream face("v 0 0 0\nf 1 2 3\n");
    EXPECT_THROW(read_obj(face), FormatError);
    std::istringstream quad("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1 2/2 3/3 4/4\n");
    EXPECT_EQ(read_obj(quad).triangles.size(), 2u);
}
