#include <gtest/gtest.h>

#include <random>

#include <tetradiff/databake.hpp>
#include <tetradiff/marching.hpp>

using namespace tetradiff;

namespace
{
    double box_sdf(const Vec3 & p, double half)
    {
        const Vec3 q{std::abs(p.x) - half, std::abs(p.y) - half, std::abs(p.z) - half};
        const Vec3 outside{std::max(q.x, 0.0), std::max(q.y, 0.0), std::max(q.z, 0.0)};
        return -(norm(outside) + std::min(std::max({q.x, q.y, q.z}), 0.0));
    }

    std::vector<Vec3> random_points(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0)
    {
        std::mt19937_64 gen(seed);
        std::uniform_real_distribution<double> u(lo, hi);
        std::vector<Vec3> p(n);
        for (auto & v : p) v = {u(gen), u(gen), u(gen)};
        return p;
    }

    double brute_distance(const SurfaceMesh & m, const Vec3 & p)
    {
        double best = 1e300;
        for (const auto & t : m.triangles)
        {
            const Vec3 q = closest_point_on_triangle(p, m.vertices[t[0]], m.vertices[t[1]], m.vertices[t[2]]);
            best = std::min(best, distance(p, q));
        }
        return best;
    }

    /// Symmetric Hausdorff distance estimated from both vertex sets and dense surface samples.
    double hausdorff(const SurfaceMesh & a, const SurfaceMesh & b)
    {
        const TriangleBvh ba(a), bb(b);
        double h = 0.0;
        auto one_side = [&](const SurfaceMesh & from, const TriangleBvh & to) {
            for (const auto & v : from.vertices) h = std::max(h, std::sqrt(to.closest(v).squared_distance));
            for (const auto & v : sample_surface(from, 20000, 3).points) h = std::max(h, std::sqrt(to.closest(v).squared_distance));
        };
        one_side(a, bb);
        one_side(b, ba);
        return h;
    }
} // namespace

TEST(NormalizeMesh, HandValues)
{
    const auto m = normalize_mesh(box_mesh({0, 0, 0}, {2, 2, 2}));
    Aabb box;
    for (const auto & v : m.vertices) box.expand(v);
    EXPECT_NEAR(box.lo.x, -0.9, 1e-15);
    EXPECT_NEAR(box.hi.z, 0.9, 1e-15);

    const auto unit = box_mesh({-1, -0.5, -1}, {1, 0.5, 1});
    const auto scaled = normalize_mesh(unit);
    for (std::size_t i = 0; i < unit.vertices.size(); ++i)
        EXPECT_LT(distance(scaled.vertices[i], unit.vertices[i] * 0.9), 1e-15);

    SurfaceMesh point;
    point.vertices = {{1, 2, 3}};
    EXPECT_THROW(normalize_mesh(point), ValidationError);
    EXPECT_THROW(normalize_mesh(SurfaceMesh{}), ValidationError);
}

TEST(SampleSurface, AreaProportionalAndOnSurface)
{
    SurfaceMesh m;
    m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 2, 0}, {2, 0, 1}, {5, 0, 1}, {2, 2, 1}}; // areas 1 and 3
    m.triangles = {{0, 1, 2}, {3, 4, 5}};
    m.colors = {{1, 0, 0}, {1, 0, 0}, {1, 0, 0}, {0, 0, 1}, {0, 0, 1}, {0, 0, 1}};
    const std::size_t n = 100000;
    const auto s = sample_surface(m, n, 42);
    std::size_t first = 0;
    for (std::size_t i = 0; i < n; ++i)
    {
        const auto & t = m.triangles[s.triangle[i]];
        const Vec3 a = m.vertices[t[0]], b = m.vertices[t[1]], c = m.vertices[t[2]];
        // barycentric residual of the point against its source triangle
        const Vec3 q = closest_point_on_triangle(s.points[i], a, b, c);
        EXPECT_LT(distance(q, s.points[i]), 1e-9);
        first += s.triangle[i] == 0 ? 1 : 0;
        EXPECT_LT(distance(s.colors[i], s.triangle[i] == 0 ? Vec3(1, 0, 0) : Vec3(0, 0, 1)), 1e-12);
    }
    const double p = 1.0 / 4.0;
    EXPECT_LT(std::abs(double(first) - n * p), 3.0 * std::sqrt(n * p * (1 - p)));
    EXPECT_EQ(sample_surface(m, 10, 1).points, sample_surface(m, 10, 1).points);

    SurfaceMesh flat;
    flat.vertices = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
    flat.triangles = {{0, 1, 2}};
    EXPECT_THROW(sample_surface(flat, 5, 0), ValidationError);
    EXPECT_THROW(sample_surface(m, 0, 0), ValidationError);
}

TEST(ComputeSdf, CubeValues)
{
    const auto cube = box_mesh({-0.5, -0.5, -0.5}, {0.5, 0.5, 0.5});
    const std::vector<Vec3> pts{{0, 0, 0}, {1, 0, 0}, {0.5, 0.1, 0.2}, {0.5, 0.5, 0.5}, {0, 0.25, 0}};
    const auto s = compute_sdf(pts, cube);
    EXPECT_NEAR(s[0], 0.5, 1e-15);
    EXPECT_NEAR(s[1], -0.5, 1e-15);
    EXPECT_LT(std::abs(s[2]), 1e-9);
    EXPECT_LT(std::abs(s[3]), 1e-9);
    EXPECT_NEAR(s[4], 0.25, 1e-15);

    auto open = cube;
    open.triangles.pop_back();
    EXPECT_THROW(compute_sdf(pts, open), ValidationError);
}

TEST(ComputeSdf, SignsMatchAnalyticShapesEverywhere)
{
    // lattice points hit box faces, edges and corners, forcing ray re-casts
    const auto g = build_grid(2, 3);
    const auto & lv = g.finest();
    const double half = 0.5;
    const auto s = compute_sdf(lv, box_mesh({-half, -half, -half}, {half, half, half}));
    for (std::size_t v = 0; v < lv.num_vertices(); ++v)
    {
        const double a = box_sdf(lv.vertices[v], half);
        if (std::abs(a) < 1e-12)
            EXPECT_LT(std::abs(s[v]), 1e-9);
        else
            EXPECT_EQ(s[v] > 0, a > 0) << v;
        EXPECT_NEAR(s[v], a, 1e-12);
    }

    const auto sphere = icosphere(0.6, 3, {0.05, -0.02, 0.01});
    const auto s2 = compute_sdf(lv, sphere);
    for (std::size_t v = 0; v < lv.num_vertices(); ++v)
    {
        EXPECT_NEAR(s2[v], brute_distance(sphere, lv.vertices[v]) * (s2[v] >= 0 ? 1 : -1), 1e-12);
        const double analytic = 0.6 - norm(lv.vertices[v] - Vec3{0.05, -0.02, 0.01});
        if (std::abs(analytic) > 0.05)
        {
            EXPECT_EQ(s2[v] > 0, analytic > 0) << v;
        }
    }
}

TEST(ComputeDisplacement, NearestAndClipped)
{
    const auto g = build_grid(1, 2);
    const auto & lv = g.finest();
    const std::vector<Vec3> pts{lv.vertices[4], {5, 5, 5}};
    const auto d = compute_displacement(lv, pts, 0.25);
    EXPECT_EQ(d[4], Vec3{});
    for (std::size_t v = 0; v < lv.num_vertices(); ++v)
    {
        if (v == 4) continue;
        EXPECT_LE(norm(d[v]), 0.25 + 1e-15);
    }
    const std::vector<Vec3> far{{3 * 0.25 + lv.vertices[0].x, lv.vertices[0].y, lv.vertices[0].z}};
    const auto c = compute_displacement(lv, far, 0.25);
    EXPECT_NEAR(norm(c[0]), 0.25, 1e-15);
    EXPECT_NEAR(c[0].x, 0.25, 1e-15);
    EXPECT_THROW(compute_displacement(lv, std::vector<Vec3>{}, 1.0), ValidationError);
}

TEST(KdTree, MatchesBruteForce)
{
    const auto pts = random_points(5000, 7);
    const KdTree tree(pts);
    const auto probes = random_points(1000, 8, -1.3, 1.3);
    for (const auto & q : probes)
    {
        EXPECT_EQ(tree.nearest(q), brute_force_knn(pts, q, 1).front());
        EXPECT_EQ(tree.knn(q, 10), brute_force_knn(pts, q, 10));
    }
    // duplicated points: ties resolve to the lower index in both
    std::vector<Vec3> dup(50, Vec3{0.1, 0.2, 0.3});
    const KdTree dt(dup);
    EXPECT_EQ(dt.knn({0, 0, 0}, 5), brute_force_knn(dup, {0, 0, 0}, 5));
    EXPECT_EQ(KdTree(pts).knn({0, 0, 0}, 10000).size(), 5000u);
}

TEST(TriangleBvh, ClosestMatchesBruteForce)
{
    const auto sphere = icosphere(0.7, 2);
    const TriangleBvh bvh(sphere);
    for (const auto & q : random_points(1000, 9, -1.5, 1.5))
    {
        EXPECT_DOUBLE_EQ(std::sqrt(bvh.closest(q).squared_distance), brute_distance(sphere, q));
    }
}

TEST(IdwColors, UniformSingleAndBruteForce)
{
    const auto g = build_grid(1, 2);
    const auto & lv = g.finest();
    SampledSurface s;
    s.points = random_points(200, 3);
    s.colors.assign(200, Vec3{0.3, 0.6, 0.1});
    for (const auto & c : idw_colors(lv, s)) EXPECT_LT(distance(c, Vec3{0.3, 0.6, 0.1}), 1e-12);

    SampledSurface one{{Vec3{0.3, 0.3, 0.3}}, {Vec3{0.9, 0.1, 0.5}}, {}};
    for (const auto & c : idw_colors(lv, one)) EXPECT_EQ(c, Vec3(0.9, 0.1, 0.5));

    std::mt19937_64 gen(4);
    std::uniform_real_distribution<double> u(0, 1);
    for (auto & c : s.colors) c = {u(gen), u(gen), u(gen)};
    const auto fast = idw_colors(lv, s);
    for (std::size_t v = 0; v < lv.num_vertices(); ++v)
    {
        const auto nb = brute_force_knn(s.points, lv.vertices[v], 10);
        Vec3 acc{};
        double w = 0;
        for (const auto & n : nb)
        {
            const double wi = 1.0 / std::pow(std::sqrt(n.squared_distance), 4);
            acc += wi * s.colors[n.index];
            w += wi;
        }
        EXPECT_LT(distance(fast[v], acc / w), 1e-12);
    }
    EXPECT_THROW(idw_colors(lv, SampledSurface{}), ValidationError);
}

TEST(Bake, ChannelsAndBoxSigns)
{
    const auto g = build_grid(2, 3);
    BakeOptions opt;
    opt.points = 20000;
    opt.normalize = false;
    const auto cube = box_mesh({-0.45, -0.35, -0.4}, {0.45, 0.35, 0.4});
    const auto b = bake(cube, g, 2, opt);
    EXPECT_EQ(b.field.cols(), 4u);
    EXPECT_EQ(b.field.rows(), g.finest().num_vertices());
    for (std::size_t v = 0; v < b.field.rows(); ++v)
    {
        const Vec3 p = g.finest().vertices[v];
        const Vec3 q{std::abs(p.x) - 0.45, std::abs(p.y) - 0.35, std::abs(p.z) - 0.4};
        const double inside = std::max({q.x, q.y, q.z});
        if (std::abs(inside) > 1e-12)
        {
            EXPECT_EQ(b.field(v, 0) > 0, inside < 0) << v;
        }
    }

    auto colored = cube;
    colored.colors.assign(colored.vertices.size(), Vec3{0.25, 0.5, 0.75});
    opt.color = true;
    const auto c = bake(colored, g, 1, opt);
    EXPECT_EQ(c.field.cols(), 7u);
    EXPECT_EQ(c.field.rows(), g.levels[1].num_vertices());
    EXPECT_NEAR(c.field(0, 6), 0.75, 1e-12);
    EXPECT_THROW(bake(cube, g, 2, opt), ValidationError);
}

TEST(Bake, SphereAndBoxReconstructWithinTwoEdgeLengths)
{
    const auto g = build_grid(2, 4);
    const auto & lv = g.finest();
    const double h = max_edge_length(lv);
    BakeOptions opt;
    opt.points = 100000;
    opt.normalize = false;
    for (const auto & shape : {icosphere(0.55, 4, {0.03, -0.05, 0.02}), box_mesh({-0.5, -0.4, -0.3}, {0.45, 0.5, 0.35})})
    {
        const auto b = bake(shape, g, 3, opt);
        const auto mesh = marching_tetrahedra(lv, b.field);
        const auto m = mesh_measures(mesh);
        EXPECT_TRUE(m.is_watertight);
        EXPECT_NEAR(m.volume, mesh_measures(shape).volume, 0.1 * mesh_measures(shape).volume);
        EXPECT_LT(hausdorff(mesh, shape), 2.0 * h);
    }
}

TEST(Dataset, RoundTripAndValidation)
{
    const auto dir = std::filesystem::temp_directory_path() / "tetradiff_test_dataset";
    std::filesystem::remove_all(dir);
    Dataset ds;
    ds.grid = build_grid(1, 2);
    ds.level = 1;
    ds.channels = 4;
    for (int i = 0; i < 3; ++i)
    {
        Tensor f(27, 4, 0.1 * i);
        f(0, 0) = 1.0;
        ds.names.push_back("shape" + std::to_string(i));
        ds.scalers.push_back(ChannelScalers::fit(std::span<const Tensor>(&f, 1)));
        ds.fields.push_back(std::move(f));
    }
    save_dataset(ds, dir);
    const auto back = load_dataset(dir);
    EXPECT_EQ(back.fields, ds.fields);
    EXPECT_EQ(back.names, ds.names);
    EXPECT_EQ(back.scalers, ds.scalers);
    EXPECT_EQ(back.level, 1u);

    {
        std::ofstream trunc(dir / "shape1.tdsh", std::ios::binary | std::ios::trunc);
        trunc << "TDSH";
    }
    EXPECT_THROW(load_dataset(dir), FormatError);
    EXPECT_THROW(load_dataset(dir / "missing"), IoError);
}
