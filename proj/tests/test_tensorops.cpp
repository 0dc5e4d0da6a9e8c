#include <gtest/gtest.h>

#include <sstream>

#include <tetradiff/adam.hpp>
#include <tetradiff/ops.hpp>

#include "gradcheck.hpp"

using namespace tetradiff;
using tetradiff::testing::check_gradients;
using tetradiff::testing::random_tensor;

namespace
{
    GridLevel single_tet()
    {
        GridLevel lv;
        lv.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
        lv.tets = {Tet{0, 1, 2, 3}};
        compute_adjacency(lv);
        return lv;
    }

    // Coarse vertices {0,1,2}; fine vertices 3 = mid(0,1), 4 = mid(0,2).
    GridLevel hand_fine_level()
    {
        GridLevel lv;
        lv.vertices.resize(5);
        lv.parents = {ParentRef::self(0), ParentRef::self(1), ParentRef::self(2), ParentRef::pair(0, 1),
                      ParentRef::pair(0, 2)};
        return lv;
    }

    Tensor identity_kernel(std::size_t m, std::size_t ch)
    {
        Tensor w((m + 1) * ch, ch);
        for (std::size_t i = 0; i < ch; ++i) w(i, i) = 1.0;
        return w;
    }

    constexpr double kGradTol = 1e-4;
} // namespace

TEST(TetraConv, IdentityKernelReproducesInput)
{
    const auto g = build_grid(1, 2);
    const auto & lv = g.finest();
    Tape tape;
    const Tensor x = random_tensor(lv.num_vertices(), 3, 1);
    const Var y = tetra_conv(tape.constant(x), tape.constant(identity_kernel(lv.m(), 3)), tape.constant(Tensor(1, 3)), lv);
    EXPECT_EQ(y.value(), x);
}

TEST(TetraConv, SingleTetAllOnes)
{
    const auto lv = single_tet();
    Tape tape;
    const Var y = tetra_conv(tape.constant(Tensor(4, 1, 1.0)), tape.constant(Tensor(4, 1, 1.0)),
                             tape.constant(Tensor(1, 1)), lv);
    for (std::size_t k = 0; k < 4; ++k) EXPECT_DOUBLE_EQ(y.value()[k], 4.0);
}

TEST(TetraConv, NeighborSumRescaledByDegree)
{
    // corner vertex of the 1-cube grid has degree 3 while m = 7
    const auto g = build_base_grid(1);
    const auto & lv = g.finest();
    ASSERT_EQ(lv.m(), 7u);
    Tape tape;
    Tensor w(8, 1, 1.0);
    w[0] = 0.0;
    const Var y = tetra_conv(tape.constant(Tensor(8, 1, 1.0)), tape.constant(w), tape.constant(Tensor(1, 1)), lv);
    for (std::size_t k = 0; k < lv.num_vertices(); ++k) EXPECT_NEAR(y.value()[k], 7.0, 1e-12);
}

TEST(TetraConv, LinearInInput)
{
    const auto g = build_grid(1, 2);
    const auto & lv = g.finest();
    const Tensor a = random_tensor(lv.num_vertices(), 2, 2);
    const Tensor b = random_tensor(lv.num_vertices(), 2, 3);
    const Tensor w = random_tensor((lv.m() + 1) * 2, 3, 4);
    const double alpha = 0.7, beta = -1.3;
    auto conv = [&](const Tensor & x) {
        Tape tape;
        return tetra_conv(tape.constant(x), tape.constant(w), tape.constant(Tensor(1, 3)), lv).value();
    };
    const Tensor lhs = conv(alpha * a + beta * b);
    const Tensor rhs = alpha * conv(a) + beta * conv(b);
    EXPECT_LT(max_abs_diff(lhs, rhs), 1e-12);
}

TEST(TetraConv, ShapeMismatchThrows)
{
    const auto lv = single_tet();
    Tape tape;
    EXPECT_THROW(tetra_conv(tape.constant(Tensor(5, 1)), tape.constant(Tensor(4, 1)), tape.constant(Tensor(1, 1)), lv),
                 ShapeError);
    EXPECT_THROW(tetra_conv(tape.constant(Tensor(4, 1)), tape.constant(Tensor(3, 1)), tape.constant(Tensor(1, 1)), lv),
                 ShapeError);
}

TEST(TetraConv, IdentityKernelInputGradientIsIdentity)
{
    const auto g = build_grid(1, 2);
    const auto & lv = g.finest();
    Tape tape;
    const Var x = tape.input(random_tensor(lv.num_vertices(), 2, 5));
    const Var y = tetra_conv(x, tape.constant(identity_kernel(lv.m(), 2)), tape.constant(Tensor(1, 2)), lv);
    const Tensor r = random_tensor(lv.num_vertices(), 2, 6);
    tape.backward(weighted_sum(y, r));
    EXPECT_EQ(tape.grad(x), r);
}

TEST(TetraPool, HandValues)
{
    const auto fine = hand_fine_level();
    const Tensor x(5, 1, {0.0, 10.0, 20.0, 3.0, 6.0});
    Tape tape;
    const Var in = tape.constant(x);
    EXPECT_DOUBLE_EQ(tetra_pool(in, fine, PoolAgg::Mean).value()[0], 3.0);
    EXPECT_DOUBLE_EQ(tetra_pool(in, fine, PoolAgg::Max).value()[0], 6.0);
    EXPECT_DOUBLE_EQ(tetra_pool(in, fine, PoolAgg::Sum).value()[0], 9.0);
    // vertex 1 pools {10, 3}
    EXPECT_DOUBLE_EQ(tetra_pool(in, fine, PoolAgg::Mean).value()[1], 6.5);
}

TEST(TetraPool, MeanGradientIsReciprocalCount)
{
    const auto fine = hand_fine_level();
    Tape tape;
    const Var x = tape.input(Tensor(5, 1, {0.0, 10.0, 20.0, 3.0, 6.0}));
    const Var p = tetra_pool(x, fine, PoolAgg::Mean);
    tape.backward(weighted_sum(p, Tensor(3, 1, {1.0, 0.0, 0.0})));
    const Tensor g = tape.grad(x);
    EXPECT_DOUBLE_EQ(g[0], 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(g[3], 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(g[4], 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(g[1], 0.0);
}

TEST(TetraPool, ConstantFieldsStayConstant)
{
    const auto g = build_grid(1, 3);
    for (std::size_t l = 1; l < g.num_levels(); ++l)
    {
        Tape tape;
        const Var x = tape.constant(Tensor(g.levels[l].num_vertices(), 2, 1.25));
        const Var p = tetra_pool(x, g.levels[l], PoolAgg::Mean);
        EXPECT_EQ(p.rows(), g.levels[l - 1].num_vertices());
        for (double v : p.value().values()) EXPECT_DOUBLE_EQ(v, 1.25);

        const Var u = tetra_unpool(tape.constant(Tensor(g.levels[l - 1].num_vertices(), 2, -0.5)), g.levels[l]);
        EXPECT_EQ(u.rows(), g.levels[l].num_vertices());
        for (double v : u.value().values()) EXPECT_DOUBLE_EQ(v, -0.5);

        const Var back = tetra_pool(u, g.levels[l], PoolAgg::Mean);
        for (double v : back.value().values()) EXPECT_DOUBLE_EQ(v, -0.5);
    }
}

TEST(TetraPool, CoarsestLevelRejected)
{
    const auto g = build_base_grid(1);
    Tape tape;
    EXPECT_THROW(tetra_pool(tape.constant(Tensor(8, 1)), g.finest()), ShapeError);
    EXPECT_THROW(tetra_unpool(tape.constant(Tensor(8, 1)), g.finest()), ShapeError);
}

TEST(TetraUnpool, MidpointAveragesParents)
{
    const auto fine = hand_fine_level();
    Tape tape;
    const Var u = tetra_unpool(tape.constant(Tensor(3, 1, {2.0, 4.0, 8.0})), fine);
    EXPECT_DOUBLE_EQ(u.value()[0], 2.0);
    EXPECT_DOUBLE_EQ(u.value()[3], 3.0);
    EXPECT_DOUBLE_EQ(u.value()[4], 5.0);
}

TEST(Activations, PointValues)
{
    Tape tape;
    const Var z = tape.constant(Tensor(1, 1, 0.0));
    EXPECT_EQ(silu(z).value()[0], 0.0);
    EXPECT_EQ(gelu(z).value()[0], 0.0);
    const Var one = tape.constant(Tensor(1, 1, 1.0));
    EXPECT_NEAR(silu(one).value()[0], 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
    EXPECT_NEAR(gelu(one).value()[0], 0.8411919906082768, 1e-12);
}

TEST(LayerNorm, ZeroMeanUnitVariance)
{
    Tape tape;
    const Tensor x = random_tensor(20, 6, 9, 3.0);
    const Var y = layer_norm(tape.constant(x), tape.constant(Tensor(1, 6, 1.0)), tape.constant(Tensor(1, 6)));
    for (std::size_t r = 0; r < 20; ++r)
    {
        double mean = 0.0, var = 0.0;
        for (double v : y.value().row(r)) mean += v;
        mean /= 6.0;
        for (double v : y.value().row(r)) var += (v - mean) * (v - mean);
        EXPECT_LT(std::abs(mean), 1e-10);
        EXPECT_NEAR(var / 6.0, 1.0, 1e-3);
    }
}

TEST(TimeEmbedding, ZeroStep)
{
    const Tensor e = time_embedding(0, 16);
    for (std::size_t i = 0; i < 8; ++i)
    {
        EXPECT_EQ(e[i], 0.0);
        EXPECT_EQ(e[8 + i], 1.0);
    }
    EXPECT_THROW(time_embedding(1, 7), ShapeError);
}

TEST(TimeEmbedding, DistinctAndBounded)
{
    std::vector<Tensor> all;
    for (int t = 1; t <= 1000; ++t)
    {
        all.push_back(time_embedding(t, 32));
        for (double v : all.back().values())
        {
            EXPECT_LE(v, 1.0);
            EXPECT_GE(v, -1.0);
        }
    }
    double closest = 1e300;
    for (std::size_t i = 0; i < all.size(); ++i)
        for (std::size_t j = i + 1; j < all.size(); ++j) closest = std::min(closest, max_abs_diff(all[i], all[j]));
    EXPECT_GT(closest, 0.0);
}

// ---------------------------------------------------------------------------------------------
// Finite-difference checks, one per primitive.

TEST(GradCheck, Linear)
{
    const auto r = random_tensor(5, 3, 100);
    const auto res = check_gradients({random_tensor(5, 4, 11), random_tensor(4, 3, 12), random_tensor(1, 3, 13)},
                                     [&](Tape &, const std::vector<Var> & in) {
                                         return weighted_sum(linear(in[0], in[1], in[2]), r);
                                     });
    EXPECT_LT(res.max_relative_error(), kGradTol);
}

TEST(GradCheck, TetraConv)
{
    const auto g = build_grid(1, 2);
    const auto & lv = g.finest();
    const auto r = random_tensor(lv.num_vertices(), 3, 101);
    const auto res = check_gradients(
        {random_tensor(lv.num_vertices(), 2, 21), random_tensor((lv.m() + 1) * 2, 3, 22), random_tensor(1, 3, 23)},
        [&](Tape &, const std::vector<Var> & in) { return weighted_sum(tetra_conv(in[0], in[1], in[2], lv), r); });
    EXPECT_LT(res.max_relative_error(), kGradTol);
}

TEST(GradCheck, TetraPoolAllAggregations)
{
    const auto g = build_grid(1, 2);
    const auto & fine = g.finest();
    const auto r = random_tensor(g.levels[0].num_vertices(), 2, 102);
    for (auto agg : {PoolAgg::Mean, PoolAgg::Max, PoolAgg::Sum})
    {
        const auto res = check_gradients({random_tensor(fine.num_vertices(), 2, 31)}, [&](Tape &, const std::vector<Var> & in) {
            return weighted_sum(tetra_pool(in[0], fine, agg), r);
        });
        EXPECT_LT(res.max_relative_error(), kGradTol) << static_cast<int>(agg);
    }
}

TEST(GradCheck, TetraUnpool)
{
    const auto g = build_grid(1, 2);
    const auto & fine = g.finest();
    const auto r = random_tensor(fine.num_vertices(), 2, 103);
    const auto res = check_gradients({random_tensor(g.levels[0].num_vertices(), 2, 41)},
                                     [&](Tape &, const std::vector<Var> & in) {
                                         return weighted_sum(tetra_unpool(in[0], fine), r);
                                     });
    EXPECT_LT(res.max_relative_error(), kGradTol);
}

TEST(GradCheck, LayerNorm)
{
    const auto r = random_tensor(6, 5, 104);
    const auto res = check_gradients({random_tensor(6, 5, 51), random_tensor(1, 5, 52), random_tensor(1, 5, 53)},
                                     [&](Tape &, const std::vector<Var> & in) {
                                         return weighted_sum(layer_norm(in[0], in[1], in[2]), r);
                                     });
    EXPECT_LT(res.max_relative_error(), kGradTol);
}

TEST(GradCheck, Activations)
{
    const auto r = random_tensor(7, 3, 105);
    for (int which = 0; which < 2; ++which)
    {
        const auto res = check_gradients({random_tensor(7, 3, 61, 2.0)}, [&](Tape &, const std::vector<Var> & in) {
            return weighted_sum(which == 0 ? silu(in[0]) : gelu(in[0]), r);
        });
        EXPECT_LT(res.max_relative_error(), kGradTol);
    }
}

TEST(GradCheck, StructuralOps)
{
    const auto r = random_tensor(4, 5, 106);
    const auto res = check_gradients({random_tensor(4, 2, 71), random_tensor(4, 3, 72), random_tensor(1, 5, 73)},
                                     [&](Tape &, const std::vector<Var> & in) {
                                         const Var c = concat(in[0], in[1]);
                                         return weighted_sum(add(add_row(c, in[2]), c), r);
                                     });
    EXPECT_LT(res.max_relative_error(), kGradTol);

    const auto res2 = check_gradients({random_tensor(4, 3, 74), random_tensor(4, 3, 75)},
                                      [&](Tape &, const std::vector<Var> & in) { return mse(in[0], in[1]); });
    EXPECT_LT(res2.max_relative_error(), kGradTol);
}

TEST(GradCheck, ThreeLayerNetOnTwoLevelGrid)
{
    const auto g = build_grid(2, 2);
    const auto & fine = g.finest();
    const auto & coarse = g.levels[0];
    const auto target = random_tensor(fine.num_vertices(), 2, 107);
    const auto res = check_gradients(
        {random_tensor(fine.num_vertices(), 2, 81), random_tensor((fine.m() + 1) * 2, 4, 82, 0.3),
         random_tensor(1, 4, 83), random_tensor((coarse.m() + 1) * 4, 4, 84, 0.3), random_tensor(1, 4, 85),
         random_tensor(8, 2, 86, 0.3), random_tensor(1, 2, 87), random_tensor(1, 4, 88), random_tensor(1, 4, 89)},
        [&](Tape &, const std::vector<Var> & in) {
            Var h = silu(layer_norm(tetra_conv(in[0], in[1], in[2], fine), in[7], in[8]));
            const Var skip = h;
            h = tetra_pool(h, fine, PoolAgg::Mean);
            h = gelu(tetra_conv(h, in[3], in[4], coarse));
            h = tetra_unpool(h, fine);
            h = linear(concat(h, skip), in[5], in[6]);
            return mse(h, in[0].tape->constant(target));
        });
    EXPECT_LT(res.max_relative_error(), kGradTol);
}

// ---------------------------------------------------------------------------------------------
// Tape contract

TEST(Tape, BackwardRejectsNonScalarAndDisconnected)
{
    Tape tape;
    const Var x = tape.input(Tensor(2, 2, 1.0));
    EXPECT_THROW(tape.backward(silu(x)), ShapeError);
    const Var c = tape.constant(Tensor(2, 2, 1.0));
    EXPECT_THROW(tape.backward(mse(c, c)), Error);

    Tape other;
    const Var y = other.input(Tensor(1, 1, 1.0));
    EXPECT_THROW(tape.backward(y), Error);
    EXPECT_THROW(add(x, other.input(Tensor(2, 2))), Error);
}

TEST(Tape, BackwardVisitsEachNodeOnceInReverseOrder)
{
    Tape tape;
    const Var x = tape.input(random_tensor(3, 3, 1));
    const Var a = silu(x);
    const Var b = gelu(x);
    const Var c = add(a, b);
    const Var d = add(c, a);
    const Var loss = mse(d, tape.constant(Tensor(3, 3)));
    tape.backward(loss);
    const auto & order = tape.backward_visit_order();
    ASSERT_EQ(order.size(), tape.size() - 1); // the constant leaf is never visited
    for (std::size_t i = 1; i < order.size(); ++i) EXPECT_GT(order[i - 1], order[i]);
}

TEST(Tape, ReplayIsBitExact)
{
    const auto g = build_grid(1, 2);
    ParameterStore params;
    const auto wi = params.add("w", random_tensor((g.finest().m() + 1) * 2, 2, 3));
    const auto bi = params.add("b", random_tensor(1, 2, 4));
    Tape tape(&params);
    const Var x = tape.constant(random_tensor(g.finest().num_vertices(), 2, 5));
    const Var y = gelu(tetra_conv(x, tape.parameter(wi), tape.parameter(bi), g.finest()));
    const Var loss = mse(tetra_pool(y, g.finest()), tape.constant(Tensor(8, 2)));
    const double before = loss.value()[0];
    EXPECT_TRUE(tape.replay());
    EXPECT_EQ(loss.value()[0], before);
}

TEST(Tape, ParameterGradientsAccumulateOverReuse)
{
    ParameterStore params;
    const auto wi = params.add("w", Tensor(1, 1, 2.0));
    Tape tape(&params);
    const Var x = tape.constant(Tensor(1, 1, 3.0));
    const Var zero = tape.constant(Tensor(1, 1));
    const Var y = linear(linear(x, tape.parameter(wi), zero), tape.parameter(wi), zero); // x w^2
    tape.backward(weighted_sum(y, Tensor(1, 1, 1.0)));
    const auto grads = tape.parameter_grads();
    EXPECT_DOUBLE_EQ(grads[wi][0], 2.0 * 3.0 * 2.0);
}

// ---------------------------------------------------------------------------------------------
// Adam

TEST(Adam, ZeroGradientLeavesParamsUnchanged)
{
    ParameterStore params;
    params.add("a", random_tensor(3, 2, 1));
    const ParameterStore before = params;
    auto state = AdamState::for_params(params);
    adam_step(params, params.zeros_like(), state, 1e-3);
    EXPECT_EQ(params, before);
    EXPECT_EQ(state.step, 1u);
}

TEST(Adam, FirstStepHandEvaluation)
{
    ParameterStore params;
    params.add("p", Tensor(1, 2, {1.0, -2.0}));
    auto state = AdamState::for_params(params);
    const std::vector<Tensor> grads{Tensor(1, 2, {0.5, -4.0})};
    adam_step(params, grads, state, 0.1);
    // t=1: m_hat = g, v_hat = g^2, step = lr * g / (|g| + eps)
    EXPECT_NEAR(params.value(0)[0], 1.0 - 0.1 * 0.5 / (0.5 + 1e-8), 1e-15);
    EXPECT_NEAR(params.value(0)[1], -2.0 + 0.1 * 4.0 / (4.0 + 1e-8), 1e-15);
    EXPECT_NEAR(state.first_moment[0][0], 0.05, 1e-15);
    EXPECT_NEAR(state.second_moment[0][1], 0.016, 1e-15);
}

TEST(Adam, ShapeMismatchThrows)
{
    ParameterStore params;
    params.add("p", Tensor(2, 2));
    auto state = AdamState::for_params(params);
    EXPECT_THROW(adam_step(params, std::vector<Tensor>{Tensor(1, 2)}, state, 0.1), ShapeError);
    EXPECT_THROW(adam_step(params, std::vector<Tensor>{}, state, 0.1), ShapeError);
}

TEST(Adam, StateRoundTripsThroughSerialization)
{
    ParameterStore params;
    params.add("p", random_tensor(3, 3, 7));
    params.add("q", random_tensor(1, 4, 8));
    auto state = AdamState::for_params(params);
    std::vector<Tensor> grads{random_tensor(3, 3, 9), random_tensor(1, 4, 10)};
    adam_step(params, grads, state, 0.01);
    adam_step(params, grads, state, 0.01);
    std::stringstream buf;
    write_adam_state(buf, state);
    EXPECT_EQ(read_adam_state(buf), state);

    std::stringstream truncated(buf.str().substr(0, 20));
    EXPECT_THROW(read_adam_state(truncated), FormatError);
}
