#pragma once

/**
 * Differentiable primitives over per-vertex feature arrays.
 *
 * Feature arrays are [num_vertices x channels] tensors. Every function records
 * one tape node; grid levels are captured by pointer and must outlive the tape.
 */

#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "tape.hpp"
#include "tetgrid.hpp"

namespace tetradiff
{
    enum class PoolAgg { Mean, Max, Sum };

    namespace detail
    {
        inline void require(bool ok, const std::string & msg)
        {
            if (!ok)
            {
                throw ShapeError(msg);
            }
        }

        inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

        /// Fine-vertex members of each coarse vertex's pooling group, in compressed-row form.
        struct PoolGroups
        {
            std::vector<std::size_t> offsets;
            std::vector<Index> members;
        };

        inline PoolGroups pool_groups(const GridLevel & fine, std::size_t num_coarse)
        {
            std::vector<std::size_t> count(num_coarse, 0);
            for (const auto & p : fine.parents)
            {
                ++count[p.a];
                if (p.kind == ParentRef::Kind::Pair)
                {
                    ++count[p.b];
                }
            }
            PoolGroups g;
            g.offsets.assign(num_coarse + 1, 0);
            for (std::size_t k = 0; k < num_coarse; ++k)
            {
                g.offsets[k + 1] = g.offsets[k] + count[k];
            }
            g.members.resize(g.offsets.back());
            std::vector<std::size_t> cursor(g.offsets.begin(), g.offsets.end() - 1);
            for (std::size_t v = 0; v < fine.parents.size(); ++v)
            {
                const auto & p = fine.parents[v];
                g.members[cursor[p.a]++] = static_cast<Index>(v);
                if (p.kind == ParentRef::Kind::Pair)
                {
                    g.members[cursor[p.b]++] = static_cast<Index>(v);
                }
            }
            return g;
        }

        inline std::size_t coarse_count(const GridLevel & fine)
        {
            std::size_t n = 0;
            for (const auto & p : fine.parents)
            {
                n += p.kind == ParentRef::Kind::Self ? 1 : 0;
            }
            return n;
        }
    } // namespace detail

    /// Elementwise a + b.
    inline Var add(const Var & a, const Var & b)
    {
        detail::require(a.value().same_shape(b.value()), "add: shape mismatch");
        return a.tape->record(
            {a, b}, [](auto in) { return *in[0] + *in[1]; },
            [](auto, const Tensor &, const Tensor & g, auto gin) {
                for (Tensor * gi : gin)
                {
                    if (gi) *gi += g;
                }
            },
            "add");
    }

    /// x [N x C] plus a broadcast row r [1 x C].
    inline Var add_row(const Var & x, const Var & r)
    {
        detail::require(r.rows() == 1 && r.cols() == x.cols(), "add_row: row must be 1 x C");
        return x.tape->record(
            {x, r},
            [](auto in) {
                Tensor out = *in[0];
                for (std::size_t i = 0; i < out.rows(); ++i)
                {
                    auto row = out.row(i);
                    for (std::size_t c = 0; c < out.cols(); ++c) row[c] += (*in[1])[c];
                }
                return out;
            },
            [](auto, const Tensor &, const Tensor & g, auto gin) {
                if (gin[0]) *gin[0] += g;
                if (gin[1])
                {
                    for (std::size_t i = 0; i < g.rows(); ++i)
                    {
                        for (std::size_t c = 0; c < g.cols(); ++c) (*gin[1])[c] += g(i, c);
                    }
                }
            },
            "add_row");
    }

    /// Column-wise concatenation [a | b].
    inline Var concat(const Var & a, const Var & b)
    {
        detail::require(a.rows() == b.rows(), "concat: row count mismatch");
        return a.tape->record(
            {a, b},
            [](auto in) {
                const Tensor & x = *in[0];
                const Tensor & y = *in[1];
                Tensor out(x.rows(), x.cols() + y.cols());
                for (std::size_t i = 0; i < x.rows(); ++i)
                {
                    auto o = out.row(i);
                    std::copy(x.row(i).begin(), x.row(i).end(), o.begin());
                    std::copy(y.row(i).begin(), y.row(i).end(), o.begin() + static_cast<std::ptrdiff_t>(x.cols()));
                }
                return out;
            },
            [](auto in, const Tensor &, const Tensor & g, auto gin) {
                const std::size_t ca = in[0]->cols();
                for (std::size_t i = 0; i < g.rows(); ++i)
                {
                    for (std::size_t c = 0; c < g.cols(); ++c)
                    {
                        if (c < ca)
                        {
                            if (gin[0]) (*gin[0])(i, c) += g(i, c);
                        }
                        else if (gin[1])
                        {
                            (*gin[1])(i, c - ca) += g(i, c);
                        }
                    }
                }
            },
            "concat");
    }

    /// Per-row affine map x W + b with W [C_in x C_out], b [1 x C_out].
    inline Var linear(const Var & x, const Var & w, const Var & b)
    {
        detail::require(w.rows() == x.cols(), "linear: weight rows " + std::to_string(w.rows()) + " != input channels " +
                                                   std::to_string(x.cols()));
        detail::require(b.rows() == 1 && b.cols() == w.cols(), "linear: bias must be 1 x C_out");
        return x.tape->record(
            {x, w, b},
            [](auto in) {
                const Tensor & X = *in[0];
                const Tensor & W = *in[1];
                const Tensor & B = *in[2];
                const std::size_t ci = W.rows(), co = W.cols();
                Tensor out(X.rows(), co);
                for (std::size_t r = 0; r < X.rows(); ++r)
                {
                    double * o = out.data() + r * co;
                    for (std::size_t c = 0; c < co; ++c) o[c] = B[c];
                    const double * xr = X.data() + r * ci;
                    for (std::size_t i = 0; i < ci; ++i)
                    {
                        const double xv = xr[i];
                        const double * wr = W.data() + i * co;
                        for (std::size_t c = 0; c < co; ++c) o[c] += xv * wr[c];
                    }
                }
                return out;
            },
            [](auto in, const Tensor &, const Tensor & g, auto gin) {
                const Tensor & X = *in[0];
                const Tensor & W = *in[1];
                const std::size_t ci = W.rows(), co = W.cols();
                for (std::size_t r = 0; r < X.rows(); ++r)
                {
                    const double * gr = g.data() + r * co;
                    const double * xr = X.data() + r * ci;
                    for (std::size_t i = 0; i < ci; ++i)
                    {
                        const double * wr = W.data() + i * co;
                        if (gin[0])
                        {
                            double s = 0.0;
                            for (std::size_t c = 0; c < co; ++c) s += gr[c] * wr[c];
                            (*gin[0])(r, i) += s;
                        }
                        if (gin[1])
                        {
                            double * gw = gin[1]->data() + i * co;
                            const double xv = xr[i];
                            for (std::size_t c = 0; c < co; ++c) gw[c] += xv * gr[c];
                        }
                    }
                    if (gin[2])
                    {
                        for (std::size_t c = 0; c < co; ++c) (*gin[2])[c] += gr[c];
                    }
                }
            },
            "linear");
    }

    /**
     * Tetrahedral convolution on `level`:
     *   out_k = x_k W_0 + (m / |N(k)|) * sum_{j in N(k)} x_j W_slot(j) + b
     * W is [(m+1) * C_in x C_out], slot-major (rows s*C_in .. s*C_in + C_in - 1 hold W_s).
     * Empty slots contribute nothing; vertices without neighbors get only the center term.
     */
    inline Var tetra_conv(const Var & x, const Var & w, const Var & b, const GridLevel & level)
    {
        const std::size_t m = level.m();
        detail::require(x.rows() == level.num_vertices(), "tetra_conv: feature rows " + std::to_string(x.rows()) +
                                                               " != level vertices " + std::to_string(level.num_vertices()));
        detail::require(w.rows() == (m + 1) * x.cols(), "tetra_conv: weight rows must be (m+1)*C_in");
        detail::require(b.rows() == 1 && b.cols() == w.cols(), "tetra_conv: bias must be 1 x C_out");
        const GridLevel * lv = &level;

        auto scale_of = [lv, m](std::size_t k) {
            const std::size_t deg = lv->adjacency.degree(k);
            return deg == 0 ? 0.0 : static_cast<double>(m) / static_cast<double>(deg);
        };

        return x.tape->record(
            {x, w, b},
            [lv, scale_of](auto in) {
                const Tensor & X = *in[0];
                const Tensor & W = *in[1];
                const Tensor & B = *in[2];
                const std::size_t ci = X.cols(), co = W.cols();
                Tensor out(X.rows(), co);
                for (std::size_t k = 0; k < X.rows(); ++k)
                {
                    double * o = out.data() + k * co;
                    for (std::size_t c = 0; c < co; ++c) o[c] = B[c];
                    auto apply = [&](std::size_t src, std::size_t slot, double s) {
                        const double * xr = X.data() + src * ci;
                        for (std::size_t i = 0; i < ci; ++i)
                        {
                            const double xv = s * xr[i];
                            const double * wr = W.data() + (slot * ci + i) * co;
                            for (std::size_t c = 0; c < co; ++c) o[c] += xv * wr[c];
                        }
                    };
                    apply(k, 0, 1.0);
                    const double s = scale_of(k);
                    const auto nb = lv->neighbors(k);
                    for (std::size_t q = 0; q < nb.size(); ++q) apply(nb[q], q + 1, s);
                }
                return out;
            },
            [lv, scale_of](auto in, const Tensor &, const Tensor & g, auto gin) {
                const Tensor & X = *in[0];
                const Tensor & W = *in[1];
                const std::size_t ci = X.cols(), co = W.cols();
                for (std::size_t k = 0; k < X.rows(); ++k)
                {
                    const double * gr = g.data() + k * co;
                    auto pull = [&](std::size_t src, std::size_t slot, double s) {
                        const double * xr = X.data() + src * ci;
                        for (std::size_t i = 0; i < ci; ++i)
                        {
                            const double * wr = W.data() + (slot * ci + i) * co;
                            if (gin[0])
                            {
                                double acc = 0.0;
                                for (std::size_t c = 0; c < co; ++c) acc += gr[c] * wr[c];
                                (*gin[0])(src, i) += s * acc;
                            }
                            if (gin[1])
                            {
                                double * gw = gin[1]->data() + (slot * ci + i) * co;
                                const double xv = s * xr[i];
                                for (std::size_t c = 0; c < co; ++c) gw[c] += xv * gr[c];
                            }
                        }
                    };
                    pull(k, 0, 1.0);
                    const double s = scale_of(k);
                    const auto nb = lv->neighbors(k);
                    for (std::size_t q = 0; q < nb.size(); ++q) pull(nb[q], q + 1, s);
                    if (gin[2])
                    {
                        for (std::size_t c = 0; c < co; ++c) (*gin[2])[c] += gr[c];
                    }
                }
            },
            "tetra_conv");
    }

    /**
     * Pools features of `fine` onto the next-coarser level: coarse vertex k aggregates
     * its own fine copy and every midpoint vertex that has k as an edge endpoint.
     */
    inline Var tetra_pool(const Var & x, const GridLevel & fine, PoolAgg agg = PoolAgg::Mean)
    {
        detail::require(!fine.parents.empty(), "tetra_pool: level has no coarser level");
        detail::require(x.rows() == fine.num_vertices(), "tetra_pool: feature rows do not match the fine level");
        const auto groups = std::make_shared<detail::PoolGroups>(detail::pool_groups(fine, detail::coarse_count(fine)));

        return x.tape->record(
            {x},
            [groups, agg](auto in) {
                const Tensor & X = *in[0];
                const std::size_t nc = groups->offsets.size() - 1, ch = X.cols();
                Tensor out(nc, ch, agg == PoolAgg::Max ? -std::numeric_limits<double>::infinity() : 0.0);
                for (std::size_t k = 0; k < nc; ++k)
                {
                    auto o = out.row(k);
                    const std::size_t begin = groups->offsets[k], end = groups->offsets[k + 1];
                    for (std::size_t p = begin; p < end; ++p)
                    {
                        const auto xr = X.row(groups->members[p]);
                        for (std::size_t c = 0; c < ch; ++c)
                        {
                            o[c] = agg == PoolAgg::Max ? std::max(o[c], xr[c]) : o[c] + xr[c];
                        }
                    }
                    if (agg == PoolAgg::Mean)
                    {
                        for (auto & v : o) v /= static_cast<double>(end - begin);
                    }
                }
                return out;
            },
            [groups, agg](auto in, const Tensor & out, const Tensor & g, auto gin) {
                if (!gin[0]) return;
                const Tensor & X = *in[0];
                const std::size_t nc = groups->offsets.size() - 1, ch = X.cols();
                for (std::size_t k = 0; k < nc; ++k)
                {
                    const std::size_t begin = groups->offsets[k], end = groups->offsets[k + 1];
                    for (std::size_t c = 0; c < ch; ++c)
                    {
                        if (agg == PoolAgg::Max)
                        {
                            // first member attaining the max receives the gradient
                            for (std::size_t p = begin; p < end; ++p)
                            {
                                if (X(groups->members[p], c) == out(k, c))
                                {
                                    (*gin[0])(groups->members[p], c) += g(k, c);
                                    break;
                                }
                            }
                            continue;
                        }
                        const double w = agg == PoolAgg::Mean ? 1.0 / static_cast<double>(end - begin) : 1.0;
                        for (std::size_t p = begin; p < end; ++p) (*gin[0])(groups->members[p], c) += w * g(k, c);
                    }
                }
            },
            "tetra_pool");
    }

    /// Lifts coarse features onto `fine`: retained vertices copy, midpoints average their two parents.
    inline Var tetra_unpool(const Var & x, const GridLevel & fine)
    {
        detail::require(!fine.parents.empty(), "tetra_unpool: level has no parent map");
        detail::require(x.rows() == detail::coarse_count(fine), "tetra_unpool: feature rows do not match the coarse level");
        const GridLevel * lv = &fine;
        return x.tape->record(
            {x},
            [lv](auto in) {
                const Tensor & X = *in[0];
                Tensor out(lv->num_vertices(), X.cols());
                for (std::size_t v = 0; v < lv->num_vertices(); ++v)
                {
                    const auto & p = lv->parents[v];
                    auto o = out.row(v);
                    const auto a = X.row(p.a);
                    if (p.kind == ParentRef::Kind::Self)
                    {
                        std::copy(a.begin(), a.end(), o.begin());
                    }
                    else
                    {
                        const auto b = X.row(p.b);
                        for (std::size_t c = 0; c < o.size(); ++c) o[c] = 0.5 * (a[c] + b[c]);
                    }
                }
                return out;
            },
            [lv](auto, const Tensor &, const Tensor & g, auto gin) {
                if (!gin[0]) return;
                for (std::size_t v = 0; v < lv->num_vertices(); ++v)
                {
                    const auto & p = lv->parents[v];
                    const auto gr = g.row(v);
                    auto ga = gin[0]->row(p.a);
                    if (p.kind == ParentRef::Kind::Self)
                    {
                        for (std::size_t c = 0; c < gr.size(); ++c) ga[c] += gr[c];
                    }
                    else
                    {
                        auto gb = gin[0]->row(p.b);
                        for (std::size_t c = 0; c < gr.size(); ++c)
                        {
                            ga[c] += 0.5 * gr[c];
                            gb[c] += 0.5 * gr[c];
                        }
                    }
                }
            },
            "tetra_unpool");
    }

    /// Normalizes each row across channels (eps 1e-5), then applies gain and offset rows.
    inline Var layer_norm(const Var & x, const Var & gain, const Var & offset, double eps = 1e-5)
    {
        detail::require(gain.rows() == 1 && gain.cols() == x.cols() && offset.value().same_shape(gain.value()),
                        "layer_norm: gain/offset must be 1 x C");
        return x.tape->record(
            {x, gain, offset},
            [eps](auto in) {
                const Tensor & X = *in[0];
                const Tensor & G = *in[1];
                const Tensor & O = *in[2];
                const std::size_t ch = X.cols();
                Tensor out(X.rows(), ch);
                for (std::size_t r = 0; r < X.rows(); ++r)
                {
                    const auto xr = X.row(r);
                    double mean = 0.0;
                    for (double v : xr) mean += v;
                    mean /= static_cast<double>(ch);
                    double var = 0.0;
                    for (double v : xr) var += (v - mean) * (v - mean);
                    var /= static_cast<double>(ch);
                    const double rstd = 1.0 / std::sqrt(var + eps);
                    auto o = out.row(r);
                    for (std::size_t c = 0; c < ch; ++c) o[c] = (xr[c] - mean) * rstd * G[c] + O[c];
                }
                return out;
            },
            [eps](auto in, const Tensor &, const Tensor & g, auto gin) {
                const Tensor & X = *in[0];
                const Tensor & G = *in[1];
                const std::size_t ch = X.cols();
                const double n = static_cast<double>(ch);
                std::vector<double> xhat(ch), dxhat(ch);
                for (std::size_t r = 0; r < X.rows(); ++r)
                {
                    const auto xr = X.row(r);
                    const auto gr = g.row(r);
                    double mean = 0.0;
                    for (double v : xr) mean += v;
                    mean /= n;
                    double var = 0.0;
                    for (double v : xr) var += (v - mean) * (v - mean);
                    var /= n;
                    const double rstd = 1.0 / std::sqrt(var + eps);
                    double mean_d = 0.0, mean_dx = 0.0;
                    for (std::size_t c = 0; c < ch; ++c)
                    {
                        xhat[c] = (xr[c] - mean) * rstd;
                        dxhat[c] = gr[c] * G[c];
                        mean_d += dxhat[c];
                        mean_dx += dxhat[c] * xhat[c];
                    }
                    mean_d /= n;
                    mean_dx /= n;
                    for (std::size_t c = 0; c < ch; ++c)
                    {
                        if (gin[0]) (*gin[0])(r, c) += rstd * (dxhat[c] - mean_d - xhat[c] * mean_dx);
                        if (gin[1]) (*gin[1])[c] += gr[c] * xhat[c];
                        if (gin[2]) (*gin[2])[c] += gr[c];
                    }
                }
            },
            "layer_norm");
    }

    /// x * sigmoid(x)
    inline Var silu(const Var & x)
    {
        return x.tape->record(
            {x},
            [](auto in) {
                Tensor out = *in[0];
                for (auto & v : out.values()) v = v * detail::sigmoid(v);
                return out;
            },
            [](auto in, const Tensor &, const Tensor & g, auto gin) {
                if (!gin[0]) return;
                const Tensor & X = *in[0];
                for (std::size_t i = 0; i < X.size(); ++i)
                {
                    const double s = detail::sigmoid(X[i]);
                    (*gin[0])[i] += g[i] * s * (1.0 + X[i] * (1.0 - s));
                }
            },
            "silu");
    }

    /// Tanh approximation 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
    inline Var gelu(const Var & x)
    {
        static constexpr double k = 0.7978845608028654; // sqrt(2/pi)
        static constexpr double a = 0.044715;
        return x.tape->record(
            {x},
            [](auto in) {
                Tensor out = *in[0];
                for (auto & v : out.values()) v = 0.5 * v * (1.0 + std::tanh(k * (v + a * v * v * v)));
                return out;
            },
            [](auto in, const Tensor &, const Tensor & g, auto gin) {
                if (!gin[0]) return;
                const Tensor & X = *in[0];
                for (std::size_t i = 0; i < X.size(); ++i)
                {
                    const double x = X[i];
                    const double t = std::tanh(k * (x + a * x * x * x));
                    const double d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * k * (1.0 + 3.0 * a * x * x);
                    (*gin[0])[i] += g[i] * d;
                }
            },
            "gelu");
    }

    /// Mean over all entries of (a - b)^2, as a 1x1 scalar.
    inline Var mse(const Var & a, const Var & b)
    {
        detail::require(a.value().same_shape(b.value()), "mse: shape mismatch");
        return a.tape->record(
            {a, b},
            [](auto in) {
                const Tensor & A = *in[0];
                const Tensor & B = *in[1];
                double s = 0.0;
                for (std::size_t i = 0; i < A.size(); ++i) s += (A[i] - B[i]) * (A[i] - B[i]);
                return Tensor(1, 1, s / static_cast<double>(A.size()));
            },
            [](auto in, const Tensor &, const Tensor & g, auto gin) {
                const Tensor & A = *in[0];
                const Tensor & B = *in[1];
                const double w = 2.0 * g[0] / static_cast<double>(A.size());
                for (std::size_t i = 0; i < A.size(); ++i)
                {
                    const double d = w * (A[i] - B[i]);
                    if (gin[0]) (*gin[0])[i] += d;
                    if (gin[1]) (*gin[1])[i] -= d;
                }
            },
            "mse");
    }

    /// Scalar sum of x * weights (elementwise); weights are constant.
    inline Var weighted_sum(const Var & x, Tensor weights)
    {
        detail::require(x.value().same_shape(weights), "weighted_sum: shape mismatch");
        auto w = std::make_shared<Tensor>(std::move(weights));
        return x.tape->record(
            {x}, [w](auto in) { return Tensor(1, 1, dot(*in[0], *w)); },
            [w](auto, const Tensor &, const Tensor & g, auto gin) {
                if (gin[0]) gin[0]->axpy(g[0], *w);
            },
            "weighted_sum");
    }

    /// Sinusoidal embedding of step t: [sin(t f_0) .. sin(t f_{h-1}) | cos(t f_0) .. cos(t f_{h-1})],
    /// f_i = 10000^(-i/h), h = dim/2.
    inline Tensor time_embedding(double t, std::size_t dim)
    {
        if (dim < 2 || dim % 2 != 0)
        {
            throw ShapeError("time_embedding: dim must be even and >= 2");
        }
        const std::size_t half = dim / 2;
        Tensor e(1, dim);
        for (std::size_t i = 0; i < half; ++i)
        {
            const double f = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
            e[i] = std::sin(t * f);
            e[half + i] = std::cos(t * f);
        }
        return e;
    }
} // namespace tetradiff
