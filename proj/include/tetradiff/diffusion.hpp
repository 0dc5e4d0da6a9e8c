#pragma once

/**
 * DDPM machinery on per-vertex field arrays.
 *
 * Fields are [N x C] tensors with channel 0 = signed distance (positive
 * inside), channels 1..3 = displacement and optional 4..6 = rgb. Diffusion
 * runs on standardized channels; ChannelScalers maps between the two.
 *
 * Steps are 1-based: beta(1) .. beta(T). Noise streams are keyed by step so
 * that any draw can be regenerated: x_T uses stream T+1, z_t uses stream t.
 */

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "binio.hpp"
#include "rng.hpp"
#include "tensor.hpp"
#include "tetgrid.hpp"

namespace tetradiff
{
    namespace channel
    {
        inline constexpr std::size_t sdf = 0;
        inline constexpr std::size_t disp = 1;
        inline constexpr std::size_t rgb = 4;
    } // namespace channel

    class Schedule
    {
    public:
        Schedule(int steps = 1000, double beta_start = 1e-4, double beta_end = 0.02)
        {
            if (steps < 1 || !(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
            {
                throw ValidationError("schedule: need T >= 1 and 0 < beta_start <= beta_end < 1");
            }
            beta_.assign(static_cast<std::size_t>(steps) + 1, 0.0);
            alpha_bar_.assign(beta_.size(), 1.0);
            for (int t = 1; t <= steps; ++t)
            {
                const double frac = steps == 1 ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(steps - 1);
                beta_[t] = t == steps ? beta_end : beta_start + (beta_end - beta_start) * frac;
                alpha_bar_[t] = alpha_bar_[t - 1] * (1.0 - beta_[t]);
            }
            beta_start_ = beta_start;
            beta_end_ = beta_end;
        }

        int steps() const { return static_cast<int>(beta_.size()) - 1; }
        double beta_start() const { return beta_start_; }
        double beta_end() const { return beta_end_; }
        double beta(int t) const { return beta_.at(check(t)); }
        double alpha(int t) const { return 1.0 - beta(t); }
        double alpha_bar(int t) const { return alpha_bar_.at(check(t)); }

    private:
        std::size_t check(int t) const
        {
            if (t < 1 || t > steps())
            {
                throw ValidationError("diffusion step " + std::to_string(t) + " outside 1.." + std::to_string(steps()));
            }
            return static_cast<std::size_t>(t);
        }

        std::vector<double> beta_;
        std::vector<double> alpha_bar_;
        double beta_start_ = 0.0;
        double beta_end_ = 0.0;
    };

    inline Schedule make_schedule(int steps = 1000, double beta_start = 1e-4, double beta_end = 0.02)
    {
        return Schedule(steps, beta_start, beta_end);
    }

    /// Per-channel affine standardization, x_std = (x - mean) / std.
    struct ChannelScalers
    {
        std::vector<double> mean;
        std::vector<double> std;

        std::size_t channels() const { return mean.size(); }

        static ChannelScalers identity(std::size_t c) { return {std::vector<double>(c, 0.0), std::vector<double>(c, 1.0)}; }

        /// Mean and population std over the rows of every field; degenerate channels get std 1.
        static ChannelScalers fit(std::span<const Tensor> fields)
        {
            if (fields.empty())
            {
                throw ValidationError("ChannelScalers::fit: no fields");
            }
            const std::size_t c = fields[0].cols();
            ChannelScalers s{std::vector<double>(c, 0.0), std::vector<double>(c, 0.0)};
            std::size_t n = 0;
            for (const auto & f : fields)
            {
                if (f.cols() != c)
                {
                    throw ShapeError("ChannelScalers::fit: channel count differs between fields");
                }
                for (std::size_t r = 0; r < f.rows(); ++r)
                    for (std::size_t k = 0; k < c; ++k) s.mean[k] += f(r, k);
                n += f.rows();
            }
            for (auto & m : s.mean) m /= static_cast<double>(n);
            for (const auto & f : fields)
                for (std::size_t r = 0; r < f.rows(); ++r)
                    for (std::size_t k = 0; k < c; ++k) s.std[k] += (f(r, k) - s.mean[k]) * (f(r, k) - s.mean[k]);
            for (auto & v : s.std)
            {
                v = std::sqrt(v / static_cast<double>(n));
                if (!(v > 1e-12)) v = 1.0;
            }
            return s;
        }

        void validate() const
        {
            if (mean.size() != std.size() || (mean.size() != 4 && mean.size() != 7))
            {
                throw ValidationError("channel scalers must describe 4 or 7 channels");
            }
            for (std::size_t k = 0; k < mean.size(); ++k)
            {
                if (!std::isfinite(mean[k]) || !(std[k] > 0.0) || !std::isfinite(std[k]))
                {
                    throw ValidationError("channel scalers: non-finite mean or non-positive std");
                }
            }
        }

        Tensor standardize(const Tensor & x) const
        {
            require(x);
            Tensor y = x;
            for (std::size_t r = 0; r < y.rows(); ++r)
                for (std::size_t k = 0; k < y.cols(); ++k) y(r, k) = (y(r, k) - mean[k]) / std[k];
            return y;
        }

        Tensor destandardize(const Tensor & x) const
        {
            require(x);
            Tensor y = x;
            for (std::size_t r = 0; r < y.rows(); ++r)
                for (std::size_t k = 0; k < y.cols(); ++k) y(r, k) = y(r, k) * std[k] + mean[k];
            return y;
        }

        friend bool operator==(const ChannelScalers &, const ChannelScalers &) = default;

    private:
        void require(const Tensor & x) const
        {
            if (x.cols() != mean.size())
            {
                throw ShapeError("channel scalers: field has " + std::to_string(x.cols()) + " channels, scalers have " +
                                 std::to_string(mean.size()));
            }
        }
    };

    inline void write_scalers(std::ostream & out, const ChannelScalers & s)
    {
        binio::put_u64(out, s.mean.size());
        for (std::size_t k = 0; k < s.mean.size(); ++k)
        {
            binio::put_f64(out, s.mean[k]);
            binio::put_f64(out, s.std[k]);
        }
    }

    inline ChannelScalers read_scalers(std::istream & in)
    {
        const auto n = binio::get_u64(in);
        if (n > 64)
        {
            throw FormatError("channel scalers: implausible channel count");
        }
        ChannelScalers s;
        for (std::uint64_t k = 0; k < n; ++k)
        {
            s.mean.push_back(binio::get_f64(in));
            s.std.push_back(binio::get_f64(in));
        }
        return s;
    }

    /// Standard-normal array keyed by (seed, stream, row, col).
    inline Tensor gaussian_noise(const CounterRng & rng, std::uint64_t stream, std::size_t rows, std::size_t cols)
    {
        Tensor z(rows, cols);
        for (std::size_t i = 0; i < z.size(); ++i) z[i] = rng.normal(stream, i);
        return z;
    }

    inline Tensor q_sample(const Tensor & x0, int t, const Tensor & eps, const Schedule & sched)
    {
        x0.require_same_shape(eps, "q_sample");
        const double ab = sched.alpha_bar(t);
        const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
        Tensor xt(x0.rows(), x0.cols());
        for (std::size_t i = 0; i < xt.size(); ++i) xt[i] = a * x0[i] + b * eps[i];
        return xt;
    }

    inline Tensor reconstruct_x0(const Tensor & xt, const Tensor & eps_hat, int t, const Schedule & sched)
    {
        xt.require_same_shape(eps_hat, "reconstruct_x0");
        const double ab = sched.alpha_bar(t);
        const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
        Tensor x0(xt.rows(), xt.cols());
        for (std::size_t i = 0; i < x0.size(); ++i) x0[i] = (xt[i] - b * eps_hat[i]) / a;
        return x0;
    }

    /// Inverse of reconstruct_x0: the noise that maps x_t to the given x0 estimate.
    inline Tensor eps_from_x0(const Tensor & xt, const Tensor & x0, int t, const Schedule & sched)
    {
        xt.require_same_shape(x0, "eps_from_x0");
        const double ab = sched.alpha_bar(t);
        const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
        Tensor eps(xt.rows(), xt.cols());
        for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = (xt[i] - a * x0[i]) / b;
        return eps;
    }

    inline Tensor guided_eps(const Tensor & eps, const Tensor & grad, int t, const Schedule & sched)
    {
        eps.require_same_shape(grad, "guided_eps");
        Tensor out = eps;
        out.axpy(std::sqrt(1.0 - sched.alpha_bar(t)), grad);
        return out;
    }

    /// x_{t-1} from x_t and the (possibly guided) noise estimate. z is ignored at t = 1.
    inline Tensor ancestral_step(const Tensor & xt, const Tensor & eps_hat, int t, const Tensor & z, const Schedule & sched)
    {
        xt.require_same_shape(eps_hat, "ancestral_step");
        const double alpha = sched.alpha(t);
        const double coef = (1.0 - alpha) / std::sqrt(1.0 - sched.alpha_bar(t));
        const double inv = 1.0 / std::sqrt(alpha);
        const double sigma = t > 1 ? std::sqrt(sched.beta(t)) : 0.0;
        if (t > 1)
        {
            xt.require_same_shape(z, "ancestral_step(z)");
        }
        Tensor out(xt.rows(), xt.cols());
        for (std::size_t i = 0; i < out.size(); ++i)
        {
            out[i] = inv * (xt[i] - coef * eps_hat[i]);
            if (t > 1) out[i] += sigma * z[i];
        }
        return out;
    }

    struct VolumeLoss
    {
        double loss = 0.0;
        std::vector<double> grad;
    };

    /// omega * (-mean(s > 0) + mean(s < 0)) with the sign masks held constant.
    inline VolumeLoss volume_loss(std::span<const double> s, double omega)
    {
        std::size_t np = 0, nn = 0;
        double sp = 0.0, sn = 0.0;
        for (double v : s)
        {
            if (v > 0.0)
            {
                sp += v;
                ++np;
            }
            else if (v < 0.0)
            {
                sn += v;
                ++nn;
            }
        }
        VolumeLoss out;
        out.grad.assign(s.size(), 0.0);
        if (np > 0) out.loss -= omega * sp / static_cast<double>(np);
        if (nn > 0) out.loss += omega * sn / static_cast<double>(nn);
        for (std::size_t i = 0; i < s.size(); ++i)
        {
            if (s[i] > 0.0)
                out.grad[i] = -omega / static_cast<double>(np);
            else if (s[i] < 0.0)
                out.grad[i] = omega / static_cast<double>(nn);
        }
        return out;
    }

    /// Vertices of tets whose four SDF values do not share a sign.
    inline std::vector<bool> surface_adjacent(const GridLevel & level, const Tensor & field)
    {
        std::vector<bool> mark(level.num_vertices(), false);
        for (const Tet & t : level.tets)
        {
            int pos = 0;
            for (Index v : t) pos += field(v, channel::sdf) > 0.0 ? 1 : 0;
            if (pos != 0 && pos != 4)
                for (Index v : t) mark[v] = true;
        }
        return mark;
    }

    /**
     * p_i <- p_i + lambda * (p_i - mean of neighbor p_j) on deformed positions
     * p = v + disp, restricted to surface-adjacent vertices. Works on physical
     * (not standardized) fields; only displacement channels change.
     */
    inline Tensor laplacian_correct(const Tensor & field, const GridLevel & level, double lambda)
    {
        if (field.rows() != level.num_vertices() || field.cols() < 4)
        {
            throw ShapeError("laplacian_correct: field " + field.shape_string() + " does not match grid level");
        }
        Tensor out = field;
        if (lambda == 0.0)
        {
            return out;
        }
        auto deformed = [&](std::size_t v) {
            return level.vertices[v] + Vec3{field(v, channel::disp), field(v, channel::disp + 1), field(v, channel::disp + 2)};
        };
        const auto mark = surface_adjacent(level, field);
        for (std::size_t i = 0; i < level.num_vertices(); ++i)
        {
            const auto nb = level.neighbors(static_cast<Index>(i));
            if (!mark[i] || nb.empty())
            {
                continue;
            }
            Vec3 mean{};
            for (Index j : nb) mean += deformed(j);
            mean = mean / static_cast<double>(nb.size());
            const Vec3 p = deformed(i);
            const Vec3 q = p + lambda * (p - mean);
            const Vec3 d = q - level.vertices[i];
            out(i, channel::disp) = d.x;
            out(i, channel::disp + 1) = d.y;
            out(i, channel::disp + 2) = d.z;
        }
        return out;
    }

    /// Spherical interpolation of two flattened arrays.
    inline Tensor slerp(const Tensor & z0, const Tensor & z1, double k)
    {
        z0.require_same_shape(z1, "slerp");
        if (k == 0.0) return z0;
        if (k == 1.0) return z1;
        const double n0 = norm(z0), n1 = norm(z1);
        if (!(n0 > 0.0) || !(n1 > 0.0))
        {
            throw ValidationError("slerp: zero-length endpoint");
        }
        const double c = std::clamp(dot(z0, z1) / (n0 * n1), -1.0, 1.0);
        const double omega = std::acos(c);
        if (std::numbers::pi - omega < 1e-7)
        {
            throw ValidationError("slerp: antiparallel endpoints, interpolation axis is undefined");
        }
        double w0 = 1.0 - k, w1 = k;
        if (omega >= 1e-7)
        {
            const double so = std::sin(omega);
            w0 = std::sin((1.0 - k) * omega) / so;
            w1 = std::sin(k * omega) / so;
        }
        Tensor z(z0.rows(), z0.cols());
        for (std::size_t i = 0; i < z.size(); ++i) z[i] = w0 * z0[i] + w1 * z1[i];
        return z;
    }

    // ---------------------------------------------------------------------------------------
    // Sampling

    /// Predicts noise for standardized x_t at step t.
    using EpsModel = std::function<Tensor(const Tensor & xt, int t)>;
    /// Supplies x_T (stream T+1) and z_t (stream t).
    using NoiseSource = std::function<Tensor(int stream)>;
    /// Maps the raw prediction to the guided one.
    using Guide = std::function<Tensor(const Tensor & xt, const Tensor & eps, int t)>;
    /// Receives x0 estimates; t = 0 carries the final sample.
    using StepObserver = std::function<void(int t, const Tensor & x0_hat)>;

    inline NoiseSource seeded_noise(std::uint64_t seed, std::size_t rows, std::size_t cols)
    {
        return [rng = CounterRng(seed), rows, cols](int stream) {
            return gaussian_noise(rng, static_cast<std::uint64_t>(stream), rows, cols);
        };
    }

    /// Noise of two sources blended along the great circle at every draw.
    inline NoiseSource slerp_noise(NoiseSource a, NoiseSource b, double k)
    {
        return [a = std::move(a), b = std::move(b), k](int stream) { return slerp(a(stream), b(stream), k); };
    }

    inline Tensor sample_chain(const Schedule & sched, const EpsModel & model, const NoiseSource & noise,
                               const Guide & guide = {}, const StepObserver & observe = {})
    {
        const int T = sched.steps();
        Tensor x = noise(T + 1);
        for (int t = T; t >= 1; --t)
        {
            Tensor eps = model(x, t);
            if (guide) eps = guide(x, eps, t);
            if (observe) observe(t, reconstruct_x0(x, eps, t, sched));
            const Tensor z = t > 1 ? noise(t) : Tensor();
            x = ancestral_step(x, eps, t, z, sched);
        }
        if (observe) observe(0, x);
        return x;
    }

    /// Applies `g` only for steps in [lo, hi].
    inline Guide restrict_steps(Guide g, int lo, int hi)
    {
        return [g = std::move(g), lo, hi](const Tensor & xt, const Tensor & eps, int t) {
            return t >= lo && t <= hi ? g(xt, eps, t) : eps;
        };
    }

    /**
     * Volume guidance: the loss is evaluated on the physical SDF of the x0
     * estimate and its gradient, carried to standardized units, enters the
     * noise correction. Descending the loss for omega > 0 pushes SDF values up,
     * i.e. grows the shape.
     *
     * On small grids each vertex carries a large share of the mean, and applied
     * over the whole chain the correction freezes the sign pattern of early,
     * blurry x0 estimates. Restricting it to the last fifth of the chain
     * (volume_guide_steps) keeps the effect a smooth bloat or erosion.
     */
    inline Guide volume_guide(const Schedule & sched, ChannelScalers scalers, double omega)
    {
        return [&sched, scalers = std::move(scalers), omega](const Tensor & xt, const Tensor & eps, int t) {
            const Tensor x0 = scalers.destandardize(reconstruct_x0(xt, eps, t, sched));
            std::vector<double> s(x0.rows());
            for (std::size_t v = 0; v < s.size(); ++v) s[v] = x0(v, channel::sdf);
            const auto vl = volume_loss(s, omega);
            Tensor grad(xt.rows(), xt.cols());
            for (std::size_t v = 0; v < s.size(); ++v) grad(v, channel::sdf) = vl.grad[v] * scalers.std[channel::sdf];
            return guided_eps(eps, grad, t, sched);
        };
    }

    /// Default step window [1, hi] for volume guidance.
    inline std::pair<int, int> volume_guide_steps(const Schedule & sched) { return {1, std::max(1, sched.steps() / 5)}; }

    /// Post-hoc Laplacian correction of the x0 estimate, folded back into the noise estimate.
    inline Guide laplacian_guide(const Schedule & sched, ChannelScalers scalers, const GridLevel & level, double lambda)
    {
        return [&sched, &level, scalers = std::move(scalers), lambda](const Tensor & xt, const Tensor & eps, int t) {
            const Tensor x0 = scalers.destandardize(reconstruct_x0(xt, eps, t, sched));
            const Tensor fixed = scalers.standardize(laplacian_correct(x0, level, lambda));
            return eps_from_x0(xt, fixed, t, sched);
        };
    }
} // namespace tetradiff
