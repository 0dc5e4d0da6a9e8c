#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <vector>

#include "binio.hpp"
#include "tape.hpp"

namespace tetradiff
{
    struct AdamConfig
    {
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
    };

    struct AdamState
    {
        std::vector<Tensor> first_moment;
        std::vector<Tensor> second_moment;
        std::uint64_t step = 0;

        static AdamState for_params(const ParameterStore & params)
        {
            return {params.zeros_like(), params.zeros_like(), 0};
        }

        friend bool operator==(const AdamState &, const AdamState &) = default;
    };

    /// One bias-corrected Adam update of every parameter in place.
    inline void adam_step(ParameterStore & params, std::span<const Tensor> grads, AdamState & state, double lr,
                          const AdamConfig & cfg = {})
    {
        if (grads.size() != params.size() || state.first_moment.size() != params.size() ||
            state.second_moment.size() != params.size())
        {
            throw ShapeError("adam_step: parameter/gradient/state count mismatch");
        }
        ++state.step;
        const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
        const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
        for (std::size_t p = 0; p < params.size(); ++p)
        {
            Tensor & w = params.value(p);
            Tensor & m = state.first_moment[p];
            Tensor & v = state.second_moment[p];
            w.require_same_shape(grads[p], "adam_step(grad)");
            w.require_same_shape(m, "adam_step(state)");
            for (std::size_t i = 0; i < w.size(); ++i)
            {
                const double g = grads[p][i];
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
                const double mhat = m[i] / c1;
                const double vhat = v[i] / c2;
                w[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
            }
        }
    }

    inline void write_adam_state(std::ostream & out, const AdamState & s)
    {
        binio::put_u64(out, s.step);
        binio::put_u64(out, s.first_moment.size());
        for (std::size_t i = 0; i < s.first_moment.size(); ++i)
        {
            binio::put_tensor(out, s.first_moment[i]);
            binio::put_tensor(out, s.second_moment[i]);
        }
    }

    inline AdamState read_adam_state(std::istream & in)
    {
        AdamState s;
        s.step = binio::get_u64(in);
        const auto n = binio::get_u64(in);
        if (n > (1ULL << 24))
        {
            throw FormatError("adam state: implausible tensor count");
        }
        for (std::uint64_t i = 0; i < n; ++i)
        {
            s.first_moment.push_back(binio::get_tensor(in));
            s.second_moment.push_back(binio::get_tensor(in));
        }
        return s;
    }
} // namespace tetradiff
