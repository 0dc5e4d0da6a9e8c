#pragma once

/**
 * Tetrahedral U-Net noise predictor and its training loop.
 *
 * Stage s of the encoder runs at grid level (finest - s) with width
 * base_width * 2^s. Every stage holds res_blocks residual blocks; stages
 * after the first start with a mean pool. The decoder mirrors the encoder:
 * blocks at the coarsest stage, then unpool + skip concatenation + blocks
 * for each finer stage, and a plain linear head.
 *
 * Residual block (c_in -> c_out):
 *   h = SiLU(LN(linear(x)))           + SiLU(temb) W_t1
 *   h = SiLU(LN(tetra_conv(h)))        + SiLU(temb) W_t2
 *   h = SiLU(LN(linear(h)))
 *   out = h + (x, or linear(x) when c_in != c_out)
 */

#include <concepts>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "adam.hpp"
#include "binio.hpp"
#include "diffusion.hpp"
#include "ops.hpp"
#include "parallel.hpp"
#include "tetgrid.hpp"

namespace tetradiff
{
    struct DenoiserConfig
    {
        std::size_t levels_used = 3;
        std::size_t base_width = 16;
        std::size_t res_blocks = 1;
        std::size_t time_embed_dim = 32;
        std::size_t channels = 4;

        /// Block structure of the large published network (attention omitted); far beyond desk scale.
        static DenoiserConfig reference_preset(std::size_t channels = 4) { return {5, 120, 3, 120, channels}; }

        void validate() const
        {
            if (levels_used < 1 || base_width < 1 || res_blocks < 1)
                throw ValidationError("denoiser config: levels_used, base_width and res_blocks must be positive");
            if (time_embed_dim < 2 || time_embed_dim % 2 != 0)
                throw ValidationError("denoiser config: time_embed_dim must be even and >= 2");
            if (channels != 4 && channels != 7) throw ValidationError("denoiser config: channels must be 4 or 7");
        }

        std::size_t width(std::size_t stage) const { return base_width << stage; }

        friend bool operator==(const DenoiserConfig &, const DenoiserConfig &) = default;
    };

    inline void to_json(nlohmann::json & j, const DenoiserConfig & c)
    {
        j = {{"levels_used", c.levels_used},       {"base_width", c.base_width}, {"res_blocks", c.res_blocks},
             {"time_embed_dim", c.time_embed_dim}, {"channels", c.channels}};
    }

    inline void from_json(const nlohmann::json & j, DenoiserConfig & c)
    {
        DenoiserConfig d;
        c.levels_used = j.value("levels_used", d.levels_used);
        c.base_width = j.value("base_width", d.base_width);
        c.res_blocks = j.value("res_blocks", d.res_blocks);
        c.time_embed_dim = j.value("time_embed_dim", d.time_embed_dim);
        c.channels = j.value("channels", d.channels);
    }

    class DenoiserModel
    {
    public:
        /**
         * Builds a model whose finest stage runs on grid level `finest_level`.
         * Parameters are drawn from `seed` only, so equal seeds give equal weights.
         */
        DenoiserModel(DenoiserConfig config, std::shared_ptr<const TetGrid> grid, std::size_t finest_level, std::uint64_t seed)
            : config_(config), grid_(std::move(grid)), finest_(finest_level), init_(CounterRng(seed).fork(0x1417))
        {
            config_.validate();
            if (!grid_ || finest_ >= grid_->num_levels() || finest_ + 1 < config_.levels_used)
            {
                throw ValidationError("denoiser: grid needs levels " + std::to_string(finest_ + 1 - config_.levels_used) +
                                      ".." + std::to_string(finest_) + " for " + std::to_string(config_.levels_used) +
                                      " stages");
            }
            const std::size_t E = config_.time_embed_dim;
            time1_ = add_linear("time.fc1", E, E);
            time2_ = add_linear("time.fc2", E, E);
            stem_ = add_linear("stem", config_.channels, config_.width(0));
            const std::size_t S = config_.levels_used;
            for (std::size_t s = 0; s < S; ++s)
            {
                auto & blocks = enc_.emplace_back();
                for (std::size_t r = 0; r < config_.res_blocks; ++r)
                {
                    const std::size_t cin = r == 0 && s > 0 ? config_.width(s - 1) : config_.width(s);
                    blocks.push_back(add_block("enc" + std::to_string(s) + "." + std::to_string(r), cin, config_.width(s), s));
                }
            }
            for (std::size_t r = 0; r < config_.res_blocks; ++r)
            {
                mid_.push_back(add_block("mid." + std::to_string(r), config_.width(S - 1), config_.width(S - 1), S - 1));
            }
            for (std::size_t s = S - 1; s-- > 0;)
            {
                auto & blocks = dec_.emplace_back();
                for (std::size_t r = 0; r < config_.res_blocks; ++r)
                {
                    const std::size_t cin = r == 0 ? config_.width(s + 1) + config_.width(s) : config_.width(s);
                    blocks.push_back(add_block("dec" + std::to_string(s) + "." + std::to_string(r), cin, config_.width(s), s));
                }
            }
            head_ = add_linear("head", config_.width(0), config_.channels);
        }

        const DenoiserConfig & config() const { return config_; }
        const TetGrid & grid() const { return *grid_; }
        std::shared_ptr<const TetGrid> grid_ptr() const { return grid_; }
        std::size_t finest_level() const { return finest_; }
        const GridLevel & level_of_stage(std::size_t s) const { return grid_->level(finest_ - s); }
        std::size_t num_vertices() const { return level_of_stage(0).num_vertices(); }

        ParameterStore & params() { return params_; }
        const ParameterStore & params() const { return params_; }

        /// Noise prediction for standardized x_t at step t, recorded on `tape` (bound to params()).
        Var forward(Tape & tape, const Var & x, int t) const
        {
            if (x.rows() != num_vertices() || x.cols() != config_.channels)
            {
                throw ShapeError("denoiser input " + x.value().shape_string() + ", expected [" +
                                 std::to_string(num_vertices()) + "x" + std::to_string(config_.channels) + "]");
            }
            const Var temb0 = tape.constant(time_embedding(static_cast<double>(t), config_.time_embed_dim));
            const Var temb = apply(tape, time2_, gelu(apply(tape, time1_, temb0)));
            const Var temb_act = silu(temb);

            const std::size_t S = config_.levels_used;
            std::vector<Var> skips;
            Var h = apply(tape, stem_, x);
            for (std::size_t s = 0; s < S; ++s)
            {
                if (s > 0) h = tetra_pool(h, level_of_stage(s - 1), PoolAgg::Mean);
                for (const auto & b : enc_[s]) h = run_block(tape, b, h, temb_act);
                skips.push_back(h);
            }
            for (const auto & b : mid_) h = run_block(tape, b, h, temb_act);
            for (std::size_t d = 0; d < dec_.size(); ++d)
            {
                const std::size_t s = S - 2 - d;
                h = concat(tetra_unpool(h, level_of_stage(s)), skips[s]);
                for (const auto & b : dec_[d]) h = run_block(tape, b, h, temb_act);
            }
            return apply(tape, head_, h);
        }

        /// Forward pass outside of training.
        Tensor predict(const Tensor & xt, int t) const
        {
            Tape tape(&params_);
            return forward(tape, tape.constant(xt), t).value();
        }

    private:
        struct Linear
        {
            std::size_t w = 0, b = 0;
        };
        struct Norm
        {
            std::size_t gain = 0, offset = 0;
        };
        struct Block
        {
            std::size_t stage = 0;
            Linear mlp1, mlp2, temb1, temb2, conv;
            Norm ln1, ln2, ln3;
            std::optional<Linear> skip;
        };

        std::size_t add_uniform(const std::string & name, std::size_t rows, std::size_t cols, std::size_t fan_in)
        {
            const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
            const std::uint64_t stream = params_.size();
            Tensor w(rows, cols);
            for (std::size_t i = 0; i < w.size(); ++i) w[i] = a * (2.0 * init_.uniform(stream, i) - 1.0);
            return params_.add(name, std::move(w));
        }

        Linear add_linear(const std::string & name, std::size_t cin, std::size_t cout)
        {
            Linear l;
            l.w = add_uniform(name + ".w", cin, cout, cin);
            l.b = params_.add(name + ".b", Tensor(1, cout));
            return l;
        }

        Linear add_conv(const std::string & name, std::size_t cin, std::size_t cout, std::size_t stage)
        {
            const std::size_t k = level_of_stage(stage).m() + 1;
            Linear l;
            l.w = add_uniform(name + ".w", k * cin, cout, k * cin);
            l.b = params_.add(name + ".b", Tensor(1, cout));
            return l;
        }

        Norm add_norm(const std::string & name, std::size_t c)
        {
            return {params_.add(name + ".gain", Tensor(1, c, 1.0)), params_.add(name + ".offset", Tensor(1, c))};
        }

        Block add_block(const std::string & name, std::size_t cin, std::size_t cout, std::size_t stage)
        {
            Block b;
            b.stage = stage;
            b.mlp1 = add_linear(name + ".mlp1", cin, cout);
            b.ln1 = add_norm(name + ".ln1", cout);
            b.temb1 = add_linear(name + ".temb1", config_.time_embed_dim, cout);
            b.conv = add_conv(name + ".conv", cout, cout, stage);
            b.ln2 = add_norm(name + ".ln2", cout);
            b.temb2 = add_linear(name + ".temb2", config_.time_embed_dim, cout);
            b.mlp2 = add_linear(name + ".mlp2", cout, cout);
            b.ln3 = add_norm(name + ".ln3", cout);
            if (cin != cout) b.skip = add_linear(name + ".skip", cin, cout);
            return b;
        }

        static Var apply(Tape & tape, const Linear & l, const Var & x)
        {
            return linear(x, tape.parameter(l.w), tape.parameter(l.b));
        }

        static Var norm_act(Tape & tape, const Norm & n, const Var & x)
        {
            return silu(layer_norm(x, tape.parameter(n.gain), tape.parameter(n.offset)));
        }

        Var run_block(Tape & tape, const Block & b, const Var & x, const Var & temb_act) const
        {
            Var h = norm_act(tape, b.ln1, apply(tape, b.mlp1, x));
            h = add_row(h, apply(tape, b.temb1, temb_act));
            h = tetra_conv(h, tape.parameter(b.conv.w), tape.parameter(b.conv.b), level_of_stage(b.stage));
            h = add_row(norm_act(tape, b.ln2, h), apply(tape, b.temb2, temb_act));
            h = norm_act(tape, b.ln3, apply(tape, b.mlp2, h));
            return add(h, b.skip ? apply(tape, *b.skip, x) : x);
        }

        DenoiserConfig config_;
        std::shared_ptr<const TetGrid> grid_;
        std::size_t finest_;
        CounterRng init_;
        ParameterStore params_;
        Linear time1_, time2_, stem_, head_;
        std::vector<std::vector<Block>> enc_;
        std::vector<Block> mid_;
        std::vector<std::vector<Block>> dec_;
    };

    /// Simplified objective: mean squared error between eps and the prediction at q_sample(x0, t, eps).
    template <class Predict>
        requires std::invocable<Predict &, Tape &, const Var &, int>
    Var training_loss(Tape & tape, Predict && predict, const Tensor & x0, int t, const Tensor & eps, const Schedule & sched)
    {
        const Var xt = tape.constant(q_sample(x0, t, eps, sched));
        return mse(predict(tape, xt, t), tape.constant(eps));
    }

    inline Var training_loss(Tape & tape, const DenoiserModel & model, const Tensor & x0, int t, const Tensor & eps,
                             const Schedule & sched)
    {
        return training_loss(
            tape, [&](Tape & tp, const Var & xt, int step) { return model.forward(tp, xt, step); }, x0, t, eps, sched);
    }

    inline EpsModel as_eps_model(const DenoiserModel & model)
    {
        return [&model](const Tensor & xt, int t) { return model.predict(xt, t); };
    }

    // ------------------------------------------------------------------------------------------
    // Training

    struct TrainOptions
    {
        std::size_t epochs = 200;
        std::size_t batch = 4;
        double lr_start = 1e-3;
        double lr_end = 1e-4;
        std::uint64_t seed = 0;
    };

    struct TrainRecord
    {
        std::size_t epoch = 0;
        std::size_t step = 0;
        double loss = 0.0;
        double lr = 0.0;
    };

    /// Everything needed to continue a run: optimizer moments, step counter, loss history.
    struct TrainState
    {
        AdamState adam;
        std::uint64_t step = 0;
        std::vector<double> losses;
    };

    /// Mean of the first or last `window` entries.
    inline double smoothed(std::span<const double> xs, std::size_t window, bool from_end)
    {
        if (xs.empty()) return 0.0;
        window = std::min(window, xs.size());
        const auto first = from_end ? xs.end() - static_cast<std::ptrdiff_t>(window) : xs.begin();
        double s = 0.0;
        for (auto it = first; it != first + static_cast<std::ptrdiff_t>(window); ++it) s += *it;
        return s / static_cast<double>(window);
    }

    /// Window for reporting initial/final loss: 2% of the run, at least one step.
    inline std::size_t loss_smoothing_window(std::size_t steps) { return std::max<std::size_t>(1, steps / 50); }

    /**
     * Minimizes the noise-prediction loss over standardized `data` with Adam and
     * a learning rate that falls linearly from lr_start to lr_end over all steps.
     * Randomness (shuffle, t, eps) is keyed by (seed, step, batch slot), so a run
     * resumed from its state continues exactly as an uninterrupted one.
     * `on_step` sees every step; `on_epoch` runs after each completed epoch.
     */
    inline void train(DenoiserModel & model, std::span<const Tensor> data, const Schedule & sched, const TrainOptions & opt,
                      TrainState & state, const std::function<void(const TrainRecord &)> & on_step = {},
                      const std::function<void(std::size_t epoch)> & on_epoch = {})
    {
        if (data.empty()) throw ValidationError("train: empty dataset");
        if (opt.batch == 0) throw ValidationError("train: batch must be positive");
        for (const auto & x : data)
        {
            if (x.rows() != model.num_vertices() || x.cols() != model.config().channels)
                throw ShapeError("train: field " + x.shape_string() + " does not match the model");
        }
        if (state.adam.first_moment.empty()) state.adam = AdamState::for_params(model.params());

        const std::size_t n = data.size();
        const std::size_t steps_per_epoch = (n + opt.batch - 1) / opt.batch;
        const std::uint64_t total = static_cast<std::uint64_t>(steps_per_epoch * opt.epochs);
        const CounterRng rng(opt.seed);
        const CounterRng shuffle_rng = rng.fork(1), t_rng = rng.fork(2), eps_rng = rng.fork(3);

        while (state.step < total)
        {
            const std::size_t epoch = state.step / steps_per_epoch;
            const std::size_t within = state.step % steps_per_epoch;
            std::vector<std::size_t> order(n);
            std::iota(order.begin(), order.end(), 0);
            for (std::size_t i = n; i-- > 1;) std::swap(order[i], order[shuffle_rng.below(epoch, i, i + 1)]);

            const std::size_t begin = within * opt.batch, end = std::min(n, begin + opt.batch);
            const std::size_t b = end - begin;
            std::vector<std::vector<Tensor>> grads(b);
            std::vector<double> losses(b);
            parallel_for(b, [&](std::size_t j) {
                const std::uint64_t key = state.step * opt.batch + j;
                const int t = 1 + static_cast<int>(t_rng.below(0, key, static_cast<std::uint64_t>(sched.steps())));
                const Tensor & x0 = data[order[begin + j]];
                const Tensor eps = gaussian_noise(eps_rng, key, x0.rows(), x0.cols());
                Tape tape(&model.params());
                const Var loss = training_loss(tape, model, x0, t, eps, sched);
                tape.backward(loss);
                grads[j] = tape.parameter_grads();
                losses[j] = loss.value()[0];
            });
            std::vector<Tensor> g = std::move(grads[0]);
            double loss = losses[0];
            for (std::size_t j = 1; j < b; ++j)
            {
                for (std::size_t p = 0; p < g.size(); ++p) g[p] += grads[j][p];
                loss += losses[j];
            }
            for (auto & gp : g) gp *= 1.0 / static_cast<double>(b);
            loss /= static_cast<double>(b);
            if (!std::isfinite(loss))
            {
                throw Error("training diverged: non-finite loss at step " + std::to_string(state.step));
            }
            const double frac = total > 1 ? static_cast<double>(state.step) / static_cast<double>(total - 1) : 0.0;
            const double lr = opt.lr_start + (opt.lr_end - opt.lr_start) * frac;
            adam_step(model.params(), g, state.adam, lr);
            state.losses.push_back(loss);
            ++state.step;
            if (on_step) on_step({epoch, state.step, loss, lr});
            if (state.step % steps_per_epoch == 0 && on_epoch) on_epoch(epoch + 1);
        }
    }

    // ------------------------------------------------------------------------------------------
    // Checkpoints: "TDMC" | u32 version | header JSON | parameters | scalers | train state

    struct Checkpoint
    {
        std::unique_ptr<DenoiserModel> model;
        ChannelScalers scalers;
        TrainState state;
        int schedule_steps = 1000;
        double beta_start = 1e-4;
        double beta_end = 0.02;

        Schedule schedule() const { return Schedule(schedule_steps, beta_start, beta_end); }
    };

    namespace detail
    {
        inline constexpr char kCheckpointMagic[4] = {'T', 'D', 'M', 'C'};
        inline constexpr std::uint32_t kCheckpointVersion = 1;
    } // namespace detail

    inline void write_checkpoint(std::ostream & out, const DenoiserModel & model, const ChannelScalers & scalers,
                                 const TrainState & state, const Schedule & sched)
    {
        const nlohmann::json header{{"config", model.config()},
                                    {"finest_level", model.finest_level()},
                                    {"schedule", {{"steps", sched.steps()}, {"beta_start", sched.beta_start()}, {"beta_end", sched.beta_end()}}},
                                    {"grid", to_json(model.grid())}};
        out.write(detail::kCheckpointMagic, 4);
        binio::put_u32(out, detail::kCheckpointVersion);
        binio::put_string(out, header.dump());
        const auto & p = model.params();
        binio::put_u64(out, p.size());
        for (std::size_t i = 0; i < p.size(); ++i)
        {
            binio::put_string(out, p.name(i));
            binio::put_tensor(out, p.value(i));
        }
        write_scalers(out, scalers);
        write_adam_state(out, state.adam);
        binio::put_u64(out, state.step);
        binio::put_u64(out, state.losses.size());
        for (double l : state.losses) binio::put_f64(out, l);
    }

    inline Checkpoint read_checkpoint(std::istream & in)
    {
        char magic[4];
        binio::read_exact(in, magic, 4);
        if (!std::equal(magic, magic + 4, detail::kCheckpointMagic)) throw FormatError("checkpoint: bad magic");
        const auto version = binio::get_u32(in);
        if (version != detail::kCheckpointVersion)
        {
            throw FormatError("checkpoint: unsupported version " + std::to_string(version));
        }
        Checkpoint ck;
        try
        {
            const auto header = nlohmann::json::parse(binio::get_string(in, 1ULL << 31));
            const auto cfg = header.at("config").get<DenoiserConfig>();
            auto grid = std::make_shared<const TetGrid>(grid_from_json(header.at("grid")));
            ck.model = std::make_unique<DenoiserModel>(cfg, grid, header.at("finest_level").get<std::size_t>(), 0);
            ck.schedule_steps = header.at("schedule").at("steps").get<int>();
            ck.beta_start = header.at("schedule").at("beta_start").get<double>();
            ck.beta_end = header.at("schedule").at("beta_end").get<double>();
        }
        catch (const nlohmann::json::exception & e)
        {
            throw FormatError(std::string("checkpoint header: ") + e.what());
        }
        auto & p = ck.model->params();
        if (binio::get_u64(in) != p.size()) throw FormatError("checkpoint: parameter count does not match config");
        for (std::size_t i = 0; i < p.size(); ++i)
        {
            const auto name = binio::get_string(in, 4096);
            Tensor t = binio::get_tensor(in);
            if (name != p.name(i) || !t.same_shape(p.value(i)))
            {
                throw FormatError("checkpoint: parameter '" + name + "' does not match the architecture");
            }
            p.value(i) = std::move(t);
        }
        ck.scalers = read_scalers(in);
        ck.scalers.validate();
        if (ck.scalers.channels() != ck.model->config().channels) throw FormatError("checkpoint: scaler channel count");
        ck.state.adam = read_adam_state(in);
        ck.state.step = binio::get_u64(in);
        const auto nl = binio::get_u64(in);
        if (nl > (1ULL << 32)) throw FormatError("checkpoint: implausible loss history length");
        for (std::uint64_t i = 0; i < nl; ++i) ck.state.losses.push_back(binio::get_f64(in));
        if (!ck.state.adam.first_moment.empty() && ck.state.adam.first_moment.size() != p.size())
        {
            throw FormatError("checkpoint: optimizer state does not match parameters");
        }
        return ck;
    }

    inline void save_checkpoint(const std::filesystem::path & path, const DenoiserModel & model, const ChannelScalers & scalers,
                                const TrainState & state, const Schedule & sched)
    {
        // write-then-rename so an interrupted save never leaves a truncated checkpoint behind
        const auto tmp = std::filesystem::path(path.string() + ".tmp");
        {
            std::ofstream out(tmp, std::ios::binary);
            if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
            write_checkpoint(out, model, scalers, state, sched);
            if (!out) throw IoError("write to '" + tmp.string() + "' failed");
        }
        std::filesystem::rename(tmp, path);
    }

    inline Checkpoint load_checkpoint(const std::filesystem::path & path)
    {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
        return read_checkpoint(in);
    }
} // namespace tetradiff
