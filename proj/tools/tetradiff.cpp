// tetradiff command-line tool.
//
// stdout carries one JSON summary per command; progress goes to stderr.
// Exit codes: 0 ok, 1 usage, 2 validation, 3 runtime. Errors are printed to
// stderr as {"error": {"code", "kind", "message"}}.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <tetradiff/tetradiff.hpp>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace tetradiff;

namespace
{
    struct UsageError : std::runtime_error
    {
        using std::runtime_error::runtime_error;
    };

    void require_exists(const fs::path & p, const std::string & what)
    {
        if (p.empty()) throw UsageError("missing " + what);
        if (!fs::exists(p)) throw ValidationError(what + " '" + p.string() + "' does not exist");
    }

    void require(bool given, const std::string & flag)
    {
        if (!given) throw UsageError("missing required option " + flag);
    }

    void print(const json & j) { std::cout << j.dump() << std::endl; }

    json parse_json_file(const fs::path & path)
    {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open '" + path.string() + "'");
        try
        {
            return json::parse(in);
        }
        catch (const json::exception & e)
        {
            throw FormatError(path.string() + ": " + e.what());
        }
    }

    std::string numbered(const std::string & stem, std::size_t i)
    {
        char buf[32];
        std::snprintf(buf, sizeof buf, "_%03zu", i);
        return stem + buf;
    }

    /**
     * Per-subcommand options with an optional --config JSON file. Top-level
     * keys fill options not given on the command line; object-valued keys are
     * sections read by the command itself (e.g. "model", "schedule").
     */
    struct Command
    {
        CLI::App * app = nullptr;
        std::string config_path;
        json config = json::object();

        void add_config_option() { app->add_option("--config", config_path, "JSON file of option values; flags override it"); }

        void load_config()
        {
            if (config_path.empty()) return;
            require_exists(config_path, "config file");
            config = parse_json_file(config_path);
            if (!config.is_object()) throw ValidationError("config file must hold a JSON object");
            for (const auto & [key, value] : config.items())
            {
                if (value.is_object()) continue;
                std::string name = key;
                std::replace(name.begin(), name.end(), '_', '-');
                CLI::Option * opt = app->get_option_no_throw("--" + name);
                if (opt == nullptr || name == "config") throw UsageError("unknown config key '" + key + "'");
                if (opt->count() > 0) continue;
                auto add = [&](const json & v) {
                    opt->add_result(v.is_string() ? v.get<std::string>() : (v.is_boolean() ? (v.get<bool>() ? "true" : "false") : v.dump()));
                };
                if (value.is_array())
                    for (const auto & v : value) add(v);
                else
                    add(value);
                opt->run_callback();
            }
        }

        json section(const std::string & name) const { return config.contains(name) ? config.at(name) : json::object(); }

        /// Every option's effective value (command line, config file or default).
        json resolved() const
        {
            json out = json::object();
            for (const CLI::Option * opt : app->get_options())
            {
                if (opt->get_lnames().empty()) continue;
                const std::string name = opt->get_lnames().front();
                if (name == "help") continue;
                std::vector<std::string> vals = opt->results();
                if (vals.empty() && !opt->get_default_str().empty()) vals = {opt->get_default_str()};
                auto typed = [](const std::string & s) {
                    const json j = json::parse(s, nullptr, false);
                    return j.is_discarded() || j.is_object() ? json(s) : j;
                };
                if (vals.empty())
                    out[name] = opt->get_expected_max() == 0 ? json(false) : json(nullptr);
                else if (vals.size() == 1 && opt->get_expected_max() <= 1)
                    out[name] = typed(vals.front());
                else
                    for (const auto & v : vals) out[name].push_back(typed(v));
            }
            for (const auto & [key, value] : config.items())
                if (value.is_object()) out[key] = value;
            return out;
        }

        void write_run(const fs::path & path, const json & extra = json::object()) const
        {
            json run{{"command", app->get_name()}, {"version", kVersion}, {"threads", thread_count()}, {"config", resolved()}};
            run.update(extra);
            std::ofstream out(path);
            if (!out) throw IoError("cannot write '" + path.string() + "'");
            out << run.dump(2) << '\n';
        }
    };

    fs::path run_file_for(const fs::path & output) { return fs::path(output.string() + ".run.json"); }

    std::vector<fs::path> mesh_files(const std::vector<std::string> & inputs)
    {
        std::vector<fs::path> out;
        for (const auto & in : inputs)
        {
            require_exists(in, "mesh input");
            if (fs::is_directory(in))
            {
                std::vector<fs::path> found;
                for (const auto & e : fs::directory_iterator(in))
                {
                    const auto ext = e.path().extension();
                    if (e.is_regular_file() && (ext == ".ply" || ext == ".obj")) found.push_back(e.path());
                }
                std::sort(found.begin(), found.end());
                out.insert(out.end(), found.begin(), found.end());
            }
            else
            {
                out.emplace_back(in);
            }
        }
        return out;
    }

    json mesh_summary(const SurfaceMesh & m)
    {
        const auto mm = mesh_measures(m);
        return {{"vertices", m.vertices.size()}, {"triangles", m.triangles.size()}, {"volume", mm.volume},
                {"surface_area", mm.surface_area}, {"watertight", mm.is_watertight}};
    }

    // ------------------------------------------------------------------------------------------

    struct GridBuild : Command
    {
        int cells = 1;
        std::size_t levels = 4;
        std::string out;

        void setup(CLI::App & parent)
        {
            app = parent.add_subcommand("build", "Build a cube grid and its subdivision levels");
            app->add_option("--cells", cells, "cube cells per axis of the base grid")->capture_default_str();
            app->add_option("--levels", levels, "number of levels, base included")->capture_default_str();
            app->add_option("--out", out, "grid JSON file");
            add_config_option();
        }

        void run()
        {
            load_config();
            require(!out.empty(), "--out");
            if (cells < 1 || levels < 1) throw ValidationError("--cells and --levels must be positive");
            const TetGrid g = build_grid(cells, levels);
            save_grid(g, out);
            write_run(run_file_for(out));
            print({{"out", out}, {"levels", g.num_levels()}, {"vertices", g.finest().num_vertices()}, {"tets", g.finest().tets.size()}});
        }
    };

    struct GridInfo : Command
    {
        std::string file;

        void setup(CLI::App & parent)
        {
            app = parent.add_subcommand("info", "Print vertex, tetrahedron and neighbor counts per level");
            app->add_option("file", file, "grid JSON file");
        }

        void run()
        {
            require_exists(file, "grid file");
            const TetGrid g = load_grid(file);
            json levels = json::array();
            for (std::size_t l = 0; l < g.num_levels(); ++l)
            {
                const auto & lv = g.level(l);
                levels.push_back({{"level", l}, {"V", lv.num_vertices()}, {"K", lv.tets.size()}, {"m", lv.m()},
                                  {"max_edge", max_edge_length(lv)}});
            }
            print({{"file", file}, {"levels", levels}});
        }
    };

    struct Shapes : Command
    {
        std::string kind = "sphere";
        std::size_t count = 16;
        double size_min = 0.3, size_max = 0.6, jitter = 0.05;
        int subdivisions = 3;
        std::uint64_t seed = 0;
        std::string format = "ply";
        std::string out;

        void setup(CLI::App & parent)
        {
            app = parent.add_subcommand("shapes", "Write synthetic watertight meshes (spheres or boxes)");
            app->add_option("--kind", kind, "sphere | box")->capture_default_str();
            app->add_option("--count", count)->capture_default_str();
            app->add_option("--size-min", size_min, "smallest radius / half-extent")->capture_default_str();
            app->add_option("--size-max", size_max, "largest radius / half-extent")->capture_default_str();
            app->add_option("--jitter", jitter, "center offsets drawn from [-jitter, jitter]^3")->capture_default_str();
            app->add_option("--subdivisions", subdivisions, "icosphere subdivision depth")->capture_default_str();
            app->add_option("--seed", seed)->capture_default_str();
            app->add_option("--format", format, "ply | obj")->capture_default_str();
            app->add_option("--out", out, "output directory");
            add_config_option();
        }

        void run()
        {
            load_config();
            require(!out.empty(), "--out");
            if (kind != "sphere" && kind != "box") throw ValidationError("--kind must be sphere or box");
            if (!(size_min > 0.0 && size_min <= size_max) || jitter < 0.0 || subdivisions < 0 || subdivisions > 7)
                throw ValidationError("need 0 < size-min <= size-max, jitter >= 0, 0 <= subdivisions <= 7");
            const auto fmt = mesh_format_from_name(format);
            fs::create_directories(out);
            const CounterRng rng(seed);
            json items = json::array();
            for (std::size_t i = 0; i < count; ++i)
            {
                auto u = [&](std::uint64_t stream) { return rng.uniform(stream, i); };
                const Vec3 c{jitter * (2 * u(1) - 1), jitter * (2 * u(2) - 1), jitter * (2 * u(3) - 1)};
                SurfaceMesh m;
                json item{{"center", {c.x, c.y, c.z}}};
                if (kind == "sphere")
                {
                    const double r = size_min + (size_max - size_min) * u(0);
                    m = icosphere(r, subdivisions, c);
                    item["radius"] = r;
                }
                else
                {
                    const Vec3 h{size_min + (size_max - size_min) * u(4), size_min + (size_max - size_min) * u(5),
                                 size_min + (size_max - size_min) * u(6)};
                    m = box_mesh(c - h, c + h);
                    item["half_extent"] = {h.x, h.y, h.z};
                }
                const std::string file = numbered(kind, i) + "." + format;
                write_mesh(m, fs::path(out) / file, fmt);
                item["file"] = file;
                items.push_back(item);
            }
            write_run(fs::path(out) / "run.json", {{"shapes", items}});
            print({{"out", out}, {"count", count}, {"kind", kind}});
        }
    };

    struct Bake : Command
    {
        std::vector<std::string> meshes;
        std::string grid_file, out;
        std::size_t level = 0;
        std::size_t points = 100000;
        bool color = false, no_normalize = false;
        std::uint64_t seed = 0;

        void setup(CLI::App & parent)
        {
            app = parent.add_subcommand("bake", "Bake SDF/displacement(/color) fields of watertight meshes into a dataset");
            app->add_option("--mesh", meshes, "mesh files or directories of .ply/.obj");
            app->add_option("--grid", grid_file, "grid JSON file");
            app->add_option("--level", level, "grid level to bake on")->capture_default_str();
            app->add_option("--points", points, "surface samples per shape")->capture_default_str();
            app->add_flag("--color", color, "bake vertex colors (7 channels)");
            app->add_flag("--no-normalize", no_normalize, "keep mesh coordinates as given");
            app->add_option("--seed", seed, "surface sampling seed; shape i uses seed + i")->capture_default_str();
            app->add_option("--out", out, "dataset directory (appended to if it exists)");
            add_config_option();
        }

        void run()
        {
            load_config();
            require(!meshes.empty(), "--mesh");
            require(!out.empty(), "--out");
            require_exists(grid_file, "grid file");
            const auto files = mesh_files(meshes);
            if (files.empty()) throw ValidationError("no .ply/.obj meshes found");
            Dataset ds;
            if (fs::exists(fs::path(out) / "manifest.json"))
            {
                ds = load_dataset(out);
                if (to_json(ds.grid) != to_json(load_grid(grid_file)) || ds.level != level || ds.channels != (color ? 7u : 4u))
                    throw ValidationError("existing dataset in '" + out + "' uses a different grid, level or channel count");
            }
            else
            {
                ds.grid = load_grid(grid_file);
                ds.level = level;
                ds.channels = color ? 7 : 4;
            }
            if (level >= ds.grid.num_levels()) throw ValidationError("--level exceeds the grid's levels");
            const std::set<std::string> taken(ds.names.begin(), ds.names.end());
            json baked = json::array();
            for (std::size_t i = 0; i < files.size(); ++i)
            {
                const std::string name = files[i].stem().string();
                if (taken.count(name)) throw ValidationError("dataset already holds a shape named '" + name + "'");
                BakeOptions opt;
                opt.points = points;
                opt.color = color;
                opt.normalize = !no_normalize;
                opt.seed = seed + i;
                auto shape = bake(read_mesh(files[i]), ds.grid, level, opt);
                ds.names.push_back(name);
                ds.fields.push_back(std::move(shape.field));
                ds.scalers.push_back(std::move(shape.scalers));
                baked.push_back(name);
                std::cerr << "baked " << name << " (" << i + 1 << "/" << files.size() << ")\n";
            }
            save_dataset(ds, out);
            write_run(fs::path(out) / "run.json", {{"baked", baked}});
            print({{"out", out}, {"baked", baked.size()}, {"shapes", ds.size()}, {"channels", ds.channels},
                   {"vertices", ds.grid.level(level).num_vertices()}});
        }
    };

    struct Train : Command
    {
        std::string dataset, grid_file, out;
        std::size_t epochs = 200, batch = 4, checkpoint_every = 10;
        double lr_start = 1e-3, lr_end = 1e-4;
        std::uint64_t seed = 0;
        bool resume = false;

        void setup(CLI::App & parent)
        {
            app = parent.add_subcommand("train", "Train the denoiser on a baked dataset");
            app->add_option("--dataset", dataset, "dataset directory");
            app->add_option("--grid", grid_file, "grid JSON file; must match the dataset's grid");
            app->add_option("--epochs", epochs)->capture_default_str();
            app->add_option("--batch", batch)->capture_default_str();
            app->add_option("--lr-start", lr_start)->capture_default_str();
            app->add_option("--lr-end", lr_end)->capture_default_str();
            app->add_option("--seed", seed, "weight init and training noise seed")->capture_default_str();
            app->add_option("--checkpoint-every", checkpoint_every, "epochs between checkpoint writes (0: only at the end)")
                ->capture_default_str();
            app->add_flag("--resume", resume, "continue from --out if it exists");
            app->add_option("--out", out, "checkpoint file");
            add_config_option();
        }

        void run()
        {
            load_config();
            require(!out.empty(), "--out");
            require_exists(fs::path(dataset) / "manifest.json", "dataset manifest");
            const Dataset ds = load_dataset(dataset);
            if (ds.size() == 0) throw ValidationError("dataset holds no shapes");
            if (!grid_file.empty())
            {
                require_exists(grid_file, "grid file");
                if (to_json(load_grid(grid_file)) != to_json(ds.grid)) throw ValidationError("--grid differs from the dataset's grid");
            }
            if (batch == 0 || !(lr_start > 0.0) || !(lr_end > 0.0)) throw ValidationError("need batch > 0 and positive learning rates");

            DenoiserConfig cfg;
            Schedule sched;
            try
            {
                cfg = section("model").get<DenoiserConfig>();
                const json s = section("schedule");
                sched = Schedule(s.value("steps", 1000), s.value("beta_start", 1e-4), s.value("beta_end", 0.02));
            }
            catch (const json::exception & e)
            {
                throw ValidationError(std::string("config: ") + e.what());
            }
            cfg.channels = ds.channels;

            std::unique_ptr<DenoiserModel> model;
            ChannelScalers scalers = ChannelScalers::fit(ds.fields);
            TrainState state;
            if (resume && fs::exists(out))
            {
                Checkpoint ck = load_checkpoint(out);
                if (!(ck.model->config() == cfg) || ck.model->finest_level() != ds.level ||
                    to_json(ck.model->grid()) != to_json(ds.grid))
                    throw ValidationError("checkpoint '" + out + "' was trained with a different model or grid");
                model = std::move(ck.model);
                scalers = ck.scalers;
                state = std::move(ck.state);
                sched = ck.schedule();
                std::cerr << "resuming at step " << state.step << "\n";
            }
            else
            {
                model = std::make_unique<DenoiserModel>(cfg, std::make_shared<const TetGrid>(ds.grid), ds.level, seed);
            }
            std::vector<Tensor> data;
            for (const auto & f : ds.fields) data.push_back(scalers.standardize(f));

            TrainOptions opt;
            opt.epochs = epochs;
            opt.batch = batch;
            opt.lr_start = lr_start;
            opt.lr_end = lr_end;
            opt.seed = seed;
            double epoch_loss = 0.0, lr = lr_start;
            std::size_t epoch_steps = 0;
            auto on_step = [&](const TrainRecord & r) {
                epoch_loss += r.loss;
                ++epoch_steps;
                lr = r.lr;
            };
            auto on_epoch = [&](std::size_t epoch) {
                const double mean = epoch_loss / static_cast<double>(std::max<std::size_t>(1, epoch_steps));
                std::cerr << json{{"epoch", epoch}, {"step", state.step}, {"loss", mean}, {"lr", lr}}.dump() << "\n";
                epoch_loss = 0.0;
                epoch_steps = 0;
                if (checkpoint_every > 0 && epoch % checkpoint_every == 0) save_checkpoint(out, *model, scalers, state, sched);
            };
            train(*model, data, sched, opt, state, on_step, on_epoch);
            save_checkpoint(out, *model, scalers, state, sched);

            const std::span<const double> losses(state.losses);
            const std::size_t w = loss_smoothing_window(losses.size());
            const double first = smoothed(losses, w, false), last = smoothed(losses, w, true);
            std::size_t nparams = 0;
            for (const auto & p : model->params().values()) nparams += p.size();
            write_run(run_file_for(out), {{"model", model->config()}, {"parameters", nparams}});
            print({{"out", out}, {"steps", state.step}, {"parameters", nparams}, {"smoothing_window", w},
                   {"initial_loss", first}, {"final_loss", last}});
        }
    };

    struct Sampler : Command
    {
        std::string ckpt, out, guide_spec, guide_steps, format = "ply";
        std::size_t count = 1;
        std::uint64_t seed = 0;
        std::vector<int> trajectory;

        void add_common(bool with_count)
        {
            app->add_option("--ckpt", ckpt, "checkpoint file");
            if (with_count)
            {
                app->add_option("--count", count)->capture_default_str();
                app->add_option("--seed", seed, "sample i uses seed + i")->capture_default_str();
                app->add_option("--save-trajectory", trajectory, "steps whose x0 estimate is exported, e.g. 1000,600,0")
                    ->delimiter(',');
            }
            app->add_option("--guide", guide_spec, "volume:+256 | volume:-256 | laplacian:<lambda>");
            app->add_option("--guide-steps", guide_steps, "step window a..b (volume default 1..T/5, laplacian 1..T)");
            app->add_option("--format", format, "ply | obj")->capture_default_str();
            app->add_option("--out", out, "output directory");
            add_config_option();
        }

        Guide make_guide(const Checkpoint & ck, const Schedule & sched) const
        {
            if (guide_spec.empty())
            {
                if (!guide_steps.empty()) throw ValidationError("--guide-steps given without --guide");
                return {};
            }
            const auto colon = guide_spec.find(':');
            const std::string kind = guide_spec.substr(0, colon);
            double strength = 0.0;
            try
            {
                std::size_t used = 0;
                const std::string num = colon == std::string::npos ? "" : guide_spec.substr(colon + 1);
                strength = std::stod(num, &used);
                if (used != num.size()) throw std::invalid_argument(num);
            }
            catch (const std::exception &)
            {
                throw ValidationError("--guide must look like kind:strength, got '" + guide_spec + "'");
            }
            Guide g;
            std::pair<int, int> window{1, sched.steps()};
            if (kind == "volume")
            {
                g = volume_guide(sched, ck.scalers, strength);
                window = volume_guide_steps(sched);
            }
            else if (kind == "laplacian")
            {
                g = laplacian_guide(sched, ck.scalers, ck.model->grid().level(ck.model->finest_level()), strength);
            }
            else
            {
                throw ValidationError("unknown guide kind '" + kind + "' (volume or laplacian)");
            }
            if (!guide_steps.empty())
            {
                const auto dots = guide_steps.find("..");
                try
                {
                    if (dots == std::string::npos) throw std::invalid_argument(guide_steps);
                    window = {std::stoi(guide_steps.substr(0, dots)), std::stoi(guide_steps.substr(dots + 2))};
                }
                catch (const std::exception &)
                {
                    throw ValidationError("--guide-steps must look like a..b, got '" + guide_steps + "'");
                }
                if (window.first < 1 || window.first > window.second || window.second > sched.steps())
                    throw ValidationError("--guide-steps must satisfy 1 <= a <= b <= T");
            }
            return restrict_steps(std::move(g), window.first, window.second);
        }

        /// Runs one chain and writes its mesh (and requested trajectory snapshots).
        json run_chain(const Checkpoint & ck, const Schedule & sched, const Guide & guide, const NoiseSource & noise,
                       const fs::path & mesh_path, const fs::path & trajectory_dir) const
        {
            const DenoiserModel & model = *ck.model;
            const GridLevel & level = model.grid().level(model.finest_level());
            const auto fmt = mesh_format_from_name(format);
            const std::set<int> keep(trajectory.begin(), trajectory.end());
            StepObserver observe;
            if (!keep.empty())
            {
                fs::create_directories(trajectory_dir);
                observe = [&](int t, const Tensor & x0) {
                    if (keep.count(t))
                        write_mesh(extract_mesh(level, ck.scalers.destandardize(x0)), trajectory_dir / ("step_" + std::to_string(t) + "." + format), fmt);
                };
            }
            const Tensor x = sample_chain(sched, as_eps_model(model), noise, guide, observe);
            const SurfaceMesh mesh = extract_mesh(level, ck.scalers.destandardize(x));
            write_mesh(mesh, mesh_path, fmt);
            json s = mesh_summary(mesh);
            s["file"] = mesh_path.filename().string();
            return s;
        }

        Checkpoint load(Schedule & sched) const
        {
            require_exists(ckpt, "checkpoint");
            Checkpoint ck = load_checkpoint(ckpt);
            sched = ck.schedule();
            mesh_format_from_name(format);
            for (int t : trajectory)
                if (t < 0 || t > sched.steps()) throw ValidationError("--save-trajectory steps must lie in [0, T]");
            return ck;
        }
    };

    struct Sample : Sampler
    {
        void setup(CLI::App & parent)
        {
            app = parent.add_subcommand("sample", "Draw shapes from a trained checkpoint");
            add_common(true);
        }

        void run()
        {
            load_config();
            require(!out.empty(), "--out");
            Schedule sched;
            const Checkpoint ck = load(sched);
            const Guide guide = make_guide(ck, sched);
            fs::create_directories(out);
            json samples = json::array();
            const std::size_t n = ck.model->num_vertices(), c = ck.model->config().channels;
            for (std::size_t i = 0; i < count; ++i)
            {
                const auto s = run_chain(ck, sched, guide, seeded_noise(seed + i, n, c), fs::path(out) / (numbered("sample", i) + "." + format),
                                         fs::path(out) / numbered("sample", i));
                samples.push_back(s);
                std::cerr << "sample " << i + 1 << "/" << count << " " << s.dump() << "\n";
            }
            write_run(fs::path(out) / "run.json", {{"samples", samples}});
            print({{"out", out}, {"samples", samples}});
        }
    };

    struct Interpolate : Sampler
    {
        std::uint64_t seed_a = 0, seed_b = 1;
        std::size_t steps = 5;

        void setup(CLI::App & parent)
        {
            app = parent.add_subcommand("interpolate", "Slerp between the noise of two seeds along the whole chain");
            app->add_option("--seed-a", seed_a)->capture_default_str();
            app->add_option("--seed-b", seed_b)->capture_default_str();
            app->add_option("--steps", steps, "frames, endpoints included")->capture_default_str();
            add_common(false);
        }

        void run()
        {
            load_config();
            require(!out.empty(), "--out");
            if (steps < 2) throw ValidationError("--steps must be at least 2");
            Schedule sched;
            const Checkpoint ck = load(sched);
            const Guide guide = make_guide(ck, sched);
            fs::create_directories(out);
            const std::size_t n = ck.model->num_vertices(), c = ck.model->config().channels;
            json frames = json::array();
            for (std::size_t j = 0; j < steps; ++j)
            {
                const double k = static_cast<double>(j) / static_cast<double>(steps - 1);
                const auto noise = slerp_noise(seeded_noise(seed_a, n, c), seeded_noise(seed_b, n, c), k);
                json s = run_chain(ck, sched, guide, noise, fs::path(out) / (numbered("interp", j) + "." + format), {});
                s["k"] = k;
                frames.push_back(s);
                std::cerr << "frame " << j + 1 << "/" << steps << "\n";
            }
            write_run(fs::path(out) / "run.json", {{"frames", frames}});
            print({{"out", out}, {"frames", frames}});
        }
    };

    struct Metrics : Command
    {
        std::string gen, ref, metric = "cd";
        std::size_t points = 128;
        std::uint64_t seed = 0;

        void setup(CLI::App & parent)
        {
            app = parent.add_subcommand("metrics", "1-NNA between generated and reference mesh sets");
            app->add_option("--gen", gen, "directory of generated meshes");
            app->add_option("--ref", ref, "directory of reference meshes");
            app->add_option("--metric", metric, "cd | emd")->capture_default_str();
            app->add_option("--points", points, "surface samples per mesh")->capture_default_str();
            app->add_option("--seed", seed, "mesh i of the pooled list samples with seed + i")->capture_default_str();
            add_config_option();
        }

        void run()
        {
            load_config();
            require_exists(gen, "--gen directory");
            require_exists(ref, "--ref directory");
            const CloudMetric m = cloud_metric_from_name(metric);
            if (points == 0) throw ValidationError("--points must be positive");
            if (m == CloudMetric::Emd && points > kEmdMaxPoints)
                throw ValidationError("--points above " + std::to_string(kEmdMaxPoints) + " is outside the exact EMD regime");
            std::uint64_t index = 0;
            auto clouds = [&](const std::string & dir) {
                std::vector<PointCloud> out;
                for (const auto & f : mesh_files({dir}))
                {
                    const SurfaceMesh mesh = read_mesh(f);
                    if (mesh.triangles.empty()) throw ValidationError("mesh '" + f.string() + "' is empty");
                    out.push_back(sample_mesh_points(mesh, points, seed + index++));
                }
                return out;
            };
            const auto g = clouds(gen);
            const auto r = clouds(ref);
            const double acc = one_nna(g, r, m);
            print({{"metric", metric}, {"one_nna_percent", acc}, {"n_gen", g.size()}, {"n_ref", r.size()}});
        }
    };

    struct Export : Command
    {
        std::string dataset, shape, mesh, out, format;

        void setup(CLI::App & parent)
        {
            app = parent.add_subcommand("export", "Extract a dataset shape to a mesh, or convert a mesh between formats");
            app->add_option("--dataset", dataset, "dataset directory");
            app->add_option("--shape", shape, "shape name in the dataset (default: first)");
            app->add_option("--mesh", mesh, "mesh file to convert");
            app->add_option("--format", format, "ply | obj (default: from --out extension)");
            app->add_option("--out", out, "output mesh file");
            add_config_option();
        }

        void run()
        {
            load_config();
            require(!out.empty(), "--out");
            if (dataset.empty() == mesh.empty()) throw UsageError("give exactly one of --dataset or --mesh");
            const MeshFormat fmt = format.empty() ? mesh_format_of(out) : mesh_format_from_name(format);
            SurfaceMesh m;
            if (!mesh.empty())
            {
                require_exists(mesh, "mesh");
                m = read_mesh(mesh);
            }
            else
            {
                require_exists(fs::path(dataset) / "manifest.json", "dataset manifest");
                const Dataset ds = load_dataset(dataset);
                if (ds.size() == 0) throw ValidationError("dataset holds no shapes");
                std::size_t i = 0;
                if (!shape.empty())
                {
                    const auto it = std::find(ds.names.begin(), ds.names.end(), shape);
                    if (it == ds.names.end()) throw ValidationError("dataset has no shape '" + shape + "'");
                    i = static_cast<std::size_t>(it - ds.names.begin());
                }
                m = extract_mesh(ds.grid.level(ds.level), ds.fields[i]);
            }
            if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
            write_mesh(m, out, fmt);
            write_run(run_file_for(out));
            json s = mesh_summary(m);
            s["out"] = out;
            print(s);
        }
    };

    void emit_error(int code, const char * kind, const std::string & message)
    {
        std::cerr << json{{"error", {{"code", code}, {"kind", kind}, {"message", message}}}}.dump() << std::endl;
    }
} // namespace

int main(int argc, char ** argv)
{
    CLI::App app{"tetradiff: denoising diffusion on tetrahedral grids"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_version_flag("--version", kVersion);
    std::size_t threads = 0;
    app.add_option("--threads", threads, "worker threads; 1 forces single-threaded mode (default: all cores)");

    CLI::App * grid = app.add_subcommand("grid", "Tetrahedral grid utilities");
    grid->require_subcommand(1);
    GridBuild grid_build;
    GridInfo grid_info;
    grid_build.setup(*grid);
    grid_info.setup(*grid);
    Shapes shapes;
    Bake bake_cmd;
    Train train_cmd;
    Sample sample_cmd;
    Interpolate interp_cmd;
    Metrics metrics_cmd;
    Export export_cmd;
    shapes.setup(app);
    bake_cmd.setup(app);
    train_cmd.setup(app);
    sample_cmd.setup(app);
    interp_cmd.setup(app);
    metrics_cmd.setup(app);
    export_cmd.setup(app);

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError & e)
    {
        if (e.get_exit_code() == 0) return app.exit(e);
        emit_error(1, "usage", e.what());
        return 1;
    }

    try
    {
        if (threads > 0) set_thread_count(threads);
        if (grid_build.app->parsed()) grid_build.run();
        else if (grid_info.app->parsed()) grid_info.run();
        else if (shapes.app->parsed()) shapes.run();
        else if (bake_cmd.app->parsed()) bake_cmd.run();
        else if (train_cmd.app->parsed()) train_cmd.run();
        else if (sample_cmd.app->parsed()) sample_cmd.run();
        else if (interp_cmd.app->parsed()) interp_cmd.run();
        else if (metrics_cmd.app->parsed()) metrics_cmd.run();
        else if (export_cmd.app->parsed()) export_cmd.run();
    }
    catch (const UsageError & e)
    {
        emit_error(1, "usage", e.what());
        return 1;
    }
    catch (const ValidationError & e)
    {
        emit_error(2, "validation", e.what());
        return 2;
    }
    catch (const ShapeError & e)
    {
        emit_error(2, "validation", e.what());
        return 2;
    }
    catch (const std::exception & e)
    {
        emit_error(3, "runtime", e.what());
        return 3;
    }
    return 0;
}
