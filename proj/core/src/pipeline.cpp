#include "cshape/pipeline.hpp"

#include <atomic>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

namespace cshape {

namespace fs = std::filesystem;

namespace {

nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    return nlohmann::json::parse(in);
}

void write_json(const nlohmann::json& j, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

std::string env_name(const ExperimentConfig& cfg) {
    return cfg.env_kind == EnvKind::tabular ? "tabular" : "point-mass";
}

}  // namespace

void ExperimentConfig::validate() const {
    if (seeds.empty()) throw ConfigError("experiment: seeds must be nonempty");
    if (collection.n_steps == 0 || collection.horizon <= 0) throw ConfigError("experiment: bad collection block");
    if (collection.skills.empty()) throw ConfigError("experiment: collection.skills must be nonempty");
    if (solver.dirichlet_alpha < 0.0 || solver.tol <= 0.0 || solver.max_iter <= 0)
        throw ConfigError("experiment: bad solver block");
    if (env_kind == EnvKind::tabular) {
        tabular.validate();
    } else {
        point_mass.validate();
        if (mask.full_dim != 4) throw ConfigError("experiment: point-mass masks have full_dim 4");
    }
    potential.validate();
    shaping.validate();
    sac.validate();
    qlearning.validate();
    diagnostics.validate();
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
    try {
        ExperimentConfig c;
        const auto env = j.value("env", nlohmann::json::object());
        const std::string kind = env.value("kind", std::string("tabular"));
        if (kind == "tabular") {
            c.env_kind = EnvKind::tabular;
            c.tabular = random_cmdp_config_from_json(env);
            c.mask = MaskSpec({}, 1);
        } else if (kind == "point-mass") {
            c.env_kind = EnvKind::point_mass;
            c.point_mass = point_mass_config_from_json(env);
            c.mask = c.point_mass.mask;
        } else {
            throw ConfigError("experiment: unknown env kind '" + kind + "'");
        }
        if (j.contains("mask")) {
            c.mask = MaskSpec(j.at("mask").at("hidden").get<std::vector<int>>(), c.mask.full_dim);
            c.point_mass.mask = c.mask;
        }
        if (j.contains("collection")) {
            const auto& b = j.at("collection");
            c.collection.n_steps = b.value("n_steps", c.collection.n_steps);
            c.collection.horizon = b.value("horizon", c.collection.horizon);
            c.collection.seed = b.value("seed", c.collection.seed);
            if (b.contains("skills")) {
                c.collection.skills.clear();
                for (const auto& s : b.at("skills")) c.collection.skills.push_back(skill_from_string(s.get<std::string>()));
            }
        }
        if (j.contains("solver")) {
            const auto& b = j.at("solver");
            c.solver.dirichlet_alpha = b.value("dirichlet_alpha", c.solver.dirichlet_alpha);
            c.solver.tol = b.value("tol", c.solver.tol);
            c.solver.max_iter = b.value("max_iter", c.solver.max_iter);
        }
        if (j.contains("potential")) c.potential = potential_config_from_json(j.at("potential"));
        if (j.contains("shaping")) c.shaping = shaping_config_from_json(j.at("shaping"));
        if (j.contains("agent")) c.sac = sac_config_from_json(j.at("agent"));
        if (j.contains("qlearning")) {
            const auto& b = j.at("qlearning");
            c.qlearning.steps = b.value("steps", c.qlearning.steps);
            c.qlearning.lr = b.value("lr", c.qlearning.lr);
            c.qlearning.eps_start = b.value("eps_start", c.qlearning.eps_start);
            c.qlearning.eps_end = b.value("eps_end", c.qlearning.eps_end);
            c.qlearning.eps_decay_steps = b.value("eps_decay_steps", c.qlearning.eps_decay_steps);
            c.qlearning.horizon = b.value("horizon", c.qlearning.horizon);
            c.qlearning.check_interval = b.value("check_interval", c.qlearning.check_interval);
        }
        if (j.contains("diagnostics")) {
            c.diagnostics = ci_config_from_json(j.at("diagnostics"));
            if (j.at("diagnostics").contains("hidden_dim"))
                c.audit_hidden_dim = j.at("diagnostics").at("hidden_dim").get<int>();
        }
        if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
        c.validate();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("experiment: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("experiment: ") + e.what());
    }
}

ExperimentConfig load_experiment_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    return experiment_config_from_json(j);
}

StageError::StageError(std::string stage, std::optional<std::uint64_t> seed, const std::string& what)
    : std::runtime_error("stage " + stage + (seed ? " (seed " + std::to_string(*seed) + ")" : std::string{}) +
                         " failed: " + what),
      stage_(std::move(stage)),
      seed_(seed) {}

fs::path curve_path(const fs::path& out, const std::string& method, std::uint64_t seed) {
    return out / "runs" / method / ("seed_" + std::to_string(seed)) / "curve.csv";
}

// ---------------------------------------------------------------------------

void stage_gen_env(const ExperimentConfig& cfg, const fs::path& out) {
    fs::create_directories(out);
    if (cfg.env_kind == EnvKind::tabular)
        write_json(to_json(gen_random_tabular(cfg.tabular)), out / "env.json");
    else
        write_json(to_json(cfg.point_mass), out / "env.json");
}

void stage_collect(const ExperimentConfig& cfg, const fs::path& out) {
    Rng rng(cfg.collection.seed);
    if (cfg.env_kind == EnvKind::tabular) {
        const TabularCMDP cmdp = cmdp_from_json(read_json(out / "env.json"));
        TrajectoryDataset ds = collect_tabular(cmdp, cfg.collection.n_steps, cfg.collection.horizon, rng);
        ds.seed = cfg.collection.seed;
        save(ds, out / "dataset.txt");
        return;
    }
    const PointMassConfig pm = point_mass_config_from_json(read_json(out / "env.json"));
    std::vector<TrajectoryDataset> parts;
    const std::size_t per_skill = cfg.collection.n_steps / cfg.collection.skills.size();
    std::string tag;
    for (Skill skill : cfg.collection.skills) {
        PointMassEnv env(pm);
        parts.push_back(collect(env, scripted_behavior(pm, skill), cfg.mask, per_skill, rng));
        tag += (tag.empty() ? "" : "+") + to_string(skill);
    }
    TrajectoryDataset ds = parts.size() == 1 ? parts.front() : merge_datasets(parts, tag);
    ds.skill_tag = tag;
    ds.seed = cfg.collection.seed;
    save(ds, out / "dataset.txt");
}

bool stage_solve(const ExperimentConfig& cfg, const fs::path& out) {
    if (cfg.env_kind != EnvKind::tabular) throw std::invalid_argument("solve: tabular environments only");
    const TabularCMDP cmdp = cmdp_from_json(read_json(out / "env.json"));
    const TrajectoryDataset ds = load(out / "dataset.txt");
    const TabularModel model =
        estimate_tabular(ds, cfg.solver.dirichlet_alpha, cmdp.n_states(), cmdp.n_actions()).model();
    SolveOptions opts;
    opts.tol = cfg.solver.tol;
    opts.max_iter = cfg.solver.max_iter;
    const SolveResult res = causal_value_iteration(model, cmdp.reward_bound(), cmdp.gamma(), opts);
    write_json({{"values", res.values}, {"report", to_json(res.report)}}, out / "potential_table.json");
    return res.report.converged;
}

void stage_train_potential(const ExperimentConfig& cfg, const fs::path& out) {
    if (cfg.env_kind != EnvKind::point_mass) throw std::invalid_argument("train-potential: point-mass only");
    const TrajectoryDataset ds = load(out / "dataset.txt");
    PotentialTrainConfig pcfg = cfg.potential;
    if (!pcfg.reward_bound) pcfg.reward_bound = PointMassEnv(cfg.point_mass).reward_bound();
    Rng rng(pcfg.seed);
    const EnvModels models = train_env_models(ds, pcfg, rng);
    const TrainedPotential trained = train_potential(ds, models, pcfg, rng);
    save_potential(trained.net, out / "potential.ckpt");
    write_json(to_json(trained.report), out / "potential_report.json");
}

namespace {

std::vector<CurvePoint> q_curve(const QLearningResult& r) {
    std::vector<CurvePoint> c;
    for (const auto& p : r.curve) c.push_back({p.step, p.greedy_return, 0.0, 0});
    return c;
}

}  // namespace

void stage_train_agent(const ExperimentConfig& cfg, const fs::path& out, std::uint64_t seed, const std::string& method) {
    if (method != kBaselineMethod && method != kShapedMethod)
        throw std::invalid_argument("train-agent: unknown method '" + method + "'");
    const fs::path curve_file = curve_path(out, method, seed);
    fs::create_directories(curve_file.parent_path());
    std::optional<ShapingConfig> shaping;

    if (cfg.env_kind == EnvKind::tabular) {
        const TabularCMDP cmdp = cmdp_from_json(read_json(out / "env.json"));
        if (method == kShapedMethod) {
            shaping = cfg.shaping;
            shaping->potential = table_potential(read_json(out / "potential_table.json").at("values").get<ValueTable>());
        }
        const SolveResult oracle = oracle_interventional_vi(cmdp);
        const TabularPolicy reference =
            greedy_policy(oracle.values, exact_interventional_model(cmdp), cmdp.gamma());
        Rng rng(seed);
        const QLearningResult r = q_learning_tabular(cmdp, shaping, cfg.qlearning, rng, reference);
        write_curve_csv(q_curve(r), curve_file);
        write_json({{"q", r.q},
                    {"steps_to_reference", r.steps_to_reference ? nlohmann::json(*r.steps_to_reference) : nlohmann::json()}},
                   curve_file.parent_path() / "q.json");
        return;
    }

    const PointMassConfig pm = point_mass_config_from_json(read_json(out / "env.json"));
    const PointMassEnv env(pm);
    if (method == kShapedMethod) {
        shaping = cfg.shaping;
        const auto pot = std::make_shared<PotentialNet>(load_potential(out / "potential.ckpt"));
        shaping->potential = [pot](std::span<const double> s) { return pot->eval_original(s); };
        shaping->potential_source = (out / "potential.ckpt").string();
    }
    SACConfig scfg = cfg.sac;
    scfg.seed = seed;
    const SacResult r = sac_train(env, cfg.mask, shaping, scfg);
    write_curve_csv(r.curve, curve_file);
    save_policy(r.policy, curve_file.parent_path() / "policy.ckpt");
}

void stage_diagnose(const ExperimentConfig& cfg, const fs::path& out, const std::optional<std::vector<int>>& dims) {
    TrajectoryDataset ds = load(out / "dataset.txt");
    int hidden;
    if (cfg.env_kind == EnvKind::tabular) {
        const TabularCMDP cmdp = cmdp_from_json(read_json(out / "env.json"));
        ds = one_hot_embed(ds, cmdp.n_states(), cmdp.n_actions());
        hidden = cfg.audit_hidden_dim.value_or(cmdp.n_states());  // the noise column
    } else {
        if (cfg.mask.hidden_dims.empty() && !cfg.audit_hidden_dim)
            throw std::invalid_argument("diagnose: no hidden dimension to audit");
        hidden = cfg.audit_hidden_dim.value_or(cfg.mask.hidden_dims.front());
    }
    Rng rng(cfg.diagnostics.seed);
    const auto [noisy, noise_col] = with_noise_channel(ds, rng);
    const AuditResult audit = confounding_audit(ds, hidden, cfg.diagnostics);
    const AuditResult control = confounding_audit(noisy, noise_col, cfg.diagnostics);
    write_json({{"hidden_dim", hidden}, {"audit", to_json(audit)}, {"noise_control", to_json(control)}},
               out / "audit.json");

    std::vector<int> use;
    if (dims) {
        use = *dims;
    } else {
        const int d = static_cast<int>(ds.transitions.front().obs.size());
        for (int i = 0; i < d; ++i) use.push_back(i);
    }
    // Dimensions that never vary (e.g. unvisited one-hot states) cannot be tested.
    std::vector<int> testable;
    for (int dim : use) {
        double lo = INFINITY, hi = -INFINITY;
        for (const auto& t : ds.transitions) {
            lo = std::min(lo, t.obs.at(static_cast<std::size_t>(dim)));
            hi = std::max(hi, t.obs.at(static_cast<std::size_t>(dim)));
        }
        if (hi > lo) testable.push_back(dim);
    }
    const auto rows = dependence_report(ds, testable, cfg.diagnostics);
    std::ofstream csv(out / "dependence.csv");
    if (!csv) throw std::runtime_error("cannot write dependence.csv");
    csv.precision(17);
    csv << "dim,statistic,p_value,rejected\n";
    for (const auto& r : rows) csv << r.dim << ',' << r.statistic << ',' << r.p_value << ',' << (r.rejected ? 1 : 0) << '\n';
}

void stage_report(const ExperimentConfig& cfg, const fs::path& out) {
    std::vector<RunSummary> runs;
    std::vector<ChartSeries> series;
    for (const std::string& method : {kBaselineMethod, kShapedMethod}) {
        std::vector<std::vector<double>> curves;
        std::vector<double> steps;
        for (std::uint64_t seed : cfg.seeds) {
            const auto curve = read_curve_csv(curve_path(out, method, seed));
            runs.push_back(summarize_run(curve, method, env_name(cfg), seed));
            std::vector<double> y;
            for (const auto& p : curve) y.push_back(p.eval_mean);
            curves.push_back(smooth(y));
            if (steps.empty())
                for (const auto& p : curve) steps.push_back(p.step);
        }
        ChartSeries s{method, steps, std::vector<double>(steps.size(), 0.0)};
        for (const auto& c : curves)
            for (std::size_t i = 0; i < s.y.size() && i < c.size(); ++i) s.y[i] += c[i] / static_cast<double>(curves.size());
        series.push_back(std::move(s));
    }
    const auto rows = aggregate(runs, kBaselineMethod);
    write_runs_csv(runs, out / "runs.csv");
    write_aggregate_csv(rows, out / "aggregate.csv");
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : rows) {
        std::vector<double> best;
        for (const auto& run : runs)
            if (run.method == r.method) best.push_back(run.best_return);
        j.push_back({{"method", r.method},
                     {"env_score", r.env_score},
                     {"normalized", r.normalized},
                     {"normalized_mean", r.stats.mean},
                     {"normalized_median", r.stats.median},
                     {"normalized_iqm", r.stats.iqm},
                     {"best_return_iqm", iqm(best)}});
    }
    write_json(j, out / "report.json");
    write_line_chart_svg(series, env_name(cfg) + ": smoothed evaluation return", out / "curves.svg");
}

// ---------------------------------------------------------------------------

namespace {

fs::path marker(const fs::path& out, const std::string& name) { return out / ".stages" / (name + ".done"); }

void mark(const fs::path& out, const std::string& name) {
    fs::create_directories(out / ".stages");
    std::ofstream(marker(out, name)) << "ok\n";
}

}  // namespace

PipelineResult run_pipeline(const ExperimentConfig& cfg, int threads, std::ostream* log) {
    cfg.validate();
    const fs::path out = cfg.output_dir;
    fs::create_directories(out);
    PipelineResult result;
    std::mutex log_mutex;
    auto say = [&](const std::string& msg) {
        if (!log) return;
        std::lock_guard lock(log_mutex);
        *log << msg << '\n';
    };
    auto run_stage = [&](const std::string& name, std::optional<std::uint64_t> seed, const std::function<void()>& fn) {
        if (fs::exists(marker(out, name))) {
            say("skip " + name);
            return false;
        }
        say("run  " + name);
        try {
            fn();
        } catch (const StageError&) {
            throw;
        } catch (const std::exception& e) {
            throw StageError(name, seed, e.what());
        }
        mark(out, name);
        return true;
    };

    if (run_stage("gen-env", std::nullopt, [&] { stage_gen_env(cfg, out); })) result.executed.push_back("gen-env");
    if (run_stage("collect", std::nullopt, [&] { stage_collect(cfg, out); })) result.executed.push_back("collect");
    if (cfg.env_kind == EnvKind::tabular) {
        // An unconverged solve still writes its table; the marker records the outcome.
        if (!fs::exists(marker(out, "solve"))) {
            say("run  solve");
            bool converged = true;
            try {
                converged = stage_solve(cfg, out);
            } catch (const std::exception& e) {
                throw StageError("solve", std::nullopt, e.what());
            }
            fs::create_directories(out / ".stages");
            std::ofstream(marker(out, "solve")) << (converged ? "ok\n" : "unconverged\n");
            result.executed.push_back("solve");
        } else {
            say("skip solve");
        }
        std::ifstream m(marker(out, "solve"));
        std::string status;
        m >> status;
        result.solver_converged = status == "ok";
    } else if (run_stage("train-potential", std::nullopt, [&] { stage_train_potential(cfg, out); })) {
        result.executed.push_back("train-potential");
    }

    struct Job {
        std::string method;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (std::uint64_t seed : cfg.seeds)
        for (const std::string& method : {kBaselineMethod, kShapedMethod}) jobs.push_back({method, seed});
    std::atomic<std::size_t> next{0};
    std::mutex err_mutex;
    std::exception_ptr first_error;
    std::vector<std::string> executed_jobs(jobs.size());
    auto worker = [&] {
        for (std::size_t i; (i = next++) < jobs.size();) {
            const Job& job = jobs[i];
            const std::string name = "train-agent-" + job.method + "-" + std::to_string(job.seed);
            try {
                if (run_stage(name, job.seed, [&] { stage_train_agent(cfg, out, job.seed, job.method); }))
                    executed_jobs[i] = name;
            } catch (...) {
                std::lock_guard lock(err_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        }
    };
    {
        std::vector<std::jthread> pool;
        const int n = std::max(1, std::min<int>(threads, static_cast<int>(jobs.size())));
        for (int t = 0; t < n; ++t) pool.emplace_back(worker);
    }
    if (first_error) std::rethrow_exception(first_error);
    for (auto& name : executed_jobs)
        if (!name.empty()) result.executed.push_back(name);

    if (run_stage("diagnose", std::nullopt, [&] { stage_diagnose(cfg, out); })) result.executed.push_back("diagnose");
    if (run_stage("report", std::nullopt, [&] { stage_report(cfg, out); })) result.executed.push_back("report");
    return result;
}

}  // namespace cshape
