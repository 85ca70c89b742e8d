#pragma once

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "thinkgen/recipe.hpp"

namespace thinkgen {

inline RunConfig load_config_file(const std::string& path) {
    if (path.empty()) return default_run_config();
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config " + path);
    json j;
    is >> j;
    return run_config_from_json(j);
}

inline Models load_models_checkpoint(const RunConfig& cfg, const fs::path& ckpt) {
    Models m;
    m.vocab = Vocab::micro_world(cfg.knowledge_keys);
    m.kt = KnowledgeTable::make(cfg.knowledge_keys, cfg.knowledge_train);
    if (!fs::exists(ckpt / "planner" / "manifest.json"))
        throw ContractError("missing predecessor checkpoint at " + ckpt.string());
    m.planner = load_planner(ckpt / "planner", m.vocab);
    m.generator = load_generator(ckpt / "generator");
    m.bridge = load_bridge(ckpt / "bridge");
    return m;
}

namespace cli_detail {

inline int cmd_gen_data(const std::string& scenario, const std::string& split, int count, uint64_t seed,
                        const std::string& out) {
    Vocab v = Vocab::micro_world();
    KnowledgeTable kt = KnowledgeTable::make();
    const Scenario sc = scenario_from_name(scenario);
    const Split sp = split == "train" ? Split::Train : Split::HeldOut;
    std::ofstream os(out, std::ios::trunc);
    if (!os) throw IoError("cannot open " + out);
    for (int i = 0; i < count; ++i) {
        TaskRecord task = make_task(v, kt, sc, sp, seed + static_cast<uint64_t>(i));
        os << to_json(task, v).dump() << "\n";
    }
    std::cout << "wrote " << count << " " << scenario << "/" << split << " tasks to " << out << "\n";
    return 0;
}

inline int cmd_train(const std::string& config_path, uint64_t seed, bool seed_set, const std::string& out,
                     int through_stage) {
    RunConfig cfg = load_config_file(config_path);
    if (seed_set) cfg.seed = seed;
    if (through_stage < 1 || through_stage > 3) throw ContractError("train covers stages 1..3");
    cfg.stages.resize(static_cast<size_t>(through_stage));
    RecipeReport report = run_recipe(cfg, out);
    std::cout << "recipe finished; report at " << (report.out_dir / "report.json").string() << "\n";
    for (const auto& e : report.ledger)
        std::cout << "  " << e.stage << " freeze-ledger " << (e.ok ? "ok" : "VIOLATION") << "\n";
    return 0;
}

inline int cmd_grpo(const std::string& config_path, uint64_t seed, bool seed_set, const std::string& out,
                    const std::string& stage, int steps, const std::string& ckpt_in, bool allow_fresh) {
    RunConfig cfg = load_config_file(config_path);
    if (seed_set) cfg.seed = seed;
    const bool mllm = stage == "mllm" || stage == "4";
    const bool dit = stage == "dit" || stage == "5";
    if (!mllm && !dit) throw ContractError("grpo stage must be one of mllm|dit|4|5");

    fs::path ckpt = ckpt_in.empty() ? fs::path(out) / "checkpoints" / (mllm ? "stage3" : "stage4") : fs::path(ckpt_in);
    Models m;
    if (fs::exists(ckpt / "planner" / "manifest.json")) {
        m = load_models_checkpoint(cfg, ckpt);
    } else if (allow_fresh) {
        m = init_models(cfg);
    } else {
        throw ContractError("missing predecessor checkpoint at " + ckpt.string() + " (use --allow-fresh to start over)");
    }

    GrpoConfig gp = cfg.grpo;
    const int stage_no = mllm ? 4 : 5;
    const int budget = steps > 0 ? steps : cfg.stages.size() >= static_cast<size_t>(stage_no)
                                               ? cfg.stages[static_cast<size_t>(stage_no - 1)].steps
                                               : 300;
    fs::create_directories(fs::path(out) / "metrics");
    fs::create_directories(fs::path(out) / "checkpoints");
    MetricsWriter mw((fs::path(out) / "metrics" / ("stage" + std::to_string(stage_no) + ".jsonl")).string());
    AlternateStage alt = mllm ? AlternateStage::mllm(budget) : AlternateStage::dit(budget);
    alternate(m.planner, m.generator, m.bridge, m.vocab, m.kt, {alt}, gp, cfg.seed,
              default_reward_hook(gp.strict_rewards), [&](const StepMetrics& met) { mw.write(to_json(met)); },
              /*seed_namespace_base=*/stage_no);
    mw.flush();
    const fs::path stage_dir = fs::path(out) / "checkpoints" / ("stage" + std::to_string(stage_no));
    save_planner(stage_dir / "planner", m.planner, m.vocab);
    save_generator(stage_dir / "generator", m.generator);
    save_bridge(stage_dir / "bridge", m.bridge);
    std::cout << "ran " << budget << " " << (mllm ? "mllm" : "dit") << "-grpo steps; metrics in " << out << "\n";
    return 0;
}

inline int cmd_eval(const std::string& config_path, uint64_t seed, bool seed_set, const std::string& ckpt,
                    const std::string& scenario, const std::string& think, const std::string& out) {
    RunConfig cfg = load_config_file(config_path);
    if (seed_set) cfg.seed = seed;
    Models m = load_models_checkpoint(cfg, ckpt);
    json results;
    std::vector<std::string> scenarios;
    if (scenario == "all")
        scenarios = {"composition", "reasoning", "text", "edit", "reflection"};
    else
        scenarios = {scenario};
    for (const std::string& sc_name : scenarios) {
        const Scenario sc = scenario_from_name(sc_name);
        const bool with_think = think != "off";
        EvalSuite suite = make_eval_suite(m.vocab, m.kt, sc, cfg.eval_tasks, with_think);
        EvalResult res = evaluate(m.planner, m.generator, m.bridge, m.vocab, m.kt, suite, cfg.grpo, cfg.seed);
        json r;
        r["mean_score"] = res.mean_score;
        r["sub"] = res.sub_means;
        r["tasks"] = suite.tasks.size();
        r["malformed"] = res.malformed;
        r["think"] = with_think ? "on" : "off";
        results[sc_name] = r;
        std::cout << sc_name << " think=" << (with_think ? "on" : "off") << " mean=" << res.mean_score << "\n";
    }
    if (!out.empty()) {
        std::ofstream os(out, std::ios::trunc);
        os << results.dump(2) << "\n";
    }
    return 0;
}

inline int cmd_score(const std::string& tasks_path, const std::string& grids_dir, const std::string& out,
                     bool strict) {
    Vocab v = Vocab::micro_world();
    std::ofstream os(out, std::ios::trunc);
    if (!os) throw IoError("cannot open " + out);
    int n = 0;
    for (const json& j : read_jsonl(tasks_path)) {
        TaskRecord task = task_from_json(j, v);
        RolloutArtifacts art;
        art.vocab = &v;
        Array grid;
        TokenSeq response;
        if (task.needs_image()) {
            grid = load_array((fs::path(grids_dir) / (std::to_string(task.uid) + ".tgar")).string());
            art.grid = &grid;
        } else {
            if (!j.contains("response")) throw ContractError("reflection task without a response field");
            response.ids = {v.think_open, v.think_close};
            for (int tok : encode_sentence(v, j.at("response").get<std::string>())) response.ids.push_back(tok);
            response.prompt_len = 2;
            response.locate_think_markers(v);
            art.rollout = &response;
        }
        RewardRecord rec = route_reward(task, art, strict);
        json line = to_json(rec);
        line["uid"] = task.uid;
        os << line.dump() << "\n";
        ++n;
    }
    std::cout << "scored " << n << " tasks into " << out << "\n";
    return 0;
}

inline int cmd_plot(const std::string& metrics_path, const std::string& out_dir) {
    std::vector<double> rewards, cots;
    for (const json& j : read_jsonl(metrics_path)) {
        rewards.push_back(j.value("mean_reward", 0.0));
        cots.push_back(j.value("mean_cot_len", 0.0));
    }
    fs::create_directories(out_dir);
    write_line_plot((fs::path(out_dir) / "reward_vs_step.png").string(), rewards, "mean reward");
    write_line_plot((fs::path(out_dir) / "cot_len_vs_step.png").string(), cots, "mean cot length");
    std::cout << "plots for " << rewards.size() << " steps written to " << out_dir << "\n";
    return 0;
}

inline int cmd_inspect(const std::string& config_path, uint64_t seed, bool seed_set, const std::string& ckpt,
                       const std::string& scenario, const std::string& out_dir) {
    RunConfig cfg = load_config_file(config_path);
    if (seed_set) cfg.seed = seed;
    Models m = load_models_checkpoint(cfg, ckpt);
    const Scenario sc = scenario_from_name(scenario);
    TaskRecord task = make_task(m.vocab, m.kt, sc, Split::HeldOut, kEvalSeedBase + cfg.seed);
    fs::create_directories(out_dir);

    TokenSeq prompt = build_prompt(m.vocab, PromptMode::RlColdStart, task.content);
    TokenSeq roll = sample_rollout(m.planner, prompt, cfg.grpo.temperature, cfg.grpo.max_new,
                                   RngStream(cfg.seed, hash_str("inspect")), m.vocab);
    json dump;
    dump["task"] = to_json(task, m.vocab);
    dump["prompt"] = m.vocab.decode(prompt.ids);
    dump["rollout"] = m.vocab.decode(roll.ids);
    dump["malformed"] = roll.malformed;
    if (!roll.malformed) {
        std::vector<int> think_body(roll.ids.begin() + roll.think_open + 1, roll.ids.begin() + roll.think_close);
        dump["think"] = m.vocab.decode(think_body);
        dump["instruction"] = m.vocab.decode(roll.post_think_tokens());
        ConditionPack pack = make_condition(m.planner, m.bridge, roll);
        dump["condition_rows"] = pack.rows();
        dump["condition_width"] = pack.refined.cols();
        save_condition(fs::path(out_dir) / "condition", pack);
        auto [img, traj] = ode_sample(m.generator, &pack.refined, task_refs(task), cfg.grpo.eval_steps,
                                      cfg.grpo.cfg_scale, cfg.grpo.cfg_cutoff, cfg.seed, hash_str("inspect-noise"),
                                      pack.K);
        write_grid_png((fs::path(out_dir) / "generated.png").string(), img.latent);
        save_array((fs::path(out_dir) / "generated.tgar").string(), img.latent);
        RolloutArtifacts art;
        art.grid = &img.latent;
        art.rollout = &roll;
        art.vocab = &m.vocab;
        dump["reward"] = to_json(route_reward(task, art));
        (void)traj;
    }
    write_grid_png((fs::path(out_dir) / "target.png").string(), render(task.target_scene));
    std::ofstream os(fs::path(out_dir) / "rollout.json", std::ios::trunc);
    os << dump.dump(2) << "\n";
    std::cout << "inspection bundle in " << out_dir << "\n";
    return 0;
}

} // namespace cli_detail

// Entry point shared by the binary and in-process tests.
inline int cli_main(const std::vector<std::string>& args) {
    CLI::App app{"thinkgen: think-conditioned grid generation testbed (THINKGEN_LAB_THREADS caps workers)"};
    app.require_subcommand(1);

    std::string config_path, out = "runs/out", scenario = "composition", split = "train", think = "on";
    std::string tasks_path, grids_dir, metrics_path, ckpt;
    uint64_t seed = 7;
    bool seed_set = false, strict = false, allow_fresh = false;
    int count = 100, steps = -1, stage13 = 3;
    std::string grpo_stage = "mllm";

    auto add_seed = [&](CLI::App* cmd) {
        cmd->add_option("--seed", seed, "run seed")->each([&](const std::string&) { seed_set = true; });
    };

    CLI::App* gen = app.add_subcommand("gen-data", "emit task records as JSONL");
    gen->add_option("--scenario", scenario, "composition|reasoning|text|edit|reflection");
    gen->add_option("--split", split, "train|held-out");
    gen->add_option("--count", count, "number of tasks");
    add_seed(gen);
    gen->add_option("--out", out, "output JSONL path")->required();

    CLI::App* train = app.add_subcommand("train", "supervised stages 1-3 (plus planner base init)");
    train->add_option("--config", config_path, "run config JSON");
    add_seed(train);
    train->add_option("--out", out, "run directory")->required();
    train->add_option("--stage", stage13, "train through this stage (1..3)");

    CLI::App* grpo = app.add_subcommand("grpo", "RL stages 4-5");
    grpo->add_option("--config", config_path, "run config JSON");
    add_seed(grpo);
    grpo->add_option("--out", out, "run directory")->required();
    grpo->add_option("--stage", grpo_stage, "mllm|dit|4|5");
    grpo->add_option("--steps", steps, "step budget override");
    grpo->add_option("--ckpt", ckpt, "checkpoint directory to start from");
    grpo->add_flag("--allow-fresh", allow_fresh, "start from fresh models when no checkpoint exists");

    CLI::App* ev = app.add_subcommand("eval", "held-out evaluation suites");
    ev->add_option("--config", config_path, "run config JSON");
    add_seed(ev);
    ev->add_option("--ckpt", ckpt, "checkpoint directory")->required();
    ev->add_option("--scenario", scenario, "scenario name or 'all'");
    ev->add_option("--think", think, "on|off");
    ev->add_option("--out", out, "results JSON path");

    CLI::App* score = app.add_subcommand("score", "batch reward scoring from task JSONL and grid blobs");
    score->add_option("--tasks", tasks_path, "task JSONL")->required();
    score->add_option("--grids", grids_dir, "directory of <uid>.tgar grids");
    score->add_option("--out", out, "RewardRecord JSONL path")->required();
    score->add_flag("--strict", strict, "all-or-nothing composition scoring");

    CLI::App* plot = app.add_subcommand("plot", "reward and cot-length curves from metrics JSONL");
    plot->add_option("--metrics", metrics_path, "metrics JSONL")->required();
    plot->add_option("--out", out, "output directory")->required();

    CLI::App* inspect = app.add_subcommand("inspect", "dump one rollout end to end");
    inspect->add_option("--config", config_path, "run config JSON");
    add_seed(inspect);
    inspect->add_option("--ckpt", ckpt, "checkpoint directory")->required();
    inspect->add_option("--scenario", scenario, "scenario name");
    inspect->add_option("--out", out, "output directory")->required();

    std::string joined;
    for (const auto& a : args) {
        joined += a;
        joined += ' ';
    }
    try {
        app.parse(joined, false);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (gen->parsed()) return cli_detail::cmd_gen_data(scenario, split, count, seed, out);
        if (train->parsed()) return cli_detail::cmd_train(config_path, seed, seed_set, out, stage13);
        if (grpo->parsed())
            return cli_detail::cmd_grpo(config_path, seed, seed_set, out, grpo_stage, steps, ckpt, allow_fresh);
        if (ev->parsed()) return cli_detail::cmd_eval(config_path, seed, seed_set, ckpt, scenario, think,
                                                      out == "runs/out" ? std::string() : out);
        if (score->parsed()) return cli_detail::cmd_score(tasks_path, grids_dir, out, strict);
        if (plot->parsed()) return cli_detail::cmd_plot(metrics_path, out);
        if (inspect->parsed()) return cli_detail::cmd_inspect(config_path, seed, seed_set, ckpt, scenario, out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

} // namespace thinkgen
