#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "thinkgen/config.hpp"
#include "thinkgen/eval.hpp"
#include "thinkgen/grpo.hpp"
#include "thinkgen/io.hpp"
#include "thinkgen/png.hpp"

namespace thinkgen {

struct Models {
    Vocab vocab;
    KnowledgeTable kt;
    PlannerPolicy planner;
    FlowGenerator generator;
    Bridge bridge;
};

inline Models init_models(const RunConfig& cfg_in) {
    RunConfig cfg = cfg_in;
    cfg.sync();
    Models m;
    m.vocab = Vocab::micro_world(cfg.knowledge_keys);
    m.kt = KnowledgeTable::make(cfg.knowledge_keys, cfg.knowledge_train);
    PlannerConfig pc = cfg.planner;
    pc.vocab_size = m.vocab.size();
    m.planner = init_planner(pc, substream(cfg.seed, hash_str("planner")));
    m.generator = init_generator(cfg.generator, substream(cfg.seed, hash_str("generator")));
    m.bridge = init_bridge(cfg.bridge, substream(cfg.seed, hash_str("bridge")));
    return m;
}

// ---- parameter namespace across the three stores ---------------------------------

inline Array& resolve_param(Models& m, const std::string& key) {
    if (key.rfind("planner/", 0) == 0) return m.planner.params.at(key.substr(8));
    if (key.rfind("generator/", 0) == 0) return m.generator.params.at(key.substr(10));
    if (key.rfind("bridge/", 0) == 0) return m.bridge.params.at(key.substr(7));
    throw ContractError("unknown parameter namespace in " + key);
}

inline std::map<std::string, uint64_t> all_param_hashes(const Models& m) {
    std::map<std::string, uint64_t> h;
    for (const auto& [k, v] : m.planner.params.params) h["planner/" + k] = array_hash(v);
    for (const auto& [k, v] : m.generator.params.params) h["generator/" + k] = array_hash(v);
    for (const auto& [k, v] : m.bridge.params.params) h["bridge/" + k] = array_hash(v);
    return h;
}

struct StageTrainables {
    TrainableSet planner_set;
    TrainableSet generator_set;
    TrainableSet bridge_set;
    std::set<std::string> expected; // fully-qualified names the stage may change
};

inline StageTrainables expand_trainable(const std::vector<std::string>& groups, const Models& m) {
    StageTrainables t;
    for (const std::string& g : groups) {
        if (g == "planner") {
            t.planner_set.all = true;
            for (const auto& [k, v] : m.planner.params.params) t.expected.insert("planner/" + k);
        } else if (g == "generator") {
            t.generator_set.all = true;
            for (const auto& [k, v] : m.generator.params.params) t.expected.insert("generator/" + k);
        } else if (g == "connector") {
            for (const auto& [k, v] : m.bridge.params.params)
                if (k.rfind("connector", 0) == 0) {
                    t.bridge_set.names.insert(k);
                    t.expected.insert("bridge/" + k);
                }
        } else if (g == "prepadding") {
            t.bridge_set.names.insert("prepadding");
            t.expected.insert("bridge/prepadding");
        } else {
            throw ContractError("unknown trainable group '" + g + "'");
        }
    }
    return t;
}

// ---- planner base initialization ---------------------------------------------------
// Small language-model pretraining over the micro-world: pseudo-CoT and
// cold-start formatted sequences for every scenario, with the knowledge table
// spelled out for every key. This is the stand-in for starting from a
// pretrained model; the five training stages never touch it again.

inline TokenSeq base_corpus_sequence(const Vocab& v, const KnowledgeTable& kt, RngStream& rng) {
    ScenarioMixture mix; // all five scenarios, knowledge-heavy
    Scenario sc = mix.sample(rng);
    TaskRecord task;
    if (sc == Scenario::Reasoning) {
        // world knowledge covers every key, not only the RL train split
        const int key = rng.uniform_int(kt.n_keys);
        task.comp = kt.expansion(key);
        task.content = {v.id(kt.key_token(key))};
        task.rewrite = caption_tokens(v, task.comp);
        task.think_hint = {v.id(kt.key_token(key)), v.id("is")};
        for (int tok : task.rewrite) task.think_hint.push_back(tok);
    } else {
        task = make_task(v, kt, sc, Split::Train, substream(hash_str("planner-init-data"), rng.next_u64()));
    }
    TokenSeq seq;
    seq.ids.push_back(v.sys);
    for (int tok : task.content) seq.ids.push_back(tok);
    seq.ids.push_back(v.think_open);
    seq.prompt_len = seq.length(); // model learns everything from <think> on
    for (int tok : task.think_hint) seq.ids.push_back(tok);
    seq.ids.push_back(v.think_close);
    for (int tok : task.rewrite) seq.ids.push_back(tok);
    seq.ids.push_back(v.eos);
    seq.locate_think_markers(v);
    return seq;
}

inline void planner_base_init(Models& m, const RunConfig& cfg, MetricsWriter* metrics = nullptr) {
    Adam opt;
    opt.lr = cfg.planner_init_lr;
    for (int step = 0; step < cfg.planner_init_steps; ++step) {
        Tape t;
        Bound b = bind_params(t, m.planner.params, TrainableSet::everything());
        NodeId loss = -1;
        RngStream rng(cfg.seed, substream(hash_str("planner-init"), static_cast<uint64_t>(step)));
        for (int i = 0; i < cfg.planner_init_batch; ++i) {
            TokenSeq seq = base_corpus_sequence(m.vocab, m.kt, rng);
            ScoreNodes sc = score_sequence_t(t, b, m.planner.cfg, seq);
            NodeId nll = t.neg(t.mean(sc.taken_logps));
            loss = loss < 0 ? nll : t.add(loss, nll);
        }
        loss = t.scale(loss, static_cast<real>(1.0 / cfg.planner_init_batch));
        t.backward(loss);
        std::map<std::string, Array> grads;
        collect_grads(t, b, TrainableSet::everything(), grads);
        opt.step(grads, [&](const std::string& k) -> Array& { return m.planner.params.at(k); }, cfg.planner_init_lr);
        if (metrics)
            metrics->write(json{{"step", step}, {"stage", "planner-init"}, {"loss", double(t.val(loss)[0])}});
    }
    m.planner.version += 1;
}

// ---- supervised stages 1..3 ---------------------------------------------------------

struct SupervisedBatchItem {
    TaskRecord task;
    Array target; // rendered target grid
};

inline std::vector<SupervisedBatchItem> sample_supervised_batch(const Models& m, const StageConfig& stage,
                                                                uint64_t seed, int step) {
    std::vector<SupervisedBatchItem> batch;
    RngStream rng(seed, substream(hash_str("stage-data"), static_cast<uint64_t>(stage.stage),
                                  static_cast<uint64_t>(step)));
    for (int i = 0; i < stage.batch; ++i) {
        Scenario sc = stage.mixture.sample(rng);
        if (sc == Scenario::Reflection) sc = Scenario::Composition; // no image target
        TaskRecord task = make_task(m.vocab, m.kt, sc, Split::Train,
                                    stage_task_seed(stage.stage - 1, static_cast<uint64_t>(step), i));
        SupervisedBatchItem item;
        item.target = render(task.target_scene);
        item.task = std::move(task);
        batch.push_back(std::move(item));
    }
    return batch;
}

// One supervised flow-matching step. The pseudo-CoT prompt carries the
// canonical caption; with probability drop_rate the condition is replaced by
// the learned unconditional embedding (classifier-free guidance training).
inline double supervised_step(Models& m, const StageConfig& stage, const std::vector<SupervisedBatchItem>& batch,
                              Adam& opt, int step, uint64_t seed) {
    if (stage.stage < 1 || stage.stage > 3)
        throw ContractError("supervised_step: stages 4 and 5 belong to the RL trainer");
    if (batch.empty()) throw ContractError("supervised_step: empty batch");

    StageTrainables tr = expand_trainable(stage.trainable, m);
    Tape t;
    Bound bb = bind_params(t, m.bridge.params, tr.bridge_set);
    Bound gb = bind_params(t, m.generator.params, tr.generator_set);

    RngStream drop_rng(seed, substream(hash_str("drop"), static_cast<uint64_t>(stage.stage),
                                       static_cast<uint64_t>(step)));
    NodeId loss = -1;
    for (size_t i = 0; i < batch.size(); ++i) {
        const TaskRecord& task = batch[i].task;
        TokenSeq prompt = build_prompt(m.vocab, PromptMode::PretrainPseudoCot, task.rewrite);
        PlanForward fwd = plan_forward(m.planner, prompt.ids); // planner frozen in stages 1..3
        NodeId cond = -1; // dropped: the unconditional embedding
        int64_t pool_from = 0;
        if (drop_rng.uniform() >= stage.drop_rate) {
            NodeId pre = refined_states_t(t, bb, m.bridge.cfg, fwd.hiddens, prompt);
            cond = connect_t(t, bb, m.bridge.cfg, pre);
            pool_from = m.bridge.cfg.K;
        }
        RngStream fm_rng(seed, substream(hash_str("fm"), static_cast<uint64_t>(stage.stage),
                                         static_cast<uint64_t>(step), i));
        NodeId li = fm_loss(t, gb, m.generator.cfg, batch[i].target, cond, task_refs(task), fm_rng, pool_from);
        loss = loss < 0 ? li : t.add(loss, li);
    }
    loss = t.scale(loss, static_cast<real>(1.0 / static_cast<double>(batch.size())));
    t.backward(loss);

    std::map<std::string, Array> grads;
    collect_grads(t, bb, tr.bridge_set, grads, "bridge/");
    collect_grads(t, gb, tr.generator_set, grads, "generator/");
    const double lr_now = lr_at(stage.schedule, stage.lr, step, stage.steps, stage.warmup);
    opt.step(grads, [&](const std::string& k) -> Array& { return resolve_param(m, k); }, lr_now);
    return static_cast<double>(t.val(loss)[0]);
}

// ---- full recipe ---------------------------------------------------------------------

struct StageLedgerEntry {
    std::string stage;
    std::set<std::string> expected;
    std::set<std::string> changed;
    bool ok = false;
};

struct RecipeReport {
    std::vector<StageLedgerEntry> ledger;
    std::map<std::string, double> evals; // e.g. "stage3/composition/think_off"
    fs::path out_dir;
};

inline StageLedgerEntry close_ledger(const std::string& stage_name, const std::set<std::string>& expected,
                                     const std::map<std::string, uint64_t>& before, const Models& m) {
    StageLedgerEntry e;
    e.stage = stage_name;
    e.expected = expected;
    const auto after = all_param_hashes(m);
    for (const auto& [k, h] : after)
        if (before.at(k) != h) e.changed.insert(k);
    e.ok = e.changed == e.expected;
    return e;
}

inline void eval_block(Models& m, const RunConfig& cfg, const std::string& tag, RecipeReport& report) {
    for (Scenario sc : {Scenario::Composition, Scenario::Reasoning, Scenario::TextRender, Scenario::Edit,
                        Scenario::Reflection}) {
        for (bool think : {false, true}) {
            if (sc == Scenario::Reflection && !think) continue; // reflection is a text task
            EvalSuite suite = make_eval_suite(m.vocab, m.kt, sc, cfg.eval_tasks, think);
            EvalResult res = evaluate(m.planner, m.generator, m.bridge, m.vocab, m.kt, suite, cfg.grpo, cfg.seed);
            report.evals[tag + "/" + scenario_name(sc) + (think ? "/think_on" : "/think_off")] = res.mean_score;
        }
    }
}

inline void write_report(const RecipeReport& report, const RunConfig& cfg) {
    json j;
    j["config"] = to_json(cfg);
    j["evals"] = report.evals;
    j["ledger"] = json::array();
    for (const auto& e : report.ledger) {
        json le;
        le["stage"] = e.stage;
        le["ok"] = e.ok;
        le["expected"] = std::vector<std::string>(e.expected.begin(), e.expected.end());
        le["changed"] = std::vector<std::string>(e.changed.begin(), e.changed.end());
        j["ledger"].push_back(le);
    }
    std::ofstream os(report.out_dir / "report.json", std::ios::trunc);
    os << j.dump(2) << "\n";
}

inline void emit_plots(const fs::path& out_dir) {
    const fs::path metrics4 = out_dir / "metrics" / "stage4.jsonl";
    if (!fs::exists(metrics4)) return;
    std::vector<double> rewards, cots;
    for (const json& j : read_jsonl(metrics4.string())) {
        rewards.push_back(j.value("mean_reward", 0.0));
        cots.push_back(j.value("mean_cot_len", 0.0));
    }
    fs::create_directories(out_dir / "plots");
    write_line_plot((out_dir / "plots" / "reward_vs_step.png").string(), rewards, "mean reward");
    write_line_plot((out_dir / "plots" / "cot_len_vs_step.png").string(), cots, "mean cot length");
}

// Runs the staged recipe in order; every stage initializes from the previous
// one in memory and checkpoints to out_dir/checkpoints/<stage>.
inline RecipeReport run_recipe(const RunConfig& cfg_in, const fs::path& out_dir) {
    RunConfig cfg = cfg_in;
    cfg.sync();
    for (size_t i = 0; i < cfg.stages.size(); ++i)
        if (cfg.stages[i].stage != static_cast<int>(i) + 1)
            throw ContractError("run_recipe: stages must be ordered 1..5 without gaps");
    if (cfg.prepadding_trainable_after_stage1)
        for (StageConfig& s : cfg.stages)
            if (s.stage == 2 || s.stage == 3) s.trainable.push_back("prepadding");

    RecipeReport report;
    report.out_dir = out_dir;
    fs::create_directories(out_dir / "checkpoints");
    fs::create_directories(out_dir / "metrics");

    Models m = init_models(cfg);

    {
        MetricsWriter mw((out_dir / "metrics" / "planner_init.jsonl").string());
        planner_base_init(m, cfg, &mw);
    }
    save_planner(out_dir / "checkpoints" / "base" / "planner", m.planner, m.vocab);
    save_generator(out_dir / "checkpoints" / "base" / "generator", m.generator);
    save_bridge(out_dir / "checkpoints" / "base" / "bridge", m.bridge);

    for (const StageConfig& stage : cfg.stages) {
        const std::string stage_name = "stage" + std::to_string(stage.stage);
        const auto before = all_param_hashes(m);
        StageTrainables tr = expand_trainable(stage.trainable, m);
        MetricsWriter mw((out_dir / "metrics" / (stage_name + ".jsonl")).string());

        if (stage.stage <= 3) {
            Adam opt;
            for (int step = 0; step < stage.steps; ++step) {
                auto batch = sample_supervised_batch(m, stage, cfg.seed, step);
                const double loss = supervised_step(m, stage, batch, opt, step, cfg.seed);
                mw.write(json{{"step", step},
                              {"stage", stage_name},
                              {"loss", loss},
                              {"lr", lr_at(stage.schedule, stage.lr, step, stage.steps, stage.warmup)}});
            }
        } else {
            GrpoConfig gp = cfg.grpo;
            if (stage.stage == 4)
                gp.planner_lr = stage.lr;
            else
                gp.generator_lr = stage.lr;
            AlternateStage alt = stage.stage == 4 ? AlternateStage::mllm(stage.steps) : AlternateStage::dit(stage.steps);
            alternate(m.planner, m.generator, m.bridge, m.vocab, m.kt, {alt}, gp, cfg.seed,
                      default_reward_hook(gp.strict_rewards), [&](const StepMetrics& met) { mw.write(to_json(met)); },
                      /*seed_namespace_base=*/stage.stage);
        }

        report.ledger.push_back(close_ledger(stage_name, tr.expected, before, m));
        save_planner(out_dir / "checkpoints" / stage_name / "planner", m.planner, m.vocab);
        save_generator(out_dir / "checkpoints" / stage_name / "generator", m.generator);
        save_bridge(out_dir / "checkpoints" / stage_name / "bridge", m.bridge);

        if (stage.stage == 3) eval_block(m, cfg, "stage3", report);
        if (stage.stage == 5) eval_block(m, cfg, "stage5", report);
    }

    emit_plots(out_dir);
    write_report(report, cfg);
    return report;
}

} // namespace thinkgen
