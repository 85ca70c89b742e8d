#pragma once

#include <json.hpp>
#include <string>
#include <vector>

#include "thinkgen/bridge.hpp"
#include "thinkgen/generator.hpp"
#include "thinkgen/grpo.hpp"
#include "thinkgen/planner.hpp"

namespace thinkgen {

struct StageConfig {
    int stage = 1; // 1..5
    double lr = 1e-3;
    int batch = 8;
    LrSchedule schedule = LrSchedule::Constant;
    int warmup = 0;
    int steps = 200;
    std::vector<std::string> trainable; // groups: connector, prepadding, generator, planner
    double drop_rate = 0.0;
    std::string resolution = "grid16"; // single grid size; kept as a tag
    ScenarioMixture mixture;
};

struct RunConfig {
    uint64_t seed = 7;

    int knowledge_keys = 200;
    int knowledge_train = 160;

    PlannerConfig planner;
    GenConfig generator;
    BridgeConfig bridge;

    // base initialization of the planner: a small language-model pretraining
    // pass standing in for starting from a pretrained model
    int planner_init_steps = 800;
    int planner_init_batch = 8;
    double planner_init_lr = 1e-3;

    std::vector<StageConfig> stages;
    GrpoConfig grpo;

    int eval_tasks = 40;
    bool prepadding_trainable_after_stage1 = false;

    // full-scale reference budgets retained for config-shape fidelity; the
    // desk run never uses them
    std::vector<int> full_scale_steps = {47000, 100000, 11000};

    void sync() {
        bridge.planner_d = planner.d;
        bridge.gen_d = generator.d;
    }
};

inline std::vector<StageConfig> default_stages() {
    std::vector<StageConfig> s(5);
    // supervised mixture leaves reflection out: it has no image target
    ScenarioMixture sup;
    sup.weights = {5, 10, 3, 3, 0};

    s[0].stage = 1;
    s[0].lr = 1e-3;
    s[0].schedule = LrSchedule::Cosine;
    s[0].warmup = 20; // 500-step warmup scaled to the desk budget
    s[0].steps = 2000;
    s[0].trainable = {"connector", "prepadding"};
    s[0].drop_rate = 0.10;
    s[0].mixture = sup;

    s[1].stage = 2;
    s[1].lr = 2.5e-4;
    s[1].schedule = LrSchedule::Constant;
    s[1].steps = 10000;
    s[1].trainable = {"generator"};
    s[1].drop_rate = 0.10;
    s[1].mixture = sup;

    s[2].stage = 3;
    s[2].lr = 1e-4;
    s[2].schedule = LrSchedule::Constant;
    s[2].steps = 1000;
    s[2].trainable = {"generator"};
    s[2].drop_rate = 0.0001; // documented reading of an ambiguous percentage
    s[2].mixture = sup;

    s[3].stage = 4;
    s[3].lr = 3e-4;
    s[3].steps = 300;
    s[3].trainable = {"planner"};

    s[4].stage = 5;
    s[4].lr = 1e-4;
    s[4].steps = 300;
    s[4].trainable = {"generator"};
    return s;
}

inline RunConfig default_run_config() {
    RunConfig c;
    c.planner.d = 64;
    c.planner.layers = 4;
    c.planner.heads = 4;
    c.planner.context = 128;
    c.generator.d = 64;
    c.generator.blocks = 2;
    c.generator.heads = 4;
    c.generator.patch = 2;
    c.bridge.K = 25;
    c.stages = default_stages();
    c.sync();
    return c;
}

inline void stage_to_json(nlohmann::json& j, const StageConfig& s) {
    j["stage"] = s.stage;
    j["lr"] = s.lr;
    j["batch"] = s.batch;
    j["schedule"] = s.schedule == LrSchedule::Cosine ? "cosine" : "constant";
    j["warmup"] = s.warmup;
    j["steps"] = s.steps;
    j["trainable"] = s.trainable;
    j["drop_rate"] = s.drop_rate;
    j["resolution"] = s.resolution;
    j["mixture"] = s.mixture.weights;
}

inline StageConfig stage_from_json(const nlohmann::json& j) {
    StageConfig s;
    s.stage = j.at("stage").get<int>();
    s.lr = j.value("lr", s.lr);
    s.batch = j.value("batch", s.batch);
    s.schedule = j.value("schedule", "constant") == "cosine" ? LrSchedule::Cosine : LrSchedule::Constant;
    s.warmup = j.value("warmup", 0);
    s.steps = j.value("steps", s.steps);
    if (j.contains("trainable")) s.trainable = j.at("trainable").get<std::vector<std::string>>();
    s.drop_rate = j.value("drop_rate", 0.0);
    s.resolution = j.value("resolution", "grid16");
    if (j.contains("mixture")) {
        auto w = j.at("mixture").get<std::vector<double>>();
        for (size_t i = 0; i < std::min<size_t>(5, w.size()); ++i) s.mixture.weights[i] = w[i];
    }
    return s;
}

inline nlohmann::json to_json(const RunConfig& c) {
    nlohmann::json j;
    j["seed"] = c.seed;
    j["world"] = {{"knowledge_keys", c.knowledge_keys}, {"knowledge_train", c.knowledge_train}};
    j["planner"] = {{"d", c.planner.d},
                    {"layers", c.planner.layers},
                    {"heads", c.planner.heads},
                    {"context", c.planner.context}};
    j["generator"] = {{"d", c.generator.d}, {"blocks", c.generator.blocks}, {"heads", c.generator.heads},
                      {"patch", c.generator.patch}, {"time_freqs", c.generator.time_freqs}};
    j["bridge"] = {{"K", c.bridge.K},
                   {"connector", connector_name(c.bridge.connector)},
                   {"truncate", c.bridge.truncate}};
    j["planner_init"] = {{"steps", c.planner_init_steps}, {"batch", c.planner_init_batch}, {"lr", c.planner_init_lr}};
    j["stages"] = nlohmann::json::array();
    for (const auto& s : c.stages) {
        nlohmann::json sj;
        stage_to_json(sj, s);
        j["stages"].push_back(sj);
    }
    j["grpo"] = {{"eps", c.grpo.eps},
                 {"beta", c.grpo.beta},
                 {"beta_dit", c.grpo.beta_dit},
                 {"n1", c.grpo.n1},
                 {"n2", c.grpo.n2},
                 {"adv_eps", c.grpo.adv_eps},
                 {"planner_lr", c.grpo.planner_lr},
                 {"generator_lr", c.grpo.generator_lr},
                 {"temperature", c.grpo.temperature},
                 {"max_new", c.grpo.max_new},
                 {"rollout_steps", c.grpo.rollout_steps},
                 {"eval_steps", c.grpo.eval_steps},
                 {"cfg_scale", c.grpo.cfg_scale},
                 {"cfg_cutoff", c.grpo.cfg_cutoff},
                 {"sigma", c.grpo.sigma},
                 {"tasks_per_step", c.grpo.tasks_per_step},
                 {"mixture", c.grpo.mixture.weights}};
    j["eval_tasks"] = c.eval_tasks;
    j["prepadding_trainable_after_stage1"] = c.prepadding_trainable_after_stage1;
    j["full_scale_steps"] = c.full_scale_steps;
    return j;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig c = default_run_config();
    c.seed = j.value("seed", c.seed);
    if (j.contains("world")) {
        c.knowledge_keys = j["world"].value("knowledge_keys", c.knowledge_keys);
        c.knowledge_train = j["world"].value("knowledge_train", c.knowledge_train);
    }
    if (j.contains("planner")) {
        const auto& p = j["planner"];
        c.planner.d = p.value("d", c.planner.d);
        c.planner.layers = p.value("layers", c.planner.layers);
        c.planner.heads = p.value("heads", c.planner.heads);
        c.planner.context = p.value("context", c.planner.context);
    }
    if (j.contains("generator")) {
        const auto& g = j["generator"];
        c.generator.d = g.value("d", c.generator.d);
        c.generator.blocks = g.value("blocks", c.generator.blocks);
        c.generator.heads = g.value("heads", c.generator.heads);
        c.generator.patch = g.value("patch", c.generator.patch);
        c.generator.time_freqs = g.value("time_freqs", c.generator.time_freqs);
    }
    if (j.contains("bridge")) {
        const auto& b = j["bridge"];
        c.bridge.K = b.value("K", c.bridge.K);
        if (b.contains("connector")) c.bridge.connector = connector_from_name(b["connector"].get<std::string>());
        c.bridge.truncate = b.value("truncate", true);
    }
    if (j.contains("planner_init")) {
        const auto& p = j["planner_init"];
        c.planner_init_steps = p.value("steps", c.planner_init_steps);
        c.planner_init_batch = p.value("batch", c.planner_init_batch);
        c.planner_init_lr = p.value("lr", c.planner_init_lr);
    }
    if (j.contains("stages")) {
        c.stages.clear();
        for (const auto& sj : j["stages"]) c.stages.push_back(stage_from_json(sj));
    }
    if (j.contains("grpo")) {
        const auto& g = j["grpo"];
        c.grpo.eps = g.value("eps", c.grpo.eps);
        c.grpo.beta = g.value("beta", c.grpo.beta);
        c.grpo.beta_dit = g.value("beta_dit", c.grpo.beta_dit);
        c.grpo.n1 = g.value("n1", c.grpo.n1);
        c.grpo.n2 = g.value("n2", c.grpo.n2);
        c.grpo.adv_eps = g.value("adv_eps", c.grpo.adv_eps);
        c.grpo.planner_lr = g.value("planner_lr", c.grpo.planner_lr);
        c.grpo.generator_lr = g.value("generator_lr", c.grpo.generator_lr);
        c.grpo.temperature = g.value("temperature", c.grpo.temperature);
        c.grpo.max_new = g.value("max_new", c.grpo.max_new);
        c.grpo.rollout_steps = g.value("rollout_steps", c.grpo.rollout_steps);
        c.grpo.eval_steps = g.value("eval_steps", c.grpo.eval_steps);
        c.grpo.cfg_scale = g.value("cfg_scale", c.grpo.cfg_scale);
        c.grpo.cfg_cutoff = g.value("cfg_cutoff", c.grpo.cfg_cutoff);
        c.grpo.sigma = g.value("sigma", c.grpo.sigma);
        c.grpo.tasks_per_step = g.value("tasks_per_step", c.grpo.tasks_per_step);
        if (g.contains("mixture")) {
            auto w = g["mixture"].get<std::vector<double>>();
            for (size_t i = 0; i < std::min<size_t>(5, w.size()); ++i) c.grpo.mixture.weights[i] = w[i];
        }
    }
    c.eval_tasks = j.value("eval_tasks", c.eval_tasks);
    c.prepadding_trainable_after_stage1 = j.value("prepadding_trainable_after_stage1", false);
    c.sync();
    return c;
}

} // namespace thinkgen
