#pragma once

#include <map>
#include <string>
#include <vector>

#include "thinkgen/grpo.hpp"
#include "thinkgen/parallel.hpp"

namespace thinkgen {

// Held-out evaluation seeds live in their own namespace, structurally
// disjoint from every training-task seed.
constexpr uint64_t kEvalSeedBase = 100ull << 40;

struct EvalSuite {
    Scenario scenario = Scenario::Composition;
    bool with_think = true;
    std::vector<TaskRecord> tasks;
};

inline EvalSuite make_eval_suite(const Vocab& v, const KnowledgeTable& kt, Scenario scenario, int n,
                                 bool with_think, uint64_t variant = 0) {
    EvalSuite suite;
    suite.scenario = scenario;
    suite.with_think = with_think;
    for (int i = 0; i < n; ++i)
        suite.tasks.push_back(
            make_task(v, kt, scenario, Split::HeldOut, kEvalSeedBase + variant * 1000003ull + static_cast<uint64_t>(i)));
    return suite;
}

struct EvalResult {
    double mean_score = 0.0;
    std::map<std::string, double> sub_means;
    std::vector<double> scores;
    int malformed = 0;
};

// Deterministic held-out evaluation. with_think decodes greedily through the
// cold-start template; without think the pseudo template stands in for the
// reasoning pass. Reflection is a text task and always samples a response.
inline EvalResult evaluate(const PlannerPolicy& planner, const FlowGenerator& generator, const Bridge& bridge,
                           const Vocab& vocab, const KnowledgeTable& kt, const EvalSuite& suite,
                           const GrpoConfig& gp, uint64_t seed) {
    // mechanical disjointness check before every run
    for (const TaskRecord& task : suite.tasks) {
        if (task.split != Split::HeldOut) throw ContractError("evaluate: suite contains training-split tasks");
        if (task.scenario == Scenario::Reasoning && kt.is_train(task.knowledge_key))
            throw ContractError("evaluate: held-out suite uses a training knowledge key");
    }

    EvalResult res;
    res.scores.assign(suite.tasks.size(), 0.0);
    std::vector<RewardRecord> records(suite.tasks.size());
    std::vector<int> malformed(suite.tasks.size(), 0);

    parallel_for(static_cast<int>(suite.tasks.size()), [&](int i) {
        const TaskRecord& task = suite.tasks[static_cast<size_t>(i)];
        const uint64_t noise = substream(hash_str("eval-noise"), seed, task.uid);
        RolloutArtifacts art;
        art.vocab = &vocab;
        TokenSeq seq;
        if (suite.with_think || task.scenario == Scenario::Reflection) {
            TokenSeq prompt = build_prompt(vocab, PromptMode::RlColdStart, task.content);
            seq = sample_rollout(planner, prompt, /*temperature=*/0.0, gp.max_new,
                                 RngStream(seed, substream(hash_str("eval-roll"), task.uid)), vocab);
            art.rollout = &seq;
            art.malformed = seq.malformed;
            malformed[static_cast<size_t>(i)] = seq.malformed ? 1 : 0;
        } else {
            seq = build_prompt(vocab, PromptMode::PretrainPseudoCot, task.content);
        }
        Array grid;
        if (task.needs_image() && !art.malformed) {
            ConditionPack pack = make_condition(planner, bridge, seq);
            auto [out, traj] = ode_sample(generator, &pack.refined, task_refs(task), gp.eval_steps, gp.cfg_scale,
                                          gp.cfg_cutoff, seed, noise, pack.K);
            grid = out.latent;
            art.grid = &grid;
            (void)traj;
        }
        records[static_cast<size_t>(i)] = route_reward(task, art, gp.strict_rewards);
        res.scores[static_cast<size_t>(i)] = records[static_cast<size_t>(i)].score;
    });

    std::map<std::string, double> sub_sums;
    std::map<std::string, int> sub_counts;
    double total = 0;
    for (size_t i = 0; i < suite.tasks.size(); ++i) {
        total += res.scores[i];
        res.malformed += malformed[i];
        for (const auto& [k, v] : records[i].sub) {
            sub_sums[k] += v;
            sub_counts[k] += 1;
        }
    }
    res.mean_score = suite.tasks.empty() ? 0.0 : total / static_cast<double>(suite.tasks.size());
    for (const auto& [k, v] : sub_sums) res.sub_means[k] = v / sub_counts[k];
    return res;
}

} // namespace thinkgen
