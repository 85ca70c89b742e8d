#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "thinkgen/bridge.hpp"
#include "thinkgen/generator.hpp"
#include "thinkgen/parallel.hpp"
#include "thinkgen/planner.hpp"
#include "thinkgen/rewards.hpp"
#include "thinkgen/world.hpp"

namespace thinkgen {

struct GrpoConfig {
    double eps = 0.2;       // clip range
    double beta = 0.01;     // KL coefficient, planner side
    double beta_dit = 0.0;  // KL coefficient, generator side (off unless enabled)
    int n1 = 8;             // planner rollouts per input
    int n2 = 24;            // generator rollouts per input
    double adv_eps = 1e-8;  // std floor in the advantage

    double planner_lr = 3e-4;
    double generator_lr = 1e-4;
    double temperature = 1.0;
    int max_new = 24;
    int rollout_steps = 10; // denoising reduction during training rollouts
    int eval_steps = 20;
    double cfg_scale = 4.0;
    double cfg_cutoff = 0.6;
    double sigma = 0.1;
    double active_frac = 0.6;
    int tasks_per_step = 1;
    bool strict_rewards = false;
    ScenarioMixture mixture;

    void validate() const {
        if (!(eps > 0.0 && eps < 1.0)) throw ContractError("grpo: eps must lie in (0,1)");
        if (beta < 0.0 || beta_dit < 0.0) throw ContractError("grpo: beta must be non-negative");
        if (n1 < 2 || n2 < 2) throw ContractError("grpo: group sizes must be at least 2");
    }
};

// Group-relative advantages (population std with a floor). An all-equal group
// comes out exactly zero.
inline std::vector<double> compute_advantages(const std::vector<double>& rewards, double adv_eps = 1e-8) {
    const size_t g = rewards.size();
    if (g < 2) throw ContractError("compute_advantages: group size must be at least 2");
    double mean = 0;
    for (double r : rewards) mean += r;
    mean /= static_cast<double>(g);
    double var = 0;
    for (double r : rewards) var += (r - mean) * (r - mean);
    var /= static_cast<double>(g);
    const double denom = std::max(std::sqrt(var), adv_eps);
    std::vector<double> adv(g);
    for (size_t i = 0; i < g; ++i) adv[i] = (rewards[i] - mean) / denom;
    return adv;
}

// Per-trajectory inputs to the clipped surrogate. `kl` is an optional scalar
// node holding the summed per-token KL of this trajectory (exact, computed by
// the caller for its distribution family); weight is the multiplicity when
// identical rollouts are folded together.
struct TrajectoryLogps {
    NodeId new_logps = -1; // (len, 1), differentiable
    Array old_logps;       // (len, 1) constants from sampling time
    NodeId kl = -1;
    int weight = 1;
};

struct GrpoLossStats {
    double clip_frac = 0.0;
    double mean_kl = 0.0;
    double surrogate = 0.0;
    int64_t token_count = 0;
};

// -(1/sum|o_i|) * sum_i sum_t [ min(r*A, clip(r, 1-eps, 1+eps)*A) - beta*KL ]
// norm_tokens overrides sum|o_i| when the batch is split across tapes.
inline NodeId grpo_loss(Tape& t, const std::vector<TrajectoryLogps>& trajs, const std::vector<double>& advantages,
                        double eps, double beta, GrpoLossStats* stats = nullptr, int64_t norm_tokens = -1) {
    if (trajs.size() != advantages.size()) throw ContractError("grpo_loss: advantage per trajectory required");
    if (trajs.empty()) throw ContractError("grpo_loss: empty group");

    NodeId total = -1;
    NodeId total_kl = -1;
    int64_t tokens = 0;
    int64_t clipped = 0;
    for (size_t i = 0; i < trajs.size(); ++i) {
        const auto& tr = trajs[i];
        const Array& old_lp = tr.old_logps;
        // copy: tape storage may reallocate as ops are pushed
        const Array new_lp = t.val(tr.new_logps);
        if (!new_lp.same_shape(old_lp))
            throw ContractError("grpo_loss: misaligned log-prob lengths for trajectory " + std::to_string(i));
        const real a = static_cast<real>(advantages[i]);
        NodeId ratio = t.exp(t.sub(tr.new_logps, t.constant(old_lp)));
        NodeId term = t.min_elem(t.scale(ratio, a), t.scale(t.clamp(ratio, static_cast<real>(1.0 - eps),
                                                                    static_cast<real>(1.0 + eps)),
                                                            a));
        NodeId tsum = t.scale(t.sum(term), static_cast<real>(tr.weight));
        total = total < 0 ? tsum : t.add(total, tsum);
        tokens += static_cast<int64_t>(tr.weight) * new_lp.numel();
        for (int64_t k = 0; k < new_lp.numel(); ++k) {
            const double r = std::exp(static_cast<double>(new_lp[k]) - old_lp[k]);
            if (r < 1.0 - eps || r > 1.0 + eps) clipped += tr.weight;
        }
        if (tr.kl >= 0) {
            NodeId k = t.scale(tr.kl, static_cast<real>(tr.weight));
            total_kl = total_kl < 0 ? k : t.add(total_kl, k);
        }
    }
    const int64_t norm = norm_tokens > 0 ? norm_tokens : tokens;
    NodeId objective = total;
    if (beta != 0.0 && total_kl >= 0) objective = t.sub(objective, t.scale(total_kl, static_cast<real>(beta)));
    NodeId loss = t.neg(t.scale(objective, static_cast<real>(1.0 / static_cast<double>(norm))));
    if (stats) {
        stats->token_count = tokens;
        stats->clip_frac = static_cast<double>(clipped) / static_cast<double>(tokens);
        stats->mean_kl = total_kl >= 0 ? static_cast<double>(t.val(total_kl)[0]) / static_cast<double>(norm) : 0.0;
        stats->surrogate = static_cast<double>(t.val(total)[0]) / static_cast<double>(norm);
    }
    return loss;
}

// Exact per-token KL(pi_theta || pi_ref) summed over tokens; the vocabulary is
// small enough to use the full softmax rows.
inline NodeId exact_kl_node(Tape& t, NodeId new_log_dist, const Array& ref_log_dist) {
    if (!t.val(new_log_dist).same_shape(ref_log_dist)) throw ContractError("exact_kl: distribution shape mismatch");
    NodeId probs = t.exp(new_log_dist);
    NodeId diff = t.sub(new_log_dist, t.constant(ref_log_dist));
    return t.sum(t.mul(probs, diff));
}

struct StepMetrics {
    int64_t step = 0;
    std::string stage;
    std::string scenario;
    double mean_reward = 0.0;
    double mean_cot_len = 0.0;
    double clip_frac = 0.0;
    double kl = 0.0;
    double loss = 0.0;
    int skipped_groups = 0;
};

using RewardHook = std::function<RewardRecord(const TaskRecord&, const RolloutArtifacts&)>;

inline RewardHook default_reward_hook(bool strict = false) {
    return [strict](const TaskRecord& task, const RolloutArtifacts& art) { return route_reward(task, art, strict); };
}

inline int think_body_len(const TokenSeq& seq) {
    if (seq.think_open < 0) return 0;
    const int end = seq.think_close >= 0 ? seq.think_close : seq.length();
    return std::max(0, end - seq.think_open - 1);
}

inline TokenSeq task_rl_prompt(const Vocab& v, const TaskRecord& task) {
    return build_prompt(v, PromptMode::RlColdStart, task.content);
}

inline std::vector<Array> task_refs(const TaskRecord& task) {
    std::vector<Array> refs;
    if (task.scenario == Scenario::Edit && task.ref_scene) refs.push_back(render(*task.ref_scene));
    return refs;
}

// ---- Stage 4: planner GRPO against the frozen generator -------------------------

struct MllmGrpoContext {
    PlannerPolicy* planner = nullptr;        // trainable
    const FlowGenerator* generator = nullptr; // frozen
    const Bridge* bridge = nullptr;           // frozen
    const Vocab* vocab = nullptr;
    PlannerPolicy ref;                        // pi_ref snapshot, frozen at stage start
    Adam opt;
};

// One optimizer step of MLLM-GRPO: N1 rollouts per task, one image per
// trajectory with the group sharing a single latent-noise stream, rule-model
// rewards, group-relative advantages, clipped surrogate over planner token
// log-probs. Zero-variance groups (all-malformed included) are skipped.
inline StepMetrics mllm_grpo_step(MllmGrpoContext& ctx, const std::vector<TaskRecord>& tasks,
                                  const GrpoConfig& cfg, uint64_t seed, uint64_t step_index,
                                  const RewardHook& hook) {
    cfg.validate();
    StepMetrics met;
    met.step = static_cast<int64_t>(step_index);
    met.stage = "mllm-grpo";
    met.scenario = tasks.empty() ? "" : scenario_name(tasks[0].scenario);

    Tape t;
    Bound pb = bind_params(t, ctx.planner->params, TrainableSet::everything());
    std::vector<TrajectoryLogps> batch;
    std::vector<double> batch_adv;

    double reward_sum = 0.0;
    int64_t reward_n = 0;
    double cot_sum = 0.0;

    for (size_t ti = 0; ti < tasks.size(); ++ti) {
        const TaskRecord& task = tasks[ti];
        const uint64_t group_base = substream(hash_str("mllm-grpo"), seed, step_index, ti);
        const uint64_t group_noise = substream(group_base, hash_str("shared-noise"));
        TokenSeq prompt = task_rl_prompt(*ctx.vocab, task);

        // N1 rollouts from the current policy (pi_old refreshes every step)
        std::vector<TokenSeq> rolls(static_cast<size_t>(cfg.n1));
        parallel_for(cfg.n1, [&](int i) {
            rolls[static_cast<size_t>(i)] =
                sample_rollout(*ctx.planner, prompt, cfg.temperature, cfg.max_new,
                               RngStream(seed, substream(group_base, hash_str("rollout"), static_cast<uint64_t>(i))),
                               *ctx.vocab);
        });

        // fold identical rollouts: same tokens => same condition, same image
        // (the group shares its latent noise), same reward
        std::vector<int> uniq_of(rolls.size(), -1);
        std::vector<int> uniq_index;
        std::vector<int> mult;
        for (size_t i = 0; i < rolls.size(); ++i) {
            for (size_t j = 0; j < uniq_index.size(); ++j) {
                if (rolls[static_cast<size_t>(uniq_index[j])].ids == rolls[i].ids) {
                    uniq_of[i] = static_cast<int>(j);
                    break;
                }
            }
            if (uniq_of[i] < 0) {
                uniq_of[i] = static_cast<int>(uniq_index.size());
                uniq_index.push_back(static_cast<int>(i));
                mult.push_back(0);
            }
            mult[static_cast<size_t>(uniq_of[i])] += 1;
        }

        const std::vector<Array> refs = task_refs(task);
        std::vector<double> uniq_reward(uniq_index.size(), 0.0);
        parallel_for(static_cast<int>(uniq_index.size()), [&](int u) {
            const TokenSeq& roll = rolls[static_cast<size_t>(uniq_index[static_cast<size_t>(u)])];
            RolloutArtifacts art;
            art.rollout = &roll;
            art.vocab = ctx.vocab;
            art.malformed = roll.malformed;
            Array grid;
            if (!roll.malformed && task.needs_image()) {
                ConditionPack pack = make_condition(*ctx.planner, *ctx.bridge, roll);
                auto [out, traj] =
                    ode_sample(*ctx.generator, &pack.refined, refs, cfg.rollout_steps, cfg.cfg_scale,
                               cfg.cfg_cutoff, seed, group_noise, pack.K);
                grid = out.latent;
                art.grid = &grid;
                (void)traj;
            }
            uniq_reward[static_cast<size_t>(u)] = hook(task, art).score;
        });

        std::vector<double> rewards(rolls.size());
        for (size_t i = 0; i < rolls.size(); ++i) rewards[i] = uniq_reward[static_cast<size_t>(uniq_of[i])];
        for (size_t i = 0; i < rolls.size(); ++i) {
            reward_sum += rewards[i];
            cot_sum += think_body_len(rolls[i]);
            ++reward_n;
        }

        const double rmin = *std::min_element(rewards.begin(), rewards.end());
        const double rmax = *std::max_element(rewards.begin(), rewards.end());
        if (rmax - rmin == 0.0) {
            ++met.skipped_groups;
            continue;
        }
        std::vector<double> adv = compute_advantages(rewards, cfg.adv_eps);

        for (size_t u = 0; u < uniq_index.size(); ++u) {
            const TokenSeq& roll = rolls[static_cast<size_t>(uniq_index[u])];
            if (roll.gen_len() < 1) continue;
            ScoreNodes sc = score_sequence_t(t, pb, ctx.planner->cfg, roll, cfg.temperature);
            TrajectoryLogps tl;
            tl.new_logps = sc.taken_logps;
            tl.old_logps = Array::zeros({roll.gen_len(), 1});
            for (int k = 0; k < roll.gen_len(); ++k)
                tl.old_logps[k] = static_cast<real>(roll.logps[static_cast<size_t>(k)]);
            tl.weight = mult[u];
            if (cfg.beta != 0.0) {
                Tape tr(false);
                Bound rb = bind_params(tr, ctx.ref.params);
                ScoreNodes ref_sc = score_sequence_t(tr, rb, ctx.ref.cfg, roll, cfg.temperature);
                tl.kl = exact_kl_node(t, sc.log_dist, tr.val(ref_sc.log_dist));
            }
            batch.push_back(std::move(tl));
            batch_adv.push_back(adv[static_cast<size_t>(uniq_index[u])]);
        }
    }

    met.mean_reward = reward_n ? reward_sum / static_cast<double>(reward_n) : 0.0;
    met.mean_cot_len = reward_n ? cot_sum / static_cast<double>(reward_n) : 0.0;
    if (batch.empty()) return met;

    GrpoLossStats stats;
    NodeId loss = grpo_loss(t, batch, batch_adv, cfg.eps, cfg.beta, &stats);
    met.loss = static_cast<double>(t.val(loss)[0]);
    met.clip_frac = stats.clip_frac;
    met.kl = stats.mean_kl;
    t.backward(loss);

    std::map<std::string, Array> grads;
    collect_grads(t, pb, TrainableSet::everything(), grads);
    ctx.opt.step(grads, [&](const std::string& k) -> Array& { return ctx.planner->params.at(k); }, cfg.planner_lr);
    ctx.planner->version += 1;
    return met;
}

// ---- Stage 5: generator GRPO under the frozen planner ---------------------------

struct DitGrpoContext {
    const PlannerPolicy* planner = nullptr; // frozen
    FlowGenerator* generator = nullptr;     // trainable
    const Bridge* bridge = nullptr;         // frozen
    const Vocab* vocab = nullptr;
    FlowGenerator ref;                      // snapshot for the optional KL term
    Adam opt;
};

// One optimizer step of DiT-GRPO: a single frozen-planner rollout fixes the
// condition, N2 stochastic denoising trajectories with distinct noise streams
// are rewarded, and the clipped surrogate runs over per-step transition
// log-densities with gradient on the first 60% of steps.
inline StepMetrics dit_grpo_step(DitGrpoContext& ctx, const std::vector<TaskRecord>& tasks, const GrpoConfig& cfg,
                                 uint64_t seed, uint64_t step_index, const RewardHook& hook) {
    cfg.validate();
    StepMetrics met;
    met.step = static_cast<int64_t>(step_index);
    met.stage = "dit-grpo";
    met.scenario = tasks.empty() ? "" : scenario_name(tasks[0].scenario);

    struct Member {
        const FlowTrajectory* traj;
        const Array* cond;
        const std::vector<Array>* refs;
        double adv;
        int64_t pool_from;
    };
    std::vector<FlowTrajectory> all_trajs;
    std::vector<ConditionPack> packs(tasks.size());
    std::vector<std::vector<Array>> all_refs(tasks.size());
    std::vector<Member> members;
    double reward_sum = 0.0;
    int64_t reward_n = 0;
    double cot_sum = 0.0;

    all_trajs.reserve(tasks.size() * static_cast<size_t>(cfg.n2));
    for (size_t ti = 0; ti < tasks.size(); ++ti) {
        const TaskRecord& task = tasks[ti];
        if (task.scenario != Scenario::Composition && task.scenario != Scenario::TextRender)
            throw ContractError("dit_grpo_step: scenarios restricted to composition and text rendering");
        const uint64_t group_base = substream(hash_str("dit-grpo"), seed, step_index, ti);

        TokenSeq prompt = task_rl_prompt(*ctx.vocab, task);
        TokenSeq roll = sample_rollout(*ctx.planner, prompt, cfg.temperature, cfg.max_new,
                                       RngStream(seed, substream(group_base, hash_str("plan"))), *ctx.vocab);
        cot_sum += think_body_len(roll);
        // a malformed single rollout falls back to the pseudo-CoT template
        if (roll.malformed) roll = build_prompt(*ctx.vocab, PromptMode::PretrainPseudoCot, task.content);
        packs[ti] = make_condition(*ctx.planner, *ctx.bridge, roll);
        all_refs[ti] = task_refs(task);

        std::vector<FlowTrajectory> trajs(static_cast<size_t>(cfg.n2));
        std::vector<double> rewards(static_cast<size_t>(cfg.n2));
        parallel_for(cfg.n2, [&](int i) {
            // distinct noise streams across the group
            trajs[static_cast<size_t>(i)] =
                sde_sample(*ctx.generator, &packs[ti].refined, all_refs[ti], cfg.rollout_steps, cfg.sigma, seed,
                           substream(group_base, hash_str("sde"), static_cast<uint64_t>(i)), packs[ti].K);
            RolloutArtifacts art;
            art.grid = &trajs[static_cast<size_t>(i)].latents.back();
            art.vocab = ctx.vocab;
            rewards[static_cast<size_t>(i)] = hook(task, art).score;
        });
        for (double r : rewards) {
            reward_sum += r;
            ++reward_n;
        }

        const double rmin = *std::min_element(rewards.begin(), rewards.end());
        const double rmax = *std::max_element(rewards.begin(), rewards.end());
        if (rmax - rmin == 0.0) {
            ++met.skipped_groups;
            continue;
        }
        std::vector<double> adv = compute_advantages(rewards, cfg.adv_eps);
        for (int i = 0; i < cfg.n2; ++i) {
            all_trajs.push_back(std::move(trajs[static_cast<size_t>(i)]));
            members.push_back({&all_trajs.back(), &packs[ti].refined, &all_refs[ti], adv[static_cast<size_t>(i)],
                               packs[ti].K});
        }
    }

    met.mean_reward = reward_n ? reward_sum / static_cast<double>(reward_n) : 0.0;
    met.mean_cot_len = tasks.empty() ? 0.0 : cot_sum / static_cast<double>(tasks.size());
    if (members.empty()) return met;

    // token normalization over the whole batch; per-member tapes keep memory flat
    int64_t norm_tokens = 0;
    for (const Member& m : members) norm_tokens += active_steps(m.traj->steps, cfg.active_frac);

    std::map<std::string, Array> grads;
    double loss_total = 0.0, kl_weighted = 0.0, clip_weighted = 0.0;
    int64_t token_total = 0;
    for (const Member& m : members) {
        Tape t;
        Bound gb = bind_params(t, ctx.generator->params, TrainableSet::everything());
        const int n_active = active_steps(m.traj->steps, cfg.active_frac);
        std::vector<NodeId> rows;
        Array old_lp = Array::zeros({n_active, 1});
        for (int k = 0; k < n_active; ++k) {
            rows.push_back(t.reshape(
                step_logp_node(t, gb, ctx.generator->cfg, *m.traj, k, m.cond, *m.refs, m.pool_from), {1, 1}));
            old_lp[k] = static_cast<real>(m.traj->logps[static_cast<size_t>(k)]);
        }
        TrajectoryLogps tl;
        tl.new_logps = t.concat_rows(rows);
        tl.old_logps = std::move(old_lp);
        if (cfg.beta_dit != 0.0) {
            // exact gaussian KL between the current and reference step means
            NodeId kl_total = -1;
            const double dt = 1.0 / m.traj->steps;
            for (int k = 0; k < n_active; ++k) {
                const double sigma = m.traj->sigmas[static_cast<size_t>(k)];
                Array ref_v = velocity(ctx.ref, m.traj->latents[static_cast<size_t>(k)],
                                       m.traj->times[static_cast<size_t>(k)], m.cond, *m.refs, m.pool_from);
                Array xk = patchify(m.traj->latents[static_cast<size_t>(k)], ctx.generator->cfg);
                NodeId xkn = t.constant(xk);
                NodeId c = t.constant(*m.cond);
                NodeId v = velocity_t(t, gb, ctx.generator->cfg, xkn, m.traj->times[static_cast<size_t>(k)], c,
                                      *m.refs, m.pool_from);
                NodeId mean_new = t.add(xkn, t.scale(v, static_cast<real>(dt)));
                Array mean_ref = xk;
                Array ref_vp = patchify(ref_v, ctx.generator->cfg);
                for (int64_t e = 0; e < mean_ref.numel(); ++e)
                    mean_ref[e] = static_cast<real>(mean_ref[e] + static_cast<real>(dt) * ref_vp[e]);
                NodeId d = t.sub(mean_new, t.constant(mean_ref));
                NodeId kl = t.scale(t.sum(t.mul(d, d)), static_cast<real>(0.5 / (sigma * sigma)));
                kl_total = kl_total < 0 ? kl : t.add(kl_total, kl);
            }
            tl.kl = kl_total;
        }
        GrpoLossStats stats;
        NodeId loss = grpo_loss(t, {tl}, {m.adv}, cfg.eps, cfg.beta_dit, &stats, norm_tokens);
        loss_total += static_cast<double>(t.val(loss)[0]);
        kl_weighted += stats.mean_kl;
        clip_weighted += stats.clip_frac * static_cast<double>(stats.token_count);
        token_total += stats.token_count;
        t.backward(loss);
        collect_grads(t, gb, TrainableSet::everything(), grads);
    }

    met.loss = loss_total;
    met.clip_frac = token_total ? clip_weighted / static_cast<double>(token_total) : 0.0;
    met.kl = kl_weighted;
    ctx.opt.step(grads, [&](const std::string& k) -> Array& { return ctx.generator->params.at(k); },
                 cfg.generator_lr);
    return met;
}

// ---- alternation ------------------------------------------------------------------

struct AlternateStage {
    bool train_planner = false;
    bool train_generator = false;
    int steps = 0;

    static AlternateStage mllm(int steps) { return {true, false, steps}; }
    static AlternateStage dit(int steps) { return {false, true, steps}; }
};

inline AlternateStage alternate_stage_from_name(const std::string& kind, int steps) {
    if (kind == "mllm-grpo" || kind == "mllm") return AlternateStage::mllm(steps);
    if (kind == "dit-grpo" || kind == "dit") return AlternateStage::dit(steps);
    throw ContractError("unknown alternation stage '" + kind + "'");
}

struct AlternateReport {
    std::vector<StepMetrics> series;
    std::vector<uint64_t> planner_hash_per_stage;
    std::vector<uint64_t> generator_hash_per_stage;
    std::vector<uint64_t> ref_hash_per_stage; // hash of the pi_ref snapshot taken at stage start
};

// Per-stage seed namespaces keep stage-4 and stage-5 training data strictly
// non-overlapping.
inline uint64_t stage_task_seed(int stage_index, uint64_t step, int slot) {
    return (static_cast<uint64_t>(stage_index + 1) << 40) + step * 64 + static_cast<uint64_t>(slot);
}

inline uint64_t params_hash(const ParamStore& ps) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& [name, arr] : ps.params) {
        h = fnv1a64(name.data(), name.size(), h);
        h = hash_combine(h, array_hash(arr));
    }
    return h;
}

// Executes GRPO stages in order with freeze flags enforced, snapshotting
// pi_ref at each stage start. Each stage draws tasks from its own seed
// namespace (seed_namespace_base + stage index), keeping their data disjoint.
inline AlternateReport alternate(PlannerPolicy& planner, FlowGenerator& generator, const Bridge& bridge,
                                 const Vocab& vocab, const KnowledgeTable& kt,
                                 const std::vector<AlternateStage>& stages, const GrpoConfig& cfg, uint64_t seed,
                                 const RewardHook& hook,
                                 const std::function<void(const StepMetrics&)>& on_step = {},
                                 int seed_namespace_base = 4) {
    AlternateReport report;
    for (size_t si = 0; si < stages.size(); ++si) {
        const AlternateStage& st = stages[si];
        if (st.train_planner && st.train_generator)
            throw ContractError("alternate: planner and generator may not train simultaneously");
        if (!st.train_planner && !st.train_generator)
            throw ContractError("alternate: stage trains neither module");
        if (st.steps <= 0) throw ContractError("alternate: stage budget must be positive");

        if (st.train_planner) {
            MllmGrpoContext ctx;
            ctx.planner = &planner;
            ctx.generator = &generator;
            ctx.bridge = &bridge;
            ctx.vocab = &vocab;
            ctx.ref = planner; // frozen snapshot at stage start
            report.ref_hash_per_stage.push_back(params_hash(ctx.ref.params));
            const uint64_t gen_hash_before = params_hash(generator.params);
            for (int step = 0; step < st.steps; ++step) {
                std::vector<TaskRecord> tasks;
                RngStream scen_rng(seed, substream(hash_str("mllm-scenario"), si, static_cast<uint64_t>(step)));
                for (int slot = 0; slot < cfg.tasks_per_step; ++slot) {
                    Scenario sc = cfg.mixture.sample(scen_rng);
                    tasks.push_back(make_task(vocab, kt, sc, Split::Train,
                                              stage_task_seed(seed_namespace_base + static_cast<int>(si), static_cast<uint64_t>(step), slot)));
                }
                StepMetrics met = mllm_grpo_step(ctx, tasks, cfg, seed, static_cast<uint64_t>(step), hook);
                if (on_step) on_step(met);
                report.series.push_back(std::move(met));
            }
            if (params_hash(generator.params) != gen_hash_before)
                throw ContractError("alternate: generator changed during a planner stage");
        } else {
            DitGrpoContext ctx;
            ctx.planner = &planner;
            ctx.generator = &generator;
            ctx.bridge = &bridge;
            ctx.vocab = &vocab;
            ctx.ref = generator;
            report.ref_hash_per_stage.push_back(params_hash(ctx.ref.params));
            const uint64_t planner_hash_before = params_hash(planner.params);
            // stage-5 data: composition and text rendering only
            ScenarioMixture dit_mix;
            dit_mix.weights = {cfg.mixture.weights[0], 0, cfg.mixture.weights[2], 0, 0};
            if (dit_mix.weights[0] + dit_mix.weights[2] == 0.0) dit_mix.weights = {1, 0, 1, 0, 0};
            for (int step = 0; step < st.steps; ++step) {
                std::vector<TaskRecord> tasks;
                RngStream scen_rng(seed, substream(hash_str("dit-scenario"), si, static_cast<uint64_t>(step)));
                for (int slot = 0; slot < cfg.tasks_per_step; ++slot) {
                    Scenario sc = dit_mix.sample(scen_rng);
                    tasks.push_back(make_task(vocab, kt, sc, Split::Train,
                                              stage_task_seed(seed_namespace_base + static_cast<int>(si), static_cast<uint64_t>(step), slot)));
                }
                StepMetrics met = dit_grpo_step(ctx, tasks, cfg, seed, static_cast<uint64_t>(step), hook);
                if (on_step) on_step(met);
                report.series.push_back(std::move(met));
            }
            if (params_hash(planner.params) != planner_hash_before)
                throw ContractError("alternate: planner changed during a generator stage");
        }
        report.planner_hash_per_stage.push_back(params_hash(planner.params));
        report.generator_hash_per_stage.push_back(params_hash(generator.params));
    }
    return report;
}

} // namespace thinkgen
