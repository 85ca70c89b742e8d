#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "thinkgen/nn.hpp"
#include "thinkgen/rng.hpp"
#include "thinkgen/tape.hpp"
#include "thinkgen/world.hpp"

namespace thinkgen {

struct GenConfig {
    int64_t d = 64;  // token width; equals the condition width
    int blocks = 2;
    int heads = 4;
    int patch = 2;
    int time_freqs = 16;
    int64_t grid_h = kGridH, grid_w = kGridW, grid_c = kGridC;
    std::string resolution_tag = "grid16";

    int64_t tokens() const { return (grid_h / patch) * (grid_w / patch); }
    int64_t patch_dim() const { return static_cast<int64_t>(patch) * patch * grid_c; }

    void validate() const {
        if (grid_h % patch != 0 || grid_w % patch != 0) throw ContractError("generator patch must divide the grid");
        if (d % heads != 0) throw ContractError("generator width must divide heads");
    }
};

struct GridLatent {
    Array latent; // (H, W, C)
    std::string resolution_tag = "grid16";
};

struct FlowGenerator {
    GenConfig cfg;
    ParamStore params;
};

inline FlowGenerator init_generator(const GenConfig& cfg, uint64_t seed) {
    cfg.validate();
    FlowGenerator g;
    g.cfg = cfg;
    RngStream rng(seed, hash_str("generator-init"));
    init_linear(g.params, "patch_embed", cfg.patch_dim(), cfg.d, rng);
    init_linear(g.params, "time", 2 * cfg.time_freqs, cfg.d, rng);
    // direct additive condition pathway alongside the joint attention;
    // the pooled summary is normalized so its scale is unit from the start
    g.params.insert("cond_ln.g", Array::full({1, cfg.d}, real(1)));
    g.params.insert("cond_ln.b", Array::zeros({1, cfg.d}));
    init_linear(g.params, "cond_proj", cfg.d, cfg.d, rng, real(0.02));
    g.params.insert("pos", Array::randn({cfg.tokens(), cfg.d}, rng, real(0.1))); // latent cell positions
    g.params.insert("role", Array::randn({3, cfg.d}, rng, real(0.02))); // latent / condition / reference
    for (int i = 0; i < cfg.blocks; ++i) init_block(g.params, "blk" + std::to_string(i), cfg.d, rng);
    g.params.insert("lnf.g", Array::full({1, cfg.d}, real(1)));
    g.params.insert("lnf.b", Array::zeros({1, cfg.d}));
    // the head must start non-zero: a frozen generator with a zero head would
    // pass no gradient back to the connector during alignment
    init_linear(g.params, "head", cfg.d, cfg.patch_dim(), rng, real(0.02));
    return g;
}

// (H,W,C) -> (tokens, patch*patch*C), row-major patches
inline Array patchify(const Array& grid, const GenConfig& cfg) {
    if (grid.shape != Shape{cfg.grid_h, cfg.grid_w, cfg.grid_c})
        throw ShapeError("patchify: grid " + shape_str(grid.shape));
    const int64_t ph = cfg.grid_h / cfg.patch, pw = cfg.grid_w / cfg.patch;
    Array out = Array::zeros({ph * pw, cfg.patch_dim()});
    for (int64_t pr = 0; pr < ph; ++pr)
        for (int64_t pc = 0; pc < pw; ++pc)
            for (int64_t dy = 0; dy < cfg.patch; ++dy)
                for (int64_t dx = 0; dx < cfg.patch; ++dx)
                    for (int64_t ch = 0; ch < cfg.grid_c; ++ch)
                        out.at(pr * pw + pc, (dy * cfg.patch + dx) * cfg.grid_c + ch) =
                            grid.data[static_cast<size_t>(((pr * cfg.patch + dy) * cfg.grid_w + pc * cfg.patch + dx) *
                                                              cfg.grid_c +
                                                          ch)];
    return out;
}

inline Array unpatchify(const Array& patches, const GenConfig& cfg) {
    if (patches.shape != Shape{cfg.tokens(), cfg.patch_dim()})
        throw ShapeError("unpatchify: " + shape_str(patches.shape));
    const int64_t ph = cfg.grid_h / cfg.patch, pw = cfg.grid_w / cfg.patch;
    Array out = Array::zeros({cfg.grid_h, cfg.grid_w, cfg.grid_c});
    for (int64_t pr = 0; pr < ph; ++pr)
        for (int64_t pc = 0; pc < pw; ++pc)
            for (int64_t dy = 0; dy < cfg.patch; ++dy)
                for (int64_t dx = 0; dx < cfg.patch; ++dx)
                    for (int64_t ch = 0; ch < cfg.grid_c; ++ch)
                        out.data[static_cast<size_t>(((pr * cfg.patch + dy) * cfg.grid_w + pc * cfg.patch + dx) *
                                                         cfg.grid_c +
                                                     ch)] = patches.at(pr * pw + pc, (dy * cfg.patch + dx) * cfg.grid_c + ch);
    return out;
}

// Velocity in patch space. Latent tokens, condition rows, and reference
// tokens are concatenated for joint attention, distinguished by learned role
// embeddings. A -1 condition means unconditional: a fixed zero row whose
// meaning is carried entirely by the (always trained) condition role vector.
// cond_pool_from marks where the instruction rows start (after the
// prepadding), so the additive summary pools only over them.
inline NodeId velocity_t(Tape& t, const Bound& b, const GenConfig& cfg, NodeId x_patch, double time,
                         NodeId cond, const std::vector<Array>& refs, int64_t cond_pool_from = 0) {
    const int64_t n_lat = cfg.tokens();
    if (t.val(x_patch).shape != Shape{n_lat, cfg.patch_dim()})
        throw ShapeError("velocity: latent " + shape_str(t.val(x_patch).shape));

    NodeId role = b.at("role");
    NodeId lat = t.matmul(x_patch, b.at("patch_embed.w"));
    lat = t.add(lat, b.at("patch_embed.b"));
    lat = t.add(lat, b.at("pos"));
    NodeId temb = linear(t, b, "time", t.constant(time_features(time, cfg.time_freqs)));
    lat = t.add(lat, temb); // row-broadcast over latent tokens
    lat = t.add(lat, t.slice(role, 0, 1, 0, cfg.d));

    if (cond < 0) cond = t.constant(Array::zeros({1, cfg.d}));
    if (t.val(cond).cols() != cfg.d) throw ShapeError("velocity: condition width " + shape_str(t.val(cond).shape));
    // mean-pooled instruction summary feeds every latent token directly; the
    // attention path below keeps row-level detail (prepadding included)
    const int64_t cond_rows = t.val(cond).rows();
    const int64_t from = (cond_pool_from > 0 && cond_pool_from < cond_rows) ? cond_pool_from : 0;
    Array pool_w = Array::zeros({1, cond_rows});
    for (int64_t i = from; i < cond_rows; ++i) pool_w.at(0, i) = static_cast<real>(1.0 / (cond_rows - from));
    NodeId pool = t.matmul(t.constant(std::move(pool_w)), cond);
    pool = t.layer_norm(pool, b.at("cond_ln.g"), b.at("cond_ln.b"));
    lat = t.add(lat, linear(t, b, "cond_proj", pool));
    NodeId cnd = t.add(cond, t.slice(role, 1, 2, 0, cfg.d));

    std::vector<NodeId> parts = {lat, cnd};
    for (const Array& ref : refs) {
        NodeId rp = t.matmul(t.constant(patchify(ref, cfg)), b.at("patch_embed.w"));
        rp = t.add(rp, b.at("patch_embed.b"));
        rp = t.add(rp, b.at("pos"));
        parts.push_back(t.add(rp, t.slice(role, 2, 3, 0, cfg.d)));
    }
    NodeId x = t.concat_rows(parts);
    for (int i = 0; i < cfg.blocks; ++i) x = transformer_block(t, b, "blk" + std::to_string(i), x, cfg.heads, false);
    x = t.layer_norm(x, b.at("lnf.g"), b.at("lnf.b"));
    NodeId lat_out = t.slice(x, 0, n_lat, 0, cfg.d);
    return t.add(t.matmul(lat_out, b.at("head.w")), b.at("head.b"));
}

// Plain velocity evaluation in grid space.
inline Array velocity(const FlowGenerator& gen, const Array& x_grid, double time, const Array* cond,
                      const std::vector<Array>& refs, int64_t cond_pool_from = 0) {
    Tape t(false);
    Bound b = bind_params(t, gen.params);
    NodeId c = cond ? t.constant(*cond) : NodeId(-1);
    NodeId v = velocity_t(t, b, gen.cfg, t.constant(patchify(x_grid, gen.cfg)), time, c, refs, cond_pool_from);
    return unpatchify(t.val(v), gen.cfg);
}

// ---- flow-matching loss --------------------------------------------------------

struct FmDraw {
    double t = 0.0;
    Array x0; // (H, W, C)
};

inline FmDraw draw_fm(const GenConfig& cfg, RngStream& rng) {
    FmDraw d;
    d.t = rng.uniform();
    d.x0 = Array::zeros({cfg.grid_h, cfg.grid_w, cfg.grid_c});
    for (real& v : d.x0.data) v = static_cast<real>(rng.normal());
    return d;
}

// Loss on an explicit (t, x0) draw: ||(x1-x0) - v(x_t, t)||^2 averaged over
// elements, computed in patch space (a fixed permutation of the grid).
inline NodeId fm_loss_at(Tape& t, const Bound& b, const GenConfig& cfg, const Array& x1, NodeId cond,
                         const std::vector<Array>& refs, double time, const Array& x0,
                         int64_t cond_pool_from = 0) {
    if (x1.shape != Shape{cfg.grid_h, cfg.grid_w, cfg.grid_c})
        throw ShapeError("fm_loss: x1 " + shape_str(x1.shape));
    if (!x0.same_shape(x1)) throw ShapeError("fm_loss: x0 " + shape_str(x0.shape));
    Array xt = x0;
    Array target = x1;
    for (int64_t i = 0; i < xt.numel(); ++i) {
        xt[i] = static_cast<real>((1.0 - time) * x0[i] + time * x1[i]);
        target[i] = x1[i] - x0[i];
    }
    NodeId v = velocity_t(t, b, cfg, t.constant(patchify(xt, cfg)), time, cond, refs, cond_pool_from);
    return t.mse(v, t.constant(patchify(target, cfg)));
}

inline NodeId fm_loss(Tape& t, const Bound& b, const GenConfig& cfg, const Array& x1, NodeId cond,
                      const std::vector<Array>& refs, RngStream& rng, int64_t cond_pool_from = 0) {
    FmDraw d = draw_fm(cfg, rng);
    return fm_loss_at(t, b, cfg, x1, cond, refs, d.t, d.x0, cond_pool_from);
}

// ---- sampling --------------------------------------------------------------------

enum class SampleMode { Ode, Sde };

struct FlowTrajectory {
    SampleMode mode = SampleMode::Ode;
    int steps = 0;
    std::vector<double> times;   // t_0 .. t_T
    std::vector<Array> latents;  // T+1 grid-space latents
    std::vector<double> logps;   // per-step transition log-density (SDE only)
    std::vector<double> sigmas;  // per-step sigma (SDE only)
    uint64_t noise_stream = 0;
    double cfg_scale = 1.0;
    double cfg_cutoff = 0.0;
};

inline Array sample_noise_grid(const GenConfig& cfg, RngStream& rng) {
    Array x = Array::zeros({cfg.grid_h, cfg.grid_w, cfg.grid_c});
    for (real& v : x.data) v = static_cast<real>(rng.normal());
    return x;
}

// Euler integration of the learned field from noise at t=0 to t=1.
// Classifier-free guidance v_u + s*(v_c - v_u) applies while k/T < cutoff;
// scale 1 short-circuits to the conditional velocity exactly.
inline std::pair<GridLatent, FlowTrajectory> ode_sample(const FlowGenerator& gen, const Array* cond,
                                                        const std::vector<Array>& refs, int steps,
                                                        double cfg_scale, double cfg_cutoff, uint64_t seed,
                                                        uint64_t noise_stream, int64_t cond_pool_from = 0) {
    if (steps < 1) throw ContractError("ode_sample: steps must be >= 1");
    if (cfg_scale < 1.0) throw ContractError("ode_sample: cfg must be >= 1");
    if (cfg_cutoff < 0.0 || cfg_cutoff > 1.0) throw ContractError("ode_sample: cutoff in [0,1]");

    RngStream rng(seed, noise_stream);
    Array x = sample_noise_grid(gen.cfg, rng);
    FlowTrajectory traj;
    traj.mode = SampleMode::Ode;
    traj.steps = steps;
    traj.noise_stream = noise_stream;
    traj.cfg_scale = cfg_scale;
    traj.cfg_cutoff = cfg_cutoff;
    traj.latents.push_back(x);
    traj.times.push_back(0.0);

    const double dt = 1.0 / steps;
    for (int k = 0; k < steps; ++k) {
        const double tk = static_cast<double>(k) * dt;
        Array v;
        const bool guided = cfg_scale != 1.0 && static_cast<double>(k) / steps < cfg_cutoff;
        if (guided) {
            Array vc = velocity(gen, x, tk, cond, refs, cond_pool_from);
            Array vu = velocity(gen, x, tk, nullptr, refs);
            v = vc;
            for (int64_t i = 0; i < v.numel(); ++i)
                v[i] = static_cast<real>(vu[i] + cfg_scale * (static_cast<double>(vc[i]) - vu[i]));
        } else {
            v = velocity(gen, x, tk, cond, refs, cond_pool_from);
        }
        for (int64_t i = 0; i < x.numel(); ++i) x[i] = static_cast<real>(x[i] + dt * v[i]);
        traj.latents.push_back(x);
        traj.times.push_back(tk + dt);
    }
    GridLatent out;
    out.latent = x;
    out.resolution_tag = gen.cfg.resolution_tag;
    return {out, traj};
}

// Euler-Maruyama on the learned field with a constant sigma schedule
// (sigma0 * sqrt(dt)); records the exact Gaussian log-density of each
// realized transition so the trajectory can be re-scored.
inline FlowTrajectory sde_sample(const FlowGenerator& gen, const Array* cond, const std::vector<Array>& refs,
                                 int steps, double sigma0, uint64_t seed, uint64_t noise_stream,
                                 int64_t cond_pool_from = 0) {
    if (steps < 1) throw ContractError("sde_sample: steps must be >= 1");
    if (sigma0 <= 0.0) throw ContractError("sde_sample: sigma must be positive (log-density undefined at 0)");

    RngStream rng(seed, noise_stream);
    Array x = sample_noise_grid(gen.cfg, rng);
    FlowTrajectory traj;
    traj.mode = SampleMode::Sde;
    traj.steps = steps;
    traj.noise_stream = noise_stream;
    traj.latents.push_back(x);
    traj.times.push_back(0.0);

    const double dt = 1.0 / steps;
    const double sigma = sigma0 * std::sqrt(dt);
    const int64_t n = x.numel();
    for (int k = 0; k < steps; ++k) {
        const double tk = static_cast<double>(k) * dt;
        Array v = velocity(gen, x, tk, cond, refs, cond_pool_from);
        Array next = x;
        Array diff = x;
        for (int64_t i = 0; i < n; ++i) {
            const real mean = static_cast<real>(x[i] + static_cast<real>(dt) * v[i]);
            next[i] = static_cast<real>(mean + static_cast<real>(sigma * rng.normal()));
            diff[i] = next[i] - mean;
        }
        // same summation order and formula as trajectory scoring (patch space)
        const Array dp = patchify(diff, gen.cfg);
        real sq = 0;
        for (int64_t i = 0; i < n; ++i) sq += dp[i] * dp[i];
        const double logp = static_cast<double>(sq) * (-0.5 / (sigma * sigma)) -
                            0.5 * static_cast<double>(n) * std::log(2.0 * 3.141592653589793 * sigma * sigma);
        traj.logps.push_back(logp);
        traj.sigmas.push_back(sigma);
        x = next;
        traj.latents.push_back(x);
        traj.times.push_back(tk + dt);
    }
    return traj;
}

struct TrajectoryScore {
    std::vector<NodeId> logps; // T scalar nodes
    std::vector<bool> active;  // gradient-active mask: first ceil(frac*T) steps
};

inline int active_steps(int steps, double frac = 0.6) {
    return static_cast<int>(std::ceil(frac * steps));
}

// Differentiable Gaussian transition log-density of step k of an SDE
// trajectory, under the bound parameters.
inline NodeId step_logp_node(Tape& t, const Bound& b, const GenConfig& cfg, const FlowTrajectory& traj, int k,
                             const Array* cond, const std::vector<Array>& refs, int64_t cond_pool_from = 0) {
    const double dt = 1.0 / traj.steps;
    const double sigma = traj.sigmas[static_cast<size_t>(k)];
    const int64_t n = cfg.grid_h * cfg.grid_w * cfg.grid_c;
    NodeId xk = t.constant(patchify(traj.latents[static_cast<size_t>(k)], cfg));
    NodeId c = cond ? t.constant(*cond) : NodeId(-1);
    NodeId v = velocity_t(t, b, cfg, xk, traj.times[static_cast<size_t>(k)], c, refs, cond_pool_from);
    NodeId mean = t.add(xk, t.scale(v, static_cast<real>(dt)));
    NodeId diff = t.sub(t.constant(patchify(traj.latents[static_cast<size_t>(k + 1)], cfg)), mean);
    NodeId sq = t.sum(t.mul(diff, diff));
    return t.affine(sq, static_cast<real>(-0.5 / (sigma * sigma)),
                    static_cast<real>(-0.5 * static_cast<double>(n) *
                                      std::log(2.0 * 3.141592653589793 * sigma * sigma)));
}

// Differentiable per-step transition log-densities of an SDE trajectory under
// the bound generator parameters. Only the first ceil(frac*T) steps carry
// gradient; later steps are evaluated as constants.
inline TrajectoryScore score_trajectory_t(Tape& t, const Bound& b, const GenConfig& cfg,
                                          const FlowTrajectory& traj, const Array* cond,
                                          const std::vector<Array>& refs, const ParamStore& params,
                                          double frac = 0.6, int64_t cond_pool_from = 0) {
    if (traj.mode != SampleMode::Sde) throw ContractError("score_trajectory: ODE trajectories have no density");
    if (static_cast<int>(traj.latents.size()) != traj.steps + 1)
        throw ContractError("score_trajectory: trajectory latents incomplete");

    TrajectoryScore out;
    const int n_active = active_steps(traj.steps, frac);
    const double dt = 1.0 / traj.steps;
    const int64_t n = cfg.grid_h * cfg.grid_w * cfg.grid_c;

    for (int k = 0; k < traj.steps; ++k) {
        const double sigma = traj.sigmas[static_cast<size_t>(k)];
        const double tk = traj.times[static_cast<size_t>(k)];
        const bool is_active = k < n_active;
        if (is_active) {
            out.logps.push_back(step_logp_node(t, b, cfg, traj, k, cond, refs, cond_pool_from));
        } else {
            // constant evaluation through a no-gradient pass
            Tape t0(false);
            Bound b0 = bind_params(t0, params);
            NodeId xk = t0.constant(patchify(traj.latents[static_cast<size_t>(k)], cfg));
            NodeId c = cond ? t0.constant(*cond) : NodeId(-1);
            NodeId v = velocity_t(t0, b0, cfg, xk, tk, c, refs, cond_pool_from);
            const Array& vv = t0.val(v);
            const Array xkp = patchify(traj.latents[static_cast<size_t>(k + 1)], cfg);
            const Array xka = patchify(traj.latents[static_cast<size_t>(k)], cfg);
            double sq = 0.0;
            for (int64_t i = 0; i < n; ++i) {
                const double mean = static_cast<double>(xka[i]) + dt * vv[i];
                const double z = (static_cast<double>(xkp[i]) - mean) / sigma;
                sq += z * z;
            }
            const double logp =
                -0.5 * sq - 0.5 * static_cast<double>(n) * std::log(2.0 * 3.141592653589793 * sigma * sigma);
            out.logps.push_back(t.constant(Array::scalar(static_cast<real>(logp))));
        }
        out.active.push_back(is_active);
    }
    return out;
}

} // namespace thinkgen
