#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "otflow/container.hpp"
#include "otflow/coupling.hpp"
#include "otflow/errors.hpp"
#include "otflow/flow.hpp"
#include "otflow/optim.hpp"
#include "otflow/toyworld.hpp"

namespace otflow {

// Hellinger distance between two-point distributions, bounded to [0,1].
inline double hellinger(const LogitPair& p, const LogitPair& q) {
    if (p.minus < 0.0 || p.plus < 0.0 || q.minus < 0.0 || q.plus < 0.0)
        throw numeric_error("hellinger: negative probability component");
    const double dm = std::sqrt(p.minus) - std::sqrt(q.minus);
    const double dp = std::sqrt(p.plus) - std::sqrt(q.plus);
    return std::sqrt(dm * dm + dp * dp) / std::numbers::sqrt2;
}

// KL on two-point distributions; +inf when q lacks support where p has mass.
inline double kl_two_point(const LogitPair& p, const LogitPair& q) {
    double acc = 0.0;
    const double ps[2] = {p.minus, p.plus};
    const double qs[2] = {q.minus, q.plus};
    for (int i = 0; i < 2; ++i) {
        if (ps[i] == 0.0) continue;
        if (qs[i] == 0.0) return std::numeric_limits<double>::infinity();
        acc += ps[i] * std::log(ps[i] / qs[i]);
    }
    return acc;
}

// Jensen-Shannon, raw (bounded by ln 2).
inline double js_two_point(const LogitPair& p, const LogitPair& q) {
    const LogitPair m{0.5 * (p.minus + q.minus), 0.5 * (p.plus + q.plus)};
    return 0.5 * kl_two_point(p, m) + 0.5 * kl_two_point(q, m);
}

enum class DivergenceKind { hellinger, kl, js };

inline DivergenceKind parse_divergence(const std::string& s) {
    if (s == "hellinger") return DivergenceKind::hellinger;
    if (s == "kl") return DivergenceKind::kl;
    if (s == "js") return DivergenceKind::js;
    throw config_error("unknown divergence kind '" + s + "'");
}

inline std::string divergence_name(DivergenceKind k) {
    switch (k) {
        case DivergenceKind::hellinger: return "hellinger";
        case DivergenceKind::kl: return "kl";
        case DivergenceKind::js: return "js";
    }
    throw config_error("unknown divergence kind");
}

// Named divergence on logit pairs. JS is normalized by ln 2 so the bounded
// kinds share the [0,1] range; KL is unbounded and may return +inf rather
// than throw.
inline double divergence_variant(const LogitPair& p, const LogitPair& q,
                                 DivergenceKind kind) {
    switch (kind) {
        case DivergenceKind::hellinger: return hellinger(p, q);
        case DivergenceKind::kl: return kl_two_point(p, q);
        case DivergenceKind::js: return js_two_point(p, q) / std::numbers::ln2;
    }
    throw config_error("unknown divergence kind");
}

// Learnable condition-space direction for one source -> target concept pair.
struct ConceptVector {
    Tensor direction;
    std::string from_label;
    std::string to_label;
    std::vector<std::uint64_t> seeds;  // seeds the divergence was averaged over
    double delta_omega = 0.0;          // seed-averaged measured divergence
};

struct DeltaOmegaSettings {
    int t_bar = 16;
    bool normalized_time = true;
    CouplingVariant variant = CouplingVariant::full;
    DivergenceKind kind = DivergenceKind::hellinger;
};

struct DeltaOmegaResult {
    double mean = 0.0;
    std::vector<double> per_seed;
};

// Generates one trajectory per condition from the same prior draw, couples
// both terminals into the semantic space, reads the two-slot logits, and
// returns the seed-averaged divergence.
inline DeltaOmegaResult measure_delta_omega(
    const VelocityModel& generator, const CouplingCheckpoint& coupling,
    const ToyWorld& world, const std::string& label_minus,
    const std::string& label_plus, std::span<const std::uint64_t> seeds,
    const DeltaOmegaSettings& settings = {}) {
    if (seeds.empty())
        throw contract_error("measure_delta_omega: empty seed list");
    const Tensor cond_minus = world.cond_gen_embedding(label_minus);
    const Tensor cond_plus = world.cond_gen_embedding(label_plus);
    const std::size_t slot_minus = world.label_index(label_minus);
    const std::size_t slot_plus = world.label_index(label_plus);

    DeltaOmegaResult result;
    result.per_seed.reserve(seeds.size());
    for (std::uint64_t seed : seeds) {
        Rng rng_minus(seed), rng_plus(seed);  // shared prior draw
        FlowTrajectory tm = euler_generate(generator, cond_minus, settings.t_bar,
                                           rng_minus, settings.normalized_time);
        FlowTrajectory tp = euler_generate(generator, cond_plus, settings.t_bar,
                                           rng_plus, settings.normalized_time);
        // identical coupling noise stream on both sides
        Rng cm = Rng(seed).derive(100);
        Rng cp = Rng(seed).derive(100);
        autograd::NoGradGuard guard;
        EmbeddingBatch zm = couple(world, coupling, tm.terminal(), cond_minus,
                                   settings.variant, cm);
        EmbeddingBatch zp = couple(world, coupling, tp.terminal(), cond_plus,
                                   settings.variant, cp);
        if (slot_minus == slot_plus) {
            result.per_seed.push_back(0.0);
            continue;
        }
        LogitPair pm = toy_logits(world.vlm(), zm.tokens, slot_minus, slot_plus);
        LogitPair pp = toy_logits(world.vlm(), zp.tokens, slot_minus, slot_plus);
        result.per_seed.push_back(divergence_variant(pm, pp, settings.kind));
    }
    for (double v : result.per_seed) result.mean += v;
    result.mean /= static_cast<double>(result.per_seed.size());
    return result;
}

// Stop-gradient concept objective: the target branch is the frozen generator
// velocity plus the scaled condition-divergence; only the concept direction
// receives gradient.
inline Tensor concept_loss(const VelocityModel& generator, const Tensor& q,
                           const Tensor& z_t, const Tensor& cond_minus,
                           const Tensor& cond_plus, double t, double delta) {
    if (delta < 0.0 || delta > 1.0)
        throw contract_error("concept_loss: delta must lie in [0,1]");
    Tensor delta_v = velocity_divergence(generator, z_t, cond_minus, cond_plus, t);
    Tensor target =
        add(generator.velocity(z_t, cond_minus, t), mul_scalar(delta_v, delta))
            .detach();
    Tensor shifted = add(cond_minus, mul_scalar(q, delta));
    Tensor pred = generator.velocity(z_t, shifted, t);
    Tensor diff = sub(target, pred);
    return mul_scalar(sum_sq(diff), 1.0 / static_cast<double>(diff.size()));
}

struct ConceptTrainConfig {
    double lr = 1e-4;
    double weight_decay = 0.0;  // decay would pull the direction back to zero
    int iterations = 1000;
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5, 6, 7, 8};
    DeltaOmegaSettings measure;
};

struct ConceptTrainResult {
    ConceptVector vector;
    std::vector<FlowCurvePoint> curve;
};

// Two-phase concept learning: measure the seed-averaged logit divergence,
// then optimize the concept direction with that divergence as the control
// strength, sampling states from retained source-condition trajectories. The
// generator stays frozen throughout.
inline ConceptTrainResult train_concept(MlpVelocity& generator,
                                        const CouplingCheckpoint& coupling,
                                        const ToyWorld& world,
                                        const std::string& label_minus,
                                        const std::string& label_plus,
                                        const ConceptTrainConfig& cfg,
                                        std::uint64_t opt_seed) {
    DeltaOmegaResult measured =
        measure_delta_omega(generator, coupling, world, label_minus, label_plus,
                            cfg.seeds, cfg.measure);
    if (measured.mean == 0.0)
        throw contract_error("train_concept: degenerate pair '" + label_minus +
                             "' -> '" + label_plus + "' (zero divergence)");
    const double delta = std::min(measured.mean, 1.0);

    const Tensor cond_minus = world.cond_gen_embedding(label_minus);
    const Tensor cond_plus = world.cond_gen_embedding(label_plus);

    // retained source-condition trajectories, one per measurement seed
    std::vector<FlowTrajectory> trajectories;
    trajectories.reserve(cfg.seeds.size());
    for (std::uint64_t seed : cfg.seeds) {
        Rng rng(seed);
        trajectories.push_back(euler_generate(generator, cond_minus,
                                              cfg.measure.t_bar, rng,
                                              cfg.measure.normalized_time));
    }

    ConceptTrainResult result;
    result.vector.direction =
        Tensor::zeros({cond_minus.size()}, /*requires_grad=*/true);
    result.vector.from_label = label_minus;
    result.vector.to_label = label_plus;
    result.vector.seeds.assign(cfg.seeds.begin(), cfg.seeds.end());
    result.vector.delta_omega = measured.mean;

    generator.set_requires_grad(false);  // frozen contract
    AdamWConfig opt_cfg;
    opt_cfg.lr = cfg.lr;
    opt_cfg.weight_decay = cfg.weight_decay;
    AdamW opt({{"concept.q", result.vector.direction}}, opt_cfg);
    Rng pick(opt_seed);
    for (int it = 0; it < cfg.iterations; ++it) {
        const auto& traj = trajectories[pick.below(trajectories.size())];
        const int step = static_cast<int>(pick.below(cfg.measure.t_bar));
        const double t_in =
            cfg.measure.normalized_time
                ? static_cast<double>(step) / cfg.measure.t_bar
                : static_cast<double>(step);
        Tensor loss = concept_loss(generator, result.vector.direction,
                                   traj.states[step], cond_minus, cond_plus,
                                   t_in, delta);
        if (!std::isfinite(loss.item()))
            throw numeric_error("train_concept: loss diverged at iteration " +
                                std::to_string(it));
        backward(loss);
        opt.step();
        opt.zero_grad();
        result.curve.push_back({it, loss.item()});
    }
    generator.set_requires_grad(true);
    return result;
}

// Inference under the shifted condition. Steps with mask false fall back to
// the unshifted condition; an empty mask shifts every step.
inline FlowTrajectory modulated_generate(const VelocityModel& generator,
                                         const ConceptVector& concept_vec,
                                         const Tensor& cond_minus, double delta,
                                         int t_bar, Rng& rng,
                                         bool normalized_time = true,
                                         std::span<const bool> step_mask = {}) {
    if (!step_mask.empty() && step_mask.size() != static_cast<std::size_t>(t_bar))
        throw contract_error("modulated_generate: step mask length must equal t_bar");
    Tensor shifted = add(cond_minus, mul_scalar(concept_vec.direction, delta));
    return euler_generate_steps(
        generator,
        [&](int step) -> Tensor {
            if (!step_mask.empty() && !step_mask[step]) return cond_minus;
            return shifted;
        },
        t_bar, rng, normalized_time);
}

// Combined modulation: the condition is shifted by the sum of the scaled
// concept directions.
inline FlowTrajectory modulated_generate(
    const VelocityModel& generator,
    std::span<const std::pair<const ConceptVector*, double>> shifts,
    const Tensor& cond_minus, int t_bar, Rng& rng, bool normalized_time = true) {
    Tensor shifted = cond_minus;
    for (const auto& [vec, delta] : shifts)
        shifted = add(shifted, mul_scalar(vec->direction, delta));
    return euler_generate_steps(
        generator, [&](int) { return shifted; }, t_bar, rng, normalized_time);
}

inline bool is_extrapolation(double delta) { return delta > 1.0; }

// Named table of concept vectors keyed by (source, target) labels.
struct ConceptBank {
    std::vector<ConceptVector> entries;

    const ConceptVector* find(const std::string& from,
                              const std::string& to) const {
        for (const auto& e : entries)
            if (e.from_label == from && e.to_label == to) return &e;
        return nullptr;
    }

    void save(const std::filesystem::path& path) const {
        Container c;
        c.meta["kind"] = "concept_bank";
        nlohmann::json pairs = nlohmann::json::array();
        for (const auto& e : entries) {
            pairs.push_back({{"from", e.from_label},
                             {"to", e.to_label},
                             {"seeds", e.seeds},
                             {"delta_omega", e.delta_omega}});
            c.add("q." + e.from_label + "->" + e.to_label, e.direction);
        }
        c.meta["pairs"] = pairs;
        c.save(path);
    }

    static ConceptBank load(const std::filesystem::path& path) {
        Container c = Container::load(path);
        if (c.meta.value("kind", "") != "concept_bank")
            throw numeric_error("checkpoint '" + path.string() +
                                "' is not a concept bank");
        ConceptBank bank;
        for (const auto& p : c.meta["pairs"]) {
            ConceptVector v;
            v.from_label = p["from"];
            v.to_label = p["to"];
            v.seeds = p["seeds"].get<std::vector<std::uint64_t>>();
            v.delta_omega = p["delta_omega"];
            v.direction = c.get("q." + v.from_label + "->" + v.to_label).detach();
            bank.entries.push_back(std::move(v));
        }
        return bank;
    }
};

}  // namespace otflow
