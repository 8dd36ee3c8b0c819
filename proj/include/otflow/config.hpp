#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "otflow/concept_bank.hpp"
#include "otflow/coupling.hpp"
#include "otflow/errors.hpp"
#include "otflow/flow.hpp"
#include "otflow/metrics.hpp"
#include "otflow/toyworld.hpp"
#include "otflow/verification.hpp"

namespace otflow {

inline constexpr const char* kToolVersion = "otflow 0.1.0";

struct GenerateSettings {
    std::string pair_from = "alpha";
    std::string pair_to = "bravo";
    std::vector<double> delta_grid = {0.0, 0.25, 0.5, 0.75, 1.0};
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5, 6, 7, 8};
    int t_bar = 16;
};

struct AblateSettings {
    std::vector<std::string> arms = {"inference_only", "phi1_only", "phi2_only",
                                     "mean",           "full",      "p50",
                                     "p100",           "p400",      "div_kl",
                                     "div_js",         "div_hellinger"};
    double noise_scale = 0.5;
    int coupling_iterations = 800;
    int generator_iterations = 800;
    int concept_iterations = 100;
    std::size_t eval_samples = 32;
    int timing_repeats = 3;
    AggregationMode aggregation = AggregationMode::per_sample_mean;
};

struct PathsSettings {
    std::string generator_checkpoint = "generator.otc";
    std::string coupling_checkpoint = "coupling.otc";
    std::string concept_bank = "concept_bank.otc";
};

struct ExperimentConfig {
    std::uint64_t seed = 1234;
    std::string out_root;  // empty picks up the environment default
    WorldConfig world;
    CouplingConfig coupling;  // its ot sub-config is the "ot" section
    FlowTrainConfig flow;
    ConceptTrainConfig concept_train;
    std::vector<std::pair<std::string, std::string>> concept_pairs = {
        {"alpha", "bravo"}};
    GenerateSettings generate;
    AblateSettings ablate;
    PathsSettings paths;
};

namespace cfgdetail {

inline void check_keys(const nlohmann::json& j,
                       std::initializer_list<const char*> allowed,
                       const std::string& section) {
    if (!j.is_object())
        throw config_error("config section '" + section + "' must be an object");
    for (const auto& [key, _] : j.items()) {
        bool known = false;
        for (const char* a : allowed) known = known || key == a;
        if (!known)
            throw config_error("unknown config key '" +
                               (section.empty() ? key : section + "." + key) + "'");
    }
}

template <class T>
void read(const nlohmann::json& j, const char* key, T& target) {
    if (j.contains(key)) target = j.at(key).get<T>();
}

inline void read_world(const nlohmann::json& j, WorldConfig& w) {
    check_keys(j,
               {"seed", "n_tokens", "d_gen", "d_sem", "vocab", "mixture_sigma",
                "token_jitter", "cond_scale", "map_severity", "reencode_noise",
                "identity_map", "antipodal_pair", "vlm_hidden", "vlm_temperature"},
               "world");
    read(j, "seed", w.seed);
    read(j, "n_tokens", w.n_tokens);
    read(j, "d_gen", w.d_gen);
    read(j, "d_sem", w.d_sem);
    read(j, "vocab", w.vocab);
    read(j, "mixture_sigma", w.mixture_sigma);
    read(j, "token_jitter", w.token_jitter);
    read(j, "cond_scale", w.cond_scale);
    read(j, "map_severity", w.map_severity);
    read(j, "reencode_noise", w.reencode_noise);
    read(j, "identity_map", w.identity_map);
    read(j, "antipodal_pair", w.antipodal_pair);
    read(j, "vlm_hidden", w.vlm_hidden);
    read(j, "vlm_temperature", w.vlm_temperature);
}

inline void read_ot(const nlohmann::json& j, OtParams& ot) {
    check_keys(j, {"projections", "temperature", "uniform_reg", "sinkhorn_iters"},
               "ot");
    read(j, "projections", ot.projections);
    read(j, "temperature", ot.temperature);
    read(j, "uniform_reg", ot.uniform_reg);
    read(j, "sinkhorn_iters", ot.sinkhorn_iters);
}

inline void read_coupling(const nlohmann::json& j, CouplingConfig& c) {
    check_keys(j,
               {"hidden", "mixer_blocks", "attn_blocks", "lr", "weight_decay",
                "iterations", "batch", "accum_steps", "bank_warmup",
                "dataset_size", "holdout", "structure_input",
                "transport_grad_to_nets"},
               "coupling");
    read(j, "hidden", c.hidden);
    read(j, "mixer_blocks", c.mixer_blocks);
    read(j, "attn_blocks", c.attn_blocks);
    read(j, "lr", c.lr);
    read(j, "weight_decay", c.weight_decay);
    read(j, "iterations", c.iterations);
    read(j, "batch", c.batch);
    read(j, "accum_steps", c.accum_steps);
    read(j, "bank_warmup", c.bank_warmup);
    read(j, "dataset_size", c.dataset_size);
    read(j, "holdout", c.holdout);
    if (j.contains("structure_input")) {
        const std::string v = j.at("structure_input");
        if (v == "reencode")
            c.structure_input = StructureInput::reencode;
        else if (v == "projected")
            c.structure_input = StructureInput::projected;
        else
            throw config_error("coupling.structure_input must be 'reencode' or "
                               "'projected', got '" + v + "'");
    }
    read(j, "transport_grad_to_nets", c.transport_grad_to_nets);
}

inline void read_flow(const nlohmann::json& j, FlowTrainConfig& f) {
    check_keys(j,
               {"hidden", "time_dims", "lr", "weight_decay", "iterations",
                "batch", "dataset_size", "t_bar", "normalized_time"},
               "flow");
    read(j, "hidden", f.hidden);
    read(j, "time_dims", f.time_dims);
    read(j, "lr", f.lr);
    read(j, "weight_decay", f.weight_decay);
    read(j, "iterations", f.iterations);
    read(j, "batch", f.batch);
    read(j, "dataset_size", f.dataset_size);
    read(j, "t_bar", f.t_bar);
    read(j, "normalized_time", f.normalized_time);
}

inline void read_concept(const nlohmann::json& j, ConceptTrainConfig& c,
                         std::vector<std::pair<std::string, std::string>>& pairs) {
    check_keys(j,
               {"lr", "weight_decay", "iterations", "seeds", "t_bar",
                "normalized_time", "variant", "divergence", "pairs"},
               "concept");
    read(j, "lr", c.lr);
    read(j, "weight_decay", c.weight_decay);
    read(j, "iterations", c.iterations);
    read(j, "seeds", c.seeds);
    read(j, "t_bar", c.measure.t_bar);
    read(j, "normalized_time", c.measure.normalized_time);
    if (j.contains("variant"))
        c.measure.variant = parse_variant(j.at("variant").get<std::string>());
    if (j.contains("divergence"))
        c.measure.kind = parse_divergence(j.at("divergence").get<std::string>());
    if (j.contains("pairs")) {
        pairs.clear();
        for (const auto& p : j.at("pairs")) {
            if (!p.is_array() || p.size() != 2)
                throw config_error("concept.pairs entries must be [from, to]");
            pairs.emplace_back(p[0].get<std::string>(), p[1].get<std::string>());
        }
    }
}

inline void read_generate(const nlohmann::json& j, GenerateSettings& g) {
    check_keys(j, {"pair", "delta_grid", "seeds", "t_bar"}, "generate");
    if (j.contains("pair")) {
        const auto& p = j.at("pair");
        if (!p.is_array() || p.size() != 2)
            throw config_error("generate.pair must be [from, to]");
        g.pair_from = p[0].get<std::string>();
        g.pair_to = p[1].get<std::string>();
    }
    read(j, "delta_grid", g.delta_grid);
    read(j, "seeds", g.seeds);
    read(j, "t_bar", g.t_bar);
}

inline void read_ablate(const nlohmann::json& j, AblateSettings& a) {
    check_keys(j,
               {"arms", "noise_scale", "coupling_iterations",
                "generator_iterations", "concept_iterations", "eval_samples",
                "timing_repeats", "aggregation"},
               "ablate");
    read(j, "arms", a.arms);
    read(j, "noise_scale", a.noise_scale);
    read(j, "coupling_iterations", a.coupling_iterations);
    read(j, "generator_iterations", a.generator_iterations);
    read(j, "concept_iterations", a.concept_iterations);
    read(j, "eval_samples", a.eval_samples);
    read(j, "timing_repeats", a.timing_repeats);
    if (j.contains("aggregation")) {
        const std::string v = j.at("aggregation");
        if (v == "per_sample_mean")
            a.aggregation = AggregationMode::per_sample_mean;
        else if (v == "mean_pooled")
            a.aggregation = AggregationMode::mean_pooled;
        else
            throw config_error("ablate.aggregation must be 'per_sample_mean' or "
                               "'mean_pooled', got '" + v + "'");
    }
}

inline void read_paths(const nlohmann::json& j, PathsSettings& p) {
    check_keys(j, {"generator_checkpoint", "coupling_checkpoint", "concept_bank"},
               "paths");
    read(j, "generator_checkpoint", p.generator_checkpoint);
    read(j, "coupling_checkpoint", p.coupling_checkpoint);
    read(j, "concept_bank", p.concept_bank);
}

}  // namespace cfgdetail

inline ExperimentConfig config_from_json(const nlohmann::json& root) {
    cfgdetail::check_keys(root,
                          {"seed", "out_root", "world", "ot", "coupling", "flow",
                           "concept", "generate", "ablate", "paths"},
                          "");
    ExperimentConfig cfg;
    cfgdetail::read(root, "seed", cfg.seed);
    cfgdetail::read(root, "out_root", cfg.out_root);
    if (root.contains("world")) cfgdetail::read_world(root.at("world"), cfg.world);
    if (root.contains("ot")) cfgdetail::read_ot(root.at("ot"), cfg.coupling.ot);
    if (root.contains("coupling"))
        cfgdetail::read_coupling(root.at("coupling"), cfg.coupling);
    if (root.contains("flow")) cfgdetail::read_flow(root.at("flow"), cfg.flow);
    if (root.contains("concept"))
        cfgdetail::read_concept(root.at("concept"), cfg.concept_train,
                                cfg.concept_pairs);
    if (root.contains("generate"))
        cfgdetail::read_generate(root.at("generate"), cfg.generate);
    if (root.contains("ablate")) cfgdetail::read_ablate(root.at("ablate"), cfg.ablate);
    if (root.contains("paths")) cfgdetail::read_paths(root.at("paths"), cfg.paths);
    return cfg;
}

// Full resolved snapshot; together with the tool version it determines every
// numeric output.
inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
    nlohmann::json j;
    j["seed"] = cfg.seed;
    j["out_root"] = cfg.out_root;
    j["world"] = cfg.world;
    j["ot"] = {{"projections", cfg.coupling.ot.projections},
               {"temperature", cfg.coupling.ot.temperature},
               {"uniform_reg", cfg.coupling.ot.uniform_reg},
               {"sinkhorn_iters", cfg.coupling.ot.sinkhorn_iters}};
    j["coupling"] = {
        {"hidden", cfg.coupling.hidden},
        {"mixer_blocks", cfg.coupling.mixer_blocks},
        {"attn_blocks", cfg.coupling.attn_blocks},
        {"lr", cfg.coupling.lr},
        {"weight_decay", cfg.coupling.weight_decay},
        {"iterations", cfg.coupling.iterations},
        {"batch", cfg.coupling.batch},
        {"accum_steps", cfg.coupling.accum_steps},
        {"bank_warmup", cfg.coupling.bank_warmup},
        {"dataset_size", cfg.coupling.dataset_size},
        {"holdout", cfg.coupling.holdout},
        {"structure_input",
         cfg.coupling.structure_input == StructureInput::reencode ? "reencode"
                                                                  : "projected"},
        {"transport_grad_to_nets", cfg.coupling.transport_grad_to_nets}};
    j["flow"] = {{"hidden", cfg.flow.hidden},
                 {"time_dims", cfg.flow.time_dims},
                 {"lr", cfg.flow.lr},
                 {"weight_decay", cfg.flow.weight_decay},
                 {"iterations", cfg.flow.iterations},
                 {"batch", cfg.flow.batch},
                 {"dataset_size", cfg.flow.dataset_size},
                 {"t_bar", cfg.flow.t_bar},
                 {"normalized_time", cfg.flow.normalized_time}};
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& [from, to] : cfg.concept_pairs)
        pairs.push_back({from, to});
    j["concept"] = {{"lr", cfg.concept_train.lr},
                    {"weight_decay", cfg.concept_train.weight_decay},
                    {"iterations", cfg.concept_train.iterations},
                    {"seeds", cfg.concept_train.seeds},
                    {"t_bar", cfg.concept_train.measure.t_bar},
                    {"normalized_time", cfg.concept_train.measure.normalized_time},
                    {"variant", variant_name(cfg.concept_train.measure.variant)},
                    {"divergence", divergence_name(cfg.concept_train.measure.kind)},
                    {"pairs", pairs}};
    j["generate"] = {{"pair", {cfg.generate.pair_from, cfg.generate.pair_to}},
                     {"delta_grid", cfg.generate.delta_grid},
                     {"seeds", cfg.generate.seeds},
                     {"t_bar", cfg.generate.t_bar}};
    j["ablate"] = {{"arms", cfg.ablate.arms},
                   {"noise_scale", cfg.ablate.noise_scale},
                   {"coupling_iterations", cfg.ablate.coupling_iterations},
                   {"generator_iterations", cfg.ablate.generator_iterations},
                   {"concept_iterations", cfg.ablate.concept_iterations},
                   {"eval_samples", cfg.ablate.eval_samples},
                   {"timing_repeats", cfg.ablate.timing_repeats},
                   {"aggregation",
                    cfg.ablate.aggregation == AggregationMode::per_sample_mean
                        ? "per_sample_mean"
                        : "mean_pooled"}};
    j["paths"] = {{"generator_checkpoint", cfg.paths.generator_checkpoint},
                  {"coupling_checkpoint", cfg.paths.coupling_checkpoint},
                  {"concept_bank", cfg.paths.concept_bank}};
    return j;
}

// "a.b.c=value" with the value parsed as JSON (bare words fall back to strings).
inline void apply_override(nlohmann::json& root, const std::string& spec) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0)
        throw config_error("override '" + spec + "' must look like key=value");
    const std::string path = spec.substr(0, eq);
    const std::string raw = spec.substr(eq + 1);
    nlohmann::json value;
    try {
        value = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::parse_error&) {
        value = raw;
    }
    nlohmann::json* node = &root;
    std::size_t start = 0;
    for (;;) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot - start);
        if (key.empty())
            throw config_error("override '" + spec + "' has an empty path segment");
        if (dot == std::string::npos) {
            (*node)[key] = value;
            return;
        }
        node = &(*node)[key];
        start = dot + 1;
    }
}

// Accepts a bare config object or a manifest ({"config": {...}}) so outputs
// can be reproduced straight from their manifests.
inline nlohmann::json load_config_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config file '" + path.string() + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw config_error("config file '" + path.string() +
                           "' is not valid JSON: " + e.what());
    }
    if (j.is_object() && j.contains("config") && j.contains("tool"))
        return j.at("config");
    return j;
}

inline std::string config_fingerprint(const ExperimentConfig& cfg) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a(
                      std::string(kToolVersion) + config_to_json(cfg).dump())));
    return buf;
}

}  // namespace otflow
