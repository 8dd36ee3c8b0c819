// Experiment driver: builds synthetic worlds, trains the generator, the
// coupling stack, and concept vectors, runs modulated-generation sweeps and
// the ablation grid, and hosts the verification oracles. Every run writes a
// manifest with the resolved config; pointing --config at a manifest
// reproduces the run's numeric outputs bit-exactly.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "otflow/concept_bank.hpp"
#include "otflow/config.hpp"
#include "otflow/coupling.hpp"
#include "otflow/flow.hpp"
#include "otflow/metrics.hpp"
#include "otflow/sliced_ot.hpp"
#include "otflow/toyworld.hpp"
#include "otflow/verification.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace otflow;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path,
                    "JSON config file (a manifest also works)");
    cmd->add_option("--out", args.out_dir, "output directory");
    cmd->add_option("--seed", args.seed, "override the config seed");
    cmd->add_option("--override", args.overrides,
                    "config override as dotted.key=value (repeatable)");
}

ExperimentConfig resolve_config(const CommonArgs& args) {
    json doc = json::object();
    if (!args.config_path.empty()) doc = load_config_json(args.config_path);
    for (const auto& o : args.overrides) apply_override(doc, o);
    ExperimentConfig cfg = config_from_json(doc);
    if (args.seed) cfg.seed = *args.seed;
    return cfg;
}

fs::path resolve_out_dir(const CommonArgs& args, const ExperimentConfig& cfg,
                         const std::string& command) {
    fs::path dir;
    if (!args.out_dir.empty()) {
        dir = args.out_dir;
    } else {
        std::string root = cfg.out_root;
        if (root.empty())
            if (const char* env = std::getenv("OTFLOW_OUT_ROOT")) root = env;
        if (root.empty()) root = ".";
        dir = fs::path(root) / ("otflow_" + command);
    }
    fs::create_directories(dir);
    return dir;
}

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_jsonl(const fs::path& path, const std::vector<json>& rows) {
    std::ofstream out(path, std::ios::binary);
    for (const auto& row : rows) out << row.dump() << "\n";
}

void write_csv(const fs::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
    std::ofstream out(path, std::ios::binary);
    for (std::size_t i = 0; i < header.size(); ++i)
        out << (i ? "," : "") << header[i];
    out << "\n";
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i)
            out << (i ? "," : "") << row[i];
        out << "\n";
    }
}

class RunClock {
  public:
    double seconds() const {
        return std::chrono::duration<double>(
                   std::chrono::steady_clock::now() - start_)
            .count();
    }

  private:
    std::chrono::steady_clock::time_point start_ =
        std::chrono::steady_clock::now();
};

void write_manifest(const fs::path& dir, const std::string& command,
                    const ExperimentConfig& cfg,
                    const std::vector<std::string>& artifacts, double wall_s,
                    json extra = json::object()) {
    json m;
    m["tool"] = "otflow";
    m["version"] = kToolVersion;
    m["command"] = command;
    m["seed"] = cfg.seed;
    m["config"] = config_to_json(cfg);
    m["config_fingerprint"] = config_fingerprint(cfg);
    m["artifacts"] = artifacts;
    m["wall_time_s"] = wall_s;
    for (const auto& [k, v] : extra.items()) m[k] = v;
    std::ofstream(dir / "manifest.json", std::ios::binary) << m.dump(2) << "\n";
}

void require_file(const std::string& path, const char* what) {
    if (!fs::exists(path))
        throw numeric_error(std::string("missing ") + what + " checkpoint: " +
                            path);
}

// ---- train-generator ----

int cmd_train_generator(const CommonArgs& args) {
    ExperimentConfig cfg = resolve_config(args);
    fs::path out = resolve_out_dir(args, cfg, "train_generator");
    RunClock clock;
    ToyWorld world = ToyWorld::make(cfg.world);
    FlowTrainResult result = train_generator(world, cfg.flow, cfg.seed);

    const std::string ckpt_name =
        fs::path(cfg.paths.generator_checkpoint).filename().string();
    result.net.save(out / ckpt_name);
    std::vector<json> rows;
    rows.reserve(result.curve.size());
    for (const auto& p : result.curve)
        rows.push_back({{"iteration", p.iteration}, {"loss", p.loss}});
    write_jsonl(out / "gen_curve.jsonl", rows);
    write_manifest(out, "train-generator", cfg, {ckpt_name, "gen_curve.jsonl"},
                   clock.seconds());
    std::cout << "trained generator for " << cfg.flow.iterations
              << " iterations -> " << (out / ckpt_name).string() << "\n";
    return kExitOk;
}

// ---- train-coupling ----

int cmd_train_coupling(const CommonArgs& args) {
    ExperimentConfig cfg = resolve_config(args);
    fs::path out = resolve_out_dir(args, cfg, "train_coupling");
    RunClock clock;
    ToyWorld world = ToyWorld::make(cfg.world);
    CouplingTrainResult result =
        train_coupling(world, cfg.coupling, cfg.seed, config_fingerprint(cfg));

    const std::string ckpt_name =
        fs::path(cfg.paths.coupling_checkpoint).filename().string();
    result.checkpoint.save(out / ckpt_name, result.optimizer_state,
                           result.optimizer_steps);
    std::vector<json> rows;
    rows.reserve(result.curve.size());
    for (const auto& p : result.curve)
        rows.push_back({{"iteration", p.iteration},
                        {"loss_mse", p.loss_mse},
                        {"loss_gram", p.loss_gram},
                        {"loss_rho_ot", p.loss_rho_ot}});
    write_jsonl(out / "curves.jsonl", rows);
    write_manifest(out, "train-coupling", cfg, {ckpt_name, "curves.jsonl"},
                   clock.seconds());
    std::cout << "trained coupling for " << cfg.coupling.iterations
              << " iterations -> " << (out / ckpt_name).string() << "\n";
    return kExitOk;
}

// ---- train-concepts ----

int cmd_train_concepts(const CommonArgs& args) {
    ExperimentConfig cfg = resolve_config(args);
    fs::path out = resolve_out_dir(args, cfg, "train_concepts");
    RunClock clock;
    require_file(cfg.paths.generator_checkpoint, "generator");
    require_file(cfg.paths.coupling_checkpoint, "coupling");
    ToyWorld world = ToyWorld::make(cfg.world);
    MlpVelocity generator = MlpVelocity::load(cfg.paths.generator_checkpoint);
    CouplingCheckpoint coupling =
        CouplingCheckpoint::load(cfg.paths.coupling_checkpoint);

    ConceptBank bank;
    std::vector<json> records;
    for (const auto& [from, to] : cfg.concept_pairs) {
        ConceptTrainResult r = train_concept(generator, coupling, world, from,
                                             to, cfg.concept_train, cfg.seed);
        records.push_back(
            {{"from", from},
             {"to", to},
             {"delta_omega", r.vector.delta_omega},
             {"iterations", cfg.concept_train.iterations},
             {"initial_loss", r.curve.empty() ? 0.0 : r.curve.front().loss},
             {"final_loss", r.curve.empty() ? 0.0 : r.curve.back().loss}});
        bank.entries.push_back(std::move(r.vector));
    }
    const std::string bank_name =
        fs::path(cfg.paths.concept_bank).filename().string();
    bank.save(out / bank_name);
    write_jsonl(out / "concepts.jsonl", records);
    write_manifest(out, "train-concepts", cfg, {bank_name, "concepts.jsonl"},
                   clock.seconds());
    std::cout << "trained " << bank.entries.size() << " concept vector(s) -> "
              << (out / bank_name).string() << "\n";
    return kExitOk;
}

// ---- generate ----

int cmd_generate(const CommonArgs& args) {
    ExperimentConfig cfg = resolve_config(args);
    fs::path out = resolve_out_dir(args, cfg, "generate");
    RunClock clock;
    require_file(cfg.paths.generator_checkpoint, "generator");
    require_file(cfg.paths.coupling_checkpoint, "coupling");
    require_file(cfg.paths.concept_bank, "concept bank");
    ToyWorld world = ToyWorld::make(cfg.world);
    MlpVelocity generator = MlpVelocity::load(cfg.paths.generator_checkpoint);
    CouplingCheckpoint coupling =
        CouplingCheckpoint::load(cfg.paths.coupling_checkpoint);
    ConceptBank bank = ConceptBank::load(cfg.paths.concept_bank);

    const auto& gen = cfg.generate;
    const ConceptVector* vec = bank.find(gen.pair_from, gen.pair_to);
    if (vec == nullptr) {
        std::string available;
        for (const auto& e : bank.entries)
            available += (available.empty() ? "" : ", ") + e.from_label + "->" +
                         e.to_label;
        throw numeric_error("no concept vector for pair '" + gen.pair_from +
                            "' -> '" + gen.pair_to + "'; available: " +
                            (available.empty() ? "(none)" : available));
    }
    const Tensor cond_minus = world.cond_gen_embedding(gen.pair_from);
    const std::size_t slot_minus = world.label_index(gen.pair_from);
    const std::size_t slot_plus = world.label_index(gen.pair_to);
    const DivergenceKind kind = cfg.concept_train.measure.kind;
    const bool norm_time = cfg.concept_train.measure.normalized_time;

    std::vector<json> sweep_rows, traj_rows;
    std::vector<std::vector<std::string>> csv_rows;
    for (double delta : gen.delta_grid) {
        for (std::uint64_t seed : gen.seeds) {
            Rng rng_base(seed), rng_mod(seed);
            FlowTrajectory base = euler_generate(generator, cond_minus,
                                                 gen.t_bar, rng_base, norm_time);
            FlowTrajectory mod = modulated_generate(
                generator, *vec, cond_minus, delta, gen.t_bar, rng_mod, norm_time);

            Rng couple_base = Rng(seed).derive(100);
            Rng couple_mod = Rng(seed).derive(100);
            Tensor shifted_cond =
                add(cond_minus, mul_scalar(vec->direction, delta)).detach();
            autograd::NoGradGuard guard;
            EmbeddingBatch sem_base =
                couple(world, coupling, base.terminal(), cond_minus,
                       CouplingVariant::full, couple_base);
            EmbeddingBatch sem_mod =
                couple(world, coupling, mod.terminal(), shifted_cond,
                       CouplingVariant::full, couple_mod);
            LogitPair lp_base =
                toy_logits(world.vlm(), sem_base.tokens, slot_minus, slot_plus);
            LogitPair lp_mod =
                toy_logits(world.vlm(), sem_mod.tokens, slot_minus, slot_plus);
            const double delta_omega = divergence_variant(lp_base, lp_mod, kind);

            double mean = 0.0, norm_sq = 0.0;
            for (std::size_t i = 0; i < mod.terminal().size(); ++i) {
                mean += mod.terminal().at(i) / mod.terminal().size();
                norm_sq += mod.terminal().at(i) * mod.terminal().at(i);
            }
            sweep_rows.push_back({{"delta", delta},
                                  {"seed", seed},
                                  {"delta_omega", delta_omega},
                                  {"terminal_mean", mean},
                                  {"terminal_norm", std::sqrt(norm_sq)},
                                  {"extrapolated", is_extrapolation(delta)}});
            csv_rows.push_back({fmt_double(delta), std::to_string(seed),
                                fmt_double(delta_omega), fmt_double(mean),
                                fmt_double(std::sqrt(norm_sq)),
                                is_extrapolation(delta) ? "true" : "false"});
            for (std::size_t step = 0; step < mod.states.size(); ++step) {
                double s_norm = 0.0;
                for (std::size_t i = 0; i < mod.states[step].size(); ++i)
                    s_norm += mod.states[step].at(i) * mod.states[step].at(i);
                traj_rows.push_back({{"delta", delta},
                                     {"seed", seed},
                                     {"step", step},
                                     {"norm", std::sqrt(s_norm)}});
            }
        }
    }
    write_jsonl(out / "sweep.jsonl", sweep_rows);
    write_csv(out / "sweep.csv",
              {"delta", "seed", "delta_omega", "terminal_mean", "terminal_norm",
               "extrapolated"},
              csv_rows);
    write_jsonl(out / "trajectories.jsonl", traj_rows);
    write_manifest(out, "generate", cfg,
                   {"sweep.jsonl", "sweep.csv", "trajectories.jsonl"},
                   clock.seconds());
    std::cout << "generated " << sweep_rows.size() << " sweep rows -> "
              << (out / "sweep.jsonl").string() << "\n";
    return kExitOk;
}

// ---- ablate ----

struct ArmRow {
    std::string arm;
    MetricReport metrics;
    double delta_omega = -1.0;   // divergence arms only
    double concept_loss = -1.0;  // divergence arms only
};

MetricReport eval_arm(const ToyWorld& world, const CouplingCheckpoint& ckpt,
                      CouplingVariant variant, double noise_scale,
                      std::span<const WorldSample> holdout,
                      AggregationMode aggregation, std::uint64_t seed) {
    CouplingCheckpoint eval = ckpt;
    eval.reencode_noise = noise_scale;
    Rng rng = Rng(seed).derive(fnv1a(variant_name(variant)));
    autograd::NoGradGuard guard;
    std::vector<Tensor> generated, reference;
    generated.reserve(holdout.size());
    for (const auto& s : holdout) {
        generated.push_back(
            couple(world, eval, s.gen_tokens, s.cond_gen, variant, rng).tokens);
        reference.push_back(s.sem_tokens);
    }
    return aggregate_metrics(generated, reference, aggregation);
}

double time_forward(const CouplingCheckpoint& ckpt, const ToyWorld& world,
                    std::size_t evals, int repeats) {
    Rng rng(4242);
    Tensor z1 = gaussian(rng, {world.config().n_tokens, world.config().d_sem});
    Tensor z2 = gaussian(rng, {world.config().n_tokens, world.config().d_sem});
    EmbeddingBatch a{z1, Space::semantic}, b{z2, Space::semantic};
    autograd::NoGradGuard guard;
    double best = 1e300;
    for (int r = 0; r < repeats; ++r) {
        RunClock clock;
        for (std::size_t e = 0; e < evals; ++e) rho_ot_forward(a, b, ckpt.bank);
        best = std::min(best, clock.seconds() / static_cast<double>(evals));
    }
    return best;
}

int cmd_ablate(const CommonArgs& args) {
    ExperimentConfig cfg = resolve_config(args);
    if (cfg.ablate.arms.empty())
        throw config_error("ablate: the arm list is empty");
    fs::path out = resolve_out_dir(args, cfg, "ablate");
    RunClock clock;
    ToyWorld world = ToyWorld::make(cfg.world);

    CouplingConfig ccfg = cfg.coupling;
    ccfg.iterations = cfg.ablate.coupling_iterations;
    ccfg.holdout = cfg.ablate.eval_samples;
    CouplingTrainResult shared =
        train_coupling(world, ccfg, cfg.seed, config_fingerprint(cfg));

    // trained lazily, only if a divergence arm asks for it
    std::optional<FlowTrainResult> generator;
    auto need_generator = [&]() -> FlowTrainResult& {
        if (!generator) {
            FlowTrainConfig fcfg = cfg.flow;
            fcfg.iterations = cfg.ablate.generator_iterations;
            generator = train_generator(world, fcfg, cfg.seed);
        }
        return *generator;
    };

    std::vector<ArmRow> rows;
    json timings = json::object();
    for (const std::string& arm : cfg.ablate.arms) {
        ArmRow row;
        row.arm = arm;
        if (arm == "inference_only" || arm == "phi1_only" || arm == "phi2_only" ||
            arm == "mean" || arm == "full") {
            row.metrics = eval_arm(world, shared.checkpoint, parse_variant(arm),
                                   cfg.ablate.noise_scale, shared.holdout,
                                   cfg.ablate.aggregation, cfg.seed);
            timings[arm] = time_forward(shared.checkpoint, world,
                                        cfg.ablate.eval_samples,
                                        cfg.ablate.timing_repeats);
        } else if (arm == "p50" || arm == "p100" || arm == "p200" ||
                   arm == "p400") {
            CouplingConfig pcfg = ccfg;
            pcfg.ot.projections = std::stoul(arm.substr(1));
            CouplingTrainResult r =
                train_coupling(world, pcfg, cfg.seed, config_fingerprint(cfg));
            row.metrics = eval_arm(world, r.checkpoint, CouplingVariant::full,
                                   cfg.ablate.noise_scale, r.holdout,
                                   cfg.ablate.aggregation, cfg.seed);
            timings[arm] = time_forward(r.checkpoint, world,
                                        cfg.ablate.eval_samples,
                                        cfg.ablate.timing_repeats);
        } else if (arm == "div_kl" || arm == "div_js" || arm == "div_hellinger") {
            FlowTrainResult& gen = need_generator();
            ConceptTrainConfig tcfg = cfg.concept_train;
            tcfg.iterations = cfg.ablate.concept_iterations;
            tcfg.measure.kind = parse_divergence(arm.substr(4));
            const auto& [from, to] = cfg.concept_pairs.front();
            ConceptTrainResult r = train_concept(gen.net, shared.checkpoint,
                                                 world, from, to, tcfg, cfg.seed);
            row.metrics = eval_arm(world, shared.checkpoint,
                                   CouplingVariant::full, cfg.ablate.noise_scale,
                                   shared.holdout, cfg.ablate.aggregation,
                                   cfg.seed);
            row.delta_omega = r.vector.delta_omega;
            row.concept_loss = r.curve.empty() ? 0.0 : r.curve.back().loss;
        } else {
            throw config_error("ablate: unknown arm '" + arm + "'");
        }
        rows.push_back(std::move(row));
    }

    std::vector<json> jsonl;
    std::vector<std::vector<std::string>> csv;
    for (const auto& r : rows) {
        json row = {{"arm", r.arm},
                    {"cos", r.metrics.cos},
                    {"l1", r.metrics.l1},
                    {"l2", r.metrics.l2},
                    {"kl", r.metrics.kl},
                    {"samples", r.metrics.sample_count}};
        if (r.delta_omega >= 0.0) {
            row["delta_omega"] = r.delta_omega;
            row["concept_loss"] = r.concept_loss;
        }
        jsonl.push_back(row);
        csv.push_back({r.arm, fmt_double(r.metrics.cos), fmt_double(r.metrics.l1),
                       fmt_double(r.metrics.l2), fmt_double(r.metrics.kl),
                       std::to_string(r.metrics.sample_count)});
    }
    write_jsonl(out / "ablation.jsonl", jsonl);
    write_csv(out / "ablation.csv", {"arm", "cos", "l1", "l2", "kl", "samples"},
              csv);
    write_manifest(out, "ablate", cfg, {"ablation.jsonl", "ablation.csv"},
                   clock.seconds(), {{"timings", timings}});
    std::cout << "ablation grid with " << rows.size() << " arms -> "
              << (out / "ablation.jsonl").string() << "\n";
    return kExitOk;
}

// ---- oracle ----

struct OracleCheck {
    std::string name;
    bool pass = false;
    std::string detail;
};

void run_gradient_suite(std::vector<OracleCheck>& checks) {
    Rng rng(5150);
    Rng pick(717);
    auto add_check = [&](const std::string& name, const GradCheckResult& r) {
        checks.push_back({name, r.ok,
                          "max rel err " + fmt_double(r.max_rel_err) + " over " +
                              std::to_string(r.points_checked) + " points"});
    };
    {
        MlpVelocity net = MlpVelocity::init(3, 4, 4, 16, 4, rng);
        std::vector<FlowSample> batch{{gaussian(rng, {3, 4}), gaussian(rng, {4})},
                                      {gaussian(rng, {3, 4}), gaussian(rng, {4})}};
        add_check("gradients/velocity_regression",
                  check_gradients(
                      [&] {
                          Rng loss_rng(11);
                          return cfm_loss(net, batch, loss_rng);
                      },
                      net.named_parameters(), pick, 24));
    }
    {
        ProjectorNet phi1 = ProjectorNet::init(3, 4, 4, 6, 8, 2, rng);
        Tensor z = gaussian(rng, {3, 4});
        Tensor cond = gaussian(rng, {4});
        Tensor target = gaussian(rng, {3, 6});
        add_check(
            "gradients/projection_loss",
            check_gradients(
                [&] { return loss_projection(phi1.forward(z, cond), target); },
                phi1.named_parameters(), pick, 24));
    }
    {
        StructureNet phi2 = StructureNet::init(6, 2, rng);
        Tensor z = gaussian(rng, {3, 6});
        Tensor target = gaussian(rng, {3, 6});
        add_check("gradients/structure_loss",
                  check_gradients(
                      [&] { return loss_structure(phi2.forward(z), target); },
                      phi2.named_parameters(), pick, 24));
    }
    {
        ProjectionBank bank = ProjectionBank::init(6, 3, rng, 0.3, 0.05, 3);
        EmbeddingBatch z1{gaussian(rng, {4, 3}), Space::semantic};
        EmbeddingBatch z2{gaussian(rng, {4, 3}), Space::semantic};
        EmbeddingBatch target{gaussian(rng, {4, 3}), Space::semantic};
        add_check("gradients/transport_loss",
                  check_gradients(
                      [&] {
                          return rho_ot_loss(
                              rho_ot_forward(z1, z2, bank).transported, target);
                      },
                      bank.named_parameters(), pick, 24));
    }
    {
        MlpVelocity net = MlpVelocity::init(3, 4, 6, 16, 4, rng);
        net.set_requires_grad(false);
        Tensor q = gaussian(rng, {6}, true);
        Tensor z = gaussian(rng, {3, 4});
        Tensor cm = gaussian(rng, {6});
        Tensor cp = gaussian(rng, {6});
        add_check("gradients/concept_loss",
                  check_gradients(
                      [&] { return concept_loss(net, q, z, cm, cp, 0.4, 0.6); },
                      {{"q", q}}, pick, 24));
        net.set_requires_grad(true);
    }
}

void run_sinkhorn_suite(std::vector<OracleCheck>& checks) {
    {
        Rng rng(1601);
        bool pass = true;
        double worst = 0.0;
        for (int rep = 0; rep < 3 && pass; ++rep) {
            TransportPlan plan{uniform(rng, {16, 16}, 0.01, 1.0)};
            double prev = 1e300;
            for (int k = 1; k <= 50; ++k) {
                const double res = max_marginal_residual(sinkhorn(plan, k));
                pass = pass && res <= prev + 1e-12;
                prev = res;
            }
            worst = std::max(worst, prev);
            pass = pass && prev <= 1e-6;
        }
        checks.push_back({"sinkhorn/16x16_marginals", pass,
                          "residual after 50 iters " + fmt_double(worst)});
    }
    {
        Rng rng(1602);
        bool pass = true;
        double worst = 0.0;
        for (int rep = 0; rep < 5; ++rep) {
            Tensor a = gaussian(rng, {5});
            Tensor b = gaussian(rng, {5});
            const double tau = 0.25;
            TransportPlan sliced =
                sinkhorn(slice_plan(slice_cost(a, b, tau), 0.0), 500);
            std::vector<double> cost(25);
            for (std::size_t i = 0; i < 5; ++i)
                for (std::size_t j = 0; j < 5; ++j)
                    cost[i * 5 + j] = std::abs(a.at(i) - b.at(j));
            TransportPlan dense =
                exact_entropic_oracle(Tensor::from({5, 5}, std::move(cost)), tau);
            double kl = 0.0;
            const double total = 5.0;  // both plans carry n units of mass
            for (std::size_t i = 0; i < 25; ++i) {
                const double p = dense.matrix.at(i) / total;
                const double q = sliced.matrix.at(i) / total;
                if (p > 0.0) kl += p * std::log(p / q);
            }
            worst = std::max(worst, kl);
            pass = pass && kl <= 1e-6;
        }
        checks.push_back({"sinkhorn/sliced_vs_dense_oracle", pass,
                          "worst plan KL " + fmt_double(worst)});
    }
}

void run_hellinger_suite(std::vector<OracleCheck>& checks) {
    bool pass = hellinger({0.5, 0.5}, {0.5, 0.5}) == 0.0;
    pass = pass && std::abs(hellinger({1.0, 0.0}, {0.0, 1.0}) - 1.0) < 1e-15;
    pass = pass && std::abs(hellinger({0.9, 0.1}, {0.4, 0.6}) - 0.3938) <= 1e-4;
    checks.push_back({"hellinger/hand_values", pass, "three pinned evaluations"});

    Rng rng(33);
    bool bounds = true;
    for (int rep = 0; rep < 10000 && bounds; ++rep) {
        const double a = rng.uniform(), b = rng.uniform();
        LogitPair p{a, 1.0 - a}, q{b, 1.0 - b};
        const double d = hellinger(p, q);
        bounds = d >= 0.0 && d <= 1.0 && std::abs(hellinger(q, p) - d) < 1e-15 &&
                 (a != b || d == 0.0);
    }
    checks.push_back(
        {"hellinger/bounds_symmetry_identity", bounds, "10000 random pairs"});
}

int cmd_oracle(const CommonArgs& args, const std::string& subtask) {
    std::vector<OracleCheck> checks;
    if (subtask == "gradients" || subtask == "all") run_gradient_suite(checks);
    if (subtask == "sinkhorn" || subtask == "all") run_sinkhorn_suite(checks);
    if (subtask == "hellinger" || subtask == "all") run_hellinger_suite(checks);
    if (checks.empty())
        throw config_error("oracle: unknown subtask '" + subtask +
                           "' (use gradients, sinkhorn, hellinger, or all)");
    bool all_pass = true;
    for (const auto& c : checks) {
        std::cout << (c.pass ? "[PASS] " : "[FAIL] ") << c.name << ": "
                  << c.detail << "\n";
        all_pass = all_pass && c.pass;
    }
    if (!args.out_dir.empty()) {
        ExperimentConfig cfg = resolve_config(args);
        fs::path out = resolve_out_dir(args, cfg, "oracle");
        std::vector<json> rows;
        for (const auto& c : checks)
            rows.push_back(
                {{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}});
        write_jsonl(out / "report.jsonl", rows);
        write_manifest(out, "oracle", cfg, {"report.jsonl"}, 0.0,
                       {{"subtask", subtask}});
    }
    return all_pass ? kExitOk : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"entropic-OT embedding coupling and flow-matching experiments"};
    app.require_subcommand(1);

    CommonArgs train_gen_args, train_coup_args, train_conc_args, gen_args,
        ablate_args, oracle_args;
    std::string oracle_subtask = "all";

    CLI::App* train_gen =
        app.add_subcommand("train-generator", "train the toy velocity model");
    add_common(train_gen, train_gen_args);
    CLI::App* train_coup =
        app.add_subcommand("train-coupling", "train the coupling stack");
    add_common(train_coup, train_coup_args);
    CLI::App* train_conc =
        app.add_subcommand("train-concepts", "train concept vectors");
    add_common(train_conc, train_conc_args);
    CLI::App* generate =
        app.add_subcommand("generate", "modulated generation sweep");
    add_common(generate, gen_args);
    CLI::App* ablate = app.add_subcommand("ablate", "run the ablation grid");
    add_common(ablate, ablate_args);
    CLI::App* oracle =
        app.add_subcommand("oracle", "run verification oracle suites");
    oracle->add_option("subtask", oracle_subtask,
                       "gradients | sinkhorn | hellinger | all");
    add_common(oracle, oracle_args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*train_gen) return cmd_train_generator(train_gen_args);
        if (*train_coup) return cmd_train_coupling(train_coup_args);
        if (*train_conc) return cmd_train_concepts(train_conc_args);
        if (*generate) return cmd_generate(gen_args);
        if (*ablate) return cmd_ablate(ablate_args);
        if (*oracle) return cmd_oracle(oracle_args, oracle_subtask);
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
