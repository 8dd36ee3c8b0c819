#include <catch_amalgamated.hpp>

#include <cmath>

#include "otflow/concept_bank.hpp"
#include "otflow/verification.hpp"

using namespace otflow;

namespace {

// velocity linear in the condition: v = rows(cond * W)
struct LinearCondVelocity final : VelocityModel {
    Tensor weight;  // d_cond x d_lat
    std::size_t tokens;
    LinearCondVelocity(Tensor w, std::size_t n) : weight(std::move(w)), tokens(n) {}
    Tensor velocity(const Tensor&, const Tensor& cond, double) const override {
        Tensor row = matmul(reshape(cond, {std::size_t{1}, cond.size()}), weight);
        return repeat_row(reshape(row, {weight.cols()}), tokens);
    }
    std::size_t n_tokens() const override { return tokens; }
    std::size_t latent_dim() const override { return weight.cols(); }
};

}  // namespace

TEST_CASE("hellinger hand values") {
    CHECK(hellinger({0.5, 0.5}, {0.5, 0.5}) == 0.0);
    CHECK_THAT(hellinger({1.0, 0.0}, {0.0, 1.0}),
               Catch::Matchers::WithinAbs(1.0, 1e-15));
    CHECK_THAT(hellinger({0.9, 0.1}, {0.4, 0.6}),
               Catch::Matchers::WithinAbs(0.3938, 1e-4));
    CHECK_THROWS_AS(hellinger({-0.1, 1.1}, {0.5, 0.5}), numeric_error);
}

TEST_CASE("hellinger bounds, symmetry, identity, triangle inequality") {
    Rng rng(11);
    for (int rep = 0; rep < 10000; ++rep) {
        const double a = rng.uniform();
        const double b = rng.uniform();
        LogitPair p{a, 1.0 - a};
        LogitPair q{b, 1.0 - b};
        const double d = hellinger(p, q);
        CHECK(d >= 0.0);
        CHECK(d <= 1.0);
        CHECK_THAT(hellinger(q, p), Catch::Matchers::WithinAbs(d, 1e-15));
        if (a == b) CHECK(d == 0.0);
        if (d == 0.0) CHECK_THAT(a, Catch::Matchers::WithinAbs(b, 1e-12));
    }
    for (int rep = 0; rep < 2000; ++rep) {
        const double a = rng.uniform(), b = rng.uniform(), c = rng.uniform();
        LogitPair p{a, 1.0 - a}, q{b, 1.0 - b}, r{c, 1.0 - c};
        CHECK(hellinger(p, r) <= hellinger(p, q) + hellinger(q, r) + 1e-12);
    }
}

TEST_CASE("divergence variants") {
    LogitPair p{0.9, 0.1};
    CHECK(divergence_variant(p, p, DivergenceKind::hellinger) == 0.0);
    CHECK(divergence_variant(p, p, DivergenceKind::kl) == 0.0);
    CHECK_THAT(divergence_variant(p, p, DivergenceKind::js),
               Catch::Matchers::WithinAbs(0.0, 1e-15));

    // raw JS of opposite point masses is ln 2
    CHECK_THAT(js_two_point({1.0, 0.0}, {0.0, 1.0}),
               Catch::Matchers::WithinAbs(std::numbers::ln2, 1e-15));
    // and the comparable variant normalizes it to 1
    CHECK_THAT(divergence_variant({1.0, 0.0}, {0.0, 1.0}, DivergenceKind::js),
               Catch::Matchers::WithinAbs(1.0, 1e-15));

    // kl([0.9,0.1],[0.5,0.5]) = 0.9 ln 1.8 + 0.1 ln 0.2
    CHECK_THAT(divergence_variant({0.9, 0.1}, {0.5, 0.5}, DivergenceKind::kl),
               Catch::Matchers::WithinAbs(0.3680642071684971, 1e-10));

    // zero support in q where p has mass: tagged non-finite, no throw
    const double inf_kl =
        divergence_variant({0.9, 0.1}, {1.0, 0.0}, DivergenceKind::kl);
    CHECK(std::isinf(inf_kl));

    CHECK_THROWS_AS(parse_divergence("nonsense"), config_error);
}

TEST_CASE("concept_loss is exactly zero at delta zero") {
    Rng rng(5);
    MlpVelocity net = MlpVelocity::init(3, 4, 6, 16, 4, rng);
    net.set_requires_grad(false);
    Tensor q = gaussian(rng, {6}, true);
    Tensor z = gaussian(rng, {3, 4});
    Tensor cm = gaussian(rng, {6});
    Tensor cp = gaussian(rng, {6});
    Tensor loss = concept_loss(net, q, z, cm, cp, 0.3, 0.0);
    CHECK(loss.item() == 0.0);
    net.set_requires_grad(true);

    CHECK_THROWS_AS(concept_loss(net, q, z, cm, cp, 0.3, 1.5), contract_error);
    CHECK_THROWS_AS(concept_loss(net, q, z, cm, cp, 0.3, -0.1), contract_error);
}

TEST_CASE("concept_loss gradient reaches only the concept direction") {
    Rng rng(6);
    MlpVelocity net = MlpVelocity::init(3, 4, 6, 16, 4, rng);
    net.set_requires_grad(false);
    Tensor q = gaussian(rng, {6}, true);
    Tensor z = gaussian(rng, {3, 4});
    Tensor cm = gaussian(rng, {6});
    Tensor cp = gaussian(rng, {6});

    Rng pick(7);
    auto res = check_gradients(
        [&] { return concept_loss(net, q, z, cm, cp, 0.4, 0.6); },
        {{"q", q}}, pick, 20);
    INFO(res.worst);
    CHECK(res.ok);

    // frozen generator and detached target branch leave no gradients behind
    for (auto& p : net.named_parameters()) CHECK_FALSE(p.tensor.has_grad());
    net.set_requires_grad(true);
}

TEST_CASE("linear generator drives the concept direction to the embedding gap") {
    Rng rng(8);
    // orthogonal map keeps the quadratic isotropic; any injective map shares
    // the same unique optimum
    std::vector<std::vector<double>> rows(4, std::vector<double>(4));
    for (std::size_t r = 0; r < 4; ++r) {
        for (auto& x : rows[r]) x = rng.gaussian();
        for (std::size_t p = 0; p < r; ++p) {
            double dot = 0.0;
            for (std::size_t j = 0; j < 4; ++j) dot += rows[r][j] * rows[p][j];
            for (std::size_t j = 0; j < 4; ++j) rows[r][j] -= dot * rows[p][j];
        }
        double norm = 0.0;
        for (double x : rows[r]) norm += x * x;
        for (auto& x : rows[r]) x /= std::sqrt(norm);
    }
    std::vector<double> flat;
    for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
    LinearCondVelocity net(Tensor::from({4, 4}, std::move(flat)), 3);

    Tensor cm = gaussian(rng, {4});
    Tensor cp = gaussian(rng, {4});
    Tensor q = Tensor::zeros({4}, true);
    Tensor z = gaussian(rng, {3, 4});

    AdamWConfig cfg;
    cfg.lr = 5e-2;
    cfg.weight_decay = 0.0;
    AdamW opt({{"q", q}}, cfg);
    for (int it = 0; it < 800; ++it) {
        Tensor loss = concept_loss(net, q, z, cm, cp, 0.5, 0.8);
        backward(loss);
        opt.step();
        opt.zero_grad();
    }
    // closed-form optimum is the condition embedding difference
    for (std::size_t j = 0; j < 4; ++j)
        CHECK_THAT(q.at(j), Catch::Matchers::WithinAbs(cp.at(j) - cm.at(j), 1e-3));
}

TEST_CASE("modulated_generate at delta zero is bit-identical to the baseline") {
    Rng rng(9);
    MlpVelocity net = MlpVelocity::init(3, 4, 6, 16, 4, rng);
    ConceptVector vec;
    vec.direction = gaussian(rng, {6});
    Tensor cm = gaussian(rng, {6});

    for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull}) {
        Rng ra(seed), rb(seed);
        FlowTrajectory mod = modulated_generate(net, vec, cm, 0.0, 8, ra);
        FlowTrajectory base = euler_generate(net, cm, 8, rb);
        REQUIRE(mod.states.size() == base.states.size());
        for (std::size_t s = 0; s < mod.states.size(); ++s)
            for (std::size_t i = 0; i < mod.states[s].size(); ++i)
                CHECK(mod.states[s].at(i) == base.states[s].at(i));
    }
}

TEST_CASE("modulated_generate with delta one on a linear generator lands on the target condition") {
    Rng rng(10);
    Tensor w = gaussian(rng, {4, 4});
    LinearCondVelocity net(w, 3);
    Tensor cm = gaussian(rng, {4});
    Tensor cp = gaussian(rng, {4});
    ConceptVector vec;
    vec.direction = sub(cp, cm).detach();

    Rng ra(77), rb(77);
    FlowTrajectory mod = modulated_generate(net, vec, cm, 1.0, 8, ra);
    FlowTrajectory target = euler_generate(net, cp, 8, rb);
    for (std::size_t s = 0; s < mod.states.size(); ++s)
        for (std::size_t i = 0; i < mod.states[s].size(); ++i)
            CHECK_THAT(mod.states[s].at(i),
                       Catch::Matchers::WithinAbs(target.states[s].at(i), 1e-12));
}

TEST_CASE("step mask confines the shift to chosen steps") {
    Rng rng(12);
    Tensor w = gaussian(rng, {4, 4});
    LinearCondVelocity net(w, 3);
    Tensor cm = gaussian(rng, {4});
    ConceptVector vec;
    vec.direction = gaussian(rng, {4});

    std::vector<bool> mask_off(8, false);
    // std::vector<bool> has no contiguous data; build a real bool array
    bool mask[8] = {false, false, false, false, false, false, false, false};
    Rng ra(3), rb(3);
    FlowTrajectory masked =
        modulated_generate(net, vec, cm, 1.0, 8, ra, true, std::span(mask, 8));
    FlowTrajectory base = euler_generate(net, cm, 8, rb);
    for (std::size_t s = 0; s < masked.states.size(); ++s)
        for (std::size_t i = 0; i < masked.states[s].size(); ++i)
            CHECK(masked.states[s].at(i) == base.states[s].at(i));

    bool mask_tail[8] = {false, false, false, false, true, true, true, true};
    Rng rc(3);
    FlowTrajectory half =
        modulated_generate(net, vec, cm, 1.0, 8, rc, true, std::span(mask_tail, 8));
    // prefix matches the baseline, suffix diverges
    for (std::size_t i = 0; i < half.states[4].size(); ++i)
        CHECK(half.states[4].at(i) == base.states[4].at(i));
    bool diverged = false;
    for (std::size_t i = 0; i < half.terminal().size(); ++i)
        diverged = diverged || half.terminal().at(i) != base.terminal().at(i);
    CHECK(diverged);
}

TEST_CASE("combined modulation sums the scaled directions") {
    Rng rng(19);
    Tensor w = gaussian(rng, {4, 4});
    LinearCondVelocity net(w, 3);
    Tensor cm = gaussian(rng, {4});
    ConceptVector va, vb;
    va.direction = gaussian(rng, {4});
    vb.direction = gaussian(rng, {4});

    std::pair<const ConceptVector*, double> shifts[] = {{&va, 0.4}, {&vb, 0.7}};
    Rng ra(5), rb(5);
    FlowTrajectory combined =
        modulated_generate(net, std::span(shifts, 2), cm, 8, ra);
    Tensor manual = add(add(cm, mul_scalar(va.direction, 0.4)),
                        mul_scalar(vb.direction, 0.7));
    FlowTrajectory expect = euler_generate(net, manual, 8, rb);
    for (std::size_t s = 0; s < combined.states.size(); ++s)
        for (std::size_t i = 0; i < combined.states[s].size(); ++i)
            CHECK(combined.states[s].at(i) == expect.states[s].at(i));
}

TEST_CASE("measure_delta_omega on an equal pair is exactly zero") {
    WorldConfig wc;
    wc.reencode_noise = 0.1;
    ToyWorld world = ToyWorld::make(wc);
    Rng rng(13);
    MlpVelocity net = MlpVelocity::init(4, 8, 8, 16, 8, rng);
    CouplingConfig ccfg;
    ccfg.iterations = 0;
    ccfg.dataset_size = 8;
    ccfg.holdout = 2;
    ccfg.ot.projections = 4;
    CouplingCheckpoint ckpt = train_coupling(world, ccfg, 5).checkpoint;

    std::vector<std::uint64_t> seeds{1, 2, 3};
    DeltaOmegaResult r = measure_delta_omega(net, ckpt, world, "alpha", "alpha",
                                             seeds);
    CHECK(r.mean == 0.0);

    CHECK_THROWS_AS(
        measure_delta_omega(net, ckpt, world, "alpha", "bravo", {}),
        contract_error);
}

TEST_CASE("measure_delta_omega stays in the unit interval") {
    ToyWorld world = ToyWorld::make(WorldConfig{});
    Rng rng(14);
    MlpVelocity net = MlpVelocity::init(4, 8, 8, 16, 8, rng);
    CouplingConfig ccfg;
    ccfg.iterations = 0;
    ccfg.dataset_size = 8;
    ccfg.holdout = 2;
    ccfg.ot.projections = 4;
    CouplingCheckpoint ckpt = train_coupling(world, ccfg, 5).checkpoint;

    std::vector<std::uint64_t> seeds{1, 2, 3, 4};
    for (const char* to : {"bravo", "charlie", "delta"}) {
        DeltaOmegaResult r =
            measure_delta_omega(net, ckpt, world, "alpha", to, seeds);
        CHECK(r.mean >= 0.0);
        CHECK(r.mean <= 1.0);
        for (double v : r.per_seed) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("well separated conditions give a large divergence") {
    // exact ground-truth coupling (inference arm, zero noise) and a trained
    // generator on a strongly separated two-condition world
    WorldConfig wc;
    wc.vocab = 2;
    wc.antipodal_pair = true;
    wc.cond_scale = 8.0;
    wc.reencode_noise = 0.0;
    ToyWorld world = ToyWorld::make(wc);

    FlowTrainConfig fcfg;
    fcfg.iterations = 1500;
    fcfg.dataset_size = 256;
    FlowTrainResult gen = train_generator(world, fcfg, 21);

    CouplingConfig ccfg;
    ccfg.iterations = 0;
    ccfg.dataset_size = 8;
    ccfg.holdout = 2;
    ccfg.ot.projections = 4;
    CouplingCheckpoint ckpt = train_coupling(world, ccfg, 5).checkpoint;
    ckpt.reencode_noise = 0.0;

    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6, 7, 8};
    DeltaOmegaSettings settings;
    settings.variant = CouplingVariant::inference_only;
    DeltaOmegaResult r = measure_delta_omega(gen.net, ckpt, world, "alpha",
                                             "bravo", seeds, settings);
    CHECK(r.mean >= 0.5);
}

TEST_CASE("train_concept zero iterations returns the zero direction") {
    ToyWorld world = ToyWorld::make(WorldConfig{});
    Rng rng(15);
    MlpVelocity net = MlpVelocity::init(4, 8, 8, 16, 8, rng);
    CouplingConfig ccfg;
    ccfg.iterations = 0;
    ccfg.dataset_size = 8;
    ccfg.holdout = 2;
    ccfg.ot.projections = 4;
    CouplingCheckpoint ckpt = train_coupling(world, ccfg, 5).checkpoint;

    ConceptTrainConfig cfg;
    cfg.iterations = 0;
    cfg.seeds = {1, 2, 3};
    ConceptTrainResult r =
        train_concept(net, ckpt, world, "alpha", "bravo", cfg, 9);
    for (std::size_t i = 0; i < r.vector.direction.size(); ++i)
        CHECK(r.vector.direction.at(i) == 0.0);
    CHECK(r.vector.from_label == "alpha");
    CHECK(r.curve.empty());

    CHECK_THROWS_AS(train_concept(net, ckpt, world, "alpha", "alpha", cfg, 9),
                    contract_error);
}

TEST_CASE("concept training leaves every frozen model untouched") {
    WorldConfig wc;
    wc.vocab = 2;
    wc.antipodal_pair = true;
    wc.cond_scale = 6.0;
    ToyWorld world = ToyWorld::make(wc);

    FlowTrainConfig fcfg;
    fcfg.iterations = 600;
    fcfg.dataset_size = 128;
    FlowTrainResult gen = train_generator(world, fcfg, 23);

    CouplingConfig ccfg;
    ccfg.iterations = 30;
    ccfg.bank_warmup = 10;
    ccfg.dataset_size = 32;
    ccfg.holdout = 4;
    ccfg.ot.projections = 8;
    CouplingTrainResult coup = train_coupling(world, ccfg, 6);

    const std::uint64_t gen_hash = param_hash(gen.net.named_parameters());
    const std::uint64_t coup_hash =
        param_hash(coup.checkpoint.named_parameters());
    const std::uint64_t vlm_hash = param_hash(world.vlm().named_parameters());

    ConceptTrainConfig cfg;
    cfg.iterations = 60;
    cfg.seeds = {1, 2, 3, 4};
    ConceptTrainResult r =
        train_concept(gen.net, coup.checkpoint, world, "alpha", "bravo", cfg, 9);

    CHECK(param_hash(gen.net.named_parameters()) == gen_hash);
    CHECK(param_hash(coup.checkpoint.named_parameters()) == coup_hash);
    CHECK(param_hash(world.vlm().named_parameters()) == vlm_hash);
    for (auto& p : gen.net.named_parameters()) CHECK_FALSE(p.tensor.has_grad());

    // the direction did move
    double norm = 0.0;
    for (std::size_t i = 0; i < r.vector.direction.size(); ++i)
        norm += r.vector.direction.at(i) * r.vector.direction.at(i);
    CHECK(norm > 0.0);
}

TEST_CASE("concept training drops the objective below a quarter of its start") {
    ToyWorld world = ToyWorld::make(WorldConfig{});
    FlowTrainConfig fcfg;
    fcfg.iterations = 600;
    fcfg.dataset_size = 128;
    FlowTrainResult gen = train_generator(world, fcfg, 77);

    CouplingConfig ccfg;
    ccfg.iterations = 0;
    ccfg.dataset_size = 8;
    ccfg.holdout = 2;
    ccfg.ot.projections = 8;
    CouplingCheckpoint ckpt = train_coupling(world, ccfg, 5).checkpoint;

    ConceptTrainConfig cfg;
    cfg.lr = 3e-3;  // the toy embedding gap needs larger steps than paper scale
    cfg.iterations = 400;
    cfg.seeds = {1, 2, 3, 4};
    ConceptTrainResult r =
        train_concept(gen.net, ckpt, world, "alpha", "bravo", cfg, 77);
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 10; ++i) {
        head += r.curve[i].loss / 10.0;
        tail += r.curve[cfg.iterations - 10 + i].loss / 10.0;
    }
    CHECK(tail < 0.25 * head);
}

TEST_CASE("concept bank round trip") {
    Rng rng(16);
    ConceptBank bank;
    ConceptVector a;
    a.direction = gaussian(rng, {8});
    a.from_label = "alpha";
    a.to_label = "bravo";
    a.seeds = {1, 2, 3};
    a.delta_omega = 0.42;
    bank.entries.push_back(a);

    auto path = std::filesystem::temp_directory_path() / "otflow_bank_test.otc";
    bank.save(path);
    ConceptBank loaded = ConceptBank::load(path);
    REQUIRE(loaded.entries.size() == 1);
    const ConceptVector* found = loaded.find("alpha", "bravo");
    REQUIRE(found != nullptr);
    CHECK(found->delta_omega == 0.42);
    CHECK(found->seeds == std::vector<std::uint64_t>{1, 2, 3});
    for (std::size_t i = 0; i < 8; ++i)
        CHECK(found->direction.at(i) == a.direction.at(i));
    CHECK(loaded.find("bravo", "alpha") == nullptr);
    std::filesystem::remove(path);

    // byte-identical resave
    bank.save(path);
    auto path2 = std::filesystem::temp_directory_path() / "otflow_bank_test2.otc";
    loaded.save(path2);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), {});
    std::string s2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(s1 == s2);
    std::filesystem::remove(path);
    std::filesystem::remove(path2);
}
