#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "otflow/container.hpp"
#include "otflow/embedding.hpp"
#include "otflow/errors.hpp"
#include "otflow/optim.hpp"
#include "otflow/sliced_ot.hpp"
#include "otflow/toyworld.hpp"

namespace otflow {

// Token-by-token inner-product matrix; invariant to channel rotations.
inline Tensor gram(const Tensor& tokens) {
    return matmul(tokens, transpose(tokens));
}

inline Tensor loss_projection(const Tensor& predicted, const Tensor& target,
                              Reduction reduction = Reduction::sum) {
    detail::require_same_shape(predicted, target, "loss_projection");
    Tensor loss = sum_sq(sub(target, predicted));
    if (reduction == Reduction::mean)
        loss = mul_scalar(loss, 1.0 / static_cast<double>(target.size()));
    return loss;
}

inline Tensor loss_structure(const Tensor& predicted, const Tensor& target,
                             Reduction reduction = Reduction::sum) {
    if (predicted.rows() != target.rows())
        throw shape_error("loss_structure: token counts " +
                          shape_str(predicted.shape()) + " and " +
                          shape_str(target.shape()) + " differ");
    Tensor diff = sub(gram(target), gram(predicted));
    Tensor loss = sum_sq(diff);
    if (reduction == Reduction::mean)
        loss = mul_scalar(loss, 1.0 / static_cast<double>(diff.size()));
    return loss;
}

// Ground-truth map plus Gaussian re-encoding noise: the "decode and re-encode"
// route that inference-only ablation uses in place of the learned coupling.
inline EmbeddingBatch decode_reencode_baseline(const ToyWorld& world,
                                               const Tensor& gen_tokens, Rng& rng,
                                               double noise_scale) {
    Tensor mapped = world.map_to_sem(gen_tokens);
    if (noise_scale != 0.0) {
        std::vector<double> v(mapped.data().begin(), mapped.data().end());
        for (auto& x : v) x += noise_scale * rng.gaussian();
        mapped = Tensor::from(mapped.shape(), std::move(v));
    }
    return {mapped, Space::semantic};
}

// Projector: embeds condition-augmented tokens, then alternates token-mixing
// and channel-mixing residual blocks.
struct ProjectorNet {
    std::size_t n_tokens = 0, d_in = 0, d_cond = 0, d_out = 0, hidden = 0;
    Tensor w_embed, b_embed;
    std::vector<Tensor> w_token;  // per block, n_tokens x n_tokens
    std::vector<Tensor> w_chan, b_chan;
    Tensor w_out, b_out;

    static ProjectorNet init(std::size_t n_tokens, std::size_t d_in,
                             std::size_t d_cond, std::size_t d_out,
                             std::size_t hidden, int blocks, Rng& rng) {
        ProjectorNet net;
        net.n_tokens = n_tokens;
        net.d_in = d_in;
        net.d_cond = d_cond;
        net.d_out = d_out;
        net.hidden = hidden;
        auto w_init = [&rng](std::size_t r, std::size_t c, double gain) {
            return mul_scalar(gaussian(rng, {r, c}), gain / std::sqrt(double(r)))
                .detach();
        };
        net.w_embed = w_init(d_in + d_cond, hidden, 1.0);
        net.b_embed = Tensor::zeros({hidden});
        for (int b = 0; b < blocks; ++b) {
            net.w_token.push_back(w_init(n_tokens, n_tokens, 0.5));
            net.w_chan.push_back(w_init(hidden, hidden, 0.5));
            net.b_chan.push_back(Tensor::zeros({hidden}));
        }
        net.w_out = w_init(hidden, d_out, 1.0);
        net.b_out = Tensor::zeros({d_out});
        for (auto& p : net.named_parameters()) p.tensor.set_requires_grad(true);
        return net;
    }

    Tensor forward(const Tensor& gen_tokens, const Tensor& cond) const {
        if (gen_tokens.rows() != n_tokens || gen_tokens.cols() != d_in)
            throw shape_error("projector: input " + shape_str(gen_tokens.shape()) +
                              " does not match net dims");
        if (cond.size() != d_cond)
            throw shape_error("projector: condition " + shape_str(cond.shape()) +
                              " does not match net dims");
        Tensor x = concat_cols(gen_tokens, repeat_row(cond, n_tokens));
        x = otflow::tanh(add(matmul(x, w_embed), repeat_row(b_embed, n_tokens)));
        for (std::size_t b = 0; b < w_token.size(); ++b) {
            x = add(x, otflow::tanh(matmul(w_token[b], x)));
            x = add(x, otflow::tanh(add(matmul(x, w_chan[b]),
                                        repeat_row(b_chan[b], n_tokens))));
        }
        return add(matmul(x, w_out), repeat_row(b_out, n_tokens));
    }

    std::vector<NamedTensor> named_parameters() {
        std::vector<NamedTensor> out{{"phi1.w_embed", w_embed},
                                     {"phi1.b_embed", b_embed}};
        for (std::size_t b = 0; b < w_token.size(); ++b) {
            const std::string tag = "phi1.block" + std::to_string(b);
            out.push_back({tag + ".w_token", w_token[b]});
            out.push_back({tag + ".w_chan", w_chan[b]});
            out.push_back({tag + ".b_chan", b_chan[b]});
        }
        out.push_back({"phi1.w_out", w_out});
        out.push_back({"phi1.b_out", b_out});
        return out;
    }
};

// Structure network: shape-preserving single-head attention blocks with a
// small feed-forward tail per block.
struct StructureNet {
    std::size_t dim = 0;
    std::vector<Tensor> wq, wk, wv, wo;
    std::vector<Tensor> w_ff1, b_ff1, w_ff2, b_ff2;

    static StructureNet init(std::size_t dim, int blocks, Rng& rng) {
        StructureNet net;
        net.dim = dim;
        const std::size_t ff = 2 * dim;
        auto w_init = [&rng](std::size_t r, std::size_t c, double gain) {
            return mul_scalar(gaussian(rng, {r, c}), gain / std::sqrt(double(r)))
                .detach();
        };
        for (int b = 0; b < blocks; ++b) {
            net.wq.push_back(w_init(dim, dim, 1.0));
            net.wk.push_back(w_init(dim, dim, 1.0));
            net.wv.push_back(w_init(dim, dim, 1.0));
            net.wo.push_back(w_init(dim, dim, 0.5));
            net.w_ff1.push_back(w_init(dim, ff, 1.0));
            net.b_ff1.push_back(Tensor::zeros({ff}));
            net.w_ff2.push_back(w_init(ff, dim, 0.5));
            net.b_ff2.push_back(Tensor::zeros({dim}));
        }
        for (auto& p : net.named_parameters()) p.tensor.set_requires_grad(true);
        return net;
    }

    Tensor forward(const Tensor& sem_tokens) const {
        if (sem_tokens.cols() != dim)
            throw shape_error("structure net: input " +
                              shape_str(sem_tokens.shape()) +
                              " does not match width " + std::to_string(dim));
        const std::size_t n = sem_tokens.rows();
        const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(dim));
        Tensor x = sem_tokens;
        for (std::size_t b = 0; b < wq.size(); ++b) {
            Tensor q = matmul(x, wq[b]);
            Tensor k = matmul(x, wk[b]);
            Tensor v = matmul(x, wv[b]);
            Tensor attn = row_softmax(mul_scalar(matmul(q, transpose(k)), inv_sqrt_d));
            x = add(x, matmul(matmul(attn, v), wo[b]));
            Tensor h = otflow::tanh(add(matmul(x, w_ff1[b]), repeat_row(b_ff1[b], n)));
            x = add(x, add(matmul(h, w_ff2[b]), repeat_row(b_ff2[b], n)));
        }
        return x;
    }

    std::vector<NamedTensor> named_parameters() {
        std::vector<NamedTensor> out;
        for (std::size_t b = 0; b < wq.size(); ++b) {
            const std::string tag = "phi2.block" + std::to_string(b);
            out.push_back({tag + ".wq", wq[b]});
            out.push_back({tag + ".wk", wk[b]});
            out.push_back({tag + ".wv", wv[b]});
            out.push_back({tag + ".wo", wo[b]});
            out.push_back({tag + ".w_ff1", w_ff1[b]});
            out.push_back({tag + ".b_ff1", b_ff1[b]});
            out.push_back({tag + ".w_ff2", w_ff2[b]});
            out.push_back({tag + ".b_ff2", b_ff2[b]});
        }
        return out;
    }
};

struct OtParams {
    std::size_t projections = 100;
    double temperature = 0.1;
    double uniform_reg = 0.05;
    int sinkhorn_iters = 3;
};

// What the structure network consumes during training: the decode-re-encoded
// tokens, or the projector's output.
enum class StructureInput { reencode, projected };

enum class CouplingVariant { full, phi1_only, phi2_only, mean, inference_only };

inline CouplingVariant parse_variant(const std::string& s) {
    if (s == "full") return CouplingVariant::full;
    if (s == "phi1_only") return CouplingVariant::phi1_only;
    if (s == "phi2_only") return CouplingVariant::phi2_only;
    if (s == "mean") return CouplingVariant::mean;
    if (s == "inference_only") return CouplingVariant::inference_only;
    throw config_error("unknown coupling variant '" + s + "'");
}

inline std::string variant_name(CouplingVariant v) {
    switch (v) {
        case CouplingVariant::full: return "full";
        case CouplingVariant::phi1_only: return "phi1_only";
        case CouplingVariant::phi2_only: return "phi2_only";
        case CouplingVariant::mean: return "mean";
        case CouplingVariant::inference_only: return "inference_only";
    }
    throw config_error("unknown coupling variant");
}

struct CouplingConfig {
    std::size_t hidden = 32;
    int mixer_blocks = 4;
    int attn_blocks = 2;
    double lr = 1e-3;
    double weight_decay = 0.01;
    int iterations = 2000;
    int batch = 8;
    int accum_steps = 1;
    int bank_warmup = 500;  // iterations before the transport loss engages
    std::size_t dataset_size = 512;
    std::size_t holdout = 64;
    StructureInput structure_input = StructureInput::reencode;
    bool transport_grad_to_nets = false;
    OtParams ot;
};

struct CouplingCheckpoint {
    ProjectorNet projector;
    StructureNet structure;
    ProjectionBank bank;
    std::int64_t iteration = 0;
    std::string config_fingerprint;
    double reencode_noise = 0.25;
    StructureInput structure_input = StructureInput::reencode;

    std::vector<NamedTensor> named_parameters() {
        auto out = projector.named_parameters();
        for (auto& p : structure.named_parameters()) out.push_back(p);
        for (auto& p : bank.named_parameters()) out.push_back(p);
        return out;
    }

    void set_requires_grad(bool b) {
        for (auto& p : named_parameters()) p.tensor.set_requires_grad(b);
    }

    void save(const std::filesystem::path& path,
              const std::vector<NamedTensor>& optimizer_state = {},
              std::int64_t optimizer_steps = 0) {
        Container c;
        c.meta["kind"] = "coupling";
        c.meta["iteration"] = iteration;
        c.meta["config_fingerprint"] = config_fingerprint;
        c.meta["reencode_noise"] = reencode_noise;
        c.meta["structure_input"] =
            structure_input == StructureInput::reencode ? "reencode" : "projected";
        c.meta["dims"] = {{"n_tokens", projector.n_tokens},
                          {"d_in", projector.d_in},
                          {"d_cond", projector.d_cond},
                          {"d_out", projector.d_out},
                          {"hidden", projector.hidden},
                          {"mixer_blocks", projector.w_token.size()},
                          {"attn_blocks", structure.wq.size()}};
        c.meta["ot"] = {{"projections", bank.projections()},
                        {"temperature", bank.temperature},
                        {"uniform_reg", bank.uniform_reg},
                        {"sinkhorn_iters", bank.sinkhorn_iters}};
        c.meta["optimizer_steps"] = optimizer_steps;
        for (auto& p : named_parameters()) c.add(p.name, p.tensor);
        for (const auto& p : optimizer_state) c.add("opt." + p.name, p.tensor);
        c.save(path);
    }

    static CouplingCheckpoint load(const std::filesystem::path& path) {
        Container c = Container::load(path);
        if (c.meta.value("kind", "") != "coupling")
            throw numeric_error("checkpoint '" + path.string() +
                                "' is not a coupling checkpoint");
        const auto& dims = c.meta["dims"];
        Rng scratch(0);
        CouplingCheckpoint ckpt;
        ckpt.projector = ProjectorNet::init(
            dims["n_tokens"], dims["d_in"], dims["d_cond"], dims["d_out"],
            dims["hidden"], dims["mixer_blocks"], scratch);
        ckpt.structure =
            StructureNet::init(dims["d_out"], dims["attn_blocks"], scratch);
        ckpt.bank = ProjectionBank::init(
            c.meta["ot"]["projections"], dims["d_out"], scratch,
            c.meta["ot"]["temperature"], c.meta["ot"]["uniform_reg"],
            c.meta["ot"]["sinkhorn_iters"]);
        for (auto& p : ckpt.named_parameters()) {
            const Tensor& stored = c.get(p.name);
            if (stored.shape() != p.tensor.shape())
                throw numeric_error("checkpoint tensor '" + p.name +
                                    "' has unexpected shape");
            auto& dst = p.tensor.mutable_data();
            std::copy(stored.data().begin(), stored.data().end(), dst.begin());
        }
        ckpt.iteration = c.meta["iteration"];
        ckpt.config_fingerprint = c.meta["config_fingerprint"];
        ckpt.reencode_noise = c.meta["reencode_noise"];
        ckpt.structure_input = c.meta["structure_input"] == "projected"
                                   ? StructureInput::projected
                                   : StructureInput::reencode;
        return ckpt;
    }
};

struct CurvePoint {
    int iteration = 0;
    double loss_mse = 0.0;
    double loss_gram = 0.0;
    double loss_rho_ot = 0.0;
};

struct CouplingTrainResult {
    CouplingCheckpoint checkpoint;
    std::vector<CurvePoint> curve;
    std::vector<WorldSample> holdout;
    std::vector<NamedTensor> optimizer_state;
    std::int64_t optimizer_steps = 0;
};

// Joint training: projection loss on the projector, Gram loss on the structure
// net, and (after warmup) the transport loss on the projection banks. The
// transport loss sees detached net outputs unless transport_grad_to_nets is
// set, so it trains the banks alone by default.
inline CouplingTrainResult train_coupling(const ToyWorld& world,
                                          const CouplingConfig& cfg,
                                          std::uint64_t seed,
                                          const std::string& fingerprint = "") {
    Rng root(seed);
    Rng init_rng = root.derive(10);
    Rng data_rng = root.derive(11);
    Rng noise_rng = root.derive(12);

    const auto& wc = world.config();
    CouplingTrainResult result;
    result.checkpoint.projector =
        ProjectorNet::init(wc.n_tokens, wc.d_gen, wc.d_gen, wc.d_sem, cfg.hidden,
                           cfg.mixer_blocks, init_rng);
    result.checkpoint.structure =
        StructureNet::init(wc.d_sem, cfg.attn_blocks, init_rng);
    result.checkpoint.bank = ProjectionBank::init(
        cfg.ot.projections, wc.d_sem, init_rng, cfg.ot.temperature,
        cfg.ot.uniform_reg, cfg.ot.sinkhorn_iters);
    result.checkpoint.config_fingerprint = fingerprint;
    result.checkpoint.reencode_noise = wc.reencode_noise;
    result.checkpoint.structure_input = cfg.structure_input;

    std::vector<WorldSample> dataset;
    dataset.reserve(cfg.dataset_size + cfg.holdout);
    const auto& labels = world.labels();
    for (std::size_t i = 0; i < cfg.dataset_size + cfg.holdout; ++i)
        dataset.push_back(world.sample_pair(labels[i % labels.size()], data_rng));
    result.holdout.assign(dataset.end() - cfg.holdout, dataset.end());
    dataset.resize(cfg.dataset_size);

    AdamWConfig opt_cfg;
    opt_cfg.lr = cfg.lr;
    opt_cfg.weight_decay = cfg.weight_decay;
    auto net_params = result.checkpoint.projector.named_parameters();
    for (auto& p : result.checkpoint.structure.named_parameters())
        net_params.push_back(p);
    AdamW opt(std::move(net_params), opt_cfg);
    // the bank optimizer engages only after warmup, so it runs separately
    AdamW bank_opt(result.checkpoint.bank.named_parameters(), opt_cfg);

    auto& ckpt = result.checkpoint;
    for (int it = 0; it < cfg.iterations; ++it) {
        double mse_acc = 0.0, gram_acc = 0.0, rho_acc = 0.0;
        const bool bank_active = it >= cfg.bank_warmup;
        const double inv_scale = 1.0 / (cfg.batch * cfg.accum_steps);
        for (int micro = 0; micro < cfg.accum_steps; ++micro) {
            for (int s = 0; s < cfg.batch; ++s) {
                const WorldSample& sample = dataset[data_rng.below(dataset.size())];
                Tensor projected =
                    ckpt.projector.forward(sample.gen_tokens, sample.cond_gen);
                Tensor mse = loss_projection(projected, sample.sem_tokens,
                                             Reduction::mean);

                Tensor structure_in =
                    cfg.structure_input == StructureInput::reencode
                        ? decode_reencode_baseline(world, sample.gen_tokens,
                                                   noise_rng, wc.reencode_noise)
                              .tokens
                        : projected.detach();
                Tensor structured = ckpt.structure.forward(structure_in);
                Tensor gram_loss = loss_structure(structured, sample.sem_tokens,
                                                  Reduction::mean);

                Tensor total = add(mse, gram_loss);
                if (bank_active) {
                    EmbeddingBatch src{cfg.transport_grad_to_nets
                                           ? projected
                                           : projected.detach(),
                                       Space::semantic};
                    EmbeddingBatch dst{cfg.transport_grad_to_nets
                                           ? structured
                                           : structured.detach(),
                                       Space::semantic};
                    RhoOtResult ot = rho_ot_forward(src, dst, ckpt.bank);
                    Tensor rho = rho_ot_loss(
                        ot.transported, {sample.sem_tokens, Space::semantic},
                        Reduction::mean);
                    rho_acc += rho.item();
                    total = add(total, rho);
                }
                mse_acc += mse.item();
                gram_acc += gram_loss.item();
                backward(mul_scalar(total, inv_scale));
            }
        }
        CurvePoint pt;
        pt.iteration = it;
        pt.loss_mse = mse_acc / (cfg.batch * cfg.accum_steps);
        pt.loss_gram = gram_acc / (cfg.batch * cfg.accum_steps);
        pt.loss_rho_ot = bank_active ? rho_acc / (cfg.batch * cfg.accum_steps) : 0.0;
        if (!std::isfinite(pt.loss_mse) || !std::isfinite(pt.loss_gram) ||
            !std::isfinite(pt.loss_rho_ot))
            throw numeric_error("train_coupling: loss diverged at iteration " +
                                std::to_string(it));
        result.curve.push_back(pt);
        opt.step();
        opt.zero_grad();
        if (bank_active) {
            bank_opt.step();
            bank_opt.zero_grad();
        }
        ckpt.iteration = it + 1;
    }
    result.optimizer_state = opt.state_tensors();
    for (auto& p : bank_opt.state_tensors()) result.optimizer_state.push_back(p);
    result.optimizer_steps = opt.step_count();
    return result;
}

// Inference-time composition for every ablation arm.
inline EmbeddingBatch couple(const ToyWorld& world,
                             const CouplingCheckpoint& ckpt,
                             const Tensor& gen_tokens, const Tensor& cond_gen,
                             CouplingVariant variant, Rng& rng) {
    switch (variant) {
        case CouplingVariant::inference_only:
            return decode_reencode_baseline(world, gen_tokens, rng,
                                            ckpt.reencode_noise);
        case CouplingVariant::phi1_only:
            return {ckpt.projector.forward(gen_tokens, cond_gen), Space::semantic};
        case CouplingVariant::phi2_only: {
            EmbeddingBatch re = decode_reencode_baseline(world, gen_tokens, rng,
                                                         ckpt.reencode_noise);
            return {ckpt.structure.forward(re.tokens), Space::semantic};
        }
        case CouplingVariant::mean: {
            Tensor projected = ckpt.projector.forward(gen_tokens, cond_gen);
            EmbeddingBatch re = decode_reencode_baseline(world, gen_tokens, rng,
                                                         ckpt.reencode_noise);
            Tensor structured = ckpt.structure.forward(re.tokens);
            return {mul_scalar(add(projected, structured), 0.5), Space::semantic};
        }
        case CouplingVariant::full: {
            Tensor projected = ckpt.projector.forward(gen_tokens, cond_gen);
            EmbeddingBatch re = decode_reencode_baseline(world, gen_tokens, rng,
                                                         ckpt.reencode_noise);
            Tensor structured = ckpt.structure.forward(re.tokens);
            RhoOtResult ot = rho_ot_forward({projected, Space::semantic},
                                            {structured, Space::semantic},
                                            ckpt.bank);
            return ot.transported;
        }
    }
    throw config_error("couple: unknown variant");
}

}  // namespace otflow
