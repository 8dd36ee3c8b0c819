#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <numbers>
#include <span>
#include <vector>

#include "otflow/container.hpp"
#include "otflow/errors.hpp"
#include "otflow/optim.hpp"
#include "otflow/random.hpp"
#include "otflow/tensor.hpp"
#include "otflow/toyworld.hpp"

namespace otflow {

// Conditional velocity field over N x D latents. Implementations must be
// deterministic given parameters and inputs; the condition input stays on the
// graph so gradients can reach learnable condition shifts.
class VelocityModel {
  public:
    virtual ~VelocityModel() = default;
    virtual Tensor velocity(const Tensor& latent, const Tensor& cond,
                            double t) const = 0;
    virtual std::size_t n_tokens() const = 0;
    virtual std::size_t latent_dim() const = 0;
};

// Three-layer MLP on (flattened latent, condition embedding, sinusoidal time
// encoding).
struct MlpVelocity final : VelocityModel {
    std::size_t tokens = 0, d_lat = 0, d_cond = 0, hidden = 0, time_dims = 8;
    Tensor w1, b1, w2, b2, w3, b3;

    static MlpVelocity init(std::size_t n_tokens, std::size_t d_lat,
                            std::size_t d_cond, std::size_t hidden,
                            std::size_t time_dims, Rng& rng) {
        MlpVelocity net;
        net.tokens = n_tokens;
        net.d_lat = d_lat;
        net.d_cond = d_cond;
        net.hidden = hidden;
        net.time_dims = time_dims;
        const std::size_t d_in = n_tokens * d_lat + d_cond + time_dims;
        auto w_init = [&rng](std::size_t r, std::size_t c, double gain) {
            return mul_scalar(gaussian(rng, {r, c}), gain / std::sqrt(double(r)))
                .detach();
        };
        net.w1 = w_init(d_in, hidden, 1.0);
        net.b1 = Tensor::zeros({hidden});
        net.w2 = w_init(hidden, hidden, 1.0);
        net.b2 = Tensor::zeros({hidden});
        net.w3 = w_init(hidden, n_tokens * d_lat, 1.0);
        net.b3 = Tensor::zeros({n_tokens * d_lat});
        for (auto& p : net.named_parameters()) p.tensor.set_requires_grad(true);
        return net;
    }

    Tensor time_encoding(double t) const {
        std::vector<double> enc(time_dims);
        for (std::size_t k = 0; k < time_dims; ++k) {
            const double freq = std::pow(2.0, static_cast<double>(k / 2));
            const double phase = 2.0 * std::numbers::pi * freq * t;
            enc[k] = (k % 2 == 0) ? std::sin(phase) : std::cos(phase);
        }
        return Tensor::from({std::size_t{1}, time_dims}, std::move(enc));
    }

    Tensor velocity(const Tensor& latent, const Tensor& cond,
                    double t) const override {
        if (latent.rows() != tokens || latent.cols() != d_lat)
            throw shape_error("velocity net: latent " + shape_str(latent.shape()) +
                              " does not match net dims");
        if (cond.size() != d_cond)
            throw shape_error("velocity net: condition " + shape_str(cond.shape()) +
                              " does not match net dims");
        Tensor x = concat_cols(
            concat_cols(reshape(latent, {std::size_t{1}, tokens * d_lat}),
                        reshape(cond, {std::size_t{1}, d_cond})),
            time_encoding(t));
        Tensor h = otflow::tanh(add(matmul(x, w1), reshape(b1, {std::size_t{1}, hidden})));
        h = otflow::tanh(add(matmul(h, w2), reshape(b2, {std::size_t{1}, hidden})));
        Tensor out = add(matmul(h, w3), reshape(b3, {std::size_t{1}, tokens * d_lat}));
        return reshape(out, {tokens, d_lat});
    }

    std::size_t n_tokens() const override { return tokens; }
    std::size_t latent_dim() const override { return d_lat; }

    std::vector<NamedTensor> named_parameters() {
        return {{"gen.w1", w1}, {"gen.b1", b1}, {"gen.w2", w2},
                {"gen.b2", b2}, {"gen.w3", w3}, {"gen.b3", b3}};
    }
    std::vector<NamedTensor> named_parameters() const {
        return const_cast<MlpVelocity*>(this)->named_parameters();
    }

    void set_requires_grad(bool b) {
        for (auto& p : named_parameters()) p.tensor.set_requires_grad(b);
    }

    void save(const std::filesystem::path& path) const {
        Container c;
        c.meta["kind"] = "generator";
        c.meta["dims"] = {{"n_tokens", tokens},   {"d_lat", d_lat},
                          {"d_cond", d_cond},     {"hidden", hidden},
                          {"time_dims", time_dims}};
        for (const auto& p : named_parameters()) c.add(p.name, p.tensor);
        c.save(path);
    }

    static MlpVelocity load(const std::filesystem::path& path) {
        Container c = Container::load(path);
        if (c.meta.value("kind", "") != "generator")
            throw numeric_error("checkpoint '" + path.string() +
                                "' is not a generator checkpoint");
        const auto& dims = c.meta["dims"];
        Rng scratch(0);
        MlpVelocity net = init(dims["n_tokens"], dims["d_lat"], dims["d_cond"],
                               dims["hidden"], dims["time_dims"], scratch);
        for (auto& p : net.named_parameters()) {
            const Tensor& stored = c.get(p.name);
            auto& dst = p.tensor.mutable_data();
            std::copy(stored.data().begin(), stored.data().end(), dst.begin());
        }
        return net;
    }
};

// z'_t = t z + (1 - t) eps
inline Tensor interpolate(const Tensor& z, const Tensor& eps, double t) {
    if (t < 0.0 || t > 1.0)
        throw contract_error("interpolate: t must lie in [0,1]");
    detail::require_same_shape(z, eps, "interpolate");
    return add(mul_scalar(z, t), mul_scalar(eps, 1.0 - t));
}

// Conditional target field of the linear path, independent of t.
inline Tensor target_velocity(const Tensor& z, const Tensor& eps) {
    detail::require_same_shape(z, eps, "target_velocity");
    return sub(z, eps);
}

struct FlowSample {
    Tensor latent;  // N x D
    Tensor cond;    // condition embedding
};

// Regression loss against the conditional velocity on given noise/time draws.
inline Tensor cfm_loss_at(const VelocityModel& model,
                          std::span<const FlowSample> batch,
                          std::span<const Tensor> eps, std::span<const double> t) {
    if (batch.empty()) throw contract_error("cfm_loss: empty batch");
    if (eps.size() != batch.size() || t.size() != batch.size())
        throw contract_error("cfm_loss: eps/t draws must match the batch");
    Tensor acc;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        Tensor z_t = interpolate(batch[i].latent, eps[i], t[i]);
        Tensor target = target_velocity(batch[i].latent, eps[i]);
        Tensor pred = model.velocity(z_t.detach(), batch[i].cond, t[i]);
        Tensor term = sum_sq(sub(pred, target.detach()));
        acc = acc.defined() ? add(acc, term) : term;
    }
    const double denom = static_cast<double>(batch.size()) *
                         static_cast<double>(batch.front().latent.size());
    return mul_scalar(acc, 1.0 / denom);
}

// Samples eps ~ N(0,I) and t ~ U[0,1) per element, then evaluates the loss.
inline Tensor cfm_loss(const VelocityModel& model,
                       std::span<const FlowSample> batch, Rng& rng) {
    std::vector<Tensor> eps;
    std::vector<double> t;
    eps.reserve(batch.size());
    t.reserve(batch.size());
    for (const auto& s : batch) {
        eps.push_back(gaussian(rng, s.latent.shape()));
        t.push_back(rng.uniform());
    }
    return cfm_loss_at(model, batch, eps, t);
}

struct FlowTrajectory {
    std::vector<Tensor> states;  // t_bar + 1 entries, state 0 is the prior draw
    int t_bar = 0;

    const Tensor& terminal() const { return states.back(); }
};

// Euler integration with per-step condition lookup (used for step-masked
// modulation). Generation never builds a graph.
inline FlowTrajectory euler_generate_steps(
    const VelocityModel& model,
    const std::function<Tensor(int)>& cond_for_step, int t_bar, Rng& rng,
    bool normalized_time = true) {
    if (t_bar < 1) throw contract_error("euler_generate: t_bar must be >= 1");
    autograd::NoGradGuard guard;
    FlowTrajectory traj;
    traj.t_bar = t_bar;
    traj.states.reserve(t_bar + 1);
    Tensor state = gaussian(rng, {model.n_tokens(), model.latent_dim()});
    traj.states.push_back(state);
    const double step = 1.0 / static_cast<double>(t_bar);
    for (int t = 1; t <= t_bar; ++t) {
        const double time_in = normalized_time
                                   ? static_cast<double>(t - 1) / t_bar
                                   : static_cast<double>(t - 1);
        Tensor v = model.velocity(state, cond_for_step(t - 1), time_in);
        state = add(state, mul_scalar(v, step));
        traj.states.push_back(state);
    }
    return traj;
}

inline FlowTrajectory euler_generate(const VelocityModel& model,
                                     const Tensor& cond, int t_bar, Rng& rng,
                                     bool normalized_time = true) {
    return euler_generate_steps(model, [&](int) { return cond; }, t_bar, rng,
                                normalized_time);
}

// Velocity gap between two conditions at the same latent and time.
inline Tensor velocity_divergence(const VelocityModel& model, const Tensor& latent,
                                  const Tensor& cond_minus,
                                  const Tensor& cond_plus, double t) {
    return sub(model.velocity(latent, cond_plus, t),
               model.velocity(latent, cond_minus, t));
}

struct FlowCurvePoint {
    int iteration = 0;
    double loss = 0.0;
};

struct FlowTrainConfig {
    std::size_t hidden = 64;
    std::size_t time_dims = 8;
    double lr = 1e-3;
    double weight_decay = 0.01;
    int iterations = 2000;
    int batch = 16;
    std::size_t dataset_size = 512;
    int t_bar = 16;
    bool normalized_time = true;
};

struct FlowTrainResult {
    MlpVelocity net;
    std::vector<FlowCurvePoint> curve;
};

// Trains the toy conditional generator on world samples; the returned net is
// meant to stay frozen afterwards.
inline FlowTrainResult train_generator(const ToyWorld& world,
                                       const FlowTrainConfig& cfg,
                                       std::uint64_t seed) {
    Rng root(seed);
    Rng init_rng = root.derive(20);
    Rng data_rng = root.derive(21);
    Rng loss_rng = root.derive(22);

    const auto& wc = world.config();
    FlowTrainResult result{
        MlpVelocity::init(wc.n_tokens, wc.d_gen, wc.d_gen, cfg.hidden,
                          cfg.time_dims, init_rng),
        {}};

    std::vector<FlowSample> dataset;
    dataset.reserve(cfg.dataset_size);
    const auto& labels = world.labels();
    for (std::size_t i = 0; i < cfg.dataset_size; ++i) {
        WorldSample s = world.sample_pair(labels[i % labels.size()], data_rng);
        dataset.push_back({s.gen_tokens, s.cond_gen});
    }

    AdamWConfig opt_cfg;
    opt_cfg.lr = cfg.lr;
    opt_cfg.weight_decay = cfg.weight_decay;
    AdamW opt(result.net.named_parameters(), opt_cfg);

    std::vector<FlowSample> batch(cfg.batch);
    for (int it = 0; it < cfg.iterations; ++it) {
        for (int b = 0; b < cfg.batch; ++b)
            batch[b] = dataset[data_rng.below(dataset.size())];
        Tensor loss = cfm_loss(result.net, batch, loss_rng);
        if (!std::isfinite(loss.item()))
            throw numeric_error("train_generator: loss diverged at iteration " +
                                std::to_string(it));
        backward(loss);
        opt.step();
        opt.zero_grad();
        result.curve.push_back({it, loss.item()});
    }
    return result;
}

}  // namespace otflow
