#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "otflow/errors.hpp"
#include "otflow/optim.hpp"
#include "otflow/random.hpp"
#include "otflow/tensor.hpp"

namespace otflow {

struct WorldConfig {
    std::uint64_t seed = 7;
    std::size_t n_tokens = 4;
    std::size_t d_gen = 8;   // generator-space token width
    std::size_t d_sem = 12;  // semantic-space token width
    std::size_t vocab = 8;
    double mixture_sigma = 0.5;    // spread of each condition's latent cloud
    double token_jitter = 0.5;     // fixed per-token offsets shared by conditions
    double cond_scale = 2.0;       // latent mean magnitude along condition axes
    double map_severity = 1.5;     // tanh saturation scale of the cross-space map
    double reencode_noise = 0.25;  // decode-and-re-encode noise used in training
    bool identity_map = false;     // debug: skip the linear map (needs d_gen == d_sem)
    bool antipodal_pair = false;   // vocab == 2 with opposite condition axes
    std::size_t vlm_hidden = 16;
    double vlm_temperature = 1.0;
};

inline void to_json(nlohmann::json& j, const WorldConfig& c) {
    j = {{"seed", c.seed},
         {"n_tokens", c.n_tokens},
         {"d_gen", c.d_gen},
         {"d_sem", c.d_sem},
         {"vocab", c.vocab},
         {"mixture_sigma", c.mixture_sigma},
         {"token_jitter", c.token_jitter},
         {"cond_scale", c.cond_scale},
         {"map_severity", c.map_severity},
         {"reencode_noise", c.reencode_noise},
         {"identity_map", c.identity_map},
         {"vlm_hidden", c.vlm_hidden},
         {"vlm_temperature", c.vlm_temperature}};
}

// Two nonnegative scores summing to one.
struct LogitPair {
    double minus = 0.5;
    double plus = 0.5;
};

// Numerically shift-invariant two-slot softmax.
inline LogitPair two_slot_softmax(double logit_minus, double logit_plus,
                                  double temperature) {
    const double a = logit_minus / temperature;
    const double b = logit_plus / temperature;
    const double mx = std::max(a, b);
    const double ea = std::exp(a - mx);
    const double eb = std::exp(b - mx);
    return {ea / (ea + eb), eb / (ea + eb)};
}

// Frozen affine-plus-tanh head over mean-pooled semantic tokens. The output
// layer is calibrated at world construction so each condition's designated
// vocabulary slot wins on samples drawn under that condition.
struct ToyVlm {
    Tensor w_hidden;  // d_sem x H
    Tensor b_hidden;  // H
    Tensor w_out;     // H x V
    double temperature = 1.0;

    std::size_t vocab() const { return w_out.cols(); }

    std::vector<double> logits(const Tensor& sem_tokens) const {
        const std::size_t n = sem_tokens.rows(), d = sem_tokens.cols();
        const std::size_t h = b_hidden.size(), v = vocab();
        std::vector<double> pooled(d, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j)
                pooled[j] += sem_tokens.at(i, j) / static_cast<double>(n);
        std::vector<double> hidden(h);
        for (std::size_t k = 0; k < h; ++k) {
            double acc = b_hidden.at(k);
            for (std::size_t j = 0; j < d; ++j)
                acc += pooled[j] * w_hidden.at(j, k);
            hidden[k] = std::tanh(acc);
        }
        std::vector<double> out(v, 0.0);
        for (std::size_t k = 0; k < h; ++k)
            for (std::size_t c = 0; c < v; ++c)
                out[c] += hidden[k] * w_out.at(k, c);
        return out;
    }

    std::vector<NamedTensor> named_parameters() const {
        return {{"vlm.w_hidden", w_hidden},
                {"vlm.b_hidden", b_hidden},
                {"vlm.w_out", w_out}};
    }
};

inline LogitPair toy_logits(const ToyVlm& vlm, const Tensor& sem_tokens,
                            std::size_t slot_minus, std::size_t slot_plus) {
    if (slot_minus >= vlm.vocab() || slot_plus >= vlm.vocab())
        throw contract_error("toy_logits: slot out of range");
    if (slot_minus == slot_plus)
        throw contract_error("toy_logits: slots must be distinct");
    const auto l = vlm.logits(sem_tokens);
    return two_slot_softmax(l[slot_minus], l[slot_plus], vlm.temperature);
}

// One paired draw: generator-space tokens, their ground-truth semantic image,
// and the condition embedding in both spaces.
struct WorldSample {
    Tensor gen_tokens;  // N x d_gen
    Tensor cond_gen;    // d_gen
    Tensor sem_tokens;  // N x d_sem
    Tensor cond_sem;    // d_sem
    std::size_t slot = 0;
    std::string label;
};

// Synthetic paired-space universe with a known generator-to-semantic map,
// per-condition latent mixtures, and a frozen logit head.
class ToyWorld {
  public:
    static ToyWorld make(const WorldConfig& cfg) {
        if (cfg.d_gen < 1 || cfg.d_sem < cfg.d_gen)
            throw config_error("toy world: need d_sem >= d_gen >= 1");
        if (cfg.vocab < 2) throw config_error("toy world: need vocab >= 2");
        if (cfg.identity_map && cfg.d_gen != cfg.d_sem)
            throw config_error("toy world: identity map needs d_gen == d_sem");
        if (cfg.antipodal_pair && cfg.vocab != 2)
            throw config_error("toy world: antipodal_pair needs vocab == 2");
        if (!(cfg.map_severity > 0.0))
            throw config_error("toy world: map_severity must be positive");

        ToyWorld w;
        w.cfg_ = cfg;
        Rng root(cfg.seed);
        Rng map_rng = root.derive(1);
        Rng cond_rng = root.derive(2);
        Rng offset_rng = root.derive(3);
        Rng vlm_rng = root.derive(4);

        w.map_weight_ = orthonormal_rows(cfg.d_gen, cfg.d_sem, map_rng);
        if (cfg.antipodal_pair) {
            Tensor axis = orthonormal_rows(1, cfg.d_gen, cond_rng);
            std::vector<double> v(2 * cfg.d_gen);
            for (std::size_t j = 0; j < cfg.d_gen; ++j) {
                v[j] = axis.at(j);
                v[cfg.d_gen + j] = -axis.at(j);
            }
            w.cond_gen_ = Tensor::from({2, cfg.d_gen}, std::move(v));
        } else {
            w.cond_gen_ = separated_unit_rows(cfg.vocab, cfg.d_gen, cond_rng);
        }
        w.token_offsets_ = mul_scalar(gaussian(offset_rng, {cfg.n_tokens, cfg.d_gen}),
                                      cfg.token_jitter).detach();
        w.labels_.reserve(cfg.vocab);
        for (std::size_t i = 0; i < cfg.vocab; ++i) w.labels_.push_back(label_for(i));

        {
            std::vector<double> sem(cfg.vocab * cfg.d_sem);
            for (std::size_t c = 0; c < cfg.vocab; ++c) {
                Tensor row = w.map_to_sem(w.cond_gen_row(c));
                for (std::size_t j = 0; j < cfg.d_sem; ++j) sem[c * cfg.d_sem + j] = row.at(j);
            }
            w.cond_sem_ = Tensor::from({cfg.vocab, cfg.d_sem}, std::move(sem));
        }

        w.calibrate_vlm(vlm_rng);
        return w;
    }

    const WorldConfig& config() const { return cfg_; }
    const std::vector<std::string>& labels() const { return labels_; }
    const ToyVlm& vlm() const { return vlm_; }
    const Tensor& map_weight() const { return map_weight_; }

    std::size_t label_index(const std::string& label) const {
        for (std::size_t i = 0; i < labels_.size(); ++i)
            if (labels_[i] == label) return i;
        throw contract_error("toy world: unknown condition '" + label + "'");
    }

    Tensor cond_gen_embedding(const std::string& label) const {
        return cond_gen_row(label_index(label));
    }
    Tensor cond_sem_embedding(const std::string& label) const {
        std::size_t c = label_index(label);
        std::vector<double> v(cfg_.d_sem);
        for (std::size_t j = 0; j < cfg_.d_sem; ++j) v[j] = cond_sem_.at(c, j);
        return Tensor::from({cfg_.d_sem}, std::move(v));
    }

    // Mean of condition c's latent cloud for token row i: cond_scale * e_c + offset_i.
    Tensor mixture_mean(std::size_t c) const {
        std::vector<double> v(cfg_.n_tokens * cfg_.d_gen);
        for (std::size_t i = 0; i < cfg_.n_tokens; ++i)
            for (std::size_t j = 0; j < cfg_.d_gen; ++j)
                v[i * cfg_.d_gen + j] = cfg_.cond_scale * cond_gen_.at(c, j) +
                                        token_offsets_.at(i, j);
        return Tensor::from({cfg_.n_tokens, cfg_.d_gen}, std::move(v));
    }

    // Ground-truth cross-space map: row-wise linear map followed by a bounded
    // pointwise nonlinearity, injective at these dimensions.
    Tensor map_to_sem(const Tensor& gen_tokens) const {
        const bool vector_in = gen_tokens.ndim() == 1;
        const std::size_t n = vector_in ? 1 : gen_tokens.rows();
        if ((vector_in ? gen_tokens.size() : gen_tokens.cols()) != cfg_.d_gen)
            throw shape_error("toy world map: input " + shape_str(gen_tokens.shape()) +
                              " does not match d_gen");
        const double s = cfg_.map_severity;
        std::vector<double> out(n * cfg_.d_sem, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < cfg_.d_sem; ++j) {
                double acc = 0.0;
                if (cfg_.identity_map) {
                    acc = gen_tokens.at(i * cfg_.d_gen + j);
                } else {
                    for (std::size_t k = 0; k < cfg_.d_gen; ++k)
                        acc += gen_tokens.at(i * cfg_.d_gen + k) * map_weight_.at(k, j);
                }
                out[i * cfg_.d_sem + j] = s * std::tanh(acc / s);
            }
        }
        if (vector_in) return Tensor::from({cfg_.d_sem}, std::move(out));
        return Tensor::from({n, cfg_.d_sem}, std::move(out));
    }

    WorldSample sample_pair(const std::string& label, Rng& rng) const {
        const std::size_t c = label_index(label);
        std::vector<double> z(cfg_.n_tokens * cfg_.d_gen);
        for (std::size_t i = 0; i < cfg_.n_tokens; ++i)
            for (std::size_t j = 0; j < cfg_.d_gen; ++j)
                z[i * cfg_.d_gen + j] = cfg_.cond_scale * cond_gen_.at(c, j) +
                                        token_offsets_.at(i, j) +
                                        cfg_.mixture_sigma * rng.gaussian();
        Tensor gen_tokens = Tensor::from({cfg_.n_tokens, cfg_.d_gen}, std::move(z));
        WorldSample s;
        s.sem_tokens = map_to_sem(gen_tokens);
        s.gen_tokens = std::move(gen_tokens);
        s.cond_gen = cond_gen_row(c);
        s.cond_sem = cond_sem_embedding(label);
        s.slot = c;
        s.label = label;
        return s;
    }

    nlohmann::json spec_json() const {
        nlohmann::json j = cfg_;
        j["labels"] = labels_;
        return j;
    }

  private:
    static std::string label_for(std::size_t i) {
        static const char* kNames[] = {"alpha",  "bravo",  "charlie", "delta",
                                       "echo",   "foxtrot", "golf",   "hotel",
                                       "india",  "juliett", "kilo",   "lima",
                                       "mike",   "november", "oscar", "papa"};
        if (i < sizeof(kNames) / sizeof(kNames[0])) return kNames[i];
        return "cond" + std::to_string(i);
    }

    static Tensor orthonormal_rows(std::size_t rows, std::size_t cols, Rng& rng) {
        // modified Gram-Schmidt; requires rows <= cols
        std::vector<std::vector<double>> basis(rows, std::vector<double>(cols));
        for (std::size_t r = 0; r < rows; ++r) {
            for (;;) {
                for (auto& x : basis[r]) x = rng.gaussian();
                for (std::size_t p = 0; p < r; ++p) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < cols; ++j) dot += basis[r][j] * basis[p][j];
                    for (std::size_t j = 0; j < cols; ++j) basis[r][j] -= dot * basis[p][j];
                }
                double norm_sq = 0.0;
                for (double x : basis[r]) norm_sq += x * x;
                if (norm_sq > 1e-8) {
                    const double inv = 1.0 / std::sqrt(norm_sq);
                    for (auto& x : basis[r]) x *= inv;
                    break;
                }
            }
        }
        std::vector<double> flat(rows * cols);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < cols; ++j) flat[r * cols + j] = basis[r][j];
        return Tensor::from({rows, cols}, std::move(flat));
    }

    // Unit rows with pairwise cosine <= 0.5. Orthonormal when they fit into the
    // dimension, rejection-sampled otherwise.
    static Tensor separated_unit_rows(std::size_t rows, std::size_t cols, Rng& rng) {
        if (rows <= cols) return orthonormal_rows(rows, cols, rng);
        std::vector<std::vector<double>> dirs;
        for (std::size_t r = 0; r < rows; ++r) {
            bool placed = false;
            for (int attempt = 0; attempt < 10000 && !placed; ++attempt) {
                std::vector<double> v(cols);
                double norm_sq = 0.0;
                for (auto& x : v) {
                    x = rng.gaussian();
                    norm_sq += x * x;
                }
                const double inv = 1.0 / std::sqrt(norm_sq);
                for (auto& x : v) x *= inv;
                bool ok = true;
                for (const auto& u : dirs) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < cols; ++j) dot += u[j] * v[j];
                    if (std::abs(dot) > 0.5) {
                        ok = false;
                        break;
                    }
                }
                if (ok) {
                    dirs.push_back(std::move(v));
                    placed = true;
                }
            }
            if (!placed)
                throw config_error("toy world: cannot separate " +
                                   std::to_string(rows) + " conditions in dimension " +
                                   std::to_string(cols));
        }
        std::vector<double> flat(rows * cols);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < cols; ++j) flat[r * cols + j] = dirs[r][j];
        return Tensor::from({rows, cols}, std::move(flat));
    }

    Tensor cond_gen_row(std::size_t c) const {
        std::vector<double> v(cfg_.d_gen);
        for (std::size_t j = 0; j < cfg_.d_gen; ++j) v[j] = cond_gen_.at(c, j);
        return Tensor::from({cfg_.d_gen}, std::move(v));
    }

    // Hidden layer is random and frozen; the output layer points each slot at
    // the empirical hidden mean of its condition, estimated by Monte Carlo.
    void calibrate_vlm(Rng& rng) {
        const std::size_t h = cfg_.vlm_hidden, v = cfg_.vocab;
        vlm_.w_hidden = mul_scalar(gaussian(rng, {cfg_.d_sem, h}),
                                   1.0 / std::sqrt(static_cast<double>(cfg_.d_sem)))
                            .detach();
        vlm_.b_hidden = mul_scalar(gaussian(rng, {h}), 0.1).detach();
        vlm_.temperature = cfg_.vlm_temperature;

        const int draws = 128;
        std::vector<std::vector<double>> mean_hidden(v, std::vector<double>(h, 0.0));
        vlm_.w_out = Tensor::zeros({h, v});  // logits() needs a defined head
        for (std::size_t c = 0; c < v; ++c) {
            for (int d = 0; d < draws; ++d) {
                WorldSample s = sample_pair(labels_[c], rng);
                // hidden activations of the pooled sample
                std::vector<double> pooled(cfg_.d_sem, 0.0);
                for (std::size_t i = 0; i < cfg_.n_tokens; ++i)
                    for (std::size_t j = 0; j < cfg_.d_sem; ++j)
                        pooled[j] += s.sem_tokens.at(i, j) /
                                     static_cast<double>(cfg_.n_tokens);
                for (std::size_t k = 0; k < h; ++k) {
                    double acc = vlm_.b_hidden.at(k);
                    for (std::size_t j = 0; j < cfg_.d_sem; ++j)
                        acc += pooled[j] * vlm_.w_hidden.at(j, k);
                    mean_hidden[c][k] += std::tanh(acc) / draws;
                }
            }
        }
        std::vector<double> center(h, 0.0);
        for (std::size_t c = 0; c < v; ++c)
            for (std::size_t k = 0; k < h; ++k) center[k] += mean_hidden[c][k] / v;
        double mean_dist = 0.0;
        for (std::size_t c = 0; c < v; ++c) {
            double d2 = 0.0;
            for (std::size_t k = 0; k < h; ++k) {
                const double diff = mean_hidden[c][k] - center[k];
                d2 += diff * diff;
            }
            mean_dist += std::sqrt(d2) / v;
        }
        const double gain = 6.0 / (mean_dist + 1e-12);
        std::vector<double> w(h * v);
        for (std::size_t k = 0; k < h; ++k)
            for (std::size_t c = 0; c < v; ++c)
                w[k * v + c] = gain * (mean_hidden[c][k] - center[k]);
        vlm_.w_out = Tensor::from({h, v}, std::move(w));
    }

    WorldConfig cfg_;
    std::vector<std::string> labels_;
    Tensor map_weight_;     // d_gen x d_sem, orthonormal rows
    Tensor cond_gen_;       // V x d_gen unit rows
    Tensor cond_sem_;       // V x d_sem
    Tensor token_offsets_;  // N x d_gen
    ToyVlm vlm_;
};

}  // namespace otflow
