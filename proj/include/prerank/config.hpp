#pragma once

// One config document, sectioned per module. Defaults describe the desk-scale
// world; everything is overridable from a JSON file. The fully resolved
// config is echoed into every run manifest, so unknown keys are an error
// rather than silently ignored.

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace prerank {

struct SimConfig {
    std::int64_t n_users = 2000;
    std::int64_t n_items = 20000;  // item pool scale (S0)
    int d_true = 8;
    int n_retrieved = 2000;   // N^p, retrieval -> pre-ranking (S1)
    int n_to_ranking = 200;   // N^r, pre-ranking -> ranking (S2)
    int n_exposed = 10;       // exposure slate size (S4)
    double popularity_exponent = 1.2;
    double retrieval_affinity_mix = 0.7;  // alpha: exp(alpha*affinity) * popularity^(1-alpha)
    double prerank_sigma = 0.5;
    double ranking_sigma0 = 0.05;  // ranking noise at the head
    double ranking_sigma1 = 0.8;   // linear growth toward the tail
    double feedback_steepness = 3.0;
    double click_midpoint = 2.6;     // logistic midpoint of the click response
    double purchase_midpoint = 3.4;  // same for purchase, conditioned on click
    bool alt_exposure_pass = true;   // second exposure draw for all-scenario feedback

    void validate() const {
        if (n_users < 1 || n_items < 1 || d_true < 1)
            throw std::invalid_argument("sim: n_users, n_items and d_true must be >= 1");
        if (!(n_exposed <= n_to_ranking && n_to_ranking <= n_retrieved && n_retrieved <= n_items))
            throw std::invalid_argument(
                "sim: requires n_exposed <= n_to_ranking <= n_retrieved <= n_items");
        if (n_exposed < 0) throw std::invalid_argument("sim: n_exposed must be >= 0");
        if (ranking_sigma0 < 0 || ranking_sigma1 < 0 || prerank_sigma < 0)
            throw std::invalid_argument("sim: noise sigmas must be >= 0");
        if (retrieval_affinity_mix < 0 || retrieval_affinity_mix > 1)
            throw std::invalid_argument("sim: retrieval_affinity_mix must lie in [0, 1]");
        if (popularity_exponent < 0)
            throw std::invalid_argument("sim: popularity_exponent must be >= 0");
    }
};

struct SamplerConfig {
    // Per-chunk sampling rates, top chunk first.
    std::vector<double> chunk_rates = {0.5, 0.125, 0.1, 0.05, 0.025, 0.01, 0.005};
    // Optional absolute inclusive chunk upper bounds; empty means equal-width
    // chunks over [1, N^r] resolved per request.
    std::vector<int> chunk_boundaries = {};
    double prerank_tail_rate = 0.008;  // N3
    double inbatch_rate = 0.05;        // N4, applied per candidate pair
    int pool_negatives = 10;           // N5, per request

    void validate() const {
        if (chunk_rates.empty()) throw std::invalid_argument("sampler: chunk_rates must be non-empty");
        for (double r : chunk_rates)
            if (!(r > 0.0 && r <= 1.0))
                throw std::invalid_argument("sampler: chunk rates must lie in (0, 1]");
        if (!chunk_boundaries.empty()) {
            if (chunk_boundaries.size() != chunk_rates.size())
                throw std::invalid_argument("sampler: chunk_boundaries must match chunk_rates");
            int prev = 0;
            for (int b : chunk_boundaries) {
                if (b <= prev)
                    throw std::invalid_argument("sampler: chunk_boundaries must increase strictly");
                prev = b;
            }
        }
        if (prerank_tail_rate < 0 || prerank_tail_rate > 1)
            throw std::invalid_argument("sampler: prerank_tail_rate must lie in [0, 1]");
        if (inbatch_rate < 0 || inbatch_rate > 1)
            throw std::invalid_argument("sampler: inbatch_rate must lie in [0, 1]");
        if (pool_negatives < 0)
            throw std::invalid_argument("sampler: pool_negatives must be >= 0");
    }
};

struct ModelConfig {
    int dim = 16;
    // Weight of the synthetic cross-feature score blended into the logits of
    // samples whose pre-rank order is known (N1..N3); 0 disables it.
    double cross_score_weight = 0.25;

    void validate() const {
        if (dim < 1) throw std::invalid_argument("model: dim must be >= 1");
        if (cross_score_weight < 0)
            throw std::invalid_argument("model: cross_score_weight must be >= 0");
    }
};

struct LossConfig {
    double lambda_global = 0.05;    // global consistency weight
    double lambda_click = 0.98;     // per-task estimation weights
    double lambda_purchase = 0.2;
    double alpha_local = 0.05;      // local consistency weight
    double beta_neg = 0.5;          // negative-task weight
    double margin = 0.9;
    double tau = 0.1;
    double beta0 = 9999.0;          // margin blend starts fully un-margined
    double beta_scale = 0.999;      // per-step decay of the blend coefficient
    double neg_min = -1e9;          // fill value for masked softmax slots

    void validate() const {
        if (tau <= 0) throw std::invalid_argument("loss: tau must be > 0");
        if (margin < 0) throw std::invalid_argument("loss: margin must be >= 0");
        if (lambda_global < 0 || lambda_click < 0 || lambda_purchase < 0 || alpha_local < 0 ||
            beta_neg < 0)
            throw std::invalid_argument("loss: weights must be >= 0");
        if (beta0 < 0) throw std::invalid_argument("loss: beta0 must be >= 0");
        if (!(beta_scale > 0 && beta_scale <= 1))
            throw std::invalid_argument("loss: beta_scale must lie in (0, 1]");
    }

    double beta_at_step(std::int64_t step) const {
        return beta0 * std::pow(beta_scale, static_cast<double>(step));
    }
};

struct TrainConfig {
    int epochs = 3;
    int batch_size = 32;
    double lr = 0.05;
    double lr_decay = 0.5;  // multiplied in per epoch
    int n_train_requests = 20000;
    int n_eval_requests = 4000;
    bool clicked_requests_only = true;
    std::uint64_t seed = 1;

    void validate() const {
        if (epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
        if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
        if (lr < 0 || lr_decay <= 0) throw std::invalid_argument("train: lr must be >= 0, lr_decay > 0");
        if (n_train_requests < 1 || n_eval_requests < 1)
            throw std::invalid_argument("train: request counts must be >= 1");
    }
};

struct EvalConfig {
    std::vector<int> hit_ks = {10, 100, 200, 1000};
    std::vector<int> consistency_ks = {10, 100};

    void validate() const {
        for (int k : hit_ks)
            if (k <= 0) throw std::invalid_argument("eval: hit_ks entries must be > 0");
        for (int k : consistency_ks)
            if (k <= 0) throw std::invalid_argument("eval: consistency_ks entries must be > 0");
    }
};

struct AppConfig {
    SimConfig sim;
    SamplerConfig sampler;
    ModelConfig model;
    LossConfig loss;
    TrainConfig train;
    EvalConfig eval;

    void validate() const {
        sim.validate();
        sampler.validate();
        model.validate();
        loss.validate();
        train.validate();
        eval.validate();
    }
};

namespace detail {

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

inline void check_known_keys(const nlohmann::json& j, const char* section,
                             std::initializer_list<const char*> known) {
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* k : known)
            if (key == k) {
                ok = true;
                break;
            }
        if (!ok)
            throw std::invalid_argument(std::string("config: unknown key '") + key +
                                        "' in section '" + section + "'");
    }
}

}  // namespace detail

inline void from_json_section(const nlohmann::json& j, SimConfig& c) {
    detail::check_known_keys(j, "sim",
                             {"n_users", "n_items", "d_true", "n_retrieved", "n_to_ranking",
                              "n_exposed", "popularity_exponent", "retrieval_affinity_mix",
                              "prerank_sigma", "ranking_sigma0", "ranking_sigma1",
                              "feedback_steepness", "click_midpoint", "purchase_midpoint",
                              "alt_exposure_pass"});
    detail::read_key(j, "n_users", c.n_users);
    detail::read_key(j, "n_items", c.n_items);
    detail::read_key(j, "d_true", c.d_true);
    detail::read_key(j, "n_retrieved", c.n_retrieved);
    detail::read_key(j, "n_to_ranking", c.n_to_ranking);
    detail::read_key(j, "n_exposed", c.n_exposed);
    detail::read_key(j, "popularity_exponent", c.popularity_exponent);
    detail::read_key(j, "retrieval_affinity_mix", c.retrieval_affinity_mix);
    detail::read_key(j, "prerank_sigma", c.prerank_sigma);
    detail::read_key(j, "ranking_sigma0", c.ranking_sigma0);
    detail::read_key(j, "ranking_sigma1", c.ranking_sigma1);
    detail::read_key(j, "feedback_steepness", c.feedback_steepness);
    detail::read_key(j, "click_midpoint", c.click_midpoint);
    detail::read_key(j, "purchase_midpoint", c.purchase_midpoint);
    detail::read_key(j, "alt_exposure_pass", c.alt_exposure_pass);
}

inline void from_json_section(const nlohmann::json& j, SamplerConfig& c) {
    detail::check_known_keys(j, "sampler",
                             {"chunk_rates", "chunk_boundaries", "prerank_tail_rate",
                              "inbatch_rate", "pool_negatives"});
    detail::read_key(j, "chunk_rates", c.chunk_rates);
    detail::read_key(j, "chunk_boundaries", c.chunk_boundaries);
    detail::read_key(j, "prerank_tail_rate", c.prerank_tail_rate);
    detail::read_key(j, "inbatch_rate", c.inbatch_rate);
    detail::read_key(j, "pool_negatives", c.pool_negatives);
}

inline void from_json_section(const nlohmann::json& j, ModelConfig& c) {
    detail::check_known_keys(j, "model", {"dim", "cross_score_weight"});
    detail::read_key(j, "dim", c.dim);
    detail::read_key(j, "cross_score_weight", c.cross_score_weight);
}

inline void from_json_section(const nlohmann::json& j, LossConfig& c) {
    detail::check_known_keys(j, "loss",
                             {"lambda_global", "lambda_click", "lambda_purchase", "alpha_local",
                              "beta_neg", "margin", "tau", "beta0", "beta_scale", "neg_min"});
    detail::read_key(j, "lambda_global", c.lambda_global);
    detail::read_key(j, "lambda_click", c.lambda_click);
    detail::read_key(j, "lambda_purchase", c.lambda_purchase);
    detail::read_key(j, "alpha_local", c.alpha_local);
    detail::read_key(j, "beta_neg", c.beta_neg);
    detail::read_key(j, "margin", c.margin);
    detail::read_key(j, "tau", c.tau);
    detail::read_key(j, "beta0", c.beta0);
    detail::read_key(j, "beta_scale", c.beta_scale);
    detail::read_key(j, "neg_min", c.neg_min);
}

inline void from_json_section(const nlohmann::json& j, TrainConfig& c) {
    detail::check_known_keys(j, "train",
                             {"epochs", "batch_size", "lr", "lr_decay", "n_train_requests",
                              "n_eval_requests", "clicked_requests_only", "seed"});
    detail::read_key(j, "epochs", c.epochs);
    detail::read_key(j, "batch_size", c.batch_size);
    detail::read_key(j, "lr", c.lr);
    detail::read_key(j, "lr_decay", c.lr_decay);
    detail::read_key(j, "n_train_requests", c.n_train_requests);
    detail::read_key(j, "n_eval_requests", c.n_eval_requests);
    detail::read_key(j, "clicked_requests_only", c.clicked_requests_only);
    detail::read_key(j, "seed", c.seed);
}

inline void from_json_section(const nlohmann::json& j, EvalConfig& c) {
    detail::check_known_keys(j, "eval", {"hit_ks", "consistency_ks"});
    detail::read_key(j, "hit_ks", c.hit_ks);
    detail::read_key(j, "consistency_ks", c.consistency_ks);
}

inline AppConfig config_from_json(const nlohmann::json& j) {
    detail::check_known_keys(j, "<root>", {"sim", "sampler", "model", "loss", "train", "eval"});
    AppConfig c;
    if (j.contains("sim")) from_json_section(j.at("sim"), c.sim);
    if (j.contains("sampler")) from_json_section(j.at("sampler"), c.sampler);
    if (j.contains("model")) from_json_section(j.at("model"), c.model);
    if (j.contains("loss")) from_json_section(j.at("loss"), c.loss);
    if (j.contains("train")) from_json_section(j.at("train"), c.train);
    if (j.contains("eval")) from_json_section(j.at("eval"), c.eval);
    c.validate();
    return c;
}

inline AppConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw std::runtime_error("config: parse error in '" + path + "': " + e.what());
    }
    return config_from_json(j);
}

/// Fully resolved config as JSON; embedded in run manifests.
inline nlohmann::ordered_json config_to_json(const AppConfig& c) {
    nlohmann::ordered_json j;
    j["sim"] = {{"n_users", c.sim.n_users},
                {"n_items", c.sim.n_items},
                {"d_true", c.sim.d_true},
                {"n_retrieved", c.sim.n_retrieved},
                {"n_to_ranking", c.sim.n_to_ranking},
                {"n_exposed", c.sim.n_exposed},
                {"popularity_exponent", c.sim.popularity_exponent},
                {"retrieval_affinity_mix", c.sim.retrieval_affinity_mix},
                {"prerank_sigma", c.sim.prerank_sigma},
                {"ranking_sigma0", c.sim.ranking_sigma0},
                {"ranking_sigma1", c.sim.ranking_sigma1},
                {"feedback_steepness", c.sim.feedback_steepness},
                {"click_midpoint", c.sim.click_midpoint},
                {"purchase_midpoint", c.sim.purchase_midpoint},
                {"alt_exposure_pass", c.sim.alt_exposure_pass}};
    j["sampler"] = {{"chunk_rates", c.sampler.chunk_rates},
                    {"chunk_boundaries", c.sampler.chunk_boundaries},
                    {"prerank_tail_rate", c.sampler.prerank_tail_rate},
                    {"inbatch_rate", c.sampler.inbatch_rate},
                    {"pool_negatives", c.sampler.pool_negatives}};
    j["model"] = {{"dim", c.model.dim}, {"cross_score_weight", c.model.cross_score_weight}};
    j["loss"] = {{"lambda_global", c.loss.lambda_global},
                 {"lambda_click", c.loss.lambda_click},
                 {"lambda_purchase", c.loss.lambda_purchase},
                 {"alpha_local", c.loss.alpha_local},
                 {"beta_neg", c.loss.beta_neg},
                 {"margin", c.loss.margin},
                 {"tau", c.loss.tau},
                 {"beta0", c.loss.beta0},
                 {"beta_scale", c.loss.beta_scale},
                 {"neg_min", c.loss.neg_min}};
    j["train"] = {{"epochs", c.train.epochs},
                  {"batch_size", c.train.batch_size},
                  {"lr", c.train.lr},
                  {"lr_decay", c.train.lr_decay},
                  {"n_train_requests", c.train.n_train_requests},
                  {"n_eval_requests", c.train.n_eval_requests},
                  {"clicked_requests_only", c.train.clicked_requests_only},
                  {"seed", c.train.seed}};
    j["eval"] = {{"hit_ks", c.eval.hit_ks}, {"consistency_ks", c.eval.consistency_ks}};
    return j;
}

}  // namespace prerank
