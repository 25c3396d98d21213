#pragma once

// Synthetic cascade world: latent user/item affinities plus a heavy-tailed
// popularity prior, and the four-stage funnel (retrieval -> pre-ranking
// oracle -> ranking oracle -> exposure + feedback) that turns them into
// request logs.
//
// Feedback is drawn from TRUE affinity, not from the oracle scores, so a
// model that learns to surface unexposed potential positives is actually
// rewarded at evaluation time.

#include "prerank/config.hpp"
#include "prerank/domain.hpp"
#include "prerank/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <thread>
#include <vector>

namespace prerank {

struct World {
    std::int64_t n_users = 0;
    std::int64_t n_items = 0;
    int d_true = 0;
    std::vector<float> user_latent;     // n_users x d_true, row-major
    std::vector<float> item_latent;     // n_items x d_true, row-major
    std::vector<double> popularity;     // sums to 1
    std::vector<float> log_popularity;  // cached for retrieval weights
    std::uint64_t seed = 0;

    double affinity(UserId u, ItemId j) const {
        const float* a = &user_latent[static_cast<std::size_t>(u) * d_true];
        const float* b = &item_latent[static_cast<std::size_t>(j) * d_true];
        double s = 0.0;
        for (int k = 0; k < d_true; ++k) s += static_cast<double>(a[k]) * b[k];
        return s;
    }
};

/// Deterministic world generation. Latent components are N(0, d^-1/4) so
/// affinities are roughly unit-variance; popularity follows a power law with
/// the given exponent (item 0 most popular).
inline World generate_world(std::int64_t n_users, std::int64_t n_items, int d_true,
                            std::uint64_t seed, double popularity_exponent = 1.2) {
    if (n_users < 1 || n_items < 1 || d_true < 1)
        throw std::invalid_argument("generate_world: all counts must be >= 1");

    World w;
    w.n_users = n_users;
    w.n_items = n_items;
    w.d_true = d_true;
    w.seed = seed;

    const double comp_sigma = std::pow(static_cast<double>(d_true), -0.25);
    Rng user_rng(derive_seed(seed, Stream::world_users));
    w.user_latent.resize(static_cast<std::size_t>(n_users) * d_true);
    for (float& x : w.user_latent) x = static_cast<float>(comp_sigma * user_rng.normal());

    Rng item_rng(derive_seed(seed, Stream::world_items));
    w.item_latent.resize(static_cast<std::size_t>(n_items) * d_true);
    for (float& x : w.item_latent) x = static_cast<float>(comp_sigma * item_rng.normal());

    w.popularity.resize(static_cast<std::size_t>(n_items));
    double total = 0.0;
    for (std::int64_t j = 0; j < n_items; ++j) {
        w.popularity[j] = std::pow(static_cast<double>(j + 1), -popularity_exponent);
        total += w.popularity[j];
    }
    w.log_popularity.resize(w.popularity.size());
    for (std::size_t j = 0; j < w.popularity.size(); ++j) {
        w.popularity[j] /= total;
        w.log_popularity[j] = static_cast<float>(std::log(w.popularity[j]));
    }
    return w;
}

namespace detail {

/// Scratch buffers reused across simulate_request calls.
struct SimWorkspace {
    std::vector<double> affinity;    // per item
    std::vector<double> key;         // retrieval sampling keys
    std::vector<std::int32_t> idx;   // index scratch
    std::vector<double> score;       // per candidate
};

struct ExposureDraw {
    std::vector<ItemId> ranked_items;  // by ranking order, length N^r
    std::vector<ItemId> clicked;       // exposed + clicked
    std::vector<ItemId> purchased;
};

// Orders `candidates` (item ids, given in pre-rank order) with the ranking
// oracle, exposes the head of the slate and draws feedback from true
// affinity. The noise applied to a candidate grows linearly with its
// pre-rank position: sigma(p) = sigma0 + sigma1 * p / N^r.
inline ExposureDraw run_downstream(const World& world, const SimConfig& cfg,
                                   const std::vector<double>& affinity,
                                   const std::vector<ItemId>& candidates, Rng& rng,
                                   SimWorkspace& ws) {
    const int n_rank = static_cast<int>(candidates.size());
    ws.score.resize(candidates.size());
    for (int p = 0; p < n_rank; ++p) {
        const double sigma =
            cfg.ranking_sigma0 + cfg.ranking_sigma1 * static_cast<double>(p + 1) / n_rank;
        ws.score[p] = affinity[candidates[p]] + sigma * rng.normal();
    }

    ws.idx.resize(candidates.size());
    std::iota(ws.idx.begin(), ws.idx.end(), 0);
    std::sort(ws.idx.begin(), ws.idx.end(), [&](std::int32_t a, std::int32_t b) {
        if (ws.score[a] != ws.score[b]) return ws.score[a] > ws.score[b];
        return candidates[a] < candidates[b];
    });

    ExposureDraw draw;
    draw.ranked_items.resize(candidates.size());
    for (int r = 0; r < n_rank; ++r) draw.ranked_items[r] = candidates[ws.idx[r]];

    for (int r = 0; r < std::min(cfg.n_exposed, n_rank); ++r) {
        const ItemId item = draw.ranked_items[r];
        const double a = affinity[item];
        const double p_click =
            1.0 / (1.0 + std::exp(-cfg.feedback_steepness * (a - cfg.click_midpoint)));
        if (rng.bernoulli(p_click)) {
            draw.clicked.push_back(item);
            const double p_buy =
                1.0 / (1.0 + std::exp(-cfg.feedback_steepness * (a - cfg.purchase_midpoint)));
            if (rng.bernoulli(p_buy)) draw.purchased.push_back(item);
        }
    }
    return draw;
}

inline RequestLog simulate_request_ws(const World& world, const SimConfig& cfg, UserId user,
                                      Rng& rng, SimWorkspace& ws) {
    if (user < 0 || user >= world.n_users)
        throw std::invalid_argument("simulate_request: user " + std::to_string(user) +
                                    " out of range [0, " + std::to_string(world.n_users) + ")");
    cfg.validate();
    if (world.n_items < cfg.n_retrieved)
        throw std::invalid_argument("simulate_request: world smaller than n_retrieved");

    const std::size_t n_items = static_cast<std::size_t>(world.n_items);
    ws.affinity.resize(n_items);
    for (std::size_t j = 0; j < n_items; ++j)
        ws.affinity[j] = world.affinity(user, static_cast<ItemId>(j));

    // Retrieval: weighted sampling without replacement, weight =
    // exp(alpha * affinity) * popularity^(1 - alpha). Exponential-key
    // selection keeps it a single pass.
    const double alpha = cfg.retrieval_affinity_mix;
    ws.key.resize(n_items);
    for (std::size_t j = 0; j < n_items; ++j) {
        const double log_w = alpha * ws.affinity[j] + (1.0 - alpha) * world.log_popularity[j];
        double u = rng.uniform01();
        if (u < 1e-300) u = 1e-300;
        ws.key[j] = -std::log(u) * std::exp(-log_w);
    }
    ws.idx.resize(n_items);
    std::iota(ws.idx.begin(), ws.idx.end(), 0);
    std::nth_element(ws.idx.begin(), ws.idx.begin() + cfg.n_retrieved - 1, ws.idx.end(),
                     [&](std::int32_t a, std::int32_t b) {
                         if (ws.key[a] != ws.key[b]) return ws.key[a] < ws.key[b];
                         return a < b;
                     });
    std::vector<ItemId> retrieved(ws.idx.begin(), ws.idx.begin() + cfg.n_retrieved);

    // Pre-ranking oracle: true affinity + Gaussian noise.
    ws.score.resize(retrieved.size());
    for (std::size_t i = 0; i < retrieved.size(); ++i)
        ws.score[i] = ws.affinity[retrieved[i]] + cfg.prerank_sigma * rng.normal();
    std::vector<std::int32_t> order(retrieved.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::int32_t a, std::int32_t b) {
        if (ws.score[a] != ws.score[b]) return ws.score[a] > ws.score[b];
        return retrieved[a] < retrieved[b];
    });

    RequestLog log;
    log.user = user;
    log.retrieved.resize(retrieved.size());
    std::vector<ItemId> to_ranking(cfg.n_to_ranking);
    for (std::size_t p = 0; p < order.size(); ++p) {
        const ItemId item = retrieved[order[p]];
        log.retrieved[p] = {item, static_cast<int>(p) + 1};
        if (static_cast<int>(p) < cfg.n_to_ranking) to_ranking[p] = item;
    }

    // Ranking oracle, exposure, feedback.
    const ExposureDraw main = run_downstream(world, cfg, ws.affinity, to_ranking, rng, ws);
    log.ranked.resize(main.ranked_items.size());
    for (std::size_t r = 0; r < main.ranked_items.size(); ++r) {
        RankedItem it;
        it.item = main.ranked_items[r];
        it.r = static_cast<int>(r) + 1;
        it.exposed = static_cast<int>(r) < cfg.n_exposed;
        if (it.exposed) {
            const bool clk = std::find(main.clicked.begin(), main.clicked.end(), it.item) !=
                             main.clicked.end();
            const bool buy = std::find(main.purchased.begin(), main.purchased.end(), it.item) !=
                             main.purchased.end();
            it.labels.click = clk ? Label::positive : Label::negative;
            it.labels.purchase = buy ? Label::positive : Label::negative;
        }
        log.ranked[r] = it;
    }
    log.exposed_count = std::min(cfg.n_exposed, log.n_rank());

    // Independent second exposure pass over the same retrieval; the feedback
    // it produces plays the role of clicks observed in other scenarios.
    if (cfg.alt_exposure_pass) {
        ws.score.resize(retrieved.size());
        for (std::size_t i = 0; i < log.retrieved.size(); ++i)
            ws.score[i] = ws.affinity[log.retrieved[i].item] + cfg.prerank_sigma * rng.normal();
        std::vector<std::int32_t> alt_order(log.retrieved.size());
        std::iota(alt_order.begin(), alt_order.end(), 0);
        std::sort(alt_order.begin(), alt_order.end(), [&](std::int32_t a, std::int32_t b) {
            if (ws.score[a] != ws.score[b]) return ws.score[a] > ws.score[b];
            return log.retrieved[a].item < log.retrieved[b].item;
        });
        std::vector<ItemId> alt_candidates(cfg.n_to_ranking);
        for (int p = 0; p < cfg.n_to_ranking; ++p)
            alt_candidates[p] = log.retrieved[alt_order[p]].item;

        const ExposureDraw alt = run_downstream(world, cfg, ws.affinity, alt_candidates, rng, ws);
        log.alt_clicked = alt.clicked;
        log.alt_purchased = alt.purchased;
        std::sort(log.alt_clicked.begin(), log.alt_clicked.end());
        std::sort(log.alt_purchased.begin(), log.alt_purchased.end());
    }
    return log;
}

}  // namespace detail

/// Simulates one request end to end. The rng state is consumed in a fixed
/// order, so a fresh Rng with a derived seed yields a reproducible log.
inline RequestLog simulate_request(const World& world, const SimConfig& cfg, UserId user,
                                   Rng& rng) {
    detail::SimWorkspace ws;
    return detail::simulate_request_ws(world, cfg, user, rng, ws);
}

/// Generates a dataset of n_requests logs. Each request draws its user and
/// noise from a stream derived from (seed, request index), so the result is
/// independent of the number of worker threads.
inline Dataset generate_dataset(const World& world, const SimConfig& cfg, int n_requests,
                                std::uint64_t seed, int n_threads = 0) {
    if (n_requests < 1) throw std::invalid_argument("generate_dataset: n_requests must be >= 1");
    cfg.validate();

    Dataset ds;
    ds.catalog_size = world.n_items;
    ds.requests.resize(static_cast<std::size_t>(n_requests));

    if (n_threads <= 0) {
        const unsigned hw = std::thread::hardware_concurrency();
        n_threads = hw > 0 ? static_cast<int>(hw) : 1;
    }
    n_threads = std::min(n_threads, n_requests);

    auto worker = [&](int begin, int end) {
        detail::SimWorkspace ws;
        for (int i = begin; i < end; ++i) {
            Rng rng(derive_seed(seed, Stream::request, static_cast<std::uint64_t>(i)));
            const UserId user =
                static_cast<UserId>(rng.uniform_below(static_cast<std::uint64_t>(world.n_users)));
            ds.requests[static_cast<std::size_t>(i)] =
                detail::simulate_request_ws(world, cfg, user, rng, ws);
        }
    };

    if (n_threads == 1) {
        worker(0, n_requests);
    } else {
        std::vector<std::thread> threads;
        const int chunk = (n_requests + n_threads - 1) / n_threads;
        for (int t = 0; t < n_threads; ++t) {
            const int begin = t * chunk;
            const int end = std::min(n_requests, begin + chunk);
            if (begin >= end) break;
            threads.emplace_back(worker, begin, end);
        }
        for (auto& th : threads) th.join();
    }

    ds.recompute_frequencies();
    return ds;
}

}  // namespace prerank
