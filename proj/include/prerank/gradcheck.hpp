#pragma once

// Central finite-difference verification of every analytic gradient. The
// differencing path only ever calls the loss *values*, so it stays an
// independent oracle for the gradients it checks.

#include "prerank/losses.hpp"
#include "prerank/rng.hpp"
#include "prerank/sampler.hpp"
#include "prerank/model.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace prerank {

struct GradCheckResult {
    std::string name;
    int cases = 0;
    int checked_coords = 0;
    double max_rel_err = 0.0;
    bool passed = true;
};

namespace gradcheck_detail {

inline constexpr double kEps = 1e-6;
inline constexpr double kRelTol = 1e-5;
// Central differences on O(1) losses carry ~1e-10 of cancellation noise, so
// near-zero gradients are compared against a small absolute floor.
inline constexpr double kAbsFloor = 1e-8;

inline bool close(double analytic, double fd) {
    const double diff = std::abs(analytic - fd);
    const double scale = std::max(std::abs(analytic), std::abs(fd));
    return diff <= kRelTol * scale + kAbsFloor;
}

inline double rel_err(double analytic, double fd) {
    const double diff = std::abs(analytic - fd);
    const double scale = std::max({std::abs(analytic), std::abs(fd), kAbsFloor});
    return diff / scale;
}

/// Checks one loss: `value(x)` must equal the scalar whose gradient
/// `analytic(x)` claims to be, coordinate by coordinate.
inline void check_function(GradCheckResult& result,
                           const std::function<double(const std::vector<double>&)>& value,
                           const std::vector<double>& x, const std::vector<double>& analytic) {
    std::vector<double> probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + kEps;
        const double up = value(probe);
        probe[i] = x[i] - kEps;
        const double down = value(probe);
        probe[i] = x[i];
        const double fd = (up - down) / (2.0 * kEps);
        ++result.checked_coords;
        result.max_rel_err = std::max(result.max_rel_err, rel_err(analytic[i], fd));
        if (!close(analytic[i], fd)) result.passed = false;
    }
    ++result.cases;
}

}  // namespace gradcheck_detail

inline GradCheckResult gradcheck_bce(int cases, std::uint64_t seed) {
    GradCheckResult result{"bce_calibration"};
    Rng rng(derive_seed(seed, Stream::test, 1));
    for (int c = 0; c < cases; ++c) {
        const int n = 1 + static_cast<int>(rng.uniform_below(20));
        std::vector<double> y(n), l(n);
        for (int i = 0; i < n; ++i) {
            y[i] = 6.0 * rng.uniform01() - 3.0;
            l[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
        }
        const LossOutput out = bce_on_logits(y, l);
        gradcheck_detail::check_function(
            result, [&](const std::vector<double>& x) { return bce_on_logits(x, l).value; }, y,
            out.d_scores);
    }
    return result;
}

inline GradCheckResult gradcheck_listmle(int cases, std::uint64_t seed) {
    GradCheckResult result{"listmle_consistency"};
    Rng rng(derive_seed(seed, Stream::test, 2));
    for (int c = 0; c < cases; ++c) {
        const int n = 1 + static_cast<int>(rng.uniform_below(12));
        std::vector<double> y(n);
        for (double& v : y) v = 6.0 * rng.uniform01() - 3.0;
        const LossOutput out = listmle(y);
        gradcheck_detail::check_function(
            result, [](const std::vector<double>& x) { return listmle(x).value; }, y,
            out.d_scores);
    }
    return result;
}

inline GradCheckResult gradcheck_listnet(int cases, std::uint64_t seed) {
    GradCheckResult result{"listnet_baseline"};
    Rng rng(derive_seed(seed, Stream::test, 3));
    for (int c = 0; c < cases; ++c) {
        const int n = 1 + static_cast<int>(rng.uniform_below(10));
        std::vector<double> y(n), rel(n);
        for (int i = 0; i < n; ++i) {
            y[i] = 6.0 * rng.uniform01() - 3.0;
            rel[i] = -static_cast<double>(i);
        }
        const LossOutput out = listnet(y, rel);
        gradcheck_detail::check_function(
            result, [&](const std::vector<double>& x) { return listnet(x, rel).value; }, y,
            out.d_scores);
    }
    return result;
}

inline GradCheckResult gradcheck_infonce(int cases, std::uint64_t seed) {
    GradCheckResult result{"infonce"};
    Rng rng(derive_seed(seed, Stream::test, 4));
    for (int c = 0; c < cases; ++c) {
        const int p = 1 + static_cast<int>(rng.uniform_below(4));
        const int n = static_cast<int>(rng.uniform_below(8));
        const double tau = 0.05 + rng.uniform01();
        std::vector<double> x(p + n);
        for (double& v : x) v = 4.0 * rng.uniform01() - 2.0;
        auto value = [&](const std::vector<double>& z) {
            const std::vector<double> pos(z.begin(), z.begin() + p);
            const std::vector<double> neg(z.begin() + p, z.end());
            return infonce(pos, neg, tau).value;
        };
        const std::vector<double> pos(x.begin(), x.begin() + p);
        const std::vector<double> neg(x.begin() + p, x.end());
        const LossOutput out = infonce(pos, neg, tau);
        gradcheck_detail::check_function(result, value, x, out.d_scores);
    }
    return result;
}

inline GradCheckResult gradcheck_margin_infonce(int cases, std::uint64_t seed,
                                                bool corrupt = false) {
    GradCheckResult result{"margin_infonce"};
    Rng rng(derive_seed(seed, Stream::test, 5));
    for (int c = 0; c < cases; ++c) {
        const int p = 1 + static_cast<int>(rng.uniform_below(3));
        const int h = static_cast<int>(rng.uniform_below(6));
        const int e = static_cast<int>(rng.uniform_below(6));
        const double tau = 0.05 + rng.uniform01();
        const double margin = rng.uniform01();
        const double beta = rng.uniform01() * 3.0;

        // layout: pos_y, hard_y, easy_y, pos_v, hard_v
        std::vector<double> x(p + h + e + p + h);
        for (int i = 0; i < p + h + e; ++i) x[i] = 4.0 * rng.uniform01() - 2.0;
        for (int i = p + h + e; i < static_cast<int>(x.size()); ++i)
            x[i] = 0.5 + 1.5 * rng.uniform01();

        auto split = [&](const std::vector<double>& z) {
            struct Parts {
                std::vector<double> py, hy, ey, pv, hv;
            } parts;
            parts.py.assign(z.begin(), z.begin() + p);
            parts.hy.assign(z.begin() + p, z.begin() + p + h);
            parts.ey.assign(z.begin() + p + h, z.begin() + p + h + e);
            parts.pv.assign(z.begin() + p + h + e, z.begin() + p + h + e + p);
            parts.hv.assign(z.begin() + p + h + e + p, z.end());
            return parts;
        };
        auto value = [&](const std::vector<double>& z) {
            const auto parts = split(z);
            return margin_infonce_request(parts.py, parts.pv, parts.hy, parts.hv, parts.ey, tau,
                                          margin, beta)
                .value;
        };
        const auto parts = split(x);
        const LossOutput out = margin_infonce_request(parts.py, parts.pv, parts.hy, parts.hv,
                                                      parts.ey, tau, margin, beta);
        std::vector<double> analytic = out.d_scores;
        analytic.insert(analytic.end(), out.d_aux.begin(), out.d_aux.end());
        if (corrupt && !analytic.empty()) analytic[0] += 0.5;  // fault-injection test hook
        gradcheck_detail::check_function(result, value, x, analytic);
    }
    return result;
}

/// The combined objective: gradients w.r.t. every instance's (y, v) through
/// all enabled paths at once. Builds a small synthetic batch per case.
inline GradCheckResult gradcheck_combined(int cases, std::uint64_t seed) {
    GradCheckResult result{"combined_loss"};
    Rng rng(derive_seed(seed, Stream::test, 6));

    for (int c = 0; c < cases; ++c) {
        // Synthetic two-request batch with every role present.
        ListwiseBatch batch;
        for (int g = 0; g < 2; ++g) {
            RequestSamples req;
            req.user = g;
            req.n_rank = 10;
            req.n_retrieved = 20;
            const int n1 = 2 + static_cast<int>(rng.uniform_below(2));
            const int n2 = static_cast<int>(rng.uniform_below(3));
            const int n3 = static_cast<int>(rng.uniform_below(2));
            const int n4 = static_cast<int>(rng.uniform_below(2));
            const int n5 = static_cast<int>(rng.uniform_below(3));
            int item = 0, r = 1;
            std::int64_t rc = -100;
            for (int i = 0; i < n1; ++i) {
                SampledInstance inst;
                inst.user = req.user;
                inst.item = item++;
                inst.role = SampleRole::N1_impression;
                inst.exposed = true;
                inst.labels.click = rng.bernoulli(0.6) ? Label::positive : Label::negative;
                inst.labels.purchase = inst.labels.click == Label::positive && rng.bernoulli(0.4)
                                           ? Label::positive
                                           : Label::negative;
                inst.r = r++;
                inst.r_c = rc++;
                inst.r_click = *inst.r - (1 + label_value(inst.labels.click)) * req.n_rank;
                inst.r_purchase = *inst.r - (1 + label_value(inst.labels.purchase)) * req.n_rank;
                inst.prerank_order = item;
                inst.cross_score = 0.1 * rng.uniform01();
                req.instances.push_back(inst);
            }
            for (int i = 0; i < n2; ++i) {
                SampledInstance inst;
                inst.user = req.user;
                inst.item = item++;
                inst.role = SampleRole::N2_ranking_seq;
                inst.r = r++;
                inst.r_c = rc++;
                inst.prerank_order = item;
                inst.cross_score = 0.1 * rng.uniform01();
                req.instances.push_back(inst);
            }
            for (int i = 0; i < n3; ++i) {
                SampledInstance inst;
                inst.user = req.user;
                inst.item = item++;
                inst.role = SampleRole::N3_prerank_tail;
                inst.prerank_order = 11 + i;
                inst.cross_score = 0.1 * rng.uniform01();
                req.instances.push_back(inst);
            }
            for (int i = 0; i < n4; ++i) {
                SampledInstance inst;
                inst.user = req.user;
                inst.item = item++;
                inst.role = SampleRole::N4_inbatch;
                req.instances.push_back(inst);
            }
            for (int i = 0; i < n5; ++i) {
                SampledInstance inst;
                inst.user = req.user;
                inst.item = item++;
                inst.role = SampleRole::N5_pool;
                req.instances.push_back(inst);
            }
            batch.requests.push_back(std::move(req));
        }

        LossConfig cfg;
        cfg.margin = 0.5 + 0.4 * rng.uniform01();
        cfg.tau = 0.1 + 0.4 * rng.uniform01();
        cfg.beta0 = 2.0;
        cfg.beta_scale = 0.9;
        LossPlan plan;
        plan.calibration = true;
        plan.local = LossPlan::Local::listmle;
        plan.global = true;
        plan.neg = LossPlan::Neg::dual;
        const std::int64_t step = static_cast<std::int64_t>(rng.uniform_below(50));

        // Pack per-instance (y, v) as the free variables; heads fixed at a=1 b=0
        // plus cross scores as wired in ScoredInstance.
        std::size_t total = 0;
        for (const auto& req : batch.requests) total += req.instances.size();
        std::vector<double> x(2 * total);
        for (std::size_t i = 0; i < total; ++i) {
            x[i] = 4.0 * rng.uniform01() - 2.0;          // y
            x[total + i] = 0.5 + 1.5 * rng.uniform01();  // v
        }

        auto rescore = [&](const std::vector<double>& z) {
            ScoredBatch scored;
            scored.requests.resize(batch.requests.size());
            std::size_t flat = 0;
            for (std::size_t g = 0; g < batch.requests.size(); ++g) {
                auto& out = scored.requests[g];
                out.resize(batch.requests[g].instances.size());
                for (std::size_t i = 0; i < out.size(); ++i, ++flat) {
                    ScoredInstance s;
                    s.y = z[flat];
                    s.v = z[total + flat];
                    s.u_norm = std::sqrt(s.v);
                    s.i_norm = std::sqrt(s.v);
                    s.cos = s.y / (s.v + kNormGuard);
                    s.y_weighted = s.y + batch.requests[g].instances[i].cross_score;
                    s.score_click = s.y_weighted;
                    s.score_purchase = s.y_weighted;
                    s.score_global = s.y_weighted;
                    out[i] = s;
                }
            }
            return scored;
        };

        auto value = [&](const std::vector<double>& z) {
            return compute_losses(batch, rescore(z), plan, cfg, step).total;
        };

        const BatchLossResult res = compute_losses(batch, rescore(x), plan, cfg, step);
        std::vector<double> analytic(2 * total, 0.0);
        std::size_t flat = 0;
        for (std::size_t g = 0; g < batch.requests.size(); ++g) {
            for (std::size_t i = 0; i < batch.requests[g].instances.size(); ++i, ++flat) {
                const ScoreGrads& sg = res.grads.requests[g][i];
                // heads are identity here, so every score grad folds into y
                analytic[flat] = sg.d_y + sg.d_score_click + sg.d_score_purchase + sg.d_score_global;
                analytic[total + flat] = sg.d_v;
            }
        }
        gradcheck_detail::check_function(result, value, x, analytic);
    }
    return result;
}

/// The full suite; `corrupt` flips a fault-injection hook so failure paths
/// can be exercised end to end.
inline std::vector<GradCheckResult> run_gradcheck(int cases = 100, std::uint64_t seed = 20240901,
                                                  bool corrupt = false) {
    std::vector<GradCheckResult> results;
    results.push_back(gradcheck_bce(cases, seed));
    results.push_back(gradcheck_listmle(cases, seed));
    results.push_back(gradcheck_listnet(cases, seed));
    results.push_back(gradcheck_infonce(cases, seed));
    results.push_back(gradcheck_margin_infonce(cases, seed, corrupt));
    results.push_back(gradcheck_combined(std::max(10, cases / 4), seed));
    return results;
}

}  // namespace prerank
