#pragma once

// Training objectives: calibration BCE, list-wise global/local consistency
// (ListMLE), ListNet (baseline head), InfoNCE and Margin InfoNCE, plus the
// combined objective. Every loss returns its value together with analytic
// gradients; finite-difference verification lives in gradcheck.hpp and the
// test suite.

#include "prerank/config.hpp"
#include "prerank/model.hpp"
#include "prerank/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace prerank {

/// Value plus gradients w.r.t. the score inputs (`d_scores`, in input order)
/// and, for the margin path, w.r.t. the norm products (`d_aux`).
struct LossOutput {
    double value = 0.0;
    std::vector<double> d_scores;
    std::vector<double> d_aux;
};

namespace detail {
inline double log_add_exp(double a, double b) {
    const double m = std::max(a, b);
    return m + std::log1p(std::exp(std::min(a, b) - m));
}
inline double sigmoid(double y) {
    if (y >= 0) return 1.0 / (1.0 + std::exp(-y));
    const double e = std::exp(y);
    return e / (1.0 + e);
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Binary cross-entropy (calibration)

/// BCE in its score form; `scores` are post-sigmoid probabilities. Values
/// outside [0, 1] are an error; exact 0/1 are clamped to (1e-7, 1 - 1e-7).
inline double bce_on_probs(std::span<const double> scores, std::span<const double> labels) {
    if (scores.size() != labels.size())
        throw std::invalid_argument("bce_on_probs: scores and labels must align");
    double loss = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const double raw = scores[i];
        if (raw < 0.0 || raw > 1.0)
            throw std::invalid_argument("bce_on_probs: score " + std::to_string(raw) +
                                        " outside [0, 1]");
        const double s = std::clamp(raw, 1e-7, 1.0 - 1e-7);
        loss -= labels[i] * std::log(s) + (1.0 - labels[i]) * std::log(1.0 - s);
    }
    return loss;
}

/// Fused logit form: identical value to bce_on_probs on sigmoid(y), with the
/// gradient dL/dy = sigmoid(y) - l.
inline LossOutput bce_on_logits(std::span<const double> logits, std::span<const double> labels) {
    if (logits.size() != labels.size())
        throw std::invalid_argument("bce_on_logits: logits and labels must align");
    LossOutput out;
    out.d_scores.resize(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double y = logits[i];
        out.value += std::max(y, 0.0) - y * labels[i] + std::log1p(std::exp(-std::abs(y)));
        out.d_scores[i] = detail::sigmoid(y) - labels[i];
    }
    return out;
}

// ---------------------------------------------------------------------------
// ListMLE

/// ListMLE over scores already sorted in target order:
/// L = -sum_j log( exp(y_j) / sum_{k>=j} exp(y_k) ), log-sum-exp stabilized.
/// Empty input is zero loss, zero gradients.
inline LossOutput listmle(std::span<const double> scores) {
    LossOutput out;
    const std::size_t n = scores.size();
    out.d_scores.assign(n, 0.0);
    if (n == 0) return out;

    std::vector<double> suffix_lse(n);
    suffix_lse[n - 1] = scores[n - 1];
    for (std::size_t j = n - 1; j-- > 0;)
        suffix_lse[j] = detail::log_add_exp(scores[j], suffix_lse[j + 1]);

    for (std::size_t j = 0; j < n; ++j) out.value += suffix_lse[j] - scores[j];
    // dL/dy_i = sum_{j<=i} softmax weight of i within suffix j, minus 1.
    for (std::size_t i = 0; i < n; ++i) {
        double acc = -1.0;
        for (std::size_t j = 0; j <= i; ++j) acc += std::exp(scores[i] - suffix_lse[j]);
        out.d_scores[i] = acc;
    }
    return out;
}

/// ListNet top-one cross-entropy against a relevance-defined target
/// distribution: L = -sum_i softmax(rel)_i * log softmax(y)_i.
inline LossOutput listnet(std::span<const double> scores, std::span<const double> relevance) {
    if (scores.size() != relevance.size())
        throw std::invalid_argument("listnet: scores and relevance must align");
    LossOutput out;
    const std::size_t n = scores.size();
    out.d_scores.assign(n, 0.0);
    if (n == 0) return out;

    auto softmax = [](std::span<const double> x, std::vector<double>& p) {
        const double m = *std::max_element(x.begin(), x.end());
        double sum = 0.0;
        p.resize(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) sum += (p[i] = std::exp(x[i] - m));
        for (double& v : p) v /= sum;
    };
    std::vector<double> target, predicted;
    softmax(relevance, target);
    softmax(scores, predicted);
    for (std::size_t i = 0; i < n; ++i) {
        out.value -= target[i] * std::log(std::max(predicted[i], 1e-300));
        out.d_scores[i] = predicted[i] - target[i];
    }
    return out;
}

// ---------------------------------------------------------------------------
// InfoNCE and Margin InfoNCE

/// Plain InfoNCE: each positive is contrasted against all negatives,
/// -log softmax at the positive's column, summed over positives.
/// d_scores is laid out [positives..., negatives...].
inline LossOutput infonce(std::span<const double> pos, std::span<const double> neg, double tau) {
    if (tau <= 0) throw std::invalid_argument("infonce: tau must be > 0");
    LossOutput out;
    out.d_scores.assign(pos.size() + neg.size(), 0.0);
    for (std::size_t j = 0; j < pos.size(); ++j) {
        const double z0 = pos[j] / tau;
        double m = z0;
        for (double x : neg) m = std::max(m, x / tau);
        double denom = std::exp(z0 - m);
        for (double x : neg) denom += std::exp(x / tau - m);
        out.value += std::log(denom) + m - z0;
        const double p0 = std::exp(z0 - m) / denom;
        out.d_scores[j] += (p0 - 1.0) / tau;
        for (std::size_t k = 0; k < neg.size(); ++k)
            out.d_scores[pos.size() + k] += std::exp(neg[k] / tau - m) / denom / tau;
    }
    return out;
}

/// One request's Margin InfoNCE (positives and hard negatives carry the
/// additive cosine margin, easy negatives do not).
///
/// With cos = y / (v + guard), the margined logit (cos - m) * (v + guard)
/// collapses to y - m * (v + guard); the blend with coefficient beta gives
/// l = y - m * (v + guard) / (1 + beta). Masked softmax slots filled with
/// neg_min would contribute exp(neg_min / tau) = 0 exactly, so absent
/// entries are simply excluded.
///
/// d_scores covers [pos_y..., hard_y..., easy_y...];
/// d_aux covers [pos_v..., hard_v...].
inline LossOutput margin_infonce_request(std::span<const double> pos_y,
                                         std::span<const double> pos_v,
                                         std::span<const double> hard_y,
                                         std::span<const double> hard_v,
                                         std::span<const double> easy_y, double tau, double margin,
                                         double beta) {
    if (tau <= 0) throw std::invalid_argument("margin_infonce: tau must be > 0");
    if (margin < 0) throw std::invalid_argument("margin_infonce: margin must be >= 0");
    if (beta < 0) throw std::invalid_argument("margin_infonce: beta must be >= 0");
    if (pos_y.size() != pos_v.size() || hard_y.size() != hard_v.size())
        throw std::invalid_argument("margin_infonce: y and v spans must align");

    const std::size_t P = pos_y.size(), H = hard_y.size(), E = easy_y.size();
    LossOutput out;
    out.d_scores.assign(P + H + E, 0.0);
    out.d_aux.assign(P + H, 0.0);

    const double m_eff = margin / (1.0 + beta);
    std::vector<double> hard_logit(H);
    for (std::size_t k = 0; k < H; ++k) hard_logit[k] = hard_y[k] - m_eff * (hard_v[k] + kNormGuard);

    std::vector<double> z(1 + H + E);
    for (std::size_t j = 0; j < P; ++j) {
        const double pos_logit = pos_y[j] - m_eff * (pos_v[j] + kNormGuard);
        z[0] = pos_logit / tau;
        for (std::size_t k = 0; k < H; ++k) z[1 + k] = hard_logit[k] / tau;
        for (std::size_t k = 0; k < E; ++k) z[1 + H + k] = easy_y[k] / tau;

        const double zmax = *std::max_element(z.begin(), z.end());
        double denom = 0.0;
        for (double x : z) denom += std::exp(x - zmax);
        out.value += std::log(denom) + zmax - z[0];

        const double p0 = std::exp(z[0] - zmax) / denom;
        out.d_scores[j] += (p0 - 1.0) / tau;
        out.d_aux[j] += (p0 - 1.0) / tau * -m_eff;
        for (std::size_t k = 0; k < H; ++k) {
            const double pk = std::exp(z[1 + k] - zmax) / denom;
            out.d_scores[P + k] += pk / tau;
            out.d_aux[P + k] += pk / tau * -m_eff;
        }
        for (std::size_t k = 0; k < E; ++k)
            out.d_scores[P + H + k] += std::exp(z[1 + H + k] - zmax) / denom / tau;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Gradient profiles (the BCE-vs-Margin-InfoNCE descent comparison)

/// The two negative-sample gradient profiles:
///   g(y) = 1 / (1 + e^-y)            (BCE)
///   f(y) = (1/tau) / (1 + c e^((q-y)/tau))   (Margin InfoNCE approximation)
/// sampled over [y_lo, y_hi], plus the crossing point found by bisection.
struct GradientProfiles {
    std::vector<double> y, f, g;
    std::optional<double> crossing;
};

inline double profile_g(double y) { return detail::sigmoid(y); }
inline double profile_f(double y, double q, double c, double tau) {
    return (1.0 / tau) * 1.0 / (1.0 + c * std::exp((q - y) / tau));
}

inline GradientProfiles gradient_profiles(double y_lo, double y_hi, double step, double q,
                                          double c, double tau) {
    if (tau <= 0) throw std::invalid_argument("gradient_profiles: tau must be > 0");
    if (c <= 0) throw std::invalid_argument("gradient_profiles: c must be > 0");
    if (step <= 0 || y_hi < y_lo)
        throw std::invalid_argument("gradient_profiles: need step > 0 and y_hi >= y_lo");

    GradientProfiles out;
    const int n = static_cast<int>(std::floor((y_hi - y_lo) / step)) + 1;
    out.y.reserve(n);
    for (int i = 0; i < n; ++i) {
        const double y = y_lo + i * step;
        out.y.push_back(y);
        out.f.push_back(profile_f(y, q, c, tau));
        out.g.push_back(profile_g(y));
    }

    auto h = [&](double y) { return profile_f(y, q, c, tau) - profile_g(y); };
    for (int i = n - 1; i > 0; --i) {
        double lo = out.y[i - 1], hi = out.y[i];
        if ((h(lo) <= 0) == (h(hi) <= 0)) continue;
        while (hi - lo > 1e-10) {
            const double mid = 0.5 * (lo + hi);
            if ((h(lo) <= 0) == (h(mid) <= 0))
                lo = mid;
            else
                hi = mid;
        }
        out.crossing = 0.5 * (lo + hi);
        break;  // the latest crossing in range
    }
    return out;
}

// ---------------------------------------------------------------------------
// Batch-level objective assembly

/// Which loss terms a training variant evaluates. Disabled terms are never
/// computed, so they provably contribute zero gradient.
struct LossPlan {
    enum class Local { none, listmle, listnet };
    enum class Neg {
        none,
        infonce_easy,  // dot-product InfoNCE, negatives N4+N5
        infonce_hard,  // dot-product InfoNCE, negatives N2+N3
        dual,          // average of weighted-score InfoNCE (N2+N3) and margin dot path (N2..N5)
    };

    bool calibration = true;
    Local local = Local::none;
    bool global = false;
    Neg neg = Neg::none;
    bool margin_enabled = true;  // false: the dual path degrades to plain InfoNCE
};

/// Call counts per loss term; lets tests assert that a disabled term was
/// never evaluated rather than merely zero-weighted.
struct LossAudit {
    std::int64_t calibration = 0;
    std::int64_t local_listmle = 0;
    std::int64_t local_listnet = 0;
    std::int64_t global = 0;
    std::int64_t neg_weighted_infonce = 0;
    std::int64_t neg_dot_infonce = 0;
    std::int64_t neg_margin = 0;

    void merge(const LossAudit& o) {
        calibration += o.calibration;
        local_listmle += o.local_listmle;
        local_listnet += o.local_listnet;
        global += o.global;
        neg_weighted_infonce += o.neg_weighted_infonce;
        neg_dot_infonce += o.neg_dot_infonce;
        neg_margin += o.neg_margin;
    }
};

/// Per-term values, each already averaged over the batch's requests.
struct LossBreakdown {
    double global = 0.0;
    double calibration[kNumTasks] = {0.0, 0.0};
    double local[kNumTasks] = {0.0, 0.0};
    double neg[kNumTasks] = {0.0, 0.0};
};

/// The combined objective: total = lambda_c * L^c +
/// sum_t lambda_t * (L^t_cali + alpha * L^t_cons + beta_w * L^t_neg).
inline double combined_loss(const LossBreakdown& b, const LossConfig& cfg) {
    const double lambda_t[kNumTasks] = {cfg.lambda_click, cfg.lambda_purchase};
    double total = cfg.lambda_global * b.global;
    for (int t = 0; t < kNumTasks; ++t)
        total += lambda_t[t] *
                 (b.calibration[t] + cfg.alpha_local * b.local[t] + cfg.beta_neg * b.neg[t]);
    return total;
}

struct BatchLossResult {
    double total = 0.0;
    LossBreakdown values;
    BatchGrads grads;
    LossAudit audit;

    explicit BatchLossResult(const ListwiseBatch& batch) : grads(batch) {}
};

namespace detail {

inline double task_score(const ScoredInstance& s, Task t) {
    return t == Task::click ? s.score_click : s.score_purchase;
}

inline void add_task_score_grad(ScoreGrads& g, Task t, double v) {
    if (t == Task::click)
        g.d_score_click += v;
    else
        g.d_score_purchase += v;
}

}  // namespace detail

/// Evaluates the planned loss terms over one scored batch. Values in the
/// breakdown are per-request means; gradients land in `result.grads` already
/// scaled by the Eq-6 weights, so the analytic gradient of `total` is exact.
inline BatchLossResult compute_losses(const ListwiseBatch& batch, const ScoredBatch& scored,
                                      const LossPlan& plan, const LossConfig& cfg,
                                      std::int64_t step) {
    cfg.validate();
    BatchLossResult result(batch);
    const std::size_t n_requests = batch.requests.size();
    if (n_requests == 0) return result;
    const double inv_u = 1.0 / static_cast<double>(n_requests);
    const double lambda_t[kNumTasks] = {cfg.lambda_click, cfg.lambda_purchase};
    const double beta = plan.margin_enabled ? cfg.beta_at_step(step) : 0.0;
    const double margin = plan.margin_enabled ? cfg.margin : 0.0;

    std::vector<std::size_t> idx;
    std::vector<double> a, b, c, d, e;

    for (std::size_t g = 0; g < n_requests; ++g) {
        const RequestSamples& req = batch.requests[g];
        const auto& sc = scored.requests[g];
        auto& gr = result.grads.requests[g];

        // --- global consistency: ListMLE over R^c (N1 + N2 by r_c)
        if (plan.global) {
            ++result.audit.global;
            idx.clear();
            for (std::size_t i = 0; i < req.instances.size(); ++i) {
                const SampleRole role = req.instances[i].role;
                if (role == SampleRole::N1_impression || role == SampleRole::N2_ranking_seq)
                    idx.push_back(i);
            }
            std::sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) {
                return *req.instances[x].r_c < *req.instances[y].r_c;
            });
            a.clear();
            for (std::size_t i : idx) a.push_back(sc[i].score_global);
            const LossOutput lo = listmle(a);
            result.values.global += inv_u * lo.value;
            const double w = cfg.lambda_global * inv_u;
            for (std::size_t k = 0; k < idx.size(); ++k)
                gr[idx[k]].d_score_global += w * lo.d_scores[k];
        }

        for (int ti = 0; ti < kNumTasks; ++ti) {
            const Task task = static_cast<Task>(ti);

            // --- calibration BCE on impressions
            if (plan.calibration) {
                ++result.audit.calibration;
                idx.clear();
                a.clear();
                b.clear();
                for (std::size_t i = 0; i < req.instances.size(); ++i) {
                    const SampledInstance& inst = req.instances[i];
                    if (inst.role != SampleRole::N1_impression) continue;
                    idx.push_back(i);
                    a.push_back(detail::task_score(sc[i], task));
                    b.push_back(static_cast<double>(label_value(task_label(inst.labels, task))));
                }
                const LossOutput lo = bce_on_logits(a, b);
                result.values.calibration[ti] += inv_u * lo.value;
                const double w = lambda_t[ti] * inv_u;
                for (std::size_t k = 0; k < idx.size(); ++k)
                    detail::add_task_score_grad(gr[idx[k]], task, w * lo.d_scores[k]);
            }

            // --- local consistency on the exposure sequence R^t
            if (plan.local != LossPlan::Local::none) {
                idx.clear();
                for (std::size_t i = 0; i < req.instances.size(); ++i)
                    if (req.instances[i].role == SampleRole::N1_impression) idx.push_back(i);
                auto local_order = [&](std::size_t i) {
                    const SampledInstance& inst = req.instances[i];
                    return task == Task::click ? *inst.r_click : *inst.r_purchase;
                };
                std::sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) {
                    return local_order(x) < local_order(y);
                });
                a.clear();
                for (std::size_t i : idx) a.push_back(detail::task_score(sc[i], task));

                LossOutput lo;
                if (plan.local == LossPlan::Local::listmle) {
                    ++result.audit.local_listmle;
                    lo = listmle(a);
                } else {
                    ++result.audit.local_listnet;
                    // Relevance decays with the arranged position.
                    b.clear();
                    for (std::size_t k = 0; k < idx.size(); ++k)
                        b.push_back(-static_cast<double>(k));
                    lo = listnet(a, b);
                }
                result.values.local[ti] += inv_u * lo.value;
                const double w = lambda_t[ti] * cfg.alpha_local * inv_u;
                for (std::size_t k = 0; k < idx.size(); ++k)
                    detail::add_task_score_grad(gr[idx[k]], task, w * lo.d_scores[k]);
            }

            // --- negative learning
            if (plan.neg == LossPlan::Neg::none) continue;

            std::vector<std::size_t> pos_idx, hard_idx, easy_idx;
            for (std::size_t i = 0; i < req.instances.size(); ++i) {
                const SampledInstance& inst = req.instances[i];
                switch (inst.role) {
                    case SampleRole::N1_impression:
                        if (task_label(inst.labels, task) == Label::positive) pos_idx.push_back(i);
                        break;
                    case SampleRole::N2_ranking_seq:
                    case SampleRole::N3_prerank_tail:
                        hard_idx.push_back(i);
                        break;
                    case SampleRole::N4_inbatch:
                    case SampleRole::N5_pool:
                        easy_idx.push_back(i);
                        break;
                }
            }

            if (plan.neg == LossPlan::Neg::infonce_easy || plan.neg == LossPlan::Neg::infonce_hard) {
                ++result.audit.neg_dot_infonce;
                const auto& neg_idx =
                    plan.neg == LossPlan::Neg::infonce_easy ? easy_idx : hard_idx;
                a.clear();
                b.clear();
                for (std::size_t i : pos_idx) a.push_back(sc[i].y);
                for (std::size_t i : neg_idx) b.push_back(sc[i].y);
                const LossOutput lo = infonce(a, b, cfg.tau);
                result.values.neg[ti] += inv_u * lo.value;
                const double w = lambda_t[ti] * cfg.beta_neg * inv_u;
                for (std::size_t k = 0; k < pos_idx.size(); ++k)
                    gr[pos_idx[k]].d_y += w * lo.d_scores[k];
                for (std::size_t k = 0; k < neg_idx.size(); ++k)
                    gr[neg_idx[k]].d_y += w * lo.d_scores[pos_idx.size() + k];
            } else {  // dual: weighted-score InfoNCE + margin dot path, averaged
                ++result.audit.neg_weighted_infonce;
                ++result.audit.neg_margin;
                const double w_half = lambda_t[ti] * cfg.beta_neg * inv_u * 0.5;

                // Cross-features exist only for N2/N3, so the weighted-score
                // InfoNCE contrasts against hard negatives alone.
                a.clear();
                b.clear();
                for (std::size_t i : pos_idx) a.push_back(detail::task_score(sc[i], task));
                for (std::size_t i : hard_idx) b.push_back(detail::task_score(sc[i], task));
                const LossOutput weighted = infonce(a, b, cfg.tau);
                for (std::size_t k = 0; k < pos_idx.size(); ++k)
                    detail::add_task_score_grad(gr[pos_idx[k]], task, w_half * weighted.d_scores[k]);
                for (std::size_t k = 0; k < hard_idx.size(); ++k)
                    detail::add_task_score_grad(gr[hard_idx[k]], task,
                                                w_half * weighted.d_scores[pos_idx.size() + k]);

                a.clear();
                b.clear();
                c.clear();
                d.clear();
                e.clear();
                for (std::size_t i : pos_idx) {
                    a.push_back(sc[i].y);
                    b.push_back(sc[i].v);
                }
                for (std::size_t i : hard_idx) {
                    c.push_back(sc[i].y);
                    d.push_back(sc[i].v);
                }
                for (std::size_t i : easy_idx) e.push_back(sc[i].y);
                const LossOutput margin_out =
                    margin_infonce_request(a, b, c, d, e, cfg.tau, margin, beta);

                const std::size_t P = pos_idx.size(), H = hard_idx.size();
                for (std::size_t k = 0; k < P; ++k) {
                    gr[pos_idx[k]].d_y += w_half * margin_out.d_scores[k];
                    gr[pos_idx[k]].d_v += w_half * margin_out.d_aux[k];
                }
                for (std::size_t k = 0; k < H; ++k) {
                    gr[hard_idx[k]].d_y += w_half * margin_out.d_scores[P + k];
                    gr[hard_idx[k]].d_v += w_half * margin_out.d_aux[P + k];
                }
                for (std::size_t k = 0; k < easy_idx.size(); ++k)
                    gr[easy_idx[k]].d_y += w_half * margin_out.d_scores[P + H + k];

                result.values.neg[ti] += inv_u * 0.5 * (weighted.value + margin_out.value);
            }
        }
    }

    result.total = combined_loss(result.values, cfg);
    return result;
}

}  // namespace prerank
