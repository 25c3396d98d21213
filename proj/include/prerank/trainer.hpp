#pragma once

// Training orchestration: ablation variants, the epoch/batch loop, holdout
// evaluation, and the seeded ablation grid. Every run is reproducible from
// (variant, config, seed) alone.

#include "prerank/cascade_sim.hpp"
#include "prerank/config.hpp"
#include "prerank/domain.hpp"
#include "prerank/log_io.hpp"
#include "prerank/losses.hpp"
#include "prerank/metrics.hpp"
#include "prerank/model.hpp"
#include "prerank/sampler.hpp"

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace prerank {

inline constexpr const char* kCodeVersion = "prerank-1.0.0";

// ---------------------------------------------------------------------------
// Variants

enum class Variant {
    base,               // BCE on impressions only
    base_listnet,       // + ListNet over impression ranking orders
    base_listmle,       // + local-consistency ListMLE on impressions
    no_upstream,        // + global consistency on R^c; no negative losses
    no_hard_negatives,  // negatives: InfoNCE over N4+N5 only
    no_easy_negatives,  // negatives: InfoNCE over N2+N3 only
    no_margin,          // full sample set, plain InfoNCE in the dual path
    full,               // full sample set, Margin InfoNCE
};

inline const std::vector<Variant>& all_variants() {
    static const std::vector<Variant> v = {
        Variant::base,          Variant::base_listnet,      Variant::base_listmle,
        Variant::no_upstream,   Variant::no_hard_negatives, Variant::no_easy_negatives,
        Variant::no_margin,     Variant::full,
    };
    return v;
}

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::base: return "base";
        case Variant::base_listnet: return "base-listnet";
        case Variant::base_listmle: return "base-listmle";
        case Variant::no_upstream: return "no-upstream";
        case Variant::no_hard_negatives: return "no-hard-negatives";
        case Variant::no_easy_negatives: return "no-easy-negatives";
        case Variant::no_margin: return "no-margin";
        case Variant::full: return "full";
    }
    return "?";
}

inline Variant variant_from_name(const std::string& name) {
    for (Variant v : all_variants())
        if (name == variant_name(v)) return v;
    throw std::invalid_argument("unknown variant '" + name + "'");
}

/// Enabled sample roles and loss terms of one variant.
struct VariantSpec {
    bool use_n2 = false;
    bool use_n3 = false;
    bool use_n4 = false;
    bool use_n5 = false;
    LossPlan plan;
};

inline VariantSpec variant_spec(Variant v) {
    VariantSpec s;
    switch (v) {
        case Variant::base:
            break;
        case Variant::base_listnet:
            s.plan.local = LossPlan::Local::listnet;
            break;
        case Variant::base_listmle:
            s.plan.local = LossPlan::Local::listmle;
            break;
        case Variant::no_upstream:
            s.use_n2 = true;
            s.plan.local = LossPlan::Local::listmle;
            s.plan.global = true;
            break;
        case Variant::no_hard_negatives:
            s.use_n2 = s.use_n4 = s.use_n5 = true;
            s.plan.local = LossPlan::Local::listmle;
            s.plan.global = true;
            s.plan.neg = LossPlan::Neg::infonce_easy;
            break;
        case Variant::no_easy_negatives:
            s.use_n2 = s.use_n3 = true;
            s.plan.local = LossPlan::Local::listmle;
            s.plan.global = true;
            s.plan.neg = LossPlan::Neg::infonce_hard;
            break;
        case Variant::no_margin:
            s.use_n2 = s.use_n3 = s.use_n4 = s.use_n5 = true;
            s.plan.local = LossPlan::Local::listmle;
            s.plan.global = true;
            s.plan.neg = LossPlan::Neg::dual;
            s.plan.margin_enabled = false;
            break;
        case Variant::full:
            s.use_n2 = s.use_n3 = s.use_n4 = s.use_n5 = true;
            s.plan.local = LossPlan::Local::listmle;
            s.plan.global = true;
            s.plan.neg = LossPlan::Neg::dual;
            s.plan.margin_enabled = true;
            break;
    }
    return s;
}

// ---------------------------------------------------------------------------
// Run manifest

struct RunManifest {
    std::string variant;
    std::uint64_t seed = 0;
    nlohmann::ordered_json config;
    std::string train_fingerprint;
    std::string eval_fingerprint;
    std::string code_version = kCodeVersion;
    double wall_time_ms = 0.0;
    MetricsReport metrics;  // filled once the run has been evaluated
};

inline nlohmann::ordered_json manifest_to_json(const RunManifest& m) {
    nlohmann::ordered_json j;
    j["variant"] = m.variant;
    j["seed"] = m.seed;
    j["code_version"] = m.code_version;
    j["train_fingerprint"] = m.train_fingerprint;
    j["eval_fingerprint"] = m.eval_fingerprint;
    j["wall_time_ms"] = m.wall_time_ms;
    j["config"] = m.config;
    j["metrics"] = metrics_to_json(m.metrics);
    return j;
}

// ---------------------------------------------------------------------------
// Training

struct TrainResult {
    TowerModel model;
    RunManifest manifest;
    std::vector<double> epoch_losses;  // mean combined loss per epoch
    LossAudit audit;
};

/// Trains one variant on a dataset. Epochs of: shuffle -> list-wise batch
/// assembly -> forward -> the variant's enabled losses -> SGD step; the
/// margin blend coefficient advances once per optimizer step.
inline TrainResult train(Variant variant, const Dataset& dataset, const AppConfig& cfg,
                         std::uint64_t seed) {
    cfg.validate();
    if (dataset.requests.empty()) throw std::invalid_argument("train: dataset is empty");
    const auto t0 = std::chrono::steady_clock::now();

    const VariantSpec spec = variant_spec(variant);

    std::vector<int> pool;
    for (std::size_t i = 0; i < dataset.requests.size(); ++i) {
        if (cfg.train.clicked_requests_only) {
            bool clicked = false;
            for (const RankedItem& it : dataset.requests[i].ranked)
                if (it.exposed && it.labels.click == Label::positive) {
                    clicked = true;
                    break;
                }
            if (!clicked) continue;
        }
        pool.push_back(static_cast<int>(i));
    }
    if (pool.empty())
        throw std::runtime_error("train: no trainable requests (clicked_requests_only filtered "
                                 "everything out)");

    for (const RequestLog& log : dataset.requests)
        if (log.user >= cfg.sim.n_users)
            throw std::invalid_argument("train: user " + std::to_string(log.user) +
                                        " outside the configured population " +
                                        std::to_string(cfg.sim.n_users));

    TrainResult out{
        TowerModel(cfg.sim.n_users, dataset.catalog_size, cfg.model.dim,
                   derive_seed(seed, Stream::model_init)),
        RunManifest{}, {}, {}};
    out.manifest.variant = variant_name(variant);
    out.manifest.seed = seed;
    out.manifest.config = config_to_json(cfg);
    out.manifest.train_fingerprint = dataset_fingerprint(dataset);

    std::int64_t step = 0;
    for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
        const double lr = cfg.train.lr * std::pow(cfg.train.lr_decay, epoch);

        std::vector<int> order = pool;
        Rng shuffle_rng(derive_seed(seed, Stream::shuffle, static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.uniform_below(i)]);

        Rng sampler_rng(
            derive_seed(seed, Stream::batch_sampling, static_cast<std::uint64_t>(epoch)));

        double loss_sum = 0.0;
        std::int64_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.train.batch_size) {
            const std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.train.batch_size));
            std::vector<const RequestLog*> logs;
            logs.reserve(end - start);
            for (std::size_t i = start; i < end; ++i)
                logs.push_back(&dataset.requests[static_cast<std::size_t>(order[i])]);

            ListwiseBatch batch = build_listwise_batch(
                logs, cfg.sampler, dataset.catalog_size, cfg.model.cross_score_weight,
                sampler_rng, spec.use_n2, spec.use_n3, spec.use_n5);
            if (spec.use_n4) sample_inbatch(batch, cfg.sampler.inbatch_rate, sampler_rng);

            const ScoredBatch scored = forward(out.model, batch);
            BatchLossResult losses = compute_losses(batch, scored, spec.plan, cfg.loss, step);
            if (!std::isfinite(losses.total))
                throw std::runtime_error("train: non-finite loss in epoch " +
                                         std::to_string(epoch) + ", batch " +
                                         std::to_string(batches));

            GradientBuffer grads;
            backward(out.model, batch, scored, losses.grads, grads);
            apply_gradients(out.model, grads, lr);

            out.audit.merge(losses.audit);
            loss_sum += losses.total;
            ++batches;
            ++step;
        }
        out.epoch_losses.push_back(batches > 0 ? loss_sum / static_cast<double>(batches) : 0.0);
    }

    out.manifest.wall_time_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation

/// Scores each request's retrieved candidates with the model (pure
/// dot-product, the deployable part of the tower) and aggregates:
///   ISH/ISPH  — hits on this request's clicked/purchased impressions
///   ASH/ASPH  — hits including the alternative exposure pass's feedback
///   MAP/NDCG  — consistency against the ranking stage's top-K
/// plus the frequency-octile view of ASH at `octile_hit_k` (defaults to the
/// dataset's largest N^r).
inline MetricsReport evaluate(const TowerModel& model, const Dataset& dataset,
                              const EvalConfig& eval_cfg, int octile_hit_k = 0) {
    eval_cfg.validate();
    if (octile_hit_k <= 0)
        for (const RequestLog& log : dataset.requests)
            octile_hit_k = std::max(octile_hit_k, log.n_rank());
    if (octile_hit_k <= 0)
        throw std::invalid_argument("evaluate: dataset has no ranked items");

    std::vector<int> hit_ks = eval_cfg.hit_ks;
    if (std::find(hit_ks.begin(), hit_ks.end(), octile_hit_k) == hit_ks.end())
        hit_ks.push_back(octile_hit_k);
    std::sort(hit_ks.begin(), hit_ks.end());

    MetricsReport report;
    report.total_requests = static_cast<std::int64_t>(dataset.requests.size());
    report.octile_hit_k = octile_hit_k;

    std::map<std::string, std::map<int, double>> sums;
    std::map<std::string, std::map<int, std::int64_t>> counts;
    std::unordered_map<ItemId, std::pair<std::int64_t, std::int64_t>> item_hits;  // hits, occurrences

    std::vector<ItemId> predicted;
    std::vector<double> scores;
    for (const RequestLog& log : dataset.requests) {
        predicted.resize(log.retrieved.size());
        scores.resize(log.retrieved.size());
        for (std::size_t i = 0; i < log.retrieved.size(); ++i)
            scores[i] = model.dot(log.user, log.retrieved[i].item);
        std::vector<std::int32_t> order(log.retrieved.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::int32_t a, std::int32_t b) {
            if (scores[a] != scores[b]) return scores[a] > scores[b];
            return log.retrieved[a].item < log.retrieved[b].item;
        });
        for (std::size_t i = 0; i < order.size(); ++i) predicted[i] = log.retrieved[order[i]].item;

        std::unordered_set<ItemId> clicked, purchased;
        for (const RankedItem& it : log.ranked) {
            if (!it.exposed) continue;
            if (it.labels.click == Label::positive) clicked.insert(it.item);
            if (it.labels.purchase == Label::positive) purchased.insert(it.item);
        }
        std::unordered_set<ItemId> as_clicked = clicked, as_purchased = purchased;
        as_clicked.insert(log.alt_clicked.begin(), log.alt_clicked.end());
        as_purchased.insert(log.alt_purchased.begin(), log.alt_purchased.end());

        const std::pair<const char*, const std::unordered_set<ItemId>*> hit_specs[] = {
            {"ISH", &clicked}, {"ISPH", &purchased}, {"ASH", &as_clicked}, {"ASPH", &as_purchased}};
        for (const auto& [name, relevant] : hit_specs) {
            if (relevant->empty()) continue;  // excluded from the mean
            for (int k : hit_ks) {
                sums[name][k] += hit_at_k(predicted, *relevant, k);
                ++counts[name][k];
            }
        }

        for (int k : eval_cfg.consistency_ks) {
            std::unordered_set<ItemId> reference;
            std::unordered_map<ItemId, double> gains;
            for (const RankedItem& it : log.ranked) {
                if (it.r > k) break;
                reference.insert(it.item);
                gains.emplace(it.item, 1.0);
            }
            if (reference.empty()) continue;
            sums["MAP"][k] += map_at_k(predicted, reference, k);
            ++counts["MAP"][k];
            if (const auto ndcg = ndcg_at_k(predicted, gains, k)) {
                sums["NDCG"][k] += *ndcg;
                ++counts["NDCG"][k];
            }
        }

        if (!as_clicked.empty()) {
            std::unordered_set<ItemId> in_top(
                predicted.begin(),
                predicted.begin() + std::min<std::size_t>(predicted.size(),
                                                          static_cast<std::size_t>(octile_hit_k)));
            for (ItemId item : as_clicked) {
                auto& [hits, occ] = item_hits[item];
                ++occ;
                if (in_top.count(item)) ++hits;
            }
        }
    }

    for (const auto& [metric, by_k] : sums)
        for (const auto& [k, total] : by_k) {
            const std::int64_t n = counts[metric][k];
            report.values[metric][k] = n > 0 ? total / static_cast<double>(n) : 0.0;
            report.request_counts[metric][k] = n;
        }

    if (!dataset.frequency.empty()) {
        const std::vector<int> octile = octile_assignment(dataset.frequency);
        std::array<double, 8> hit_sum{};
        for (const auto& [item, stats] : item_hits) {
            const int b = octile[static_cast<std::size_t>(item)];
            hit_sum[b] += static_cast<double>(stats.first);
            report.octile_count[b] += stats.second;
        }
        for (int b = 0; b < 8; ++b)
            report.octile_hit[b] = report.octile_count[b] > 0
                                       ? hit_sum[b] / static_cast<double>(report.octile_count[b])
                                       : 0.0;
    }
    return report;
}

// ---------------------------------------------------------------------------
// Ablation grid

struct AblationRun {
    Variant variant = Variant::base;
    std::uint64_t seed = 0;
    RunManifest manifest;
    std::string error;  // non-empty if the run failed; partial results kept
};

struct AblationReport {
    std::vector<AblationRun> runs;
};

/// Trains and evaluates every (variant, seed) pair. All variants of one seed
/// share byte-identical train/eval datasets; pairs run in parallel worker
/// threads without affecting results.
inline AblationReport run_ablation(const std::vector<Variant>& variants, const AppConfig& cfg,
                                   const std::vector<std::uint64_t>& seeds, int n_threads = 0) {
    if (variants.empty() || seeds.empty())
        throw std::invalid_argument("run_ablation: need at least one variant and one seed");
    cfg.validate();
    if (n_threads <= 0) {
        const unsigned hw = std::thread::hardware_concurrency();
        n_threads = hw > 0 ? static_cast<int>(hw) : 1;
    }

    AblationReport report;
    for (std::uint64_t seed : seeds) {
        const World world = generate_world(cfg.sim.n_users, cfg.sim.n_items, cfg.sim.d_true, seed,
                                           cfg.sim.popularity_exponent);
        const Dataset train_ds = generate_dataset(world, cfg.sim, cfg.train.n_train_requests,
                                                  derive_seed(seed, Stream::train_data));
        const Dataset eval_ds = generate_dataset(world, cfg.sim, cfg.train.n_eval_requests,
                                                 derive_seed(seed, Stream::eval_data));
        const std::string train_fp = dataset_fingerprint(train_ds);
        const std::string eval_fp = dataset_fingerprint(eval_ds);

        std::vector<AblationRun> seed_runs(variants.size());
        auto run_one = [&](std::size_t vi) {
            AblationRun& run = seed_runs[vi];
            run.variant = variants[vi];
            run.seed = seed;
            try {
                TrainResult tr = train(variants[vi], train_ds, cfg, seed);
                tr.manifest.eval_fingerprint = eval_fp;
                tr.manifest.metrics =
                    evaluate(tr.model, eval_ds, cfg.eval, cfg.sim.n_to_ranking);
                run.manifest = std::move(tr.manifest);
            } catch (const std::exception& e) {
                run.error = e.what();
                run.manifest.variant = variant_name(variants[vi]);
                run.manifest.seed = seed;
                run.manifest.train_fingerprint = train_fp;
                run.manifest.eval_fingerprint = eval_fp;
            }
        };

        std::size_t next = 0;
        while (next < variants.size()) {
            const std::size_t lanes =
                std::min<std::size_t>(static_cast<std::size_t>(n_threads), variants.size() - next);
            if (lanes <= 1) {
                run_one(next++);
                continue;
            }
            std::vector<std::thread> threads;
            for (std::size_t l = 0; l < lanes; ++l) threads.emplace_back(run_one, next + l);
            for (auto& t : threads) t.join();
            next += lanes;
        }
        for (auto& run : seed_runs) report.runs.push_back(std::move(run));
    }
    return report;
}

inline nlohmann::ordered_json ablation_to_json(const AblationReport& report) {
    nlohmann::ordered_json j;
    auto& runs = j["runs"] = nlohmann::ordered_json::array();
    for (const AblationRun& run : report.runs) {
        nlohmann::ordered_json r;
        r["variant"] = variant_name(run.variant);
        r["seed"] = run.seed;
        if (!run.error.empty()) r["error"] = run.error;
        r["train_fingerprint"] = run.manifest.train_fingerprint;
        r["eval_fingerprint"] = run.manifest.eval_fingerprint;
        r["metrics"] = metrics_to_json(run.manifest.metrics);
        runs.push_back(std::move(r));
    }

    // Per-variant means over seeds, keyed metric -> K.
    auto& means = j["means"] = nlohmann::ordered_json::object();
    std::map<std::string, std::map<std::string, std::map<int, std::pair<double, int>>>> acc;
    for (const AblationRun& run : report.runs) {
        if (!run.error.empty()) continue;
        for (const auto& [metric, by_k] : run.manifest.metrics.values)
            for (const auto& [k, v] : by_k) {
                auto& slot = acc[variant_name(run.variant)][metric][k];
                slot.first += v;
                slot.second += 1;
            }
    }
    for (const auto& [variant, metrics] : acc) {
        auto& vj = means[variant] = nlohmann::ordered_json::object();
        for (const auto& [metric, by_k] : metrics) {
            auto& mj = vj[metric] = nlohmann::ordered_json::object();
            for (const auto& [k, sumcount] : by_k)
                mj[std::to_string(k)] = sumcount.first / sumcount.second;
        }
    }
    return j;
}

/// Human-readable (metric x K) x variant table with per-seed values and the
/// across-seed mean.
inline std::string ablation_to_table(const AblationReport& report) {
    std::vector<std::uint64_t> seeds;
    std::vector<Variant> variants;
    for (const AblationRun& run : report.runs) {
        if (std::find(seeds.begin(), seeds.end(), run.seed) == seeds.end())
            seeds.push_back(run.seed);
        if (std::find(variants.begin(), variants.end(), run.variant) == variants.end())
            variants.push_back(run.variant);
    }

    std::map<std::string, std::map<int, bool>> cells;
    for (const AblationRun& run : report.runs)
        for (const auto& [metric, by_k] : run.manifest.metrics.values)
            for (const auto& [k, v] : by_k) cells[metric][k] = true;

    std::ostringstream os;
    for (const auto& [metric, by_k] : cells) {
        for (const auto& [k, unused] : by_k) {
            os << metric << "@" << k << '\n';
            os << "  variant";
            for (std::uint64_t s : seeds) os << "\tseed" << s;
            os << "\tmean\n";
            for (Variant v : variants) {
                os << "  " << variant_name(v);
                double sum = 0.0;
                int n = 0;
                for (std::uint64_t s : seeds) {
                    const AblationRun* found = nullptr;
                    for (const AblationRun& run : report.runs)
                        if (run.variant == v && run.seed == s) found = &run;
                    os << '\t';
                    if (found == nullptr) {
                        os << '-';
                        continue;
                    }
                    if (!found->error.empty()) {
                        os << "ERR";
                        continue;
                    }
                    const auto& vals = found->manifest.metrics.values;
                    auto mit = vals.find(metric);
                    if (mit == vals.end() || !mit->second.count(k)) {
                        os << '-';
                        continue;
                    }
                    const double val = mit->second.at(k);
                    char buf[32];
                    std::snprintf(buf, sizeof buf, "%.6f", val);
                    os << buf;
                    sum += val;
                    ++n;
                }
                if (n > 0) {
                    char buf[32];
                    std::snprintf(buf, sizeof buf, "%.6f", sum / n);
                    os << '\t' << buf;
                } else {
                    os << "\t-";
                }
                os << '\n';
            }
            os << '\n';
        }
    }
    return os.str();
}

}  // namespace prerank
