#pragma once

// Hybrid multi-level sample construction. Five sample roles per request:
//   N1 impressions (exposed, labelled)
//   N2 ranking-sequence candidates (unexposed, chunk-sampled, arranged)
//   N3 pre-ranking tail (retrieved but never sent downstream)
//   N4 list-wise in-batch negatives (other requests' impressions)
//   N5 pool negatives (never retrieved for the request)

#include "prerank/config.hpp"
#include "prerank/domain.hpp"
#include "prerank/rng.hpp"

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace prerank {

enum class SampleRole : std::uint8_t {
    N1_impression = 0,
    N2_ranking_seq = 1,
    N3_prerank_tail = 2,
    N4_inbatch = 3,
    N5_pool = 4,
};

inline const char* sample_role_name(SampleRole r) {
    switch (r) {
        case SampleRole::N1_impression: return "N1_impression";
        case SampleRole::N2_ranking_seq: return "N2_ranking_seq";
        case SampleRole::N3_prerank_tail: return "N3_prerank_tail";
        case SampleRole::N4_inbatch: return "N4_inbatch";
        case SampleRole::N5_pool: return "N5_pool";
    }
    return "?";
}

/// One training item: its role, feedback (if any), and the original /
/// arranged orders used by the consistency losses.
struct SampledInstance {
    UserId user = 0;
    ItemId item = 0;
    SampleRole role = SampleRole::N1_impression;
    bool exposed = false;
    LabelVector labels;                      // unknown unless exposed
    std::optional<int> r;                    // original ranking order (N1/N2)
    std::optional<std::int64_t> r_c;         // arranged global order (N1/N2)
    std::optional<std::int64_t> r_click;     // arranged local order (exposed only)
    std::optional<std::int64_t> r_purchase;  // arranged local order (exposed only)
    std::optional<int> prerank_order;        // known for N1..N3
    double cross_score = 0.0;                // synthetic cross-feature score (N1..N3)
};

/// Chunk map resolved for a concrete N^r: rate(r) = rates[i] for the first
/// chunk whose inclusive upper bound >= r; anything past the last bound falls
/// into the last chunk.
struct ChunkSpec {
    std::vector<int> upper_bounds;  // strictly increasing, same length as rates
    std::vector<double> rates;      // each in (0, 1]

    double rate_for(int r) const {
        for (std::size_t i = 0; i < upper_bounds.size(); ++i)
            if (r <= upper_bounds[i]) return rates[i];
        return rates.back();
    }

    void validate() const {
        if (rates.empty() || rates.size() != upper_bounds.size())
            throw std::invalid_argument("ChunkSpec: rates and upper_bounds must align");
        int prev = 0;
        for (int b : upper_bounds) {
            if (b <= prev) throw std::invalid_argument("ChunkSpec: bounds must increase strictly");
            prev = b;
        }
        for (double s : rates)
            if (!(s >= 0.0 && s <= 1.0))
                throw std::invalid_argument("ChunkSpec: rates must lie in [0, 1]");
    }
};

/// Resolves the configured chunk map for one request's N^r. With no explicit
/// boundaries the chunks are equal-width over [1, N^r].
inline ChunkSpec resolve_chunk_spec(const SamplerConfig& cfg, int n_rank) {
    ChunkSpec spec;
    spec.rates = cfg.chunk_rates;
    if (!cfg.chunk_boundaries.empty()) {
        spec.upper_bounds = cfg.chunk_boundaries;
    } else {
        const int m = static_cast<int>(cfg.chunk_rates.size());
        spec.upper_bounds.resize(m);
        for (int i = 0; i < m; ++i) {
            const std::int64_t b = static_cast<std::int64_t>(n_rank) * (i + 1) / m;
            spec.upper_bounds[i] = static_cast<int>(std::max<std::int64_t>(b, i + 1));
        }
    }
    spec.validate();
    return spec;
}

/// Non-uniform chunk sampling of a ranking sequence. Every impression is
/// retained unconditionally; unexposed items are kept independently with
/// their chunk's rate. Relative r order is preserved.
inline std::vector<RankedItem> chunk_sample_ranking(std::span<const RankedItem> ranked,
                                                    const ChunkSpec& spec, Rng& rng) {
    spec.validate();
    for (std::size_t i = 1; i < ranked.size(); ++i)
        if (ranked[i].r < ranked[i - 1].r)
            throw std::invalid_argument("chunk_sample_ranking: input must be sorted by r");

    std::vector<RankedItem> out;
    for (const RankedItem& it : ranked) {
        if (it.exposed) {
            out.push_back(it);
        } else if (rng.bernoulli(spec.rate_for(it.r))) {
            out.push_back(it);
        }
    }
    return out;
}

/// An item inside the arranged ranking sequence R^c.
struct ArrangedItem {
    ItemId item = 0;
    int r = 0;
    bool exposed = false;
    LabelVector labels;
    std::int64_t r_c = 0;
};

/// Arranges a sampled ranking sequence by r^c = r - (e + l_clk) * N^r, stable
/// within the three groups (clicked < unclicked-exposed < unexposed). An
/// unknown click label counts as 0.
inline std::vector<ArrangedItem> arrange_global(std::span<const RankedItem> sampled, int n_rank) {
    std::vector<ArrangedItem> out;
    out.reserve(sampled.size());
    for (const RankedItem& it : sampled) {
        const int e = it.exposed ? 1 : 0;
        const int clk = it.labels.click == Label::positive ? 1 : 0;
        out.push_back({it.item, it.r, it.exposed, it.labels,
                       it.r - static_cast<std::int64_t>(e + clk) * n_rank});
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const ArrangedItem& a, const ArrangedItem& b) { return a.r_c < b.r_c; });
    return out;
}

/// An item inside a task's exposure sequence R^t.
struct ExposureItem {
    ItemId item = 0;
    int r = 0;
    Label label = Label::unknown;
    std::int64_t r_t = 0;
};

/// Task-local arrangement of the exposed subset: r^t = r - (e + l_t) * N^r
/// with e = 1, sorted ascending, stable.
inline std::vector<ExposureItem> arrange_local(std::span<const ArrangedItem> arranged, Task task,
                                               int n_rank) {
    std::vector<ExposureItem> out;
    for (const ArrangedItem& it : arranged) {
        if (!it.exposed) continue;
        const Label l = task_label(it.labels, task);
        const int lv = l == Label::positive ? 1 : 0;
        out.push_back({it.item, it.r, l, it.r - static_cast<std::int64_t>(1 + lv) * n_rank});
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const ExposureItem& a, const ExposureItem& b) { return a.r_t < b.r_t; });
    return out;
}

/// Uniform sampling of the pre-ranking tail R^p: retrieved items whose
/// pre-rank order exceeds N^r, i.e. items that never went downstream.
inline std::vector<RetrievedItem> sample_prerank_tail(const RequestLog& log, double rate,
                                                      Rng& rng) {
    if (rate < 0 || rate > 1)
        throw std::invalid_argument("sample_prerank_tail: rate must lie in [0, 1]");
    std::vector<RetrievedItem> out;
    const int n_rank = log.n_rank();
    for (const RetrievedItem& it : log.retrieved) {
        if (it.prerank_order <= n_rank) continue;
        if (rng.bernoulli(rate)) out.push_back(it);
    }
    return out;
}

/// Draws k distinct items uniformly from catalog \ retrieved.
inline std::vector<ItemId> sample_pool(std::int64_t catalog_size,
                                       const std::unordered_set<ItemId>& retrieved, int k,
                                       Rng& rng) {
    if (k < 0) throw std::invalid_argument("sample_pool: k must be >= 0");
    const std::int64_t available = catalog_size - static_cast<std::int64_t>(retrieved.size());
    if (k > available)
        throw std::invalid_argument("sample_pool: k=" + std::to_string(k) +
                                    " exceeds available items " + std::to_string(available) +
                                    " (catalog " + std::to_string(catalog_size) + " minus " +
                                    std::to_string(retrieved.size()) + " retrieved)");
    std::vector<ItemId> out;
    out.reserve(static_cast<std::size_t>(k));
    if (k == 0) return out;

    if (static_cast<std::int64_t>(k) * 4 >= available) {
        // Dense regime: enumerate the complement and take a partial shuffle.
        std::vector<ItemId> pool;
        pool.reserve(static_cast<std::size_t>(available));
        for (std::int64_t j = 0; j < catalog_size; ++j)
            if (!retrieved.count(static_cast<ItemId>(j))) pool.push_back(static_cast<ItemId>(j));
        for (int i = 0; i < k; ++i) {
            const std::size_t pick =
                i + static_cast<std::size_t>(rng.uniform_below(pool.size() - i));
            std::swap(pool[i], pool[pick]);
            out.push_back(pool[i]);
        }
    } else {
        std::unordered_set<ItemId> chosen;
        while (static_cast<int>(out.size()) < k) {
            const ItemId j = static_cast<ItemId>(
                rng.uniform_below(static_cast<std::uint64_t>(catalog_size)));
            if (retrieved.count(j) || !chosen.insert(j).second) continue;
            out.push_back(j);
        }
    }
    return out;
}

/// All samples of one request, grouped list-wise.
struct RequestSamples {
    UserId user = 0;
    int n_rank = 0;
    int n_retrieved = 0;
    /// N1/N2 first (in R^c order), then N3, then N5; N4 is appended by
    /// sample_inbatch at training time.
    std::vector<SampledInstance> instances;
    /// R^t, B^r and B^p item ids; the in-batch sampling mask.
    std::unordered_set<ItemId> own_candidates;
    /// The request's full retrieved set (pool-negative exclusion).
    std::unordered_set<ItemId> retrieved_items;
};

struct ListwiseBatch {
    std::vector<RequestSamples> requests;
};

namespace detail {

/// Synthetic cross-feature score: a fixed linear map of the pre-rank order
/// onto [-w, +w]. Only samples that were retrieved (N1..N3) have one.
inline double cross_score_for(int prerank_order, int n_retrieved, double weight) {
    if (n_retrieved <= 1) return weight;
    const double t = static_cast<double>(prerank_order - 1) / (n_retrieved - 1);
    return weight * (1.0 - 2.0 * t);
}

}  // namespace detail

/// Per-request assembly of N1/N2/N3/N5. Role gating (`use_n2` etc.) lets
/// ablation variants drop whole sample levels; N1 impressions are always
/// kept.
inline ListwiseBatch build_listwise_batch(std::span<const RequestLog* const> logs,
                                          const SamplerConfig& cfg, std::int64_t catalog_size,
                                          double cross_score_weight, Rng& rng, bool use_n2 = true,
                                          bool use_n3 = true, bool use_n5 = true) {
    if (logs.empty()) throw std::invalid_argument("build_listwise_batch: need at least one log");
    cfg.validate();

    ListwiseBatch batch;
    batch.requests.reserve(logs.size());

    for (const RequestLog* log_ptr : logs) {
        const RequestLog& log = *log_ptr;
        RequestSamples req;
        req.user = log.user;
        req.n_rank = log.n_rank();
        req.n_retrieved = log.n_retrieved();

        std::unordered_map<ItemId, int> prerank_of;
        prerank_of.reserve(log.retrieved.size());
        for (const RetrievedItem& it : log.retrieved) {
            prerank_of.emplace(it.item, it.prerank_order);
            req.retrieved_items.insert(it.item);
        }

        // N1 + N2: chunk-sample the ranking sequence, arrange globally and
        // per task. With N2 disabled only the impressions survive.
        std::vector<RankedItem> sampled;
        if (use_n2) {
            const ChunkSpec spec = resolve_chunk_spec(cfg, log.n_rank());
            sampled = chunk_sample_ranking(log.ranked, spec, rng);
        } else {
            for (const RankedItem& it : log.ranked)
                if (it.exposed) sampled.push_back(it);
        }
        const std::vector<ArrangedItem> arranged = arrange_global(sampled, log.n_rank());
        std::unordered_map<ItemId, std::int64_t> local_click, local_purchase;
        for (const ExposureItem& it : arrange_local(arranged, Task::click, log.n_rank()))
            local_click.emplace(it.item, it.r_t);
        for (const ExposureItem& it : arrange_local(arranged, Task::purchase, log.n_rank()))
            local_purchase.emplace(it.item, it.r_t);

        for (const ArrangedItem& it : arranged) {
            SampledInstance inst;
            inst.user = log.user;
            inst.item = it.item;
            inst.role = it.exposed ? SampleRole::N1_impression : SampleRole::N2_ranking_seq;
            inst.exposed = it.exposed;
            inst.labels = it.exposed ? it.labels : LabelVector{};
            inst.r = it.r;
            inst.r_c = it.r_c;
            if (it.exposed) {
                inst.r_click = local_click.at(it.item);
                inst.r_purchase = local_purchase.at(it.item);
            }
            inst.prerank_order = prerank_of.at(it.item);
            inst.cross_score = detail::cross_score_for(*inst.prerank_order, log.n_retrieved(),
                                                       cross_score_weight);
            req.own_candidates.insert(it.item);
            req.instances.push_back(std::move(inst));
        }

        if (use_n3) {
            for (const RetrievedItem& it : sample_prerank_tail(log, cfg.prerank_tail_rate, rng)) {
                SampledInstance inst;
                inst.user = log.user;
                inst.item = it.item;
                inst.role = SampleRole::N3_prerank_tail;
                inst.prerank_order = it.prerank_order;
                inst.cross_score = detail::cross_score_for(it.prerank_order, log.n_retrieved(),
                                                           cross_score_weight);
                req.own_candidates.insert(it.item);
                req.instances.push_back(std::move(inst));
            }
        }

        if (use_n5 && cfg.pool_negatives > 0) {
            for (ItemId item :
                 sample_pool(catalog_size, req.retrieved_items, cfg.pool_negatives, rng)) {
                SampledInstance inst;
                inst.user = log.user;
                inst.item = item;
                inst.role = SampleRole::N5_pool;
                req.instances.push_back(std::move(inst));
            }
        }

        batch.requests.push_back(std::move(req));
    }
    return batch;
}

/// List-wise in-batch negative sampling. For each request, the candidates
/// are every other request's impressions (magnitude |U| x |R^t|); candidates
/// colliding with the request's own R^t, B^r or B^p are masked out before
/// the rate draw. Selected items are appended as N4 instances.
inline void sample_inbatch(ListwiseBatch& batch, double rate, Rng& rng) {
    if (rate < 0 || rate > 1)
        throw std::invalid_argument("sample_inbatch: rate must lie in [0, 1]");

    // Snapshot impression lists first; N4 appends must not feed back in.
    std::vector<std::vector<ItemId>> impressions(batch.requests.size());
    for (std::size_t u = 0; u < batch.requests.size(); ++u)
        for (const SampledInstance& inst : batch.requests[u].instances)
            if (inst.role == SampleRole::N1_impression)
                impressions[u].push_back(inst.item);

    for (std::size_t u = 0; u < batch.requests.size(); ++u) {
        RequestSamples& req = batch.requests[u];
        std::unordered_set<ItemId> added;
        for (std::size_t v = 0; v < batch.requests.size(); ++v) {
            if (v == u) continue;
            for (ItemId item : impressions[v]) {
                if (req.own_candidates.count(item)) continue;  // masked, no draw
                if (!rng.bernoulli(rate)) continue;
                if (!added.insert(item).second) continue;
                SampledInstance inst;
                inst.user = req.user;
                inst.item = item;
                inst.role = SampleRole::N4_inbatch;
                req.instances.push_back(std::move(inst));
            }
        }
    }
}

}  // namespace prerank
