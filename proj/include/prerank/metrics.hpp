#pragma once

// Evaluation primitives: the hit-rate family, MAP@K / NDCG@K against the
// ranking stage's top-K as reference, and frequency-octile breakdowns.

#include "prerank/domain.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace prerank {

/// |topk[1..K] intersect relevant| / |relevant|.
inline double hit_at_k(std::span<const ItemId> topk, const std::unordered_set<ItemId>& relevant,
                       int k) {
    if (k <= 0) throw std::invalid_argument("hit_at_k: K must be > 0");
    if (relevant.empty()) throw std::invalid_argument("hit_at_k: relevant set must be non-empty");
    const std::size_t limit = std::min<std::size_t>(topk.size(), static_cast<std::size_t>(k));
    std::int64_t hits = 0;
    for (std::size_t i = 0; i < limit; ++i)
        if (relevant.count(topk[i])) ++hits;
    return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

/// Average precision at K with a binary reference set, normalized by
/// min(K, |reference|) so a perfect prefix scores 1.
inline double map_at_k(std::span<const ItemId> predicted,
                       const std::unordered_set<ItemId>& reference, int k) {
    if (k <= 0) throw std::invalid_argument("map_at_k: K must be > 0");
    if (reference.empty()) throw std::invalid_argument("map_at_k: reference must be non-empty");
    const std::size_t limit = std::min<std::size_t>(predicted.size(), static_cast<std::size_t>(k));
    std::int64_t hits = 0;
    double sum = 0.0;
    for (std::size_t i = 0; i < limit; ++i) {
        if (reference.count(predicted[i])) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(i + 1);
        }
    }
    const std::int64_t denom =
        std::min<std::int64_t>(k, static_cast<std::int64_t>(reference.size()));
    return sum / static_cast<double>(denom);
}

/// NDCG@K with log2 position discount. Returns nullopt when every gain is
/// zero (the request is excluded from the mean).
inline std::optional<double> ndcg_at_k(std::span<const ItemId> predicted,
                                       const std::unordered_map<ItemId, double>& gains, int k) {
    if (k <= 0) throw std::invalid_argument("ndcg_at_k: K must be > 0");
    std::vector<double> all_gains;
    all_gains.reserve(gains.size());
    for (const auto& [item, g] : gains)
        if (g > 0) all_gains.push_back(g);
    if (all_gains.empty()) return std::nullopt;

    std::sort(all_gains.begin(), all_gains.end(), std::greater<>());
    double ideal = 0.0;
    for (std::size_t i = 0; i < std::min<std::size_t>(all_gains.size(), k); ++i)
        ideal += all_gains[i] / std::log2(static_cast<double>(i) + 2.0);

    double dcg = 0.0;
    const std::size_t limit = std::min<std::size_t>(predicted.size(), static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < limit; ++i) {
        auto it = gains.find(predicted[i]);
        if (it != gains.end())
            dcg += it->second / std::log2(static_cast<double>(i) + 2.0);
    }
    return dcg / ideal;
}

// ---------------------------------------------------------------------------
// Frequency octiles

struct OctileBreakdown {
    std::array<double, 8> mean{};        // per-octile mean of the supplied values
    std::array<std::int64_t, 8> count{}; // items contributing to each mean
};

/// Assigns items to eight equal-count buckets by frequency (bucket 0 = most
/// popular; ties break by ItemId ascending) and averages the supplied
/// per-item values inside each bucket.
inline OctileBreakdown octile_breakdown(std::span<const std::int64_t> frequencies,
                                        const std::unordered_map<ItemId, double>& per_item) {
    for (std::int64_t f : frequencies)
        if (f < 0) throw std::invalid_argument("octile_breakdown: frequencies must be >= 0");

    std::vector<ItemId> order(frequencies.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<ItemId>(i);
    std::sort(order.begin(), order.end(), [&](ItemId a, ItemId b) {
        if (frequencies[a] != frequencies[b]) return frequencies[a] > frequencies[b];
        return a < b;
    });

    OctileBreakdown out;
    std::array<double, 8> sums{};
    const std::size_t n = order.size();
    for (std::size_t pos = 0; pos < n; ++pos) {
        const std::size_t bucket = std::min<std::size_t>(pos * 8 / std::max<std::size_t>(n, 1), 7);
        auto it = per_item.find(order[pos]);
        if (it == per_item.end()) continue;
        sums[bucket] += it->second;
        ++out.count[bucket];
    }
    for (int b = 0; b < 8; ++b)
        out.mean[b] = out.count[b] > 0 ? sums[b] / static_cast<double>(out.count[b]) : 0.0;
    return out;
}

/// Octile index of every item (same assignment rule as octile_breakdown).
inline std::vector<int> octile_assignment(std::span<const std::int64_t> frequencies) {
    std::vector<ItemId> order(frequencies.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<ItemId>(i);
    std::sort(order.begin(), order.end(), [&](ItemId a, ItemId b) {
        if (frequencies[a] != frequencies[b]) return frequencies[a] > frequencies[b];
        return a < b;
    });
    std::vector<int> octile(frequencies.size(), 0);
    const std::size_t n = order.size();
    for (std::size_t pos = 0; pos < n; ++pos)
        octile[order[pos]] = static_cast<int>(std::min<std::size_t>(pos * 8 / std::max<std::size_t>(n, 1), 7));
    return octile;
}

// ---------------------------------------------------------------------------
// Report container

/// Mean metric values per cutoff, plus the octile view of the tail hit rate.
struct MetricsReport {
    // metric name -> (K -> mean over included requests)
    std::map<std::string, std::map<int, double>> values;
    // metric name -> (K -> number of requests included in the mean)
    std::map<std::string, std::map<int, std::int64_t>> request_counts;
    std::int64_t total_requests = 0;
    int octile_hit_k = 0;  // the cutoff the octile view uses (K = N^r)
    std::array<double, 8> octile_hit{};         // per-octile all-scenario hit rate
    std::array<std::int64_t, 8> octile_count{}; // relevant-item occurrences per octile

    bool operator==(const MetricsReport&) const = default;
};

inline nlohmann::ordered_json metrics_to_json(const MetricsReport& r) {
    nlohmann::ordered_json j;
    j["total_requests"] = r.total_requests;
    auto& vals = j["values"] = nlohmann::ordered_json::object();
    for (const auto& [metric, by_k] : r.values) {
        auto& m = vals[metric] = nlohmann::ordered_json::object();
        for (const auto& [k, v] : by_k) m[std::to_string(k)] = v;
    }
    auto& counts = j["request_counts"] = nlohmann::ordered_json::object();
    for (const auto& [metric, by_k] : r.request_counts) {
        auto& m = counts[metric] = nlohmann::ordered_json::object();
        for (const auto& [k, v] : by_k) m[std::to_string(k)] = v;
    }
    j["octile_hit_k"] = r.octile_hit_k;
    j["octile_hit"] = r.octile_hit;
    j["octile_count"] = r.octile_count;
    return j;
}

inline std::string metrics_to_table(const MetricsReport& r) {
    std::ostringstream os;
    os << "metric";
    std::vector<int> ks;
    for (const auto& [metric, by_k] : r.values)
        for (const auto& [k, v] : by_k)
            if (std::find(ks.begin(), ks.end(), k) == ks.end()) ks.push_back(k);
    std::sort(ks.begin(), ks.end());
    for (int k : ks) os << "\t@" << k;
    os << '\n';
    for (const auto& [metric, by_k] : r.values) {
        os << metric;
        for (int k : ks) {
            auto it = by_k.find(k);
            os << '\t';
            if (it != by_k.end()) {
                char buf[32];
                std::snprintf(buf, sizeof buf, "%.6f", it->second);
                os << buf;
            } else {
                os << "-";
            }
        }
        os << '\n';
    }
    os << "octile_hit@" << r.octile_hit_k;
    for (int b = 0; b < 8; ++b) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6f", r.octile_hit[b]);
        os << '\t' << buf;
    }
    os << '\n';
    return os.str();
}

}  // namespace prerank
