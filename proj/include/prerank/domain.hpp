#pragma once

// Core data types shared by every module: identifiers, tri-state feedback
// labels, the per-request cascade trace, and the dataset container.

#include <cstdint>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace prerank {

using ItemId = std::int32_t;
using UserId = std::int32_t;

/// Feedback labels are tri-state. Feedback exists only for exposed items, so
/// an unexposed item carries `unknown` -- never 0, which would silently turn
/// "no feedback" into "negative feedback".
enum class Label : std::int8_t { unknown = -1, negative = 0, positive = 1 };

inline bool is_known(Label l) { return l != Label::unknown; }
inline int label_value(Label l) { return l == Label::positive ? 1 : 0; }
inline Label label_from_int(int v) {
    if (v < -1 || v > 1) throw std::invalid_argument("label value must be -1, 0 or 1");
    return static_cast<Label>(v);
}

enum class Task : std::uint8_t { click = 0, purchase = 1 };
inline constexpr int kNumTasks = 2;
inline const char* task_name(Task t) { return t == Task::click ? "click" : "purchase"; }

struct LabelVector {
    Label click = Label::unknown;
    Label purchase = Label::unknown;

    bool operator==(const LabelVector&) const = default;
};

inline Label task_label(const LabelVector& l, Task t) {
    return t == Task::click ? l.click : l.purchase;
}

/// A retrieval candidate together with the 1-based order the pre-ranking
/// stage assigned to it. The top N^r orders continue to the ranking stage.
struct RetrievedItem {
    ItemId item = 0;
    int prerank_order = 0;

    bool operator==(const RetrievedItem&) const = default;
};

/// One item scored by the ranking stage. `r` is the 1-based ranking order.
struct RankedItem {
    ItemId item = 0;
    int r = 0;
    bool exposed = false;
    LabelVector labels;

    bool operator==(const RankedItem&) const = default;
};

/// Full cascade trace of one user request: what was retrieved, how the
/// pre-ranker ordered it, how the ranker ordered the forwarded slice, which
/// items were exposed, and the feedback they received.
///
/// `alt_clicked` / `alt_purchased` hold feedback from a second, independent
/// exposure pass over the same retrieval set; they stand in for the clicks a
/// user produces in other scenarios and feed the all-scenario hit metrics.
struct RequestLog {
    UserId user = 0;
    std::vector<RetrievedItem> retrieved;  // sorted by prerank_order, length N^p
    std::vector<RankedItem> ranked;        // sorted by r, length N^r
    int exposed_count = 0;
    std::vector<ItemId> alt_clicked;    // sorted, unique
    std::vector<ItemId> alt_purchased;  // sorted, unique, subset of alt_clicked

    int n_retrieved() const { return static_cast<int>(retrieved.size()); }
    int n_rank() const { return static_cast<int>(ranked.size()); }

    bool operator==(const RequestLog&) const = default;
};

struct Dataset {
    std::vector<RequestLog> requests;
    std::int64_t catalog_size = 0;
    /// Exposure count per item over `requests`; always recomputed, never
    /// trusted from external input.
    std::vector<std::int64_t> frequency;

    void recompute_frequencies() {
        frequency.assign(static_cast<std::size_t>(catalog_size), 0);
        for (const RequestLog& log : requests)
            for (const RankedItem& it : log.ranked)
                if (it.exposed) ++frequency[static_cast<std::size_t>(it.item)];
    }

    bool operator==(const Dataset&) const = default;
};

namespace detail {
[[noreturn]] inline void fail_validation(const std::string& invariant, const std::string& detail) {
    throw std::runtime_error("request log invariant violated: " + invariant +
                             (detail.empty() ? "" : " (" + detail + ")"));
}
}  // namespace detail

/// Checks every RequestLog invariant; throws std::runtime_error naming the
/// violated invariant. `catalog_size` <= 0 skips the id-range check.
inline void validate_request_log(const RequestLog& log, std::int64_t catalog_size) {
    using detail::fail_validation;

    if (log.user < 0) fail_validation("user id must be non-negative", "user=" + std::to_string(log.user));

    std::unordered_set<ItemId> retrieved_items;
    retrieved_items.reserve(log.retrieved.size());
    for (std::size_t i = 0; i < log.retrieved.size(); ++i) {
        const RetrievedItem& it = log.retrieved[i];
        if (it.item < 0 || (catalog_size > 0 && it.item >= catalog_size))
            fail_validation("item id must lie within the catalog", "item=" + std::to_string(it.item));
        if (it.prerank_order != static_cast<int>(i) + 1)
            fail_validation("pre-rank orders must form the sequence 1..N^p",
                            "position " + std::to_string(i) + " has order " +
                                std::to_string(it.prerank_order));
        if (!retrieved_items.insert(it.item).second)
            fail_validation("retrieved items must be distinct", "item=" + std::to_string(it.item));
    }

    int exposed = 0;
    for (std::size_t i = 0; i < log.ranked.size(); ++i) {
        const RankedItem& it = log.ranked[i];
        if (it.r != static_cast<int>(i) + 1)
            fail_validation("ranking orders must form a permutation of 1..N^r",
                            "position " + std::to_string(i) + " has r=" + std::to_string(it.r));
        if (!retrieved_items.count(it.item))
            fail_validation("ranked items must be a subset of retrieved items",
                            "item=" + std::to_string(it.item));
        if (it.exposed) {
            ++exposed;
            if (!is_known(it.labels.click) || !is_known(it.labels.purchase))
                fail_validation("exposed items must carry known labels",
                                "item=" + std::to_string(it.item));
            if (it.labels.purchase == Label::positive && it.labels.click != Label::positive)
                fail_validation("purchase implies click", "item=" + std::to_string(it.item));
        } else {
            if (is_known(it.labels.click) || is_known(it.labels.purchase))
                fail_validation("unexposed items must carry unknown labels",
                                "item=" + std::to_string(it.item));
        }
    }
    if (exposed != log.exposed_count)
        fail_validation("exposed_count must equal the number of exposed items",
                        "declared " + std::to_string(log.exposed_count) + ", found " +
                            std::to_string(exposed));

    auto check_alt = [&](const std::vector<ItemId>& alt, const char* which) {
        ItemId prev = -1;
        for (ItemId id : alt) {
            if (id <= prev)
                fail_validation(std::string(which) + " items must be sorted and unique",
                                "item=" + std::to_string(id));
            if (!retrieved_items.count(id))
                fail_validation(std::string(which) + " items must be a subset of retrieved items",
                                "item=" + std::to_string(id));
            prev = id;
        }
    };
    check_alt(log.alt_clicked, "alt-clicked");
    check_alt(log.alt_purchased, "alt-purchased");
    std::unordered_set<ItemId> alt_clk(log.alt_clicked.begin(), log.alt_clicked.end());
    for (ItemId id : log.alt_purchased)
        if (!alt_clk.count(id))
            fail_validation("alt-purchased items must be a subset of alt-clicked items",
                            "item=" + std::to_string(id));
}

inline void validate_dataset(const Dataset& ds) {
    for (std::size_t i = 0; i < ds.requests.size(); ++i) {
        try {
            validate_request_log(ds.requests[i], ds.catalog_size);
        } catch (const std::runtime_error& e) {
            throw std::runtime_error("request " + std::to_string(i) + ": " + e.what());
        }
    }
}

}  // namespace prerank
