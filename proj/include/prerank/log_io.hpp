#pragma once

// Line-delimited JSON log format: exactly one request per line, keys in a
// fixed order so write -> read -> write is byte-identical. Field schema is
// documented in the README.

#include "prerank/domain.hpp"

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <string>

namespace prerank {

namespace detail {

inline nlohmann::ordered_json request_to_json(const RequestLog& log, std::int64_t catalog_size) {
    nlohmann::ordered_json j;
    j["user"] = log.user;
    j["catalog"] = catalog_size;
    auto& retrieved = j["retrieved"] = nlohmann::ordered_json::array();
    for (const RetrievedItem& it : log.retrieved)
        retrieved.push_back({it.item, it.prerank_order});
    auto& ranked = j["ranked"] = nlohmann::ordered_json::array();
    for (const RankedItem& it : log.ranked)
        ranked.push_back({it.item, it.r, it.exposed ? 1 : 0,
                          static_cast<int>(it.labels.click),
                          static_cast<int>(it.labels.purchase)});
    j["exposed_count"] = log.exposed_count;
    j["alt_clicked"] = log.alt_clicked;
    j["alt_purchased"] = log.alt_purchased;
    return j;
}

inline RequestLog request_from_json(const nlohmann::json& j, std::int64_t& catalog_size) {
    RequestLog log;
    log.user = j.at("user").get<UserId>();
    catalog_size = j.at("catalog").get<std::int64_t>();
    for (const auto& e : j.at("retrieved")) {
        if (!e.is_array() || e.size() != 2)
            throw std::invalid_argument("retrieved entry must be [item, prerank_order]");
        log.retrieved.push_back({e[0].get<ItemId>(), e[1].get<int>()});
    }
    for (const auto& e : j.at("ranked")) {
        if (!e.is_array() || e.size() != 5)
            throw std::invalid_argument("ranked entry must be [item, r, e, click, purchase]");
        RankedItem it;
        it.item = e[0].get<ItemId>();
        it.r = e[1].get<int>();
        const int exposed = e[2].get<int>();
        if (exposed != 0 && exposed != 1)
            throw std::invalid_argument("exposure flag must be 0 or 1");
        it.exposed = exposed == 1;
        it.labels.click = label_from_int(e[3].get<int>());
        it.labels.purchase = label_from_int(e[4].get<int>());
        log.ranked.push_back(it);
    }
    log.exposed_count = j.at("exposed_count").get<int>();
    log.alt_clicked = j.at("alt_clicked").get<std::vector<ItemId>>();
    log.alt_purchased = j.at("alt_purchased").get<std::vector<ItemId>>();
    return log;
}

}  // namespace detail

/// Writes one JSON record per request. An empty dataset produces a
/// zero-length file.
inline void write_logs(const Dataset& dataset, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_logs: cannot open '" + path + "' for writing");
    for (const RequestLog& log : dataset.requests) {
        out << detail::request_to_json(log, dataset.catalog_size).dump() << '\n';
        if (!out) throw std::runtime_error("write_logs: I/O failure writing '" + path + "'");
    }
}

/// Inverse of write_logs. Malformed lines raise a parse error carrying the
/// line number; every RequestLog invariant is re-checked on load.
inline Dataset read_logs(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_logs: cannot open '" + path + "'");

    Dataset ds;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        RequestLog log;
        std::int64_t catalog = 0;
        try {
            const auto j = nlohmann::json::parse(line);
            log = detail::request_from_json(j, catalog);
        } catch (const std::exception& e) {
            throw std::runtime_error("read_logs: parse error at line " + std::to_string(line_no) +
                                     " of '" + path + "': " + e.what());
        }
        if (ds.requests.empty()) {
            ds.catalog_size = catalog;
        } else if (catalog != ds.catalog_size) {
            throw std::runtime_error("read_logs: line " + std::to_string(line_no) +
                                     ": catalog size " + std::to_string(catalog) +
                                     " disagrees with " + std::to_string(ds.catalog_size));
        }
        try {
            validate_request_log(log, ds.catalog_size);
        } catch (const std::runtime_error& e) {
            throw std::runtime_error("read_logs: line " + std::to_string(line_no) + ": " + e.what());
        }
        ds.requests.push_back(std::move(log));
    }
    ds.recompute_frequencies();
    return ds;
}

/// FNV-1a over the serialized form; used as the dataset fingerprint in run
/// manifests.
inline std::string dataset_fingerprint(const Dataset& dataset) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const std::string& s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
    };
    for (const RequestLog& log : dataset.requests) {
        mix(detail::request_to_json(log, dataset.catalog_size).dump());
        mix("\n");
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

}  // namespace prerank
