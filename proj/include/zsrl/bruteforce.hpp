#ifndef ZSRL_BRUTEFORCE_HPP
#define ZSRL_BRUTEFORCE_HPP

#include <optional>
#include <string>
#include <vector>

namespace zsrl::bruteforce {

// Exhaustive O(n^2) re-implementation of the ranking metrics, kept free of
// any code shared with the main engine so the two can cross-check each
// other. Only suitable for small instances.

struct Item {
    std::string id;
    int class_id = 0;
    std::vector<double> embedding;
};

/// Gallery indices from best to worst for one query, by squared Euclidean
/// distance with ascending-id tie break. Selection-sort, no shared helpers.
std::vector<std::size_t> rank_order(const std::vector<double>& query,
                                    const std::vector<Item>& gallery);

double precision_at_k(const std::vector<double>& query, int query_class,
                      const std::vector<Item>& gallery, std::size_t k);

/// AP with P@i recomputed from scratch at every relevant rank. k = nullopt
/// scans the whole gallery. Returns nullopt when no relevant item exists.
std::optional<double> average_precision(const std::vector<double>& query, int query_class,
                                        const std::vector<Item>& gallery,
                                        std::optional<std::size_t> k, bool min_k_normalizer);

/// Mean AP over queries; queries with no relevant gallery item are skipped.
std::optional<double> mean_ap(const std::vector<Item>& queries, const std::vector<Item>& gallery,
                              std::optional<std::size_t> k, bool min_k_normalizer);

}  // namespace zsrl::bruteforce

#endif  // ZSRL_BRUTEFORCE_HPP
