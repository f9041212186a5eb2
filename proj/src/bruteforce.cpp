#include "zsrl/bruteforce.hpp"

namespace zsrl::bruteforce {

namespace {

double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = a[i] - b[i];
        total += diff * diff;
    }
    return total;
}

bool ranks_before(double dist_a, const std::string& id_a, double dist_b, const std::string& id_b) {
    if (dist_a < dist_b) return true;
    if (dist_b < dist_a) return false;
    return id_a < id_b;
}

}  // namespace

std::vector<std::size_t> rank_order(const std::vector<double>& query,
                                    const std::vector<Item>& gallery) {
    std::vector<double> dist(gallery.size());
    for (std::size_t i = 0; i < gallery.size(); ++i) {
        dist[i] = squared_distance(query, gallery[i].embedding);
    }
    std::vector<std::size_t> remaining(gallery.size());
    for (std::size_t i = 0; i < remaining.size(); ++i) remaining[i] = i;
    std::vector<std::size_t> order;
    order.reserve(gallery.size());
    while (!remaining.empty()) {
        std::size_t best_pos = 0;
        for (std::size_t pos = 1; pos < remaining.size(); ++pos) {
            const std::size_t cand = remaining[pos];
            const std::size_t best = remaining[best_pos];
            if (ranks_before(dist[cand], gallery[cand].id, dist[best], gallery[best].id)) {
                best_pos = pos;
            }
        }
        order.push_back(remaining[best_pos]);
        remaining.erase(remaining.begin() + static_cast<long>(best_pos));
    }
    return order;
}

double precision_at_k(const std::vector<double>& query, int query_class,
                      const std::vector<Item>& gallery, std::size_t k) {
    const std::vector<std::size_t> order = rank_order(query, gallery);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < order.size() && i < k; ++i) {
        if (gallery[order[i]].class_id == query_class) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(k);
}

std::optional<double> average_precision(const std::vector<double>& query, int query_class,
                                        const std::vector<Item>& gallery,
                                        std::optional<std::size_t> k, bool min_k_normalizer) {
    const std::vector<std::size_t> order = rank_order(query, gallery);
    std::size_t total_relevant = 0;
    for (const Item& item : gallery) {
        if (item.class_id == query_class) ++total_relevant;
    }
    std::size_t norm = total_relevant;
    if (min_k_normalizer && k && *k < norm) norm = *k;
    if (norm == 0) return std::nullopt;

    const std::size_t limit = k ? (*k < order.size() ? *k : order.size()) : order.size();
    double sum = 0.0;
    for (std::size_t i = 0; i < limit; ++i) {
        if (gallery[order[i]].class_id != query_class) continue;
        // P@(i+1) counted from scratch.
        std::size_t hits = 0;
        for (std::size_t j = 0; j <= i; ++j) {
            if (gallery[order[j]].class_id == query_class) ++hits;
        }
        sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
    return sum / static_cast<double>(norm);
}

std::optional<double> mean_ap(const std::vector<Item>& queries, const std::vector<Item>& gallery,
                              std::optional<std::size_t> k, bool min_k_normalizer) {
    double sum = 0.0;
    std::size_t count = 0;
    for (const Item& q : queries) {
        const auto ap = average_precision(q.embedding, q.class_id, gallery, k, min_k_normalizer);
        if (ap) {
            sum += *ap;
            ++count;
        }
    }
    if (count == 0) return std::nullopt;
    return sum / static_cast<double>(count);
}

}  // namespace zsrl::bruteforce
