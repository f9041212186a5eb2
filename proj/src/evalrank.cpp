#include "zsrl/evalrank.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "zsrl/errors.hpp"

namespace zsrl {

void EmbeddingSet::validate() const {
    if (ids.size() != class_ids.size() || ids.size() != domains.size() ||
        ids.size() != embeddings.rows()) {
        throw ShapeError("embedding set: ids/classes/domains/rows misaligned");
    }
}

void MetricConfig::validate() const {
    if (k_values.empty()) throw ConfigError("metrics: k_values must be non-empty");
    for (std::size_t k : k_values) {
        if (k == 0) throw ConfigError("metrics: k values must be positive");
    }
    if (map_mode == MapMode::AtK && map_k == 0) {
        throw ConfigError("metrics: map_k must be positive");
    }
}

namespace {

EmbeddingSet select_rows(const EmbeddingSet& all, const std::vector<std::size_t>& rows) {
    EmbeddingSet out;
    out.embeddings = Matrix(rows.size(), all.embeddings.cols());
    out.ids.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const std::size_t r = rows[i];
        out.ids.push_back(all.ids[r]);
        out.class_ids.push_back(all.class_ids[r]);
        out.domains.push_back(all.domains[r]);
        const auto src = all.embeddings.row(r);
        std::copy(src.begin(), src.end(), out.embeddings.row(i).begin());
    }
    return out;
}

}  // namespace

EmbeddingSet build_gallery(const EmbeddingSet& all, const SplitSpec& split, GalleryMode mode) {
    all.validate();
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < all.size(); ++i) {
        if (all.domains[i] != Domain::Photo) continue;
        if (mode == GalleryMode::ZeroShot && !split.is_unseen(all.class_ids[i])) continue;
        rows.push_back(i);
    }
    if (rows.empty()) throw ConfigError("gallery: no photo items for the requested mode");
    return select_rows(all, rows);
}

EmbeddingSet build_queries(const EmbeddingSet& all, const SplitSpec& split) {
    all.validate();
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < all.size(); ++i) {
        if (all.domains[i] == Domain::Sketch && split.is_unseen(all.class_ids[i])) {
            rows.push_back(i);
        }
    }
    if (rows.empty()) throw ConfigError("queries: no unseen-class sketches");
    return select_rows(all, rows);
}

RankedRetrieval rank_query(std::span<const double> query_embedding, int query_class,
                           const std::string& query_id, const EmbeddingSet& gallery) {
    gallery.validate();
    if (gallery.size() == 0) throw ConfigError("rank: empty gallery");
    if (query_embedding.size() != gallery.embeddings.cols()) {
        throw ShapeError("rank: query dim " + std::to_string(query_embedding.size()) +
                         " != gallery dim " + std::to_string(gallery.embeddings.cols()));
    }
    std::vector<double> dist(gallery.size());
    for (std::size_t i = 0; i < gallery.size(); ++i) {
        dist[i] = sq_euclidean(query_embedding, gallery.embeddings.row(i));
    }
    std::vector<std::size_t> order(gallery.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (dist[a] != dist[b]) return dist[a] < dist[b];
        return gallery.ids[a] < gallery.ids[b];
    });

    RankedRetrieval r;
    r.query_id = query_id;
    r.query_class = query_class;
    r.ranked_ids.reserve(gallery.size());
    r.relevance.reserve(gallery.size());
    for (std::size_t idx : order) {
        r.ranked_ids.push_back(gallery.ids[idx]);
        const int rel = gallery.class_ids[idx] == query_class ? 1 : 0;
        r.relevance.push_back(rel);
        r.total_relevant += static_cast<std::size_t>(rel);
    }
    return r;
}

double precision_at_k(const RankedRetrieval& r, std::size_t k) {
    if (k < 1) throw ArgumentError("precision_at_k: k must be >= 1");
    const std::size_t limit = std::min(k, r.relevance.size());
    std::size_t hits = 0;
    for (std::size_t i = 0; i < limit; ++i) hits += static_cast<std::size_t>(r.relevance[i]);
    return static_cast<double>(hits) / static_cast<double>(k);
}

std::optional<double> average_precision(const RankedRetrieval& r, std::optional<std::size_t> k,
                                        ApNormalizer normalizer) {
    const std::size_t n = r.total_relevant;
    const std::size_t limit = k ? std::min(*k, r.relevance.size()) : r.relevance.size();
    std::size_t norm = n;
    if (normalizer == ApNormalizer::MinKRelevant && k) norm = std::min(n, *k);
    if (norm == 0) return std::nullopt;
    double sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < limit; ++i) {
        if (r.relevance[i]) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(i + 1);  // P@i
        }
    }
    return sum / static_cast<double>(norm);
}

MeanApResult mean_ap(const EmbeddingSet& queries, const EmbeddingSet& gallery,
                     const MetricConfig& cfg) {
    cfg.validate();
    queries.validate();
    if (queries.size() == 0) throw EvalError("mean_ap: no queries");
    const std::optional<std::size_t> k =
        cfg.map_mode == MapMode::AtAll ? std::nullopt : std::optional<std::size_t>(cfg.map_k);

    MeanApResult result;
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t qi = 0; qi < queries.size(); ++qi) {
        const RankedRetrieval r =
            rank_query(queries.embeddings.row(qi), queries.class_ids[qi], queries.ids[qi], gallery);
        const auto ap = average_precision(r, k, cfg.ap_normalizer);
        if (ap) {
            result.per_query.push_back({queries.ids[qi], *ap});
            sum += *ap;
            ++count;
        } else if (cfg.score_missing_as_zero) {
            result.per_query.push_back({queries.ids[qi], 0.0});
            ++count;
        } else {
            result.excluded.push_back(queries.ids[qi]);
        }
    }
    if (count == 0) throw EvalError("mean_ap: every query had zero relevant gallery items");
    result.value = sum / static_cast<double>(count);
    return result;
}

GalleryReport evaluate_gallery(const EmbeddingSet& all, const SplitSpec& split, GalleryMode mode,
                               const MetricConfig& cfg) {
    cfg.validate();
    GalleryReport report;
    report.mode = mode;
    const EmbeddingSet gallery = build_gallery(all, split, mode);
    const EmbeddingSet queries = build_queries(all, split);
    report.gallery_size = gallery.size();
    report.query_count = queries.size();

    report.rankings.reserve(queries.size());
    for (std::size_t qi = 0; qi < queries.size(); ++qi) {
        report.rankings.push_back(rank_query(queries.embeddings.row(qi), queries.class_ids[qi],
                                             queries.ids[qi], gallery));
    }

    // Mean of a metric over queries; queries where the metric is undefined
    // (N == 0) are excluded unless configured to score 0.
    auto mean_over_queries = [&](auto&& metric) {
        double sum = 0.0;
        std::size_t count = 0;
        for (const RankedRetrieval& r : report.rankings) {
            const std::optional<double> v = metric(r);
            if (v) {
                sum += *v;
                ++count;
            } else if (cfg.score_missing_as_zero) {
                ++count;
            }
        }
        if (count == 0) throw EvalError("evaluate_gallery: every query had zero relevant items");
        return sum / static_cast<double>(count);
    };

    for (std::size_t k : cfg.k_values) {
        report.p_at_k[k] = mean_over_queries([&](const RankedRetrieval& r) -> std::optional<double> {
            if (r.total_relevant == 0) return std::nullopt;
            return precision_at_k(r, k);
        });
    }
    // mAP truncations cover the configured k values plus map_k.
    std::set<std::size_t> map_ks(cfg.k_values.begin(), cfg.k_values.end());
    map_ks.insert(cfg.map_k);
    for (std::size_t k : map_ks) {
        report.map_at_k_total_relevant[k] = mean_over_queries([&](const RankedRetrieval& r) {
            return average_precision(r, k, ApNormalizer::TotalRelevant);
        });
        report.map_at_k_min_k[k] = mean_over_queries([&](const RankedRetrieval& r) {
            return average_precision(r, k, ApNormalizer::MinKRelevant);
        });
    }
    report.map_all = mean_over_queries([&](const RankedRetrieval& r) {
        return average_precision(r, std::nullopt, ApNormalizer::TotalRelevant);
    });

    for (const RankedRetrieval& r : report.rankings) {
        const auto ap = average_precision(r, std::nullopt, ApNormalizer::TotalRelevant);
        if (ap) {
            report.per_query_ap.push_back({r.query_id, *ap});
        } else {
            report.excluded_queries.push_back(r.query_id);
            if (cfg.score_missing_as_zero) report.per_query_ap.push_back({r.query_id, 0.0});
        }
    }
    return report;
}

}  // namespace zsrl
