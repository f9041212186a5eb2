#ifndef ZSRL_EVALRANK_HPP
#define ZSRL_EVALRANK_HPP

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "zsrl/data.hpp"
#include "zsrl/ndcore.hpp"

namespace zsrl {

/// Embeddings with aligned ids, classes and domains; rows of the matrix
/// line up with the id list.
struct EmbeddingSet {
    std::vector<std::string> ids;
    std::vector<int> class_ids;
    std::vector<Domain> domains;
    Matrix embeddings;

    std::size_t size() const { return ids.size(); }
    void validate() const;
};

enum class GalleryMode { ZeroShot, Generalized };
enum class ApNormalizer { TotalRelevant, MinKRelevant };
enum class MapMode { AtAll, AtK };

struct MetricConfig {
    std::vector<std::size_t> k_values = {100, 200};
    MapMode map_mode = MapMode::AtAll;
    std::size_t map_k = 200;  // used when map_mode == AtK
    ApNormalizer ap_normalizer = ApNormalizer::TotalRelevant;
    GalleryMode gallery_mode = GalleryMode::ZeroShot;
    // Queries with zero relevant gallery items are excluded from the mean
    // by default; set to score them 0 instead.
    bool score_missing_as_zero = false;

    void validate() const;
};

/// Zero-shot galleries hold unseen-class photos only; generalized galleries
/// hold every photo. Queries are always unseen-class sketches.
EmbeddingSet build_gallery(const EmbeddingSet& all, const SplitSpec& split, GalleryMode mode);
EmbeddingSet build_queries(const EmbeddingSet& all, const SplitSpec& split);

/// Full ranking of one query over the gallery: ascending squared Euclidean
/// distance, ties broken by ascending gallery id. gamma(i) marks class
/// matches; total_relevant counts them over the whole gallery.
struct RankedRetrieval {
    std::string query_id;
    int query_class = 0;
    std::vector<std::string> ranked_ids;
    std::vector<int> relevance;        // gamma, aligned with ranked_ids
    std::size_t total_relevant = 0;    // N
};

RankedRetrieval rank_query(std::span<const double> query_embedding, int query_class,
                           const std::string& query_id, const EmbeddingSet& gallery);

/// (number of relevant results in the top k) / k.
double precision_at_k(const RankedRetrieval& r, std::size_t k);

/// AP@K = sum_{i<=K} P@i * gamma(i) / norm, with norm either the
/// full-gallery relevant count N or min(N, K). k = nullopt means the whole
/// ranking. Returns nullopt when N == 0 (no relevant items to score).
std::optional<double> average_precision(const RankedRetrieval& r, std::optional<std::size_t> k,
                                        ApNormalizer normalizer);

struct QueryAp {
    std::string query_id;
    double ap = 0.0;
};

struct MeanApResult {
    double value = 0.0;
    std::vector<QueryAp> per_query;          // included queries, in query order
    std::vector<std::string> excluded;       // queries with N == 0
};

MeanApResult mean_ap(const EmbeddingSet& queries, const EmbeddingSet& gallery,
                     const MetricConfig& cfg);

/// One gallery mode evaluated end to end: P@k for each configured k, plus
/// mAP@all and mAP@k under both normalizers (they coincide at K = all).
struct GalleryReport {
    GalleryMode mode = GalleryMode::ZeroShot;
    std::size_t gallery_size = 0;
    std::size_t query_count = 0;
    std::map<std::size_t, double> p_at_k;
    double map_all = 0.0;
    std::map<std::size_t, double> map_at_k_total_relevant;
    std::map<std::size_t, double> map_at_k_min_k;
    std::vector<QueryAp> per_query_ap;       // AP@all, total_relevant normalizer
    std::vector<std::string> excluded_queries;
    // Full rankings retained for optional top-K emission.
    std::vector<RankedRetrieval> rankings;
};

GalleryReport evaluate_gallery(const EmbeddingSet& all, const SplitSpec& split, GalleryMode mode,
                               const MetricConfig& cfg);

}  // namespace zsrl

#endif  // ZSRL_EVALRANK_HPP
