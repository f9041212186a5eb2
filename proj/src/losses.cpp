#include "zsrl/losses.hpp"

#include <cmath>
#include <string>

#include "zsrl/errors.hpp"
#include "zsrl/ndcore.hpp"

namespace zsrl {

namespace {

void check_batch(const Batch& batch, std::size_t expected_size, std::size_t expected_dim,
                 const char* name) {
    if (batch.size() != expected_size) {
        throw ShapeError(std::string(name) + ": batch size " + std::to_string(batch.size()) +
                         " != " + std::to_string(expected_size));
    }
    for (const auto& v : batch) {
        if (v.size() != expected_dim) {
            throw ShapeError(std::string(name) + ": embedding dim " + std::to_string(v.size()) +
                             " != " + std::to_string(expected_dim));
        }
    }
}

Batch zeros_like(const Batch& batch) {
    Batch out(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) out[i].assign(batch[i].size(), 0.0);
    return out;
}

// axpy into a gradient row: g += scale * (a - b)
void add_scaled_diff(std::vector<double>& g, std::span<const double> a, std::span<const double> b,
                     double scale) {
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += scale * (a[i] - b[i]);
}

struct NormalizedBatch {
    Batch unit;                 // x / |x|
    std::vector<double> norms;  // |x|
};

NormalizedBatch l2_normalize(const Batch& batch) {
    NormalizedBatch out;
    out.unit = batch;
    out.norms.resize(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        double sq = 0.0;
        for (double v : batch[i]) sq += v * v;
        const double norm = std::sqrt(sq);
        if (!(norm > 0.0) || !std::isfinite(norm)) {
            throw NumericError("normalize_embeddings: zero or non-finite embedding norm");
        }
        out.norms[i] = norm;
        for (double& v : out.unit[i]) v /= norm;
    }
    return out;
}

// Chain rule through u = x/|x|:  g_x = (g_u - (g_u . u) u) / |x|
void chain_through_normalization(Batch& grads, const NormalizedBatch& normalized) {
    for (std::size_t i = 0; i < grads.size(); ++i) {
        const auto& u = normalized.unit[i];
        double dot = 0.0;
        for (std::size_t j = 0; j < u.size(); ++j) dot += grads[i][j] * u[j];
        for (std::size_t j = 0; j < u.size(); ++j) {
            grads[i][j] = (grads[i][j] - dot * u[j]) / normalized.norms[i];
        }
    }
}

}  // namespace

void LossConfig::validate() const {
    if (margin_alpha < 0.0) throw ConfigError("losses: margin_alpha must be >= 0");
}

QuadrupletDistances quadruplet_distances(std::span<const double> anchor,
                                         std::span<const double> positive,
                                         std::span<const double> negative_photo,
                                         std::span<const double> negative_sketch) {
    QuadrupletDistances d;
    d.delta_plus = sq_euclidean(anchor, positive);
    d.delta_neg_photo = sq_euclidean(anchor, negative_photo);
    d.delta_neg_sketch = sq_euclidean(anchor, negative_sketch);
    return d;
}

TripletResult triplet_loss(const Batch& anchors, const Batch& positives, const Batch& negatives,
                           const LossConfig& cfg) {
    cfg.validate();
    if (anchors.empty()) throw ArgumentError("triplet_loss: empty batch");
    const std::size_t n = anchors.size();
    const std::size_t dim = anchors[0].size();
    check_batch(anchors, n, dim, "triplet_loss anchors");
    check_batch(positives, n, dim, "triplet_loss positives");
    check_batch(negatives, n, dim, "triplet_loss negatives");

    const Batch* a = &anchors;
    const Batch* p = &positives;
    const Batch* neg = &negatives;
    NormalizedBatch na, np, nn;
    if (cfg.normalize_embeddings) {
        na = l2_normalize(anchors);
        np = l2_normalize(positives);
        nn = l2_normalize(negatives);
        a = &na.unit;
        p = &np.unit;
        neg = &nn.unit;
    }

    TripletResult result;
    result.d_anchor = zeros_like(anchors);
    result.d_positive = zeros_like(positives);
    result.d_negative = zeros_like(negatives);
    const double inv_n = 1.0 / static_cast<double>(n);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double delta_plus = sq_euclidean((*a)[i], (*p)[i]);
        const double delta_neg = sq_euclidean((*a)[i], (*neg)[i]);
        const double term = delta_plus - delta_neg + cfg.margin_alpha;
        if (term > 0.0) {
            sum += term;
            // d(delta+)/da = 2(a-p), d(delta-)/da = 2(a-n); both scaled by 1/N.
            add_scaled_diff(result.d_anchor[i], (*neg)[i], (*p)[i], 2.0 * inv_n);
            add_scaled_diff(result.d_positive[i], (*p)[i], (*a)[i], 2.0 * inv_n);
            add_scaled_diff(result.d_negative[i], (*a)[i], (*neg)[i], 2.0 * inv_n);
        }
    }
    result.value = sum * inv_n;

    if (cfg.normalize_embeddings) {
        chain_through_normalization(result.d_anchor, na);
        chain_through_normalization(result.d_positive, np);
        chain_through_normalization(result.d_negative, nn);
    }
    return result;
}

QuadrupletResult quadruplet_loss(const Batch& anchors, const Batch& positives,
                                 const Batch& negative_photos, const Batch& negative_sketches,
                                 const LossConfig& cfg) {
    cfg.validate();
    if (anchors.empty()) throw ArgumentError("quadruplet_loss: empty batch");
    const std::size_t n = anchors.size();
    const std::size_t dim = anchors[0].size();
    check_batch(anchors, n, dim, "quadruplet_loss anchors");
    check_batch(positives, n, dim, "quadruplet_loss positives");
    check_batch(negative_photos, n, dim, "quadruplet_loss negative_photos");
    check_batch(negative_sketches, n, dim, "quadruplet_loss negative_sketches");

    const Batch* a = &anchors;
    const Batch* p = &positives;
    const Batch* np_ = &negative_photos;
    const Batch* ns = &negative_sketches;
    NormalizedBatch na, npos, nnp, nns;
    if (cfg.normalize_embeddings) {
        na = l2_normalize(anchors);
        npos = l2_normalize(positives);
        nnp = l2_normalize(negative_photos);
        nns = l2_normalize(negative_sketches);
        a = &na.unit;
        p = &npos.unit;
        np_ = &nnp.unit;
        ns = &nns.unit;
    }

    QuadrupletResult result;
    result.d_anchor = zeros_like(anchors);
    result.d_positive = zeros_like(positives);
    result.d_negative_photo = zeros_like(negative_photos);
    result.d_negative_sketch = zeros_like(negative_sketches);
    const double scale = 1.0 / (2.0 * static_cast<double>(n));
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const QuadrupletDistances d =
            quadruplet_distances((*a)[i], (*p)[i], (*np_)[i], (*ns)[i]);
        const double photo_term = d.delta_plus - d.delta_neg_photo + cfg.margin_alpha;
        const double sketch_term = d.delta_plus - d.delta_neg_sketch + cfg.margin_alpha;
        if (photo_term > 0.0) {
            sum += photo_term;
            add_scaled_diff(result.d_anchor[i], (*np_)[i], (*p)[i], 2.0 * scale);
            add_scaled_diff(result.d_positive[i], (*p)[i], (*a)[i], 2.0 * scale);
            add_scaled_diff(result.d_negative_photo[i], (*a)[i], (*np_)[i], 2.0 * scale);
        }
        if (sketch_term > 0.0) {
            sum += sketch_term;
            add_scaled_diff(result.d_anchor[i], (*ns)[i], (*p)[i], 2.0 * scale);
            add_scaled_diff(result.d_positive[i], (*p)[i], (*a)[i], 2.0 * scale);
            add_scaled_diff(result.d_negative_sketch[i], (*a)[i], (*ns)[i], 2.0 * scale);
        }
    }
    result.value = sum * scale;

    if (cfg.normalize_embeddings) {
        chain_through_normalization(result.d_anchor, na);
        chain_through_normalization(result.d_positive, npos);
        chain_through_normalization(result.d_negative_photo, nnp);
        chain_through_normalization(result.d_negative_sketch, nns);
    }
    return result;
}

LogitLossResult classification_loss(const Batch& cls_logits,
                                    const std::vector<std::size_t>& labels) {
    if (cls_logits.empty()) throw ArgumentError("classification_loss: empty batch");
    if (labels.size() != cls_logits.size()) {
        throw ShapeError("classification_loss: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(cls_logits.size()) + " logit rows");
    }
    const std::size_t m = cls_logits.size();
    const std::size_t num_classes = cls_logits[0].size();
    const double inv_m = 1.0 / static_cast<double>(m);

    LogitLossResult result;
    result.d_logits = zeros_like(cls_logits);
    double sum = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        if (cls_logits[i].size() != num_classes) {
            throw ShapeError("classification_loss: ragged logit rows");
        }
        if (labels[i] >= num_classes) {
            throw ArgumentError("classification_loss: label " + std::to_string(labels[i]) +
                                " out of range for " + std::to_string(num_classes) + " classes");
        }
        const std::vector<double> p = softmax(cls_logits[i]);
        sum += -std::log(p[labels[i]]);
        for (std::size_t k = 0; k < num_classes; ++k) {
            result.d_logits[i][k] = (p[k] - (k == labels[i] ? 1.0 : 0.0)) * inv_m;
        }
    }
    result.value = sum * inv_m;
    return result;
}

LogitLossResult knowledge_loss(const Batch& soft_logits, const Batch& soft_labels) {
    if (soft_logits.empty()) throw ArgumentError("knowledge_loss: empty batch");
    if (soft_labels.size() != soft_logits.size()) {
        throw ShapeError("knowledge_loss: " + std::to_string(soft_labels.size()) +
                         " soft labels for " + std::to_string(soft_logits.size()) + " logit rows");
    }
    const std::size_t m = soft_logits.size();
    const std::size_t num_classes = soft_logits[0].size();
    const double inv_m = 1.0 / static_cast<double>(m);

    LogitLossResult result;
    result.d_logits = zeros_like(soft_logits);
    double sum = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        if (soft_logits[i].size() != num_classes || soft_labels[i].size() != num_classes) {
            throw ShapeError("knowledge_loss: row dim mismatch");
        }
        double q_sum = 0.0;
        for (double q : soft_labels[i]) q_sum += q;
        if (std::abs(q_sum - 1.0) > 1e-6) {
            throw DataError("knowledge_loss: soft label row " + std::to_string(i) +
                            " sums to " + std::to_string(q_sum));
        }
        const std::vector<double> p = softmax(soft_logits[i]);
        double item = 0.0;
        for (std::size_t k = 0; k < num_classes; ++k) {
            const double q = soft_labels[i][k];
            if (q > 0.0) item -= q * std::log(p[k]);
            result.d_logits[i][k] = (p[k] - q) * inv_m;
        }
        sum += item;
    }
    result.value = sum * inv_m;
    return result;
}

LossReport combine(double l_sim, double l_cls, double l_knowledge, const LossConfig& cfg) {
    LossReport report;
    report.l_sim = l_sim;
    report.l_cls = cfg.enable_cls ? l_cls : 0.0;
    report.l_knowledge = cfg.enable_knowledge ? l_knowledge : 0.0;
    // Unit weights: L = L_knowledge + L_cls + L_sim.
    report.total = report.l_sim + report.l_cls + report.l_knowledge;
    return report;
}

}  // namespace zsrl
