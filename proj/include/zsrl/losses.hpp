#ifndef ZSRL_LOSSES_HPP
#define ZSRL_LOSSES_HPP

#include <span>
#include <vector>

namespace zsrl {

using Batch = std::vector<std::vector<double>>;

struct LossConfig {
    double margin_alpha = 0.2;
    bool enable_quadruplet = true;   // off = plain triplet baseline for L_sim
    bool enable_cls = true;
    bool enable_knowledge = true;
    // Optional L2 normalization of embeddings before the hinge distances.
    // Off by default; gradients chain through the normalization when on.
    bool normalize_embeddings = false;

    void validate() const;
};

/// Squared-L2 distances inside one quadruplet.
struct QuadrupletDistances {
    double delta_plus = 0.0;        // anchor sketch vs positive photo
    double delta_neg_photo = 0.0;   // anchor sketch vs negative photo
    double delta_neg_sketch = 0.0;  // anchor sketch vs negative sketch
};

QuadrupletDistances quadruplet_distances(std::span<const double> anchor,
                                         std::span<const double> positive,
                                         std::span<const double> negative_photo,
                                         std::span<const double> negative_sketch);

struct TripletResult {
    double value = 0.0;
    Batch d_anchor;
    Batch d_positive;
    Batch d_negative;
};

/// Batch-mean hinge over (delta_plus - delta_neg_photo + alpha). Subgradient
/// at the kink is 0: a hinge term contributes gradient only when strictly
/// positive.
TripletResult triplet_loss(const Batch& anchors, const Batch& positives, const Batch& negatives,
                           const LossConfig& cfg);

struct QuadrupletResult {
    double value = 0.0;
    Batch d_anchor;
    Batch d_positive;
    Batch d_negative_photo;
    Batch d_negative_sketch;
};

/// Domain-aware variant: mean over the batch of
/// (hinge vs negative photo + hinge vs negative sketch) / 2.
QuadrupletResult quadruplet_loss(const Batch& anchors, const Batch& positives,
                                 const Batch& negative_photos, const Batch& negative_sketches,
                                 const LossConfig& cfg);

struct LogitLossResult {
    double value = 0.0;
    Batch d_logits;
};

/// Softmax cross-entropy against hard labels, mean over items. Per-item
/// logit gradient is (softmax - one_hot) / item_count.
LogitLossResult classification_loss(const Batch& cls_logits, const std::vector<std::size_t>& labels);

/// Cross-entropy against soft labels, mean over items. Each soft label must
/// be a probability vector summing to 1 within 1e-6. Per-item gradient is
/// (softmax - q) / item_count.
LogitLossResult knowledge_loss(const Batch& soft_logits, const Batch& soft_labels);

struct LossReport {
    double l_sim = 0.0;
    double l_cls = 0.0;
    double l_knowledge = 0.0;
    double total = 0.0;
};

/// Unit-weight sum of the enabled terms; disabled terms are exactly 0.
LossReport combine(double l_sim, double l_cls, double l_knowledge, const LossConfig& cfg);

}  // namespace zsrl

#endif  // ZSRL_LOSSES_HPP
