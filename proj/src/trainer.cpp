#include "zsrl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include <json.hpp>

#include "zsrl/errors.hpp"
#include "zsrl/evalrank.hpp"

namespace zsrl {

void OptimizerConfig::validate() const {
    // lr0 == 0 is allowed: it freezes the parameters, which the early-stop
    // behavior is specified (and tested) against.
    if (lr0 < 0.0) throw ConfigError("optimizer: lr0 must be >= 0");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("optimizer: momentum must be in [0,1)");
    if (weight_decay < 0.0) throw ConfigError("optimizer: weight_decay must be >= 0");
    if (!(lr_decay_factor >= 1.0)) throw ConfigError("optimizer: lr_decay_factor must be >= 1");
    if (lr_decay_every_epochs < 1) throw ConfigError("optimizer: lr_decay_every_epochs must be >= 1");
    if (max_epochs < 1) throw ConfigError("optimizer: max_epochs must be >= 1");
    if (early_stop_patience < 1) throw ConfigError("optimizer: early_stop_patience must be >= 1");
    if (batch_quads < 1) throw ConfigError("optimizer: batch_quads must be >= 1");
    if (val_fraction <= 0.0 || val_fraction >= 1.0) {
        throw ConfigError("optimizer: val_fraction must be in (0,1)");
    }
}

double learning_rate(const OptimizerConfig& cfg, std::size_t epoch) {
    const std::size_t periods = epoch / cfg.lr_decay_every_epochs;
    double divisor = 1.0;
    for (std::size_t i = 0; i < periods; ++i) divisor *= cfg.lr_decay_factor;
    return cfg.lr0 / divisor;
}

void init_velocity(TrainState& state, const EncoderNetwork& net) {
    state.velocity.clear();
    net.for_each_parameter([&](std::span<const double> value, std::span<const double>) {
        state.velocity.emplace_back(value.size(), 0.0);
    });
}

void sgd_step(EncoderNetwork& net, TrainState& state, const OptimizerConfig& cfg, double lr) {
    std::size_t block = 0;
    net.for_each_parameter([&](std::span<double> value, std::span<double> grad) {
        if (!all_finite(grad)) {
            throw NumericError("sgd_step: non-finite gradient in parameter block " +
                               std::to_string(block) + " at step " + std::to_string(state.step));
        }
        std::vector<double>& v = state.velocity.at(block);
        for (std::size_t i = 0; i < value.size(); ++i) {
            v[i] = cfg.momentum * v[i] + (grad[i] + cfg.weight_decay * value[i]);
            value[i] -= lr * v[i];
        }
        ++block;
    });
    net.zero_grads();
    ++state.step;
}

double validation_accuracy(const EncoderNetwork& net, const std::vector<DatasetItem>& val_items,
                           const LabelMap& seen_labels) {
    if (val_items.empty()) throw ConfigError("validation: empty validation set");
    std::size_t correct = 0;
    for (const DatasetItem& item : val_items) {
        const ForwardRecord record = net.forward(item.features);
        std::size_t argmax = 0;
        for (std::size_t k = 1; k < record.cls_logits.size(); ++k) {
            // Strict > keeps the lowest index on ties.
            if (record.cls_logits[k] > record.cls_logits[argmax]) argmax = k;
        }
        if (argmax == seen_labels.index_of(item.class_id)) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(val_items.size());
}

namespace {

// Retrieval-flavored validation: val sketches query val photos, both from
// seen classes; scored as mAP@all.
double validation_retrieval_map(const EncoderNetwork& net,
                                const std::vector<DatasetItem>& val_items) {
    EmbeddingSet set;
    set.embeddings = Matrix(val_items.size(), net.config().embed_dim);
    for (std::size_t i = 0; i < val_items.size(); ++i) {
        set.ids.push_back(val_items[i].id);
        set.class_ids.push_back(val_items[i].class_id);
        set.domains.push_back(val_items[i].domain);
        const auto e = net.embed(val_items[i].features);
        std::copy(e.begin(), e.end(), set.embeddings.row(i).begin());
    }
    SplitSpec pseudo;  // everything "unseen" so every sketch is a query
    for (int c : distinct_classes(val_items)) pseudo.unseen_classes.insert(c);
    pseudo.seen_classes.insert(-1);
    MetricConfig cfg;
    cfg.map_mode = MapMode::AtAll;
    const EmbeddingSet gallery = build_gallery(set, pseudo, GalleryMode::ZeroShot);
    const EmbeddingSet queries = build_queries(set, pseudo);
    return mean_ap(queries, gallery, cfg).value;
}

struct TrainValSplit {
    std::vector<DatasetItem> train;
    std::vector<DatasetItem> val;
};

// Deterministic held-out slice, stratified per (class, domain) group:
// floor(val_fraction * group size) items go to validation.
TrainValSplit hold_out_validation(std::vector<DatasetItem> seen_items, double val_fraction,
                                  Rng& rng) {
    std::stable_sort(seen_items.begin(), seen_items.end(),
                     [](const DatasetItem& a, const DatasetItem& b) { return a.id < b.id; });
    std::map<std::pair<int, Domain>, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < seen_items.size(); ++i) {
        groups[{seen_items[i].class_id, seen_items[i].domain}].push_back(i);
    }
    std::vector<bool> in_val(seen_items.size(), false);
    for (auto& [key, idxs] : groups) {
        (void)key;
        for (std::size_t i = 0; i + 1 < idxs.size(); ++i) {
            const std::size_t pick = i + rng.uniform_int(idxs.size() - i);
            std::swap(idxs[i], idxs[pick]);
        }
        const std::size_t take = static_cast<std::size_t>(
            std::floor(val_fraction * static_cast<double>(idxs.size())));
        for (std::size_t i = 0; i < take; ++i) in_val[idxs[i]] = true;
    }
    TrainValSplit out;
    for (std::size_t i = 0; i < seen_items.size(); ++i) {
        (in_val[i] ? out.val : out.train).push_back(std::move(seen_items[i]));
    }
    return out;
}

}  // namespace

TrainResult train(const std::vector<DatasetItem>& items, const SplitSpec& split,
                  const EncoderConfig& encoder_cfg, const LossConfig& loss_cfg,
                  const OptimizerConfig& opt_cfg, const SoftLabelTable* soft_labels,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
    opt_cfg.validate();
    loss_cfg.validate();
    encoder_cfg.validate();

    std::vector<DatasetItem> seen_items;
    for (const DatasetItem& item : items) {
        if (split.is_seen(item.class_id)) seen_items.push_back(item);
    }
    if (seen_items.empty()) throw ConfigError("train: no items from seen classes");

    const LabelMap seen_labels(split.seen_classes);
    if (encoder_cfg.num_seen_classes != seen_labels.size()) {
        throw ConfigError("train: encoder num_seen_classes " +
                          std::to_string(encoder_cfg.num_seen_classes) + " != seen classes " +
                          std::to_string(seen_labels.size()));
    }
    if (loss_cfg.enable_knowledge) {
        if (soft_labels == nullptr) {
            throw DataError("train: knowledge loss enabled but no soft labels provided");
        }
        for (int c : split.seen_classes) {
            if (!soft_labels->contains(c)) {
                throw DataError("train: soft labels missing seen class " + std::to_string(c));
            }
        }
        if (soft_labels->label_dim() != encoder_cfg.teacher_class_count) {
            throw ConfigError("train: soft label dim " + std::to_string(soft_labels->label_dim()) +
                              " != teacher_class_count " +
                              std::to_string(encoder_cfg.teacher_class_count));
        }
    }

    Rng val_rng(derive_seed(opt_cfg.seed, "val-split"));
    TrainValSplit tv = hold_out_validation(std::move(seen_items), opt_cfg.val_fraction, val_rng);
    if (tv.val.empty()) {
        throw ConfigError("train: validation slice is empty; dataset too small for val_fraction");
    }

    std::size_t train_sketches = 0;
    for (const DatasetItem& item : tv.train) {
        if (item.domain == Domain::Sketch) ++train_sketches;
    }
    if (train_sketches == 0) throw ConfigError("train: no training sketches after validation split");
    // Anchors are sketches, so one epoch covers the sketch count.
    const std::size_t batches_per_epoch =
        (train_sketches + opt_cfg.batch_quads - 1) / opt_cfg.batch_quads;

    EncoderNetwork net = EncoderNetwork::init(encoder_cfg);
    TrainState state;
    init_velocity(state, net);
    state.best_val_metric = -std::numeric_limits<double>::infinity();

    Rng sampler_rng(derive_seed(opt_cfg.seed, "sampler"));
    EncoderNetwork best_net = net;
    std::size_t epochs_run = 0;

    auto eval_metric = [&](const EncoderNetwork& candidate) {
        return opt_cfg.validation_mode == ValidationMode::Accuracy
                   ? validation_accuracy(candidate, tv.val, seen_labels)
                   : validation_retrieval_map(candidate, tv.val);
    };

    for (std::size_t epoch = 0; epoch < opt_cfg.max_epochs; ++epoch) {
        state.epoch = epoch;
        const double lr = learning_rate(opt_cfg, epoch);
        double sum_sim = 0.0, sum_cls = 0.0, sum_know = 0.0, sum_total = 0.0;

        for (std::size_t b = 0; b < batches_per_epoch; ++b) {
            const std::vector<Quadruplet> quads =
                sample_batch(tv.train, opt_cfg.batch_quads, sampler_rng);
            const std::size_t n = quads.size();

            // Forward all four slots through the one shared network.
            std::vector<ForwardRecord> rec_anchor, rec_pos, rec_negp, rec_negs;
            rec_anchor.reserve(n);
            rec_pos.reserve(n);
            rec_negp.reserve(n);
            rec_negs.reserve(n);
            Batch emb_anchor(n), emb_pos(n), emb_negp(n), emb_negs(n);
            for (std::size_t i = 0; i < n; ++i) {
                rec_anchor.push_back(net.forward(tv.train[quads[i].anchor_sketch].features));
                rec_pos.push_back(net.forward(tv.train[quads[i].positive_photo].features));
                rec_negp.push_back(net.forward(tv.train[quads[i].negative_photo].features));
                rec_negs.push_back(net.forward(tv.train[quads[i].negative_sketch].features));
                emb_anchor[i] = rec_anchor[i].embedding;
                emb_pos[i] = rec_pos[i].embedding;
                emb_negp[i] = rec_negp[i].embedding;
                emb_negs[i] = rec_negs[i].embedding;
            }

            Batch d_emb_anchor, d_emb_pos, d_emb_negp, d_emb_negs;
            double l_sim = 0.0;
            if (loss_cfg.enable_quadruplet) {
                QuadrupletResult sim =
                    quadruplet_loss(emb_anchor, emb_pos, emb_negp, emb_negs, loss_cfg);
                l_sim = sim.value;
                d_emb_anchor = std::move(sim.d_anchor);
                d_emb_pos = std::move(sim.d_positive);
                d_emb_negp = std::move(sim.d_negative_photo);
                d_emb_negs = std::move(sim.d_negative_sketch);
            } else {
                TripletResult sim = triplet_loss(emb_anchor, emb_pos, emb_negp, loss_cfg);
                l_sim = sim.value;
                d_emb_anchor = std::move(sim.d_anchor);
                d_emb_pos = std::move(sim.d_positive);
                d_emb_negp = std::move(sim.d_negative);
                // The negative sketch takes no part in the triplet baseline.
            }

            // Quadruplet slot order for the per-item losses: anchor,
            // positive, negative photo, negative sketch.
            auto slot_record = [&](std::size_t i, std::size_t s) -> const ForwardRecord& {
                switch (s) {
                    case 0: return rec_anchor[i];
                    case 1: return rec_pos[i];
                    case 2: return rec_negp[i];
                    default: return rec_negs[i];
                }
            };
            auto slot_item = [&](std::size_t i, std::size_t s) -> const DatasetItem& {
                switch (s) {
                    case 0: return tv.train[quads[i].anchor_sketch];
                    case 1: return tv.train[quads[i].positive_photo];
                    case 2: return tv.train[quads[i].negative_photo];
                    default: return tv.train[quads[i].negative_sketch];
                }
            };

            double l_cls = 0.0, l_know = 0.0;
            Batch d_cls, d_soft;
            if (loss_cfg.enable_cls) {
                Batch logits(4 * n);
                std::vector<std::size_t> labels(4 * n);
                for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t s = 0; s < 4; ++s) {
                        logits[4 * i + s] = slot_record(i, s).cls_logits;
                        labels[4 * i + s] = seen_labels.index_of(slot_item(i, s).class_id);
                    }
                }
                LogitLossResult cls = classification_loss(logits, labels);
                l_cls = cls.value;
                d_cls = std::move(cls.d_logits);
            }
            if (loss_cfg.enable_knowledge) {
                Batch logits(4 * n);
                Batch targets(4 * n);
                for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t s = 0; s < 4; ++s) {
                        logits[4 * i + s] = slot_record(i, s).soft_logits;
                        targets[4 * i + s] = soft_labels->lookup(slot_item(i, s));
                    }
                }
                LogitLossResult know = knowledge_loss(logits, targets);
                l_know = know.value;
                d_soft = std::move(know.d_logits);
            }

            const LossReport report = combine(l_sim, l_cls, l_know, loss_cfg);
            sum_sim += report.l_sim;
            sum_cls += report.l_cls;
            sum_know += report.l_knowledge;
            sum_total += report.total;

            const std::span<const double> none;
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t s = 0; s < 4; ++s) {
                    std::span<const double> d_emb = none;
                    if (s == 0) d_emb = d_emb_anchor[i];
                    else if (s == 1) d_emb = d_emb_pos[i];
                    else if (s == 2) d_emb = d_emb_negp[i];
                    else if (!d_emb_negs.empty()) d_emb = d_emb_negs[i];
                    net.backward(slot_record(i, s), d_emb,
                                 d_cls.empty() ? none : std::span<const double>(d_cls[4 * i + s]),
                                 d_soft.empty() ? none : std::span<const double>(d_soft[4 * i + s]));
                }
            }
            sgd_step(net, state, opt_cfg, lr);
        }

        const double inv_b = 1.0 / static_cast<double>(batches_per_epoch);
        EpochRecord record;
        record.epoch = epoch;
        record.lr = lr;
        record.l_sim = sum_sim * inv_b;
        record.l_cls = sum_cls * inv_b;
        record.l_knowledge = sum_know * inv_b;
        record.total = sum_total * inv_b;
        record.val_metric = eval_metric(net);
        state.history.push_back(record);
        if (on_epoch) on_epoch(record);
        epochs_run = epoch + 1;

        // Improvement means strictly greater than the best so far.
        if (record.val_metric > state.best_val_metric) {
            state.best_val_metric = record.val_metric;
            state.best_epoch = epoch;
            state.epochs_since_improvement = 0;
            best_net = net;
        } else {
            ++state.epochs_since_improvement;
            if (state.epochs_since_improvement >= opt_cfg.early_stop_patience) break;
        }
    }

    TrainResult result;
    result.net = std::move(best_net);
    result.state = std::move(state);
    result.epochs_run = epochs_run;
    return result;
}

std::string metrics_to_jsonl(const std::vector<EpochRecord>& history) {
    std::ostringstream out;
    for (const EpochRecord& r : history) {
        nlohmann::json j;
        j["epoch"] = r.epoch;
        j["lr"] = r.lr;
        j["l_sim"] = r.l_sim;
        j["l_cls"] = r.l_cls;
        j["l_knowledge"] = r.l_knowledge;
        j["total"] = r.total;
        j["val_metric"] = r.val_metric;
        out << j.dump() << '\n';
    }
    return out.str();
}

}  // namespace zsrl
