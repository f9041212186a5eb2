#include "zsrl/distill.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "zsrl/errors.hpp"

namespace zsrl {

void TeacherConfig::validate() const {
    if (hidden_width < 1) throw ConfigError("teacher: hidden_width must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("teacher: learning_rate must be > 0");
    if (max_epochs < 1) throw ConfigError("teacher: max_epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("teacher: batch_size must be >= 1");
    if (val_fraction <= 0.0 || val_fraction >= 1.0) {
        throw ConfigError("teacher: val_fraction must be in (0,1)");
    }
    if (accuracy_gate <= 0.0 || accuracy_gate > 1.0) {
        throw ConfigError("teacher: accuracy_gate must be in (0,1]");
    }
}

TeacherNetwork TeacherNetwork::make(Matrix hidden_weights, std::vector<double> hidden_bias,
                                    Matrix output_weights, std::vector<double> output_bias,
                                    std::vector<int> proxy_classes) {
    if (hidden_bias.size() != hidden_weights.rows() ||
        output_weights.cols() != hidden_weights.rows() ||
        output_bias.size() != output_weights.rows() ||
        proxy_classes.size() != output_weights.rows()) {
        throw ShapeError("teacher: inconsistent parameter shapes");
    }
    TeacherNetwork net;
    net.hidden_ = std::move(hidden_weights);
    net.hidden_b_ = std::move(hidden_bias);
    net.output_.w = std::move(output_weights);
    net.output_.b = std::move(output_bias);
    net.proxy_classes_ = std::move(proxy_classes);
    return net;
}

std::vector<double> TeacherNetwork::activations(std::span<const double> features) const {
    if (features.size() != input_dim()) {
        throw ShapeError("teacher: input length " + std::to_string(features.size()) +
                         " != " + std::to_string(input_dim()));
    }
    std::vector<double> h = matvec(hidden_, features);
    for (std::size_t i = 0; i < h.size(); ++i) {
        h[i] += hidden_b_[i];
        if (h[i] < 0.0) h[i] = 0.0;
    }
    std::vector<double> out = matvec(output_.w, h);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += output_.b[i];
    return out;
}

namespace {

void require_photos_only(const std::vector<DatasetItem>& items, const char* where) {
    for (const DatasetItem& item : items) {
        if (item.domain != Domain::Photo) {
            throw DomainError(std::string(where) + ": sketch item '" + item.id +
                              "' passed where photos are required");
        }
    }
}

}  // namespace

TeacherNetwork pretrain_teacher(const std::vector<DatasetItem>& photo_items,
                                const std::vector<int>& proxy_classes, const TeacherConfig& cfg,
                                Rng& rng) {
    cfg.validate();
    require_photos_only(photo_items, "pretrain_teacher");
    if (photo_items.empty()) throw ArgumentError("pretrain_teacher: no photo items");
    if (proxy_classes.size() < 2) {
        throw ConfigError("pretrain_teacher: need at least 2 proxy classes");
    }

    std::vector<int> class_list = proxy_classes;
    std::sort(class_list.begin(), class_list.end());
    class_list.erase(std::unique(class_list.begin(), class_list.end()), class_list.end());
    auto class_index = [&](int class_id) -> std::size_t {
        const auto it = std::lower_bound(class_list.begin(), class_list.end(), class_id);
        if (it == class_list.end() || *it != class_id) {
            throw DataError("pretrain_teacher: item class " + std::to_string(class_id) +
                            " not among proxy classes");
        }
        return static_cast<std::size_t>(it - class_list.begin());
    };

    const std::size_t input_dim = photo_items[0].features.size();
    const std::size_t num_classes = class_list.size();
    const std::size_t hidden = cfg.hidden_width;

    TeacherNetwork net;
    net.proxy_classes_ = class_list;
    net.hidden_ = Matrix(hidden, input_dim);
    net.hidden_b_.assign(hidden, 0.0);
    net.output_.w = Matrix(num_classes, hidden);
    net.output_.b.assign(num_classes, 0.0);
    const double b1 = std::sqrt(6.0 / static_cast<double>(input_dim + hidden));
    for (double& w : net.hidden_.data()) w = rng.uniform(-b1, b1);
    const double b2 = std::sqrt(6.0 / static_cast<double>(hidden + num_classes));
    for (double& w : net.output_.w.data()) w = rng.uniform(-b2, b2);

    // Deterministic train/val partition of the photos.
    std::vector<std::size_t> order(photo_items.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = 0; i + 1 < order.size(); ++i) {
        const std::size_t pick = i + rng.uniform_int(order.size() - i);
        std::swap(order[i], order[pick]);
    }
    std::size_t val_count = static_cast<std::size_t>(
        std::floor(cfg.val_fraction * static_cast<double>(order.size())));
    if (val_count == 0) val_count = 1;
    if (val_count >= order.size()) {
        throw ConfigError("pretrain_teacher: validation slice leaves no training photos");
    }
    const std::vector<std::size_t> val_idx(order.end() - static_cast<long>(val_count), order.end());
    std::vector<std::size_t> train_idx(order.begin(), order.end() - static_cast<long>(val_count));

    auto forward_hidden = [&](std::span<const double> x, std::vector<double>& h,
                              std::vector<double>& h_pre) {
        h_pre = matvec(net.hidden_, x);
        for (std::size_t i = 0; i < h_pre.size(); ++i) h_pre[i] += net.hidden_b_[i];
        h = h_pre;
        for (double& v : h) v = v > 0.0 ? v : 0.0;
    };

    auto eval_val = [&]() {
        std::size_t correct = 0;
        for (std::size_t i : val_idx) {
            const auto logits = net.activations(photo_items[i].features);
            std::size_t argmax = 0;
            for (std::size_t k = 1; k < logits.size(); ++k) {
                if (logits[k] > logits[argmax]) argmax = k;
            }
            if (argmax == class_index(photo_items[i].class_id)) ++correct;
        }
        return static_cast<double>(correct) / static_cast<double>(val_idx.size());
    };

    std::vector<double> h, h_pre;
    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        for (std::size_t i = 0; i + 1 < train_idx.size(); ++i) {
            const std::size_t pick = i + rng.uniform_int(train_idx.size() - i);
            std::swap(train_idx[i], train_idx[pick]);
        }
        for (std::size_t start = 0; start < train_idx.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(start + cfg.batch_size, train_idx.size());
            const double inv_b = 1.0 / static_cast<double>(end - start);
            Matrix g_w2(num_classes, hidden, 0.0);
            std::vector<double> g_b2(num_classes, 0.0);
            Matrix g_w1(hidden, input_dim, 0.0);
            std::vector<double> g_b1(hidden, 0.0);
            for (std::size_t bi = start; bi < end; ++bi) {
                const DatasetItem& item = photo_items[train_idx[bi]];
                forward_hidden(item.features, h, h_pre);
                std::vector<double> logits = matvec(net.output_.w, h);
                for (std::size_t k = 0; k < logits.size(); ++k) logits[k] += net.output_.b[k];
                std::vector<double> p = softmax(logits);
                p[class_index(item.class_id)] -= 1.0;  // dCE/dlogits
                for (std::size_t k = 0; k < num_classes; ++k) {
                    const double g = p[k] * inv_b;
                    if (g == 0.0) continue;
                    auto row = g_w2.row(k);
                    for (std::size_t j = 0; j < hidden; ++j) row[j] += g * h[j];
                    g_b2[k] += g;
                }
                std::vector<double> dh = matvec_transposed(net.output_.w, p);
                for (std::size_t j = 0; j < hidden; ++j) {
                    if (h_pre[j] <= 0.0) continue;
                    const double g = dh[j] * inv_b;
                    auto row = g_w1.row(j);
                    for (std::size_t k = 0; k < input_dim; ++k) row[k] += g * item.features[k];
                    g_b1[j] += g;
                }
            }
            const double lr = cfg.learning_rate;
            for (std::size_t k = 0; k < g_w2.data().size(); ++k) {
                net.output_.w.data()[k] -= lr * g_w2.data()[k];
            }
            for (std::size_t k = 0; k < num_classes; ++k) net.output_.b[k] -= lr * g_b2[k];
            for (std::size_t k = 0; k < g_w1.data().size(); ++k) {
                net.hidden_.data()[k] -= lr * g_w1.data()[k];
            }
            for (std::size_t k = 0; k < hidden; ++k) net.hidden_b_[k] -= lr * g_b1[k];
        }
        net.val_accuracy_ = eval_val();
        if (net.val_accuracy_ >= cfg.accuracy_gate) break;
    }
    return net;
}

SoftLabelTable::SoftLabelTable(std::map<int, std::vector<double>> rows) : rows_(std::move(rows)) {
    for (const auto& [class_id, q] : rows_) {
        if (q.empty()) throw DataError("soft labels: empty row for class " + std::to_string(class_id));
        if (label_dim_ == 0) label_dim_ = q.size();
        if (q.size() != label_dim_) {
            throw DataError("soft labels: inconsistent row length for class " +
                            std::to_string(class_id));
        }
        double sum = 0.0;
        for (double v : q) {
            if (!(v > 0.0) || !(v < 1.0)) {
                throw DataError("soft labels: class " + std::to_string(class_id) +
                                " has a value outside (0,1)");
            }
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-9) {
            throw DataError("soft labels: class " + std::to_string(class_id) + " sums to " +
                            std::to_string(sum));
        }
    }
}

const std::vector<double>& SoftLabelTable::lookup(const DatasetItem& item) const {
    return lookup_class(item.class_id);
}

const std::vector<double>& SoftLabelTable::lookup_class(int class_id) const {
    const auto it = rows_.find(class_id);
    if (it == rows_.end()) {
        throw KeyError("soft labels: class " + std::to_string(class_id) + " not in table");
    }
    return it->second;
}

void SoftLabelTable::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("soft labels: cannot open '" + path + "' for writing");
    char buf[40];
    for (const auto& [class_id, q] : rows_) {
        out << class_id << '\t';
        for (std::size_t i = 0; i < q.size(); ++i) {
            if (i) out << ',';
            std::snprintf(buf, sizeof(buf), "%.17g", q[i]);
            out << buf;
        }
        out << '\n';
    }
    if (!out.good()) throw DataError("soft labels: write to '" + path + "' failed");
}

SoftLabelTable SoftLabelTable::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("soft labels: cannot open '" + path + "'");
    std::map<int, std::vector<double>> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::size_t tab = line.find('\t');
        if (tab == std::string::npos) {
            throw ParseError("soft labels: line " + std::to_string(line_no) + ": missing tab");
        }
        int class_id = 0;
        try {
            std::size_t pos = 0;
            class_id = std::stoi(line.substr(0, tab), &pos);
            if (pos != tab) throw std::invalid_argument("trailing chars");
        } catch (const std::exception&) {
            throw ParseError("soft labels: line " + std::to_string(line_no) + ": bad class id");
        }
        std::vector<double> q;
        std::stringstream vals(line.substr(tab + 1));
        std::string tok;
        while (std::getline(vals, tok, ',')) {
            try {
                std::size_t pos = 0;
                q.push_back(std::stod(tok, &pos));
                if (pos != tok.size()) throw std::invalid_argument("trailing chars");
            } catch (const std::exception&) {
                throw ParseError("soft labels: line " + std::to_string(line_no) + ": bad value '" +
                                 tok + "'");
            }
        }
        if (rows.count(class_id)) {
            throw ParseError("soft labels: line " + std::to_string(line_no) +
                             ": duplicate class " + std::to_string(class_id));
        }
        rows[class_id] = std::move(q);
    }
    // Constructor re-validates normalization and ranges.
    return SoftLabelTable(std::move(rows));
}

SoftLabelTable extract_soft_labels(const TeacherNetwork& teacher,
                                   const std::vector<DatasetItem>& photo_items,
                                   const std::vector<int>& classes, SoftLabelMode mode) {
    require_photos_only(photo_items, "extract_soft_labels");
    std::map<int, std::vector<const DatasetItem*>> by_class;
    for (const DatasetItem& item : photo_items) by_class[item.class_id].push_back(&item);

    std::map<int, std::vector<double>> rows;
    for (int c : classes) {
        const auto it = by_class.find(c);
        if (it == by_class.end() || it->second.empty()) {
            throw DataError("extract_soft_labels: class " + std::to_string(c) +
                            " has no photo items");
        }
        const double inv_n = 1.0 / static_cast<double>(it->second.size());
        std::vector<double> mean(teacher.output_dim(), 0.0);
        for (const DatasetItem* item : it->second) {
            std::vector<double> a = teacher.activations(item->features);
            if (mode == SoftLabelMode::ProbabilityMean) a = softmax(a);
            for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += a[k] * inv_n;
        }
        // Logit mean: average the pre-softmax activations, then one softmax.
        // Probability mean averages per-item softmax outputs instead; the
        // two orders differ whenever the per-item activations differ.
        rows[c] = mode == SoftLabelMode::LogitMean ? softmax(mean) : std::move(mean);
    }
    return SoftLabelTable(std::move(rows));
}

SoftLabelTable extract_soft_labels(const TeacherNetwork& teacher,
                                   const std::vector<DatasetItem>& photo_items,
                                   SoftLabelMode mode) {
    return extract_soft_labels(teacher, photo_items, distinct_classes(photo_items), mode);
}

}  // namespace zsrl
