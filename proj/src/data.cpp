#include "zsrl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "zsrl/errors.hpp"

namespace zsrl {

std::string to_string(Domain d) { return d == Domain::Sketch ? "sketch" : "photo"; }

Domain domain_from_string(const std::string& s) {
    if (s == "sketch") return Domain::Sketch;
    if (s == "photo") return Domain::Photo;
    throw ParseError("unknown domain '" + s + "'");
}

void SynthConfig::validate() const {
    if (num_classes < 1 || sketches_per_class < 1 || photos_per_class < 1) {
        throw ConfigError("synth: class and per-class counts must be >= 1");
    }
    if (feature_dim < 1) throw ConfigError("synth: feature_dim must be >= 1");
    if (!(class_separation > 0.0)) throw ConfigError("synth: class_separation must be > 0");
    if (sparsify_fraction < 0.0 || sparsify_fraction >= 1.0) {
        throw ConfigError("synth: sparsify_fraction must be in [0,1)");
    }
    if (noise_sigma < 0.0) throw ConfigError("synth: noise_sigma must be >= 0");
}

namespace {

std::string item_id(Domain domain, std::size_t class_id, std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%c%03zu_%04zu", domain == Domain::Sketch ? 's' : 'p',
                  class_id, index);
    return buf;
}

// The single map shared by the whole sketch domain: identity for seed 0,
// otherwise identity plus a seeded Gaussian shear of scale 0.5/sqrt(d).
Matrix sketch_domain_map(std::size_t dim, std::uint64_t seed) {
    Matrix m = Matrix::identity(dim);
    if (seed == 0) return m;
    Rng rng(derive_seed(seed, "sketch-map"));
    const double scale = 0.5 / std::sqrt(static_cast<double>(dim));
    for (double& v : m.data()) v += scale * rng.normal();
    return m;
}

}  // namespace

std::vector<DatasetItem> generate(const SynthConfig& cfg, Rng& rng) {
    cfg.validate();
    const std::size_t d = cfg.feature_dim;
    const Matrix sketch_map = sketch_domain_map(d, cfg.sketch_transform_seed);

    std::vector<std::vector<double>> centroids(cfg.num_classes, std::vector<double>(d));
    for (auto& c : centroids) rng.fill_normal(c, 0.0, cfg.class_separation);

    const std::size_t zero_count =
        static_cast<std::size_t>(std::floor(cfg.sparsify_fraction * static_cast<double>(d)));

    std::vector<DatasetItem> items;
    items.reserve(cfg.num_classes * (cfg.photos_per_class + cfg.sketches_per_class));
    std::vector<double> noise(d);
    std::vector<std::size_t> coords(d);
    for (std::size_t c = 0; c < cfg.num_classes; ++c) {
        for (std::size_t j = 0; j < cfg.photos_per_class; ++j) {
            DatasetItem item;
            item.id = item_id(Domain::Photo, c, j);
            item.domain = Domain::Photo;
            item.class_id = static_cast<int>(c);
            item.features = centroids[c];
            rng.fill_normal(noise);
            for (std::size_t k = 0; k < d; ++k) item.features[k] += cfg.noise_sigma * noise[k];
            items.push_back(std::move(item));
        }
        for (std::size_t j = 0; j < cfg.sketches_per_class; ++j) {
            std::vector<double> photo_like = centroids[c];
            rng.fill_normal(noise);
            for (std::size_t k = 0; k < d; ++k) photo_like[k] += cfg.noise_sigma * noise[k];

            DatasetItem item;
            item.id = item_id(Domain::Sketch, c, j);
            item.domain = Domain::Sketch;
            item.class_id = static_cast<int>(c);
            item.features = matvec(sketch_map, photo_like);
            rng.fill_normal(noise);
            for (std::size_t k = 0; k < d; ++k) item.features[k] += cfg.noise_sigma * noise[k];
            // Hard-zero a random subset of coordinates last, so the final
            // features carry the sketch domain's sparsity.
            if (zero_count > 0) {
                for (std::size_t k = 0; k < d; ++k) coords[k] = k;
                for (std::size_t k = 0; k < zero_count; ++k) {
                    const std::size_t pick = k + rng.uniform_int(d - k);
                    std::swap(coords[k], coords[pick]);
                    item.features[coords[k]] = 0.0;
                }
            }
            items.push_back(std::move(item));
        }
    }
    return items;
}

namespace {

void check_split_sides(const SplitSpec& split) {
    if (split.seen_classes.empty() || split.unseen_classes.empty()) {
        throw ConfigError("split: both seen and unseen sides must be non-empty");
    }
}

std::vector<int> unique_sorted(const std::vector<int>& classes) {
    std::vector<int> out = classes;
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    if (out.size() != classes.size()) throw ConfigError("split: duplicate class ids");
    return out;
}

}  // namespace

SplitSpec make_split_random(const std::vector<int>& classes, std::size_t unseen_k,
                            std::uint64_t seed) {
    std::vector<int> pool = unique_sorted(classes);
    if (unseen_k < 1 || unseen_k >= pool.size()) {
        throw ConfigError("split: random_k requires 1 <= k < number of classes");
    }
    Rng rng(derive_seed(seed, "split-random"));
    for (std::size_t i = 0; i + 1 < pool.size(); ++i) {
        const std::size_t pick = i + rng.uniform_int(pool.size() - i);
        std::swap(pool[i], pool[pick]);
    }
    SplitSpec split;
    split.protocol_name = "random_k";
    split.seed = seed;
    split.unseen_classes.insert(pool.begin(), pool.begin() + static_cast<long>(unseen_k));
    split.seen_classes.insert(pool.begin() + static_cast<long>(unseen_k), pool.end());
    check_split_sides(split);
    return split;
}

SplitSpec make_split_heldout(const std::vector<int>& classes, const std::vector<int>& heldout) {
    const std::vector<int> pool = unique_sorted(classes);
    SplitSpec split;
    split.protocol_name = "heldout_list";
    for (int c : heldout) {
        if (!std::binary_search(pool.begin(), pool.end(), c)) {
            throw ConfigError("split: held-out class " + std::to_string(c) +
                              " not in the class set");
        }
        split.unseen_classes.insert(c);
    }
    for (int c : pool) {
        if (!split.unseen_classes.count(c)) split.seen_classes.insert(c);
    }
    check_split_sides(split);
    return split;
}

std::string split_to_json(const SplitSpec& split) {
    nlohmann::json j;
    j["protocol"] = split.protocol_name;
    j["seed"] = split.seed;
    j["seen"] = std::vector<int>(split.seen_classes.begin(), split.seen_classes.end());
    j["unseen"] = std::vector<int>(split.unseen_classes.begin(), split.unseen_classes.end());
    return j.dump(2) + "\n";
}

SplitSpec split_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("split: ") + e.what());
    }
    try {
        SplitSpec split;
        split.protocol_name = j.at("protocol").get<std::string>();
        split.seed = j.at("seed").get<std::uint64_t>();
        for (int c : j.at("seen").get<std::vector<int>>()) split.seen_classes.insert(c);
        for (int c : j.at("unseen").get<std::vector<int>>()) split.unseen_classes.insert(c);
        for (int c : split.seen_classes) {
            if (split.unseen_classes.count(c)) {
                throw ParseError("split: class " + std::to_string(c) + " on both sides");
            }
        }
        check_split_sides(split);
        return split;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("split: ") + e.what());
    }
}

void save_split(const SplitSpec& split, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("split: cannot open '" + path + "' for writing");
    out << split_to_json(split);
    if (!out.good()) throw DataError("split: write to '" + path + "' failed");
}

SplitSpec load_split(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("split: cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return split_from_json(buf.str());
}

std::vector<Quadruplet> sample_batch(const std::vector<DatasetItem>& items,
                                     std::size_t batch_quads, Rng& rng) {
    if (batch_quads == 0) throw ArgumentError("sample_batch: batch_quads must be >= 1");
    std::map<int, std::vector<std::size_t>> sketches_by_class;
    std::map<int, std::vector<std::size_t>> photos_by_class;
    for (std::size_t i = 0; i < items.size(); ++i) {
        (items[i].domain == Domain::Sketch ? sketches_by_class : photos_by_class)[items[i].class_id]
            .push_back(i);
    }
    std::vector<int> classes;
    for (const auto& [c, idxs] : sketches_by_class) {
        if (!photos_by_class.count(c)) {
            throw SamplingError("sample_batch: class " + std::to_string(c) + " has no photos");
        }
        (void)idxs;
        classes.push_back(c);
    }
    for (const auto& [c, idxs] : photos_by_class) {
        (void)idxs;
        if (!sketches_by_class.count(c)) {
            throw SamplingError("sample_batch: class " + std::to_string(c) + " has no sketches");
        }
    }
    if (classes.size() < 2) {
        throw SamplingError("sample_batch: need at least 2 classes with both domains");
    }

    auto pick = [&rng](const std::vector<std::size_t>& pool) {
        return pool[rng.uniform_int(pool.size())];
    };
    auto pick_other_class = [&](int anchor_class) {
        std::size_t k = rng.uniform_int(classes.size() - 1);
        int c = classes[k];
        if (c == anchor_class) c = classes.back();
        return c;
    };

    std::vector<Quadruplet> batch;
    batch.reserve(batch_quads);
    for (std::size_t q = 0; q < batch_quads; ++q) {
        const int anchor_class = classes[rng.uniform_int(classes.size())];
        Quadruplet quad;
        quad.anchor_sketch = pick(sketches_by_class[anchor_class]);
        quad.positive_photo = pick(photos_by_class[anchor_class]);
        // Photo and sketch negative classes are drawn independently; they
        // only have to differ from the anchor class.
        quad.negative_photo = pick(photos_by_class[pick_other_class(anchor_class)]);
        quad.negative_sketch = pick(sketches_by_class[pick_other_class(anchor_class)]);
        batch.push_back(quad);
    }
    return batch;
}

namespace {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void save_dataset_tsv(const std::vector<DatasetItem>& items, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("dataset: cannot open '" + path + "' for writing");
    for (const DatasetItem& item : items) {
        out << item.id << '\t' << to_string(item.domain) << '\t' << item.class_id << '\t';
        for (std::size_t i = 0; i < item.features.size(); ++i) {
            if (i) out << ',';
            out << format_double(item.features[i]);
        }
        out << '\n';
    }
    if (!out.good()) throw DataError("dataset: write to '" + path + "' failed");
}

std::vector<DatasetItem> load_dataset_tsv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("dataset: cannot open '" + path + "'");
    std::vector<DatasetItem> items;
    std::set<std::string> seen_ids;
    std::string line;
    std::size_t line_no = 0;
    std::size_t dim = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        while (true) {
            const std::size_t tab = line.find('\t', start);
            fields.push_back(line.substr(start, tab - start));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        if (fields.size() != 4) {
            throw ParseError("dataset: line " + std::to_string(line_no) + ": expected 4 fields, got " +
                             std::to_string(fields.size()));
        }
        DatasetItem item;
        item.id = fields[0];
        if (item.id.empty()) throw ParseError("dataset: line " + std::to_string(line_no) + ": empty id");
        if (!seen_ids.insert(item.id).second) {
            throw DataError("dataset: line " + std::to_string(line_no) + ": duplicate id '" +
                            item.id + "'");
        }
        try {
            item.domain = domain_from_string(fields[1]);
        } catch (const ParseError& e) {
            throw ParseError("dataset: line " + std::to_string(line_no) + ": " + e.what());
        }
        try {
            std::size_t pos = 0;
            item.class_id = std::stoi(fields[2], &pos);
            if (pos != fields[2].size()) throw std::invalid_argument("trailing chars");
        } catch (const std::exception&) {
            throw ParseError("dataset: line " + std::to_string(line_no) + ": bad class id '" +
                             fields[2] + "'");
        }
        if (item.class_id < 0) {
            throw ParseError("dataset: line " + std::to_string(line_no) + ": negative class id");
        }
        std::stringstream feats(fields[3]);
        std::string tok;
        while (std::getline(feats, tok, ',')) {
            try {
                std::size_t pos = 0;
                item.features.push_back(std::stod(tok, &pos));
                if (pos != tok.size()) throw std::invalid_argument("trailing chars");
            } catch (const std::exception&) {
                throw ParseError("dataset: line " + std::to_string(line_no) + ": bad feature '" +
                                 tok + "'");
            }
        }
        if (item.features.empty()) {
            throw ParseError("dataset: line " + std::to_string(line_no) + ": no features");
        }
        if (dim == 0) {
            dim = item.features.size();
        } else if (item.features.size() != dim) {
            throw DataError("dataset: line " + std::to_string(line_no) + ": feature dim " +
                            std::to_string(item.features.size()) + " != " + std::to_string(dim));
        }
        items.push_back(std::move(item));
    }
    return items;
}

LabelMap::LabelMap(const std::set<int>& classes) : classes_(classes.begin(), classes.end()) {}

std::size_t LabelMap::index_of(int class_id) const {
    const auto it = std::lower_bound(classes_.begin(), classes_.end(), class_id);
    if (it == classes_.end() || *it != class_id) {
        throw KeyError("label map: class " + std::to_string(class_id) + " not present");
    }
    return static_cast<std::size_t>(it - classes_.begin());
}

bool LabelMap::contains(int class_id) const {
    return std::binary_search(classes_.begin(), classes_.end(), class_id);
}

std::vector<int> distinct_classes(const std::vector<DatasetItem>& items) {
    std::set<int> classes;
    for (const DatasetItem& item : items) classes.insert(item.class_id);
    return {classes.begin(), classes.end()};
}

}  // namespace zsrl
