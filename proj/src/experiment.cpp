#include "zsrl/experiment.hpp"

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <type_traits>

#include "zsrl/bruteforce.hpp"
#include "zsrl/encoder.hpp"
#include "zsrl/errors.hpp"

namespace zsrl {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// logging

LogLevel log_level() {
    static const LogLevel level = [] {
        const char* env = std::getenv("ZSRL_LOG");
        if (env == nullptr) return LogLevel::Info;
        const std::string v(env);
        if (v == "error") return LogLevel::Error;
        if (v == "debug") return LogLevel::Debug;
        return LogLevel::Info;
    }();
    return level;
}

void log_error(const std::string& msg) { std::cerr << "[error] " << msg << "\n"; }

void log_info(const std::string& msg) {
    if (log_level() >= LogLevel::Info) std::cerr << "[info] " << msg << "\n";
}

void log_debug(const std::string& msg) {
    if (log_level() >= LogLevel::Debug) std::cerr << "[debug] " << msg << "\n";
}

// ---------------------------------------------------------------------------
// config parsing

namespace {

void reject_unknown_keys(const json& obj, const std::string& where,
                         std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) throw ConfigError("config: '" + where + "' must be an object");
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        bool ok = false;
        for (const char* a : allowed) {
            if (key == a) {
                ok = true;
                break;
            }
        }
        if (!ok) throw ConfigError("config: unknown key '" + where + "." + key + "'");
    }
}

template <typename T>
struct is_std_vector : std::false_type {};
template <typename U, typename A>
struct is_std_vector<std::vector<U, A>> : std::true_type {};

// nlohmann converts negative integers to unsigned types by wrapping; catch
// that before it turns "-5" into a huge count.
template <typename T>
void guard_unsigned(const json& value, const std::string& path) {
    if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
        if (value.is_number_integer() && value.get<std::int64_t>() < 0) {
            throw ConfigError("config: '" + path + "' must be >= 0");
        }
    } else if constexpr (is_std_vector<T>::value) {
        if (value.is_array()) {
            for (const auto& element : value) {
                guard_unsigned<typename T::value_type>(element, path);
            }
        }
    }
}

template <typename T>
T fetch(const json& obj, const std::string& where, const std::string& key, T fallback) {
    if (!obj.contains(key)) return fallback;
    guard_unsigned<T>(obj.at(key), where + "." + key);
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config: bad value for '" + where + "." + key + "'");
    }
}

template <typename T>
T fetch_required(const json& obj, const std::string& where, const std::string& key) {
    if (!obj.contains(key)) {
        throw ConfigError("config: missing required key '" + where + "." + key + "'");
    }
    guard_unsigned<T>(obj.at(key), where + "." + key);
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config: bad value for '" + where + "." + key + "'");
    }
}

SynthConfig parse_synth(const json& obj) {
    reject_unknown_keys(obj, "data.synthetic",
                        {"num_classes", "sketches_per_class", "photos_per_class", "feature_dim",
                         "class_separation", "sketch_transform_seed", "sparsify_fraction",
                         "noise_sigma"});
    SynthConfig cfg;
    cfg.num_classes = fetch_required<std::size_t>(obj, "data.synthetic", "num_classes");
    cfg.sketches_per_class = fetch_required<std::size_t>(obj, "data.synthetic", "sketches_per_class");
    cfg.photos_per_class = fetch_required<std::size_t>(obj, "data.synthetic", "photos_per_class");
    cfg.feature_dim = fetch_required<std::size_t>(obj, "data.synthetic", "feature_dim");
    cfg.class_separation = fetch(obj, "data.synthetic", "class_separation", cfg.class_separation);
    cfg.sketch_transform_seed =
        fetch(obj, "data.synthetic", "sketch_transform_seed", cfg.sketch_transform_seed);
    cfg.sparsify_fraction = fetch(obj, "data.synthetic", "sparsify_fraction", cfg.sparsify_fraction);
    cfg.noise_sigma = fetch(obj, "data.synthetic", "noise_sigma", cfg.noise_sigma);
    cfg.validate();
    return cfg;
}

GalleryMode gallery_mode_from_string(const std::string& s) {
    if (s == "zero_shot") return GalleryMode::ZeroShot;
    if (s == "generalized") return GalleryMode::Generalized;
    throw ConfigError("config: unknown gallery mode '" + s + "'");
}

std::string to_string(GalleryMode mode) {
    return mode == GalleryMode::ZeroShot ? "zero_shot" : "generalized";
}

ApNormalizer normalizer_from_string(const std::string& s) {
    if (s == "total_relevant") return ApNormalizer::TotalRelevant;
    if (s == "min_k_relevant") return ApNormalizer::MinKRelevant;
    throw ConfigError("config: unknown ap normalizer '" + s + "'");
}

std::string to_string(ApNormalizer n) {
    return n == ApNormalizer::TotalRelevant ? "total_relevant" : "min_k_relevant";
}

}  // namespace

std::string ExperimentConfig::resolved_soft_label_path() const {
    if (soft_label_path) return *soft_label_path;
    return (fs::path(output_dir) / "soft_labels.tsv").string();
}

ExperimentConfig parse_experiment_config(const std::string& json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("config: ") + e.what());
    }
    reject_unknown_keys(root, "<root>",
                        {"seed", "output_dir", "data", "split", "encoder", "losses", "optimizer",
                         "distill", "eval", "ablate"});
    ExperimentConfig cfg;
    cfg.seed = fetch(root, "<root>", "seed", cfg.seed);
    cfg.output_dir = fetch(root, "<root>", "output_dir", cfg.output_dir);

    if (root.contains("data")) {
        const json& data = root.at("data");
        reject_unknown_keys(data, "data", {"synthetic", "dataset_path"});
        if (data.contains("synthetic") == data.contains("dataset_path")) {
            throw ConfigError("config: data needs exactly one of 'synthetic' or 'dataset_path'");
        }
        if (data.contains("synthetic")) cfg.synthetic = parse_synth(data.at("synthetic"));
        if (data.contains("dataset_path")) {
            cfg.dataset_path = fetch_required<std::string>(data, "data", "dataset_path");
        }
    }

    if (root.contains("split")) {
        const json& split = root.at("split");
        reject_unknown_keys(split, "split", {"path", "protocol", "unseen_k", "heldout", "seed"});
        if (split.contains("path")) {
            cfg.split_path = fetch_required<std::string>(split, "split", "path");
            if (split.contains("protocol")) {
                throw ConfigError("config: split 'path' and 'protocol' are mutually exclusive");
            }
        } else {
            cfg.split_protocol = fetch_required<std::string>(split, "split", "protocol");
            if (cfg.split_protocol == "random_k") {
                cfg.split_unseen_k = fetch_required<std::size_t>(split, "split", "unseen_k");
            } else if (cfg.split_protocol == "heldout_list") {
                cfg.split_heldout = fetch_required<std::vector<int>>(split, "split", "heldout");
            } else {
                throw ConfigError("config: unknown split protocol '" + cfg.split_protocol + "'");
            }
            if (split.contains("seed")) {
                cfg.split_seed = fetch_required<std::uint64_t>(split, "split", "seed");
            }
        }
    }

    if (root.contains("encoder")) {
        const json& enc = root.at("encoder");
        reject_unknown_keys(enc, "encoder", {"hidden_dims", "embed_dim", "init_seed"});
        cfg.hidden_dims = fetch(enc, "encoder", "hidden_dims", cfg.hidden_dims);
        cfg.embed_dim = fetch(enc, "encoder", "embed_dim", cfg.embed_dim);
        if (enc.contains("init_seed")) {
            cfg.encoder_init_seed = fetch_required<std::uint64_t>(enc, "encoder", "init_seed");
        }
    }

    if (root.contains("losses")) {
        const json& losses = root.at("losses");
        reject_unknown_keys(losses, "losses",
                            {"margin_alpha", "enable_quadruplet", "enable_cls", "enable_knowledge",
                             "normalize_embeddings"});
        cfg.losses.margin_alpha = fetch(losses, "losses", "margin_alpha", cfg.losses.margin_alpha);
        cfg.losses.enable_quadruplet =
            fetch(losses, "losses", "enable_quadruplet", cfg.losses.enable_quadruplet);
        cfg.losses.enable_cls = fetch(losses, "losses", "enable_cls", cfg.losses.enable_cls);
        cfg.losses.enable_knowledge =
            fetch(losses, "losses", "enable_knowledge", cfg.losses.enable_knowledge);
        cfg.losses.normalize_embeddings =
            fetch(losses, "losses", "normalize_embeddings", cfg.losses.normalize_embeddings);
        cfg.losses.validate();
    }

    if (root.contains("optimizer")) {
        const json& opt = root.at("optimizer");
        reject_unknown_keys(opt, "optimizer",
                            {"lr0", "momentum", "weight_decay", "lr_decay_factor",
                             "lr_decay_every_epochs", "max_epochs", "early_stop_patience",
                             "batch_quads", "val_fraction", "validation_mode"});
        OptimizerConfig& o = cfg.optimizer;
        o.lr0 = fetch(opt, "optimizer", "lr0", o.lr0);
        o.momentum = fetch(opt, "optimizer", "momentum", o.momentum);
        o.weight_decay = fetch(opt, "optimizer", "weight_decay", o.weight_decay);
        o.lr_decay_factor = fetch(opt, "optimizer", "lr_decay_factor", o.lr_decay_factor);
        o.lr_decay_every_epochs =
            fetch(opt, "optimizer", "lr_decay_every_epochs", o.lr_decay_every_epochs);
        o.max_epochs = fetch(opt, "optimizer", "max_epochs", o.max_epochs);
        o.early_stop_patience = fetch(opt, "optimizer", "early_stop_patience", o.early_stop_patience);
        o.batch_quads = fetch(opt, "optimizer", "batch_quads", o.batch_quads);
        o.val_fraction = fetch(opt, "optimizer", "val_fraction", o.val_fraction);
        const std::string mode = fetch<std::string>(opt, "optimizer", "validation_mode", "accuracy");
        if (mode == "accuracy") {
            o.validation_mode = ValidationMode::Accuracy;
        } else if (mode == "retrieval_map") {
            o.validation_mode = ValidationMode::RetrievalMap;
        } else {
            throw ConfigError("config: unknown validation_mode '" + mode + "'");
        }
        o.validate();
    }

    if (root.contains("distill")) {
        const json& distill = root.at("distill");
        reject_unknown_keys(distill, "distill",
                            {"hidden_width", "learning_rate", "max_epochs", "batch_size",
                             "val_fraction", "accuracy_gate", "soft_label_mode", "teacher_scope",
                             "soft_label_path"});
        TeacherConfig& t = cfg.teacher;
        t.hidden_width = fetch(distill, "distill", "hidden_width", t.hidden_width);
        t.learning_rate = fetch(distill, "distill", "learning_rate", t.learning_rate);
        t.max_epochs = fetch(distill, "distill", "max_epochs", t.max_epochs);
        t.batch_size = fetch(distill, "distill", "batch_size", t.batch_size);
        t.val_fraction = fetch(distill, "distill", "val_fraction", t.val_fraction);
        t.accuracy_gate = fetch(distill, "distill", "accuracy_gate", t.accuracy_gate);
        t.validate();
        const std::string mode =
            fetch<std::string>(distill, "distill", "soft_label_mode", "logit_mean");
        if (mode == "logit_mean") {
            cfg.soft_label_mode = SoftLabelMode::LogitMean;
        } else if (mode == "probability_mean") {
            cfg.soft_label_mode = SoftLabelMode::ProbabilityMean;
        } else {
            throw ConfigError("config: unknown soft_label_mode '" + mode + "'");
        }
        cfg.teacher_scope = fetch<std::string>(distill, "distill", "teacher_scope", cfg.teacher_scope);
        if (cfg.teacher_scope != "all_classes" && cfg.teacher_scope != "seen_only") {
            throw ConfigError("config: unknown teacher_scope '" + cfg.teacher_scope + "'");
        }
        if (distill.contains("soft_label_path")) {
            cfg.soft_label_path = fetch_required<std::string>(distill, "distill", "soft_label_path");
        }
    }

    if (root.contains("eval")) {
        const json& ev = root.at("eval");
        reject_unknown_keys(ev, "eval",
                            {"k_values", "map_k", "gallery_modes", "ap_normalizers",
                             "score_missing_as_zero", "emit_topk", "oracle_check",
                             "oracle_max_gallery", "oracle_max_queries"});
        EvalSettings& e = cfg.eval;
        e.k_values = fetch(ev, "eval", "k_values", e.k_values);
        e.map_k = fetch(ev, "eval", "map_k", e.map_k);
        if (ev.contains("gallery_modes")) {
            e.gallery_modes.clear();
            for (const auto& s : fetch_required<std::vector<std::string>>(ev, "eval", "gallery_modes")) {
                e.gallery_modes.push_back(gallery_mode_from_string(s));
            }
            if (e.gallery_modes.empty()) throw ConfigError("config: eval.gallery_modes is empty");
        }
        if (ev.contains("ap_normalizers")) {
            e.ap_normalizers.clear();
            for (const auto& s :
                 fetch_required<std::vector<std::string>>(ev, "eval", "ap_normalizers")) {
                e.ap_normalizers.push_back(normalizer_from_string(s));
            }
            if (e.ap_normalizers.empty()) throw ConfigError("config: eval.ap_normalizers is empty");
        }
        e.score_missing_as_zero =
            fetch(ev, "eval", "score_missing_as_zero", e.score_missing_as_zero);
        e.emit_topk = fetch(ev, "eval", "emit_topk", e.emit_topk);
        e.oracle_check = fetch(ev, "eval", "oracle_check", e.oracle_check);
        e.oracle_max_gallery = fetch(ev, "eval", "oracle_max_gallery", e.oracle_max_gallery);
        e.oracle_max_queries = fetch(ev, "eval", "oracle_max_queries", e.oracle_max_queries);
        if (e.k_values.empty()) throw ConfigError("config: eval.k_values is empty");
        for (std::size_t k : e.k_values) {
            if (k == 0) throw ConfigError("config: eval.k_values must be positive");
        }
        if (e.map_k == 0) throw ConfigError("config: eval.map_k must be positive");
    }

    if (root.contains("ablate")) {
        const json& ab = root.at("ablate");
        reject_unknown_keys(ab, "ablate", {"seeds"});
        cfg.ablate_seeds = fetch(ab, "ablate", "seeds", cfg.ablate_seeds);
    }
    return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_experiment_config(buf.str());
}

// ---------------------------------------------------------------------------
// shared resolution

std::vector<DatasetItem> resolve_dataset(const ExperimentConfig& cfg) {
    if (cfg.synthetic) {
        Rng rng(derive_seed(cfg.seed, "gen-data"));
        return generate(*cfg.synthetic, rng);
    }
    if (cfg.dataset_path) return load_dataset_tsv(*cfg.dataset_path);
    throw ConfigError("config: no data source (need data.synthetic or data.dataset_path)");
}

SplitSpec resolve_split(const ExperimentConfig& cfg, const std::vector<DatasetItem>& items) {
    if (cfg.split_path) return load_split(*cfg.split_path);
    const std::vector<int> classes = distinct_classes(items);
    if (cfg.split_protocol == "random_k") {
        return make_split_random(classes, cfg.split_unseen_k,
                                 cfg.split_seed.value_or(derive_seed(cfg.seed, "split")));
    }
    if (cfg.split_protocol == "heldout_list") {
        return make_split_heldout(classes, cfg.split_heldout);
    }
    throw ConfigError("config: no split source (need split.path or split.protocol)");
}

namespace {

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    out << content;
    if (!out.good()) throw DataError("write to '" + path + "' failed");
}

void ensure_output_dir(const ExperimentConfig& cfg) {
    std::error_code ec;
    fs::create_directories(cfg.output_dir, ec);
    if (ec) throw DataError("cannot create output dir '" + cfg.output_dir + "': " + ec.message());
}

std::size_t feature_dim_of(const std::vector<DatasetItem>& items) {
    if (items.empty()) throw DataError("dataset is empty");
    return items[0].features.size();
}

// Teacher + soft labels for one top-level seed, honoring teacher_scope.
SoftLabelTable build_soft_labels(const ExperimentConfig& cfg,
                                 const std::vector<DatasetItem>& items, const SplitSpec& split,
                                 std::uint64_t seed, double* teacher_val_accuracy) {
    std::vector<DatasetItem> photos;
    for (const DatasetItem& item : items) {
        if (item.domain != Domain::Photo) continue;
        if (cfg.teacher_scope == "seen_only" && !split.is_seen(item.class_id)) continue;
        photos.push_back(item);
    }
    if (photos.empty()) throw DataError("soft labels: no photos in teacher scope");
    Rng teacher_rng(derive_seed(seed, "teacher"));
    const TeacherNetwork teacher =
        pretrain_teacher(photos, distinct_classes(photos), cfg.teacher, teacher_rng);
    if (teacher_val_accuracy) *teacher_val_accuracy = teacher.validation_accuracy();
    const std::vector<int> seen(split.seen_classes.begin(), split.seen_classes.end());
    return extract_soft_labels(teacher, photos, seen, cfg.soft_label_mode);
}

EncoderConfig build_encoder_config(const ExperimentConfig& cfg,
                                   const std::vector<DatasetItem>& items, const SplitSpec& split,
                                   const SoftLabelTable* table, std::uint64_t seed) {
    EncoderConfig enc;
    enc.input_dim = feature_dim_of(items);
    enc.hidden_dims = cfg.hidden_dims;
    enc.embed_dim = cfg.embed_dim;
    enc.num_seen_classes = split.seen_classes.size();
    enc.teacher_class_count =
        table != nullptr ? table->label_dim() : distinct_classes(items).size();
    enc.init_seed = cfg.encoder_init_seed.value_or(derive_seed(seed, "encoder-init"));
    for (const std::string& w : enc.validate()) log_info("warning: " + w);
    return enc;
}

EmbeddingSet embed_items(const EncoderNetwork& net, const std::vector<DatasetItem>& items) {
    EmbeddingSet set;
    set.embeddings = Matrix(items.size(), net.config().embed_dim);
    for (std::size_t i = 0; i < items.size(); ++i) {
        set.ids.push_back(items[i].id);
        set.class_ids.push_back(items[i].class_id);
        set.domains.push_back(items[i].domain);
        const auto e = net.embed(items[i].features);
        std::copy(e.begin(), e.end(), set.embeddings.row(i).begin());
    }
    return set;
}

json metric_block_to_json(const GalleryReport& report, const EvalSettings& eval) {
    json block;
    block["gallery_size"] = report.gallery_size;
    block["query_count"] = report.query_count;
    json p;
    for (const auto& [k, v] : report.p_at_k) p[std::to_string(k)] = v;
    block["P"] = std::move(p);
    json map_block;
    for (ApNormalizer norm : eval.ap_normalizers) {
        json entry;
        entry["all"] = report.map_all;
        const auto& at_k = norm == ApNormalizer::TotalRelevant ? report.map_at_k_total_relevant
                                                               : report.map_at_k_min_k;
        for (const auto& [k, v] : at_k) entry[std::to_string(k)] = v;
        map_block[to_string(norm)] = std::move(entry);
    }
    block["mAP"] = std::move(map_block);
    json per_query = json::array();
    for (const QueryAp& qa : report.per_query_ap) {
        per_query.push_back({{"query_id", qa.query_id}, {"ap", qa.ap}});
    }
    block["per_query_ap"] = std::move(per_query);
    block["excluded_queries"] = report.excluded_queries;
    return block;
}

std::string topk_lines(const GalleryReport& report, std::size_t k) {
    std::ostringstream out;
    for (const RankedRetrieval& r : report.rankings) {
        const std::size_t limit = std::min(k, r.ranked_ids.size());
        for (std::size_t i = 0; i < limit; ++i) {
            out << r.query_id << '\t' << (i + 1) << '\t' << r.ranked_ids[i] << '\t'
                << r.relevance[i] << '\n';
        }
    }
    return out.str();
}

void oracle_cross_check(const EmbeddingSet& all, const SplitSpec& split,
                        const GalleryReport& report, const EvalSettings& eval) {
    if (eval.score_missing_as_zero) {
        log_info("oracle check skipped: score_missing_as_zero changes the aggregation");
        return;
    }
    const EmbeddingSet gallery = build_gallery(all, split, report.mode);
    const EmbeddingSet queries = build_queries(all, split);
    if (gallery.size() > eval.oracle_max_gallery || queries.size() > eval.oracle_max_queries) {
        log_info("oracle check skipped: instance larger than the configured caps");
        return;
    }
    auto to_items = [](const EmbeddingSet& set) {
        std::vector<bruteforce::Item> items(set.size());
        for (std::size_t i = 0; i < set.size(); ++i) {
            items[i].id = set.ids[i];
            items[i].class_id = set.class_ids[i];
            const auto row = set.embeddings.row(i);
            items[i].embedding.assign(row.begin(), row.end());
        }
        return items;
    };
    const auto gallery_items = to_items(gallery);
    const auto query_items = to_items(queries);

    auto expect_equal = [&](double engine, std::optional<double> oracle, const std::string& name) {
        if (!oracle || engine != *oracle) {
            throw std::runtime_error("oracle mismatch on " + name + ": engine " +
                                     std::to_string(engine) + " vs oracle " +
                                     (oracle ? std::to_string(*oracle) : std::string("undefined")));
        }
    };
    expect_equal(report.map_all,
                 bruteforce::mean_ap(query_items, gallery_items, std::nullopt, false), "mAP@all");
    for (const auto& [k, v] : report.map_at_k_total_relevant) {
        expect_equal(v, bruteforce::mean_ap(query_items, gallery_items, k, false),
                     "mAP@" + std::to_string(k));
    }
    for (const auto& [k, v] : report.map_at_k_min_k) {
        expect_equal(v, bruteforce::mean_ap(query_items, gallery_items, k, true),
                     "mAP@" + std::to_string(k) + " (min-k)");
    }
    for (const auto& [k, v] : report.p_at_k) {
        double sum = 0.0;
        std::size_t count = 0;
        for (const auto& q : query_items) {
            if (!bruteforce::average_precision(q.embedding, q.class_id, gallery_items, std::nullopt,
                                               false)) {
                continue;  // no relevant items; engine excludes these too
            }
            sum += bruteforce::precision_at_k(q.embedding, q.class_id, gallery_items, k);
            ++count;
        }
        expect_equal(v, count ? std::optional<double>(sum / static_cast<double>(count)) : std::nullopt,
                     "P@" + std::to_string(k));
    }
    log_info("oracle check passed for " + to_string(report.mode) + " gallery");
}

}  // namespace

// ---------------------------------------------------------------------------
// commands

json run_gen_data(const ExperimentConfig& cfg) {
    if (!cfg.synthetic) throw ConfigError("gen-data: config must provide data.synthetic");
    const std::vector<DatasetItem> items = resolve_dataset(cfg);
    const SplitSpec split = resolve_split(cfg, items);
    ensure_output_dir(cfg);
    const std::string dataset_path = (fs::path(cfg.output_dir) / "dataset.tsv").string();
    const std::string split_path = (fs::path(cfg.output_dir) / "split.json").string();
    save_dataset_tsv(items, dataset_path);
    save_split(split, split_path);

    std::map<int, std::pair<std::size_t, std::size_t>> per_class;  // sketches, photos
    std::size_t sketches = 0, photos = 0;
    for (const DatasetItem& item : items) {
        if (item.domain == Domain::Sketch) {
            ++per_class[item.class_id].first;
            ++sketches;
        } else {
            ++per_class[item.class_id].second;
            ++photos;
        }
    }
    json per_class_json;
    for (const auto& [c, counts] : per_class) {
        per_class_json[std::to_string(c)] = {{"sketches", counts.first},
                                             {"photos", counts.second}};
    }
    json status;
    status["command"] = "gen-data";
    status["status"] = "ok";
    status["dataset_path"] = dataset_path;
    status["split_path"] = split_path;
    status["items"] = items.size();
    status["sketches"] = sketches;
    status["photos"] = photos;
    status["classes"] = per_class.size();
    status["seen_classes"] = split.seen_classes.size();
    status["unseen_classes"] = split.unseen_classes.size();
    status["per_class"] = std::move(per_class_json);
    return status;
}

json run_soft_labels(const ExperimentConfig& cfg) {
    const std::vector<DatasetItem> items = resolve_dataset(cfg);
    const SplitSpec split = resolve_split(cfg, items);
    ensure_output_dir(cfg);
    double teacher_acc = 0.0;
    const SoftLabelTable table = build_soft_labels(cfg, items, split, cfg.seed, &teacher_acc);
    const std::string path = cfg.resolved_soft_label_path();
    table.save(path);
    log_info("teacher validation accuracy " + std::to_string(teacher_acc));

    json status;
    status["command"] = "soft-labels";
    status["status"] = "ok";
    status["soft_label_path"] = path;
    status["rows"] = table.size();
    status["label_dim"] = table.label_dim();
    status["teacher_val_accuracy"] = teacher_acc;
    return status;
}

json run_train(const ExperimentConfig& cfg) {
    const std::vector<DatasetItem> items = resolve_dataset(cfg);
    const SplitSpec split = resolve_split(cfg, items);
    ensure_output_dir(cfg);

    SoftLabelTable table;
    const SoftLabelTable* table_ptr = nullptr;
    if (cfg.losses.enable_knowledge) {
        const std::string path = cfg.resolved_soft_label_path();
        if (!fs::exists(path)) {
            throw DataError("train: knowledge loss enabled but soft-label file '" + path +
                            "' is missing; run soft-labels first");
        }
        table = SoftLabelTable::load(path);
        table_ptr = &table;
    }

    const EncoderConfig enc = build_encoder_config(cfg, items, split, table_ptr, cfg.seed);
    OptimizerConfig opt = cfg.optimizer;
    opt.seed = derive_seed(cfg.seed, "train");

    const TrainResult result =
        train(items, split, enc, cfg.losses, opt, table_ptr, [](const EpochRecord& r) {
            std::ostringstream line;
            line << "epoch " << r.epoch << " lr " << r.lr << " total " << r.total << " val "
                 << r.val_metric;
            log_info(line.str());
        });

    const std::string checkpoint_path = (fs::path(cfg.output_dir) / "checkpoint.json").string();
    const std::string metrics_path = (fs::path(cfg.output_dir) / "metrics.jsonl").string();
    result.net.save_checkpoint(checkpoint_path);
    write_text_file(metrics_path, metrics_to_jsonl(result.state.history));

    json status;
    status["command"] = "train";
    status["status"] = "ok";
    status["checkpoint_path"] = checkpoint_path;
    status["metrics_path"] = metrics_path;
    status["epochs_run"] = result.epochs_run;
    status["best_epoch"] = result.state.best_epoch;
    status["best_val_metric"] = result.state.best_val_metric;
    return status;
}

json run_eval(const ExperimentConfig& cfg, const std::string& checkpoint_path) {
    const EncoderNetwork net = EncoderNetwork::load_checkpoint(checkpoint_path);
    const std::vector<DatasetItem> items = resolve_dataset(cfg);
    const SplitSpec split = resolve_split(cfg, items);
    if (net.config().input_dim != feature_dim_of(items)) {
        throw ShapeError("eval: checkpoint input_dim " + std::to_string(net.config().input_dim) +
                         " != dataset feature dim " + std::to_string(feature_dim_of(items)));
    }
    ensure_output_dir(cfg);
    const EmbeddingSet all = embed_items(net, items);

    MetricConfig metric_cfg;
    metric_cfg.k_values = cfg.eval.k_values;
    metric_cfg.map_k = cfg.eval.map_k;
    metric_cfg.score_missing_as_zero = cfg.eval.score_missing_as_zero;

    json modes_json;
    for (GalleryMode mode : cfg.eval.gallery_modes) {
        const GalleryReport report = evaluate_gallery(all, split, mode, metric_cfg);
        if (cfg.eval.oracle_check) oracle_cross_check(all, split, report, cfg.eval);
        modes_json[to_string(mode)] = metric_block_to_json(report, cfg.eval);
        if (cfg.eval.emit_topk > 0) {
            const std::string path =
                (fs::path(cfg.output_dir) / ("topk_" + to_string(mode) + ".tsv")).string();
            write_text_file(path, topk_lines(report, cfg.eval.emit_topk));
            modes_json[to_string(mode)]["topk_path"] = path;
        }
    }

    json results;
    json config_block;
    config_block["checkpoint"] = checkpoint_path;
    config_block["seed"] = cfg.seed;
    config_block["embed_dim"] = net.config().embed_dim;
    config_block["k_values"] = cfg.eval.k_values;
    config_block["map_k"] = cfg.eval.map_k;
    config_block["score_missing_as_zero"] = cfg.eval.score_missing_as_zero;
    {
        std::vector<std::string> norm_names;
        for (ApNormalizer n : cfg.eval.ap_normalizers) norm_names.push_back(to_string(n));
        config_block["ap_normalizers"] = norm_names;
    }
    config_block["data"] = cfg.dataset_path ? json(*cfg.dataset_path) : json("synthetic");
    results["config"] = std::move(config_block);
    results["gallery_modes"] = std::move(modes_json);

    const std::string results_path = (fs::path(cfg.output_dir) / "results.json").string();
    write_text_file(results_path, results.dump(2) + "\n");

    json status;
    status["command"] = "eval";
    status["status"] = "ok";
    status["results_path"] = results_path;
    status["gallery_modes"] = results["gallery_modes"];
    // Trim the bulky per-query lists from the stdout status line.
    for (auto& [name, block] : status["gallery_modes"].items()) {
        (void)name;
        block.erase("per_query_ap");
        block.erase("excluded_queries");
    }
    return status;
}

json run_ablate(const ExperimentConfig& cfg) {
    const std::vector<DatasetItem> items = resolve_dataset(cfg);
    const SplitSpec split = resolve_split(cfg, items);
    ensure_output_dir(cfg);

    std::vector<std::uint64_t> seeds = cfg.ablate_seeds;
    if (seeds.empty()) {
        for (std::uint64_t i = 0; i < 3; ++i) {
            seeds.push_back(derive_seed(cfg.seed, "ablate-seed-" + std::to_string(i)));
        }
    }

    struct Row {
        const char* name;
        bool quad, cls, know;
    };
    // The loss-combination grid: triplet baseline, then the quadruplet
    // variants up to the full objective.
    const Row rows[] = {
        {"triplet_baseline", false, false, false},
        {"quadruplet", true, false, false},
        {"quadruplet_cls", true, true, false},
        {"quadruplet_knowledge", true, false, true},
        {"quadruplet_cls_knowledge", true, true, true},
    };

    // Soft labels are extracted once per seed and shared across rows.
    std::vector<SoftLabelTable> tables;
    tables.reserve(seeds.size());
    for (std::uint64_t s : seeds) {
        tables.push_back(build_soft_labels(cfg, items, split, s, nullptr));
    }

    MetricConfig metric_cfg;
    metric_cfg.k_values = cfg.eval.k_values;
    metric_cfg.map_k = cfg.eval.map_k;
    metric_cfg.score_missing_as_zero = cfg.eval.score_missing_as_zero;

    json rows_json = json::array();
    std::ostringstream csv;
    csv << "# shared_seeds=";
    for (std::size_t i = 0; i < seeds.size(); ++i) csv << (i ? ";" : "") << seeds[i];
    csv << "\nconfig,quadruplet,cls,knowledge,mAP@all";
    csv << ",mAP@" << cfg.eval.map_k;
    for (std::size_t k : cfg.eval.k_values) csv << ",P@" << k;
    csv << ",per_seed_mAP@all\n";

    for (const Row& row : rows) {
        double sum_map_all = 0.0, sum_map_k = 0.0;
        std::map<std::size_t, double> sum_p;
        std::vector<double> per_seed_map;
        for (std::size_t si = 0; si < seeds.size(); ++si) {
            ExperimentConfig run_cfg = cfg;
            run_cfg.losses.enable_quadruplet = row.quad;
            run_cfg.losses.enable_cls = row.cls;
            run_cfg.losses.enable_knowledge = row.know;
            const SoftLabelTable* table_ptr = row.know ? &tables[si] : nullptr;
            const EncoderConfig enc =
                build_encoder_config(run_cfg, items, split, table_ptr, seeds[si]);
            OptimizerConfig opt = run_cfg.optimizer;
            opt.seed = derive_seed(seeds[si], "train");
            log_info(std::string("ablate: training ") + row.name + " with seed " +
                     std::to_string(seeds[si]));
            const TrainResult trained =
                train(items, split, enc, run_cfg.losses, opt, table_ptr, {});
            const EmbeddingSet all = embed_items(trained.net, items);
            const GalleryReport report =
                evaluate_gallery(all, split, GalleryMode::ZeroShot, metric_cfg);
            sum_map_all += report.map_all;
            sum_map_k += report.map_at_k_total_relevant.at(cfg.eval.map_k);
            for (const auto& [k, v] : report.p_at_k) sum_p[k] += v;
            per_seed_map.push_back(report.map_all);
        }
        const double inv = 1.0 / static_cast<double>(seeds.size());
        csv << row.name << ',' << (row.quad ? 1 : 0) << ',' << (row.cls ? 1 : 0) << ','
            << (row.know ? 1 : 0);
        char buf[40];
        auto fmt = [&buf](double v) {
            std::snprintf(buf, sizeof(buf), "%.6f", v);
            return std::string(buf);
        };
        csv << ',' << fmt(sum_map_all * inv) << ',' << fmt(sum_map_k * inv);
        for (std::size_t k : cfg.eval.k_values) csv << ',' << fmt(sum_p[k] * inv);
        csv << ',';
        for (std::size_t i = 0; i < per_seed_map.size(); ++i) {
            csv << (i ? ";" : "") << fmt(per_seed_map[i]);
        }
        csv << '\n';

        json row_json;
        row_json["config"] = row.name;
        row_json["quadruplet"] = row.quad;
        row_json["cls"] = row.cls;
        row_json["knowledge"] = row.know;
        row_json["mAP@all_mean"] = sum_map_all * inv;
        row_json["per_seed_mAP@all"] = per_seed_map;
        rows_json.push_back(std::move(row_json));
    }

    const std::string csv_path = (fs::path(cfg.output_dir) / "ablation.csv").string();
    write_text_file(csv_path, csv.str());

    json status;
    status["command"] = "ablate";
    status["status"] = "ok";
    status["csv_path"] = csv_path;
    status["seeds"] = seeds;
    status["rows"] = std::move(rows_json);
    return status;
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ParseError*>(&e) ||
        dynamic_cast<const ArgumentError*>(&e)) {
        return 2;
    }
    if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const KeyError*>(&e) ||
        dynamic_cast<const DomainError*>(&e) || dynamic_cast<const SamplingError*>(&e) ||
        dynamic_cast<const EvalError*>(&e)) {
        return 3;
    }
    if (dynamic_cast<const NumericError*>(&e)) return 4;
    if (dynamic_cast<const ShapeError*>(&e)) return 5;
    return 1;
}

}  // namespace zsrl
