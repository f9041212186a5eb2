#include "zsrl/encoder.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "zsrl/errors.hpp"

namespace zsrl {

namespace {

DenseLayer make_layer(std::size_t out_dim, std::size_t in_dim, Activation act, Rng& rng) {
    DenseLayer layer;
    layer.weights = Matrix(out_dim, in_dim);
    layer.bias.assign(out_dim, 0.0);
    layer.activation = act;
    // Scaled uniform init, +-sqrt(6/(fan_in+fan_out)).
    const double bound = std::sqrt(6.0 / static_cast<double>(in_dim + out_dim));
    for (double& w : layer.weights.data()) w = rng.uniform(-bound, bound);
    layer.grad_weights = Matrix(out_dim, in_dim, 0.0);
    layer.grad_bias.assign(out_dim, 0.0);
    return layer;
}

void affine_forward(const DenseLayer& layer, std::span<const double> x,
                    std::vector<double>& out) {
    out = matvec(layer.weights, x);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += layer.bias[i];
}

// Accumulates gradients for one affine layer given d(output) and the layer
// input; returns d(input) contribution via matvec_transposed.
void affine_backward(DenseLayer& layer, std::span<const double> input,
                     std::span<const double> d_out, std::vector<double>& d_input_acc) {
    for (std::size_t i = 0; i < layer.out_dim(); ++i) {
        const double g = d_out[i];
        if (g != 0.0) {
            auto grow = layer.grad_weights.row(i);
            for (std::size_t j = 0; j < layer.in_dim(); ++j) grow[j] += g * input[j];
        }
        layer.grad_bias[i] += g;
    }
    const auto contribution = matvec_transposed(layer.weights, d_out);
    for (std::size_t j = 0; j < contribution.size(); ++j) d_input_acc[j] += contribution[j];
}

constexpr int kCheckpointVersion = 1;

}  // namespace

std::vector<std::string> EncoderConfig::validate() const {
    if (input_dim == 0) throw ConfigError("encoder: input_dim must be >= 1");
    if (embed_dim == 0) throw ConfigError("encoder: embed_dim must be >= 1");
    if (num_seen_classes == 0) throw ConfigError("encoder: num_seen_classes must be >= 1");
    if (teacher_class_count == 0) throw ConfigError("encoder: teacher_class_count must be >= 1");
    for (std::size_t d : hidden_dims) {
        if (d == 0) throw ConfigError("encoder: hidden dims must be >= 1");
    }
    std::vector<std::string> warnings;
    if (embed_dim != 64 && embed_dim != 512 && embed_dim != 1024) {
        warnings.push_back("encoder: embed_dim " + std::to_string(embed_dim) +
                           " is outside the usual {64, 512, 1024}");
    }
    return warnings;
}

EncoderNetwork EncoderNetwork::init(const EncoderConfig& config, Rng& rng) {
    config.validate();
    EncoderNetwork net;
    net.config_ = config;
    std::size_t in_dim = config.input_dim;
    for (std::size_t h : config.hidden_dims) {
        net.backbone_.push_back(make_layer(h, in_dim, Activation::Relu, rng));
        in_dim = h;
    }
    net.head_cls_ = make_layer(config.num_seen_classes, in_dim, Activation::None, rng);
    net.head_sim_ = make_layer(config.embed_dim, in_dim, Activation::None, rng);
    net.head_soft_ = make_layer(config.teacher_class_count, in_dim, Activation::None, rng);
    return net;
}

EncoderNetwork EncoderNetwork::init(const EncoderConfig& config) {
    Rng rng(config.init_seed);
    return init(config, rng);
}

ForwardRecord EncoderNetwork::forward(std::span<const double> x) const {
    if (x.size() != config_.input_dim) {
        throw ShapeError("encoder forward: input length " + std::to_string(x.size()) +
                         " != input_dim " + std::to_string(config_.input_dim));
    }
    ForwardRecord record;
    record.input.assign(x.begin(), x.end());
    std::span<const double> current = record.input;
    for (const DenseLayer& layer : backbone_) {
        std::vector<double> pre;
        affine_forward(layer, current, pre);
        std::vector<double> act = pre;
        if (layer.activation == Activation::Relu) {
            for (double& v : act) v = v > 0.0 ? v : 0.0;
        }
        record.pre_activations.push_back(std::move(pre));
        record.activations.push_back(std::move(act));
        current = record.activations.back();
    }
    affine_forward(head_sim_, current, record.embedding);
    affine_forward(head_cls_, current, record.cls_logits);
    affine_forward(head_soft_, current, record.soft_logits);
    if (!all_finite(record.embedding) || !all_finite(record.cls_logits) ||
        !all_finite(record.soft_logits)) {
        throw NumericError("encoder forward: non-finite head output");
    }
    return record;
}

std::vector<double> EncoderNetwork::backward(const ForwardRecord& record,
                                             std::span<const double> d_embedding,
                                             std::span<const double> d_cls_logits,
                                             std::span<const double> d_soft_logits) {
    if (!d_embedding.empty() && d_embedding.size() != config_.embed_dim) {
        throw ShapeError("encoder backward: d_embedding length mismatch");
    }
    if (!d_cls_logits.empty() && d_cls_logits.size() != config_.num_seen_classes) {
        throw ShapeError("encoder backward: d_cls_logits length mismatch");
    }
    if (!d_soft_logits.empty() && d_soft_logits.size() != config_.teacher_class_count) {
        throw ShapeError("encoder backward: d_soft_logits length mismatch");
    }
    std::span<const double> backbone_out =
        backbone_.empty() ? std::span<const double>(record.input)
                          : std::span<const double>(record.activations.back());

    std::vector<double> d_backbone(backbone_out.size(), 0.0);
    if (!d_embedding.empty()) affine_backward(head_sim_, backbone_out, d_embedding, d_backbone);
    if (!d_cls_logits.empty()) affine_backward(head_cls_, backbone_out, d_cls_logits, d_backbone);
    if (!d_soft_logits.empty()) affine_backward(head_soft_, backbone_out, d_soft_logits, d_backbone);

    std::vector<double> d_current = std::move(d_backbone);
    for (std::size_t li = backbone_.size(); li-- > 0;) {
        DenseLayer& layer = backbone_[li];
        if (layer.activation == Activation::Relu) {
            const auto& pre = record.pre_activations[li];
            // Subgradient 0 at the kink, matching max(.,0) convention.
            for (std::size_t i = 0; i < d_current.size(); ++i) {
                if (pre[i] <= 0.0) d_current[i] = 0.0;
            }
        }
        std::span<const double> layer_input =
            li == 0 ? std::span<const double>(record.input)
                    : std::span<const double>(record.activations[li - 1]);
        std::vector<double> d_input(layer_input.size(), 0.0);
        affine_backward(layer, layer_input, d_current, d_input);
        d_current = std::move(d_input);
    }
    return d_current;
}

void EncoderNetwork::zero_grads() {
    for_each_parameter([](std::span<double>, std::span<double> grad) {
        std::fill(grad.begin(), grad.end(), 0.0);
    });
}

std::vector<double> EncoderNetwork::embed(std::span<const double> x) const {
    if (x.size() != config_.input_dim) {
        throw ShapeError("encoder embed: input length " + std::to_string(x.size()) +
                         " != input_dim " + std::to_string(config_.input_dim));
    }
    std::vector<double> current(x.begin(), x.end());
    for (const DenseLayer& layer : backbone_) {
        std::vector<double> next;
        affine_forward(layer, current, next);
        if (layer.activation == Activation::Relu) {
            for (double& v : next) v = v > 0.0 ? v : 0.0;
        }
        current = std::move(next);
    }
    std::vector<double> out;
    affine_forward(head_sim_, current, out);
    return out;
}

void EncoderNetwork::for_each_parameter(
    const std::function<void(std::span<double>, std::span<double>)>& fn) {
    auto visit = [&](DenseLayer& layer) {
        fn(layer.weights.data(), layer.grad_weights.data());
        fn(layer.bias, layer.grad_bias);
    };
    for (DenseLayer& layer : backbone_) visit(layer);
    visit(head_cls_);
    visit(head_sim_);
    visit(head_soft_);
}

void EncoderNetwork::for_each_parameter(
    const std::function<void(std::span<const double>, std::span<const double>)>& fn) const {
    auto visit = [&](const DenseLayer& layer) {
        fn(layer.weights.data(), layer.grad_weights.data());
        fn(layer.bias, layer.grad_bias);
    };
    for (const DenseLayer& layer : backbone_) visit(layer);
    visit(head_cls_);
    visit(head_sim_);
    visit(head_soft_);
}

std::size_t EncoderNetwork::parameter_count() const {
    std::size_t n = 0;
    for_each_parameter([&](std::span<const double> value, std::span<const double>) {
        n += value.size();
    });
    return n;
}

namespace {

nlohmann::json layer_to_json(const DenseLayer& layer) {
    nlohmann::json j;
    j["rows"] = layer.weights.rows();
    j["cols"] = layer.weights.cols();
    j["weights"] = std::vector<double>(layer.weights.data().begin(), layer.weights.data().end());
    j["bias"] = layer.bias;
    j["activation"] = layer.activation == Activation::Relu ? "relu" : "none";
    return j;
}

DenseLayer layer_from_json(const nlohmann::json& j) {
    DenseLayer layer;
    const auto rows = j.at("rows").get<std::size_t>();
    const auto cols = j.at("cols").get<std::size_t>();
    layer.weights = Matrix(rows, cols, j.at("weights").get<std::vector<double>>());
    layer.bias = j.at("bias").get<std::vector<double>>();
    if (layer.bias.size() != rows) throw ParseError("checkpoint: bias length mismatch");
    const std::string act = j.at("activation").get<std::string>();
    if (act == "relu") {
        layer.activation = Activation::Relu;
    } else if (act == "none") {
        layer.activation = Activation::None;
    } else {
        throw ParseError("checkpoint: unknown activation '" + act + "'");
    }
    layer.grad_weights = Matrix(rows, cols, 0.0);
    layer.grad_bias.assign(rows, 0.0);
    return layer;
}

}  // namespace

std::string EncoderNetwork::to_checkpoint_json() const {
    nlohmann::json j;
    j["format"] = "zsrl-checkpoint";
    j["version"] = kCheckpointVersion;
    j["config"] = {
        {"input_dim", config_.input_dim},
        {"hidden_dims", config_.hidden_dims},
        {"embed_dim", config_.embed_dim},
        {"num_seen_classes", config_.num_seen_classes},
        {"teacher_class_count", config_.teacher_class_count},
        {"init_seed", config_.init_seed},
    };
    nlohmann::json layers = nlohmann::json::array();
    for (const DenseLayer& layer : backbone_) layers.push_back(layer_to_json(layer));
    j["backbone"] = std::move(layers);
    j["head_cls"] = layer_to_json(head_cls_);
    j["head_sim"] = layer_to_json(head_sim_);
    j["head_soft"] = layer_to_json(head_soft_);
    return j.dump(2) + "\n";
}

EncoderNetwork EncoderNetwork::from_checkpoint_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("checkpoint: ") + e.what());
    }
    try {
        if (j.at("format").get<std::string>() != "zsrl-checkpoint") {
            throw ParseError("checkpoint: unrecognized format field");
        }
        if (j.at("version").get<int>() != kCheckpointVersion) {
            throw ParseError("checkpoint: unsupported version");
        }
        EncoderNetwork net;
        const auto& c = j.at("config");
        net.config_.input_dim = c.at("input_dim").get<std::size_t>();
        net.config_.hidden_dims = c.at("hidden_dims").get<std::vector<std::size_t>>();
        net.config_.embed_dim = c.at("embed_dim").get<std::size_t>();
        net.config_.num_seen_classes = c.at("num_seen_classes").get<std::size_t>();
        net.config_.teacher_class_count = c.at("teacher_class_count").get<std::size_t>();
        net.config_.init_seed = c.at("init_seed").get<std::uint64_t>();
        net.config_.validate();
        for (const auto& lj : j.at("backbone")) net.backbone_.push_back(layer_from_json(lj));
        net.head_cls_ = layer_from_json(j.at("head_cls"));
        net.head_sim_ = layer_from_json(j.at("head_sim"));
        net.head_soft_ = layer_from_json(j.at("head_soft"));
        return net;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint: ") + e.what());
    }
}

void EncoderNetwork::save_checkpoint(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("checkpoint: cannot open '" + path + "' for writing");
    out << to_checkpoint_json();
    if (!out.good()) throw DataError("checkpoint: write to '" + path + "' failed");
}

EncoderNetwork EncoderNetwork::load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("checkpoint: cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return from_checkpoint_json(buf.str());
}

}  // namespace zsrl
