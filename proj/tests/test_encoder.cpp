#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "oracles.hpp"
#include "zsrl/encoder.hpp"
#include "zsrl/errors.hpp"

using namespace zsrl;

namespace {

EncoderConfig tiny_config() {
    EncoderConfig cfg;
    cfg.input_dim = 3;
    cfg.hidden_dims = {4};
    cfg.embed_dim = 3;
    cfg.num_seen_classes = 3;
    cfg.teacher_class_count = 4;
    cfg.init_seed = 2024;
    return cfg;
}

void set_all_params(EncoderNetwork& net, double value) {
    net.for_each_parameter([&](std::span<double> p, std::span<double>) {
        for (double& x : p) x = value;
    });
}

std::vector<double> flatten_params(const EncoderNetwork& net) {
    std::vector<double> out;
    net.for_each_parameter([&](std::span<const double> p, std::span<const double>) {
        out.insert(out.end(), p.begin(), p.end());
    });
    return out;
}

}  // namespace

TEST_CASE("init is deterministic for a fixed seed") {
    const EncoderNetwork a = EncoderNetwork::init(tiny_config());
    const EncoderNetwork b = EncoderNetwork::init(tiny_config());
    const auto pa = flatten_params(a);
    const auto pb = flatten_params(b);
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i] == pb[i]);
}

TEST_CASE("init validates dimensions and warns on unusual embed sizes") {
    EncoderConfig cfg = tiny_config();
    cfg.input_dim = 0;
    CHECK_THROWS_AS(EncoderNetwork::init(cfg), ConfigError);

    cfg = tiny_config();
    cfg.embed_dim = 512;
    CHECK(cfg.validate().empty());
    cfg.embed_dim = 100;
    CHECK(cfg.validate().size() == 1);
}

TEST_CASE("empty hidden_dims gives a single linear backbone") {
    EncoderConfig cfg = tiny_config();
    cfg.hidden_dims = {};
    const EncoderNetwork net = EncoderNetwork::init(cfg);
    const ForwardRecord rec = net.forward(std::vector<double>{1.0, 2.0, 3.0});
    CHECK(rec.embedding.size() == cfg.embed_dim);
    CHECK(rec.pre_activations.empty());
}

TEST_CASE("zero parameters give zero outputs") {
    EncoderNetwork net = EncoderNetwork::init(tiny_config());
    set_all_params(net, 0.0);
    const ForwardRecord rec = net.forward(std::vector<double>{0.3, -0.7, 1.1});
    for (double v : rec.embedding) CHECK(v == 0.0);
    for (double v : rec.cls_logits) CHECK(v == 0.0);
    for (double v : rec.soft_logits) CHECK(v == 0.0);
}

TEST_CASE("forward is pure") {
    const EncoderNetwork net = EncoderNetwork::init(tiny_config());
    const std::vector<double> x{0.5, -1.0, 2.0};
    const ForwardRecord a = net.forward(x);
    const ForwardRecord b = net.forward(x);
    REQUIRE(a.embedding.size() == b.embedding.size());
    for (std::size_t i = 0; i < a.embedding.size(); ++i) CHECK(a.embedding[i] == b.embedding[i]);
    for (std::size_t i = 0; i < a.cls_logits.size(); ++i) CHECK(a.cls_logits[i] == b.cls_logits[i]);
}

TEST_CASE("hand-computed forward on a 2x2 case") {
    EncoderConfig cfg;
    cfg.input_dim = 2;
    cfg.hidden_dims = {2};
    cfg.embed_dim = 2;
    cfg.num_seen_classes = 2;
    cfg.teacher_class_count = 2;
    EncoderNetwork net = EncoderNetwork::init(cfg);
    // backbone: W=[[1,-1],[2,1]], b=[0,-1]; x=[1,2] -> pre=[-1,3] -> relu [0,3]
    net.backbone()[0].weights = Matrix(2, 2, {1, -1, 2, 1});
    net.backbone()[0].bias = {0, -1};
    // head_sim: W=[[1,1],[0,2]], b=[0,0] -> embedding [3,6]
    net.head_sim().weights = Matrix(2, 2, {1, 1, 0, 2});
    net.head_sim().bias = {0, 0};
    // head_cls: W=[[1,0],[0,1]], b=[0.5,-0.5] -> logits [0.5, 2.5]
    net.head_cls().weights = Matrix(2, 2, {1, 0, 0, 1});
    net.head_cls().bias = {0.5, -0.5};
    const ForwardRecord rec = net.forward(std::vector<double>{1.0, 2.0});
    CHECK(rec.pre_activations[0][0] == -1.0);
    CHECK(rec.pre_activations[0][1] == 3.0);
    CHECK(rec.activations[0][0] == 0.0);
    CHECK(rec.activations[0][1] == 3.0);
    CHECK(rec.embedding[0] == 3.0);
    CHECK(rec.embedding[1] == 6.0);
    CHECK(rec.cls_logits[0] == 0.5);
    CHECK(rec.cls_logits[1] == 2.5);
}

TEST_CASE("forward rejects wrong input length") {
    const EncoderNetwork net = EncoderNetwork::init(tiny_config());
    CHECK_THROWS_AS(net.forward(std::vector<double>{1.0, 2.0}), ShapeError);
}

TEST_CASE("backward rejects mis-sized upstream gradients") {
    EncoderNetwork net = EncoderNetwork::init(tiny_config());
    const ForwardRecord rec = net.forward(std::vector<double>{0.4, 0.5, -0.2});
    CHECK_THROWS_AS(net.backward(rec, std::vector<double>{1.0}, {}, {}), ShapeError);
    CHECK_THROWS_AS(net.backward(rec, {}, std::vector<double>{1.0, 2.0}, {}), ShapeError);
}

TEST_CASE("zero upstream gradients accumulate nothing") {
    EncoderNetwork net = EncoderNetwork::init(tiny_config());
    const ForwardRecord rec = net.forward(std::vector<double>{0.4, 0.5, -0.2});
    const std::vector<double> z_emb(3, 0.0), z_cls(3, 0.0), z_soft(4, 0.0);
    net.backward(rec, z_emb, z_cls, z_soft);
    for (double g : oracles::collect_grads(net)) CHECK(g == 0.0);
}

TEST_CASE("backward matches central finite differences") {
    EncoderNetwork net = EncoderNetwork::init(tiny_config());
    REQUIRE(net.parameter_count() <= 200);
    const std::vector<double> x{0.7, -0.3, 0.9};
    // Fixed linear readout of the three heads makes the upstream gradients
    // the readout weights themselves.
    const std::vector<double> w_emb{0.3, -0.8, 0.5};
    const std::vector<double> w_cls{1.1, 0.2, -0.4};
    const std::vector<double> w_soft{-0.6, 0.9, 0.1, 0.7};
    auto eval = [&]() {
        const ForwardRecord rec = net.forward(x);
        double f = 0.0;
        for (std::size_t i = 0; i < w_emb.size(); ++i) f += w_emb[i] * rec.embedding[i];
        for (std::size_t i = 0; i < w_cls.size(); ++i) f += w_cls[i] * rec.cls_logits[i];
        for (std::size_t i = 0; i < w_soft.size(); ++i) f += w_soft[i] * rec.soft_logits[i];
        return f;
    };
    // The seed keeps every pre-activation away from the ReLU kink.
    const ForwardRecord rec = net.forward(x);
    for (const auto& pre : rec.pre_activations) {
        for (double z : pre) REQUIRE(std::abs(z) > 1e-3);
    }
    net.zero_grads();
    net.backward(rec, w_emb, w_cls, w_soft);
    const auto analytic = oracles::collect_grads(net);
    const auto fd = oracles::fd_gradient_params(net, eval);
    CHECK(oracles::max_relative_error(analytic, fd) < 1e-5);
}

TEST_CASE("backward returns the input gradient") {
    EncoderNetwork net = EncoderNetwork::init(tiny_config());
    std::vector<double> x{0.7, -0.3, 0.9};
    const std::vector<double> w_emb{0.3, -0.8, 0.5};
    auto eval = [&]() {
        const ForwardRecord rec = net.forward(x);
        double f = 0.0;
        for (std::size_t i = 0; i < w_emb.size(); ++i) f += w_emb[i] * rec.embedding[i];
        return f;
    };
    const ForwardRecord rec = net.forward(x);
    const auto d_input = net.backward(rec, w_emb, {}, {});
    const auto fd = oracles::fd_gradient(x, eval);
    CHECK(oracles::max_relative_error(d_input, fd) < 1e-5);
}

TEST_CASE("backward is linear in the upstream gradient") {
    EncoderNetwork net = EncoderNetwork::init(tiny_config());
    const ForwardRecord rec = net.forward(std::vector<double>{0.1, 0.2, 0.3});
    Rng rng(3);
    std::vector<double> g1(3), g2(3), g12(3);
    for (std::size_t i = 0; i < 3; ++i) {
        g1[i] = rng.uniform(-1.0, 1.0);
        g2[i] = rng.uniform(-1.0, 1.0);
        g12[i] = g1[i] + g2[i];
    }
    net.zero_grads();
    net.backward(rec, g1, {}, {});
    net.backward(rec, g2, {}, {});
    const auto separate = oracles::collect_grads(net);
    net.zero_grads();
    net.backward(rec, g12, {}, {});
    const auto combined = oracles::collect_grads(net);
    for (std::size_t i = 0; i < separate.size(); ++i) {
        CHECK(std::abs(separate[i] - combined[i]) <= 1e-10);
    }
}

TEST_CASE("gradient accumulation across batches equals one combined batch") {
    EncoderNetwork net = EncoderNetwork::init(tiny_config());
    const std::vector<double> x1{0.5, 0.1, -0.4}, x2{-0.2, 0.8, 0.3};
    const std::vector<double> g{0.7, -0.1, 0.4};
    // Two single-item batches, gradients summed by hand.
    net.zero_grads();
    net.backward(net.forward(x1), g, {}, {});
    const auto batch1 = oracles::collect_grads(net);
    net.zero_grads();
    net.backward(net.forward(x2), g, {}, {});
    const auto batch2 = oracles::collect_grads(net);
    // One combined batch, accumulated in the buffers.
    net.zero_grads();
    net.backward(net.forward(x1), g, {}, {});
    net.backward(net.forward(x2), g, {}, {});
    const auto combined = oracles::collect_grads(net);
    for (std::size_t i = 0; i < combined.size(); ++i) {
        CHECK(std::abs(combined[i] - (batch1[i] + batch2[i])) <= 1e-12);
    }
}

TEST_CASE("zero_grads clears every buffer") {
    EncoderNetwork net = EncoderNetwork::init(tiny_config());
    const ForwardRecord rec = net.forward(std::vector<double>{1.0, 1.0, 1.0});
    net.backward(rec, std::vector<double>{1, 1, 1}, {}, {});
    net.zero_grads();
    for (double g : oracles::collect_grads(net)) CHECK(g == 0.0);
}

TEST_CASE("embedding-only path agrees with the full forward") {
    const EncoderNetwork net = EncoderNetwork::init(tiny_config());
    const std::vector<double> x{0.9, -0.5, 0.2};
    const auto via_forward = net.forward(x).embedding;
    const auto via_embed = net.embed(x);
    REQUIRE(via_forward.size() == via_embed.size());
    for (std::size_t i = 0; i < via_embed.size(); ++i) CHECK(via_forward[i] == via_embed[i]);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
    const EncoderNetwork net = EncoderNetwork::init(tiny_config());
    const std::string text = net.to_checkpoint_json();
    const EncoderNetwork loaded = EncoderNetwork::from_checkpoint_json(text);
    const auto pa = flatten_params(net);
    const auto pb = flatten_params(loaded);
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i] == pb[i]);
    CHECK(loaded.config().embed_dim == net.config().embed_dim);
    CHECK(loaded.config().hidden_dims == net.config().hidden_dims);

    const std::string path =
        (std::filesystem::temp_directory_path() / "zsrl_test_checkpoint.json").string();
    net.save_checkpoint(path);
    const EncoderNetwork from_file = EncoderNetwork::load_checkpoint(path);
    const auto pc = flatten_params(from_file);
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i] == pc[i]);
    std::filesystem::remove(path);
}

TEST_CASE("checkpoint rejects malformed documents") {
    CHECK_THROWS_AS(EncoderNetwork::from_checkpoint_json("{not json"), ParseError);
    CHECK_THROWS_AS(EncoderNetwork::from_checkpoint_json("{\"format\":\"other\"}"), ParseError);
}
