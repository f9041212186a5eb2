#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "zsrl/data.hpp"
#include "zsrl/distill.hpp"
#include "zsrl/errors.hpp"
#include "zsrl/trainer.hpp"

using namespace zsrl;

namespace {

EncoderConfig scalar_net_config() {
    EncoderConfig cfg;
    cfg.input_dim = 1;
    cfg.hidden_dims = {};
    cfg.embed_dim = 1;
    cfg.num_seen_classes = 1;
    cfg.teacher_class_count = 1;
    cfg.init_seed = 3;
    return cfg;
}

// Writes g into the sim-head weight gradient; everything else stays zero.
void set_sim_weight_grad(EncoderNetwork& net, double g) {
    net.zero_grads();
    net.head_sim().grad_weights.at(0, 0) = g;
}

std::span<const double> d_cls_row(const LogitLossResult& cls, std::size_t idx) {
    return cls.d_logits[idx];
}

struct TrainFixture {
    std::vector<DatasetItem> items;
    SplitSpec split;
    EncoderConfig encoder;
    LossConfig losses;
    OptimizerConfig optimizer;

    explicit TrainFixture(std::size_t num_classes = 5, std::size_t per_class = 12) {
        SynthConfig synth;
        synth.num_classes = num_classes;
        synth.sketches_per_class = per_class;
        synth.photos_per_class = per_class;
        synth.feature_dim = 8;
        synth.class_separation = 3.0;
        synth.sketch_transform_seed = 7;
        synth.sparsify_fraction = 0.125;
        synth.noise_sigma = 0.4;
        Rng rng(2718);
        items = generate(synth, rng);
        std::vector<int> classes;
        for (std::size_t c = 0; c < num_classes; ++c) classes.push_back(static_cast<int>(c));
        split = make_split_heldout(classes, {static_cast<int>(num_classes - 1)});

        encoder.input_dim = 8;
        encoder.hidden_dims = {8};
        encoder.embed_dim = 4;
        encoder.num_seen_classes = split.seen_classes.size();
        encoder.teacher_class_count = 4;
        encoder.init_seed = 11;

        losses.enable_knowledge = false;  // keep the fixture light
        optimizer.lr0 = 0.02;
        optimizer.max_epochs = 4;
        optimizer.early_stop_patience = 5;
        optimizer.batch_quads = 8;
        optimizer.seed = 99;
    }
};

}  // namespace

TEST_CASE("learning-rate schedule hits the decades exactly") {
    OptimizerConfig cfg;  // lr0 1e-4, factor 10, every 10 epochs
    for (std::size_t e = 0; e <= 9; ++e) CHECK(learning_rate(cfg, e) == 1e-4);
    for (std::size_t e = 10; e <= 19; ++e) CHECK(learning_rate(cfg, e) == 1e-5);
    for (std::size_t e = 20; e <= 24; ++e) CHECK(learning_rate(cfg, e) == 1e-6);
}

TEST_CASE("plain gradient descent when momentum and decay are off") {
    EncoderNetwork net = EncoderNetwork::init(scalar_net_config());
    net.head_sim().weights.at(0, 0) = 2.0;
    OptimizerConfig cfg;
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.0;
    cfg.lr0 = 0.5;
    TrainState state;
    init_velocity(state, net);
    set_sim_weight_grad(net, 1.0);
    sgd_step(net, state, cfg, cfg.lr0);
    CHECK(net.head_sim().weights.at(0, 0) == 1.5);
}

TEST_CASE("two momentum steps reproduce the hand iteration") {
    // w=1, grad=1, lr=0.1, momentum=0.9, decay=0:
    // v1=1, w=0.9; v2=1.9, w=0.9-0.19=0.71
    EncoderNetwork net = EncoderNetwork::init(scalar_net_config());
    net.head_sim().weights.at(0, 0) = 1.0;
    OptimizerConfig cfg;
    cfg.momentum = 0.9;
    cfg.weight_decay = 0.0;
    cfg.lr0 = 0.1;
    TrainState state;
    init_velocity(state, net);
    set_sim_weight_grad(net, 1.0);
    sgd_step(net, state, cfg, cfg.lr0);
    CHECK(net.head_sim().weights.at(0, 0) == doctest::Approx(0.9).epsilon(1e-15));
    set_sim_weight_grad(net, 1.0);
    sgd_step(net, state, cfg, cfg.lr0);
    CHECK(net.head_sim().weights.at(0, 0) == doctest::Approx(0.71).epsilon(1e-15));
}

TEST_CASE("weight decay shifts one step by exactly lr*decay*param") {
    auto one_step = [](double decay) {
        EncoderNetwork net = EncoderNetwork::init(scalar_net_config());
        net.head_sim().weights.at(0, 0) = 2.0;
        OptimizerConfig cfg;
        cfg.momentum = 0.0;
        cfg.weight_decay = decay;
        cfg.lr0 = 0.1;
        TrainState state;
        init_velocity(state, net);
        set_sim_weight_grad(net, 0.5);
        sgd_step(net, state, cfg, cfg.lr0);
        return net.head_sim().weights.at(0, 0);
    };
    const double without = one_step(0.0);
    const double with = one_step(5e-4);
    CHECK(std::abs((without - with) - 0.1 * 5e-4 * 2.0) <= 1e-15);
}

TEST_CASE("non-finite gradients abort the step") {
    EncoderNetwork net = EncoderNetwork::init(scalar_net_config());
    OptimizerConfig cfg;
    TrainState state;
    init_velocity(state, net);
    set_sim_weight_grad(net, std::nan(""));
    CHECK_THROWS_AS(sgd_step(net, state, cfg, cfg.lr0), NumericError);
}

TEST_CASE("validation accuracy: perfect, tie-break, and chance level") {
    // Identity features over 3 classes; cls head = identity => perfect.
    EncoderConfig cfg;
    cfg.input_dim = 3;
    cfg.hidden_dims = {};
    cfg.embed_dim = 2;
    cfg.num_seen_classes = 3;
    cfg.teacher_class_count = 2;
    EncoderNetwork net = EncoderNetwork::init(cfg);
    net.head_cls().weights = Matrix::identity(3);
    net.head_cls().bias = {0, 0, 0};

    std::vector<DatasetItem> val;
    for (int c = 0; c < 3; ++c) {
        std::vector<double> onehot(3, 0.0);
        onehot[static_cast<std::size_t>(c)] = 1.0;
        val.push_back({"v" + std::to_string(c), Domain::Photo, c, onehot});
    }
    const LabelMap labels(std::set<int>{0, 1, 2});
    CHECK(validation_accuracy(net, val, labels) == 1.0);

    // All-equal logits predict index 0 for everything.
    net.head_cls().weights = Matrix(3, 3, 0.0);
    net.head_cls().bias = {0, 0, 0};
    CHECK(validation_accuracy(net, val, labels) == doctest::Approx(1.0 / 3.0));

    CHECK_THROWS_AS(validation_accuracy(net, {}, labels), ConfigError);
}

TEST_CASE("untrained network scores near chance") {
    const std::size_t num_classes = 4, n = 2000;
    EncoderConfig cfg;
    cfg.input_dim = 6;
    cfg.hidden_dims = {6};
    cfg.embed_dim = 2;
    cfg.num_seen_classes = num_classes;
    cfg.teacher_class_count = 2;
    cfg.init_seed = 77;
    const EncoderNetwork net = EncoderNetwork::init(cfg);
    Rng rng(555);
    std::vector<DatasetItem> val;
    std::set<int> classes;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> f(6);
        for (double& x : f) x = rng.uniform(-1.0, 1.0);
        const int c = static_cast<int>(rng.uniform_int(num_classes));
        classes.insert(c);
        val.push_back({"v" + std::to_string(i), Domain::Photo, c, std::move(f)});
    }
    const double acc = validation_accuracy(net, val, LabelMap(std::set<int>{0, 1, 2, 3}));
    const double p = 1.0 / static_cast<double>(num_classes);
    const double sigma = std::sqrt(p * (1 - p) / static_cast<double>(n));
    CHECK(std::abs(acc - p) <= 3.0 * sigma);
}

TEST_CASE("frozen network stops after patience runs out") {
    TrainFixture fx;
    fx.optimizer.lr0 = 0.0;
    fx.optimizer.max_epochs = 25;
    fx.optimizer.early_stop_patience = 1;
    const TrainResult r = train(fx.items, fx.split, fx.encoder, fx.losses, fx.optimizer, nullptr);
    CHECK(r.epochs_run == 2);

    fx.optimizer.early_stop_patience = 5;
    const TrainResult r5 = train(fx.items, fx.split, fx.encoder, fx.losses, fx.optimizer, nullptr);
    CHECK(r5.epochs_run == 6);
}

TEST_CASE("training history is bit-identical across runs with one seed") {
    TrainFixture fx;
    const TrainResult a = train(fx.items, fx.split, fx.encoder, fx.losses, fx.optimizer, nullptr);
    const TrainResult b = train(fx.items, fx.split, fx.encoder, fx.losses, fx.optimizer, nullptr);
    REQUIRE(a.state.history.size() == b.state.history.size());
    for (std::size_t i = 0; i < a.state.history.size(); ++i) {
        CHECK(a.state.history[i].l_sim == b.state.history[i].l_sim);
        CHECK(a.state.history[i].l_cls == b.state.history[i].l_cls);
        CHECK(a.state.history[i].total == b.state.history[i].total);
        CHECK(a.state.history[i].val_metric == b.state.history[i].val_metric);
    }
    CHECK(metrics_to_jsonl(a.state.history) == metrics_to_jsonl(b.state.history));
}

TEST_CASE("total loss is non-increasing over the first steps on a fixed batch") {
    TrainFixture fx;
    EncoderNetwork net = EncoderNetwork::init(fx.encoder);
    TrainState state;
    init_velocity(state, net);
    OptimizerConfig opt = fx.optimizer;
    opt.lr0 = 1e-3;
    opt.momentum = 0.0;
    opt.weight_decay = 0.0;

    std::vector<DatasetItem> seen;
    for (const auto& item : fx.items) {
        if (fx.split.is_seen(item.class_id)) seen.push_back(item);
    }
    Rng rng(17);
    const auto quads = sample_batch(seen, 6, rng);
    const LabelMap labels(fx.split.seen_classes);

    auto run_batch = [&](bool apply) {
        Batch ea, ep, enp, ens;
        std::vector<ForwardRecord> ra, rp, rnp, rns;
        for (const Quadruplet& q : quads) {
            ra.push_back(net.forward(seen[q.anchor_sketch].features));
            rp.push_back(net.forward(seen[q.positive_photo].features));
            rnp.push_back(net.forward(seen[q.negative_photo].features));
            rns.push_back(net.forward(seen[q.negative_sketch].features));
            ea.push_back(ra.back().embedding);
            ep.push_back(rp.back().embedding);
            enp.push_back(rnp.back().embedding);
            ens.push_back(rns.back().embedding);
        }
        const QuadrupletResult sim = quadruplet_loss(ea, ep, enp, ens, fx.losses);
        Batch logits;
        std::vector<std::size_t> lab;
        for (std::size_t i = 0; i < quads.size(); ++i) {
            logits.push_back(ra[i].cls_logits);
            lab.push_back(labels.index_of(seen[quads[i].anchor_sketch].class_id));
            logits.push_back(rp[i].cls_logits);
            lab.push_back(labels.index_of(seen[quads[i].positive_photo].class_id));
            logits.push_back(rnp[i].cls_logits);
            lab.push_back(labels.index_of(seen[quads[i].negative_photo].class_id));
            logits.push_back(rns[i].cls_logits);
            lab.push_back(labels.index_of(seen[quads[i].negative_sketch].class_id));
        }
        const LogitLossResult cls = classification_loss(logits, lab);
        const double total = sim.value + cls.value;
        if (apply) {
            const std::span<const double> none;
            for (std::size_t i = 0; i < quads.size(); ++i) {
                net.backward(ra[i], sim.d_anchor[i], d_cls_row(cls, 4 * i), none);
                net.backward(rp[i], sim.d_positive[i], d_cls_row(cls, 4 * i + 1), none);
                net.backward(rnp[i], sim.d_negative_photo[i], d_cls_row(cls, 4 * i + 2), none);
                net.backward(rns[i], sim.d_negative_sketch[i], d_cls_row(cls, 4 * i + 3), none);
            }
            sgd_step(net, state, opt, opt.lr0);
        }
        return total;
    };

    double prev = run_batch(true);
    for (int step = 1; step < 5; ++step) {
        const double current = run_batch(true);
        CHECK(current <= prev + 1e-12);
        prev = current;
    }
}

TEST_CASE("best checkpoint metric equals the max over the epoch log") {
    TrainFixture fx;
    fx.optimizer.max_epochs = 6;
    const TrainResult r = train(fx.items, fx.split, fx.encoder, fx.losses, fx.optimizer, nullptr);
    double best = -1.0;
    for (const EpochRecord& rec : r.state.history) best = std::max(best, rec.val_metric);
    CHECK(r.state.best_val_metric == best);
    CHECK(r.state.history[r.state.best_epoch].val_metric == best);
}

TEST_CASE("training on easy synthetic data reaches high validation accuracy") {
    TrainFixture fx(5, 20);
    fx.optimizer.lr0 = 0.05;
    fx.optimizer.max_epochs = 12;
    const TrainResult r = train(fx.items, fx.split, fx.encoder, fx.losses, fx.optimizer, nullptr);
    CHECK(r.state.best_val_metric > 0.8);
}

TEST_CASE("knowledge loss requires covering soft labels") {
    TrainFixture fx;
    fx.losses.enable_knowledge = true;
    CHECK_THROWS_AS(train(fx.items, fx.split, fx.encoder, fx.losses, fx.optimizer, nullptr),
                    DataError);
}

TEST_CASE("retrieval-mAP validation mode runs and stays within [0,1]") {
    TrainFixture fx;
    fx.optimizer.validation_mode = ValidationMode::RetrievalMap;
    fx.optimizer.max_epochs = 2;
    const TrainResult r = train(fx.items, fx.split, fx.encoder, fx.losses, fx.optimizer, nullptr);
    for (const EpochRecord& rec : r.state.history) {
        CHECK(rec.val_metric >= 0.0);
        CHECK(rec.val_metric <= 1.0);
    }
}
