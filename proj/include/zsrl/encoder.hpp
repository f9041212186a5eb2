#ifndef ZSRL_ENCODER_HPP
#define ZSRL_ENCODER_HPP

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "zsrl/ndcore.hpp"

namespace zsrl {

enum class Activation { None, Relu };

/// One affine layer with gradient buffers mirroring its parameters.
struct DenseLayer {
    Matrix weights;             // out x in
    std::vector<double> bias;   // out
    Activation activation = Activation::None;
    Matrix grad_weights;
    std::vector<double> grad_bias;

    std::size_t in_dim() const { return weights.cols(); }
    std::size_t out_dim() const { return weights.rows(); }
};

struct EncoderConfig {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden_dims;  // empty = heads read the input directly
    std::size_t embed_dim = 512;
    std::size_t num_seen_classes = 0;
    std::size_t teacher_class_count = 0;
    std::uint64_t init_seed = 0;

    /// Throws ConfigError on invalid dims; returns non-fatal warnings
    /// (e.g. an embedding size outside the usual 64/512/1024 choices).
    std::vector<std::string> validate() const;
};

/// Everything one forward pass needs for backprop: the input, per-layer
/// pre-activations and activations, and the three head outputs.
struct ForwardRecord {
    std::vector<double> input;
    std::vector<std::vector<double>> pre_activations;  // per backbone layer
    std::vector<std::vector<double>> activations;      // per backbone layer
    std::vector<double> embedding;   // head_sim output, the retrieval feature
    std::vector<double> cls_logits;  // head_cls output over seen classes
    std::vector<double> soft_logits; // head_soft output over teacher classes
};

/// The trainable encoder: a dense backbone whose output feeds three affine
/// heads. All quadruplet slots run through this single parameter set
/// (shared-weight streams), so weight sharing is structural.
class EncoderNetwork {
  public:
    static EncoderNetwork init(const EncoderConfig& config, Rng& rng);
    static EncoderNetwork init(const EncoderConfig& config);

    const EncoderConfig& config() const { return config_; }

    /// Pure: mutates nothing, same input gives an identical record.
    ForwardRecord forward(std::span<const double> x) const;

    /// Accumulates parameter gradients into the grad buffers and returns
    /// the gradient w.r.t. the input. Any of the three upstream gradients
    /// may be empty, meaning zero.
    std::vector<double> backward(const ForwardRecord& record,
                                 std::span<const double> d_embedding,
                                 std::span<const double> d_cls_logits,
                                 std::span<const double> d_soft_logits);

    void zero_grads();

    /// Embedding-only inference path; equals forward(x).embedding.
    std::vector<double> embed(std::span<const double> x) const;

    /// Visits every (parameter, gradient) pair in a fixed order:
    /// backbone layers first (weights then bias), then heads cls/sim/soft.
    void for_each_parameter(const std::function<void(std::span<double> value,
                                                     std::span<double> grad)>& fn);
    void for_each_parameter(
        const std::function<void(std::span<const double> value,
                                 std::span<const double> grad)>& fn) const;

    std::size_t parameter_count() const;

    std::vector<DenseLayer>& backbone() { return backbone_; }
    const std::vector<DenseLayer>& backbone() const { return backbone_; }
    DenseLayer& head_cls() { return head_cls_; }
    const DenseLayer& head_cls() const { return head_cls_; }
    DenseLayer& head_sim() { return head_sim_; }
    const DenseLayer& head_sim() const { return head_sim_; }
    DenseLayer& head_soft() { return head_soft_; }
    const DenseLayer& head_soft() const { return head_soft_; }

    /// Versioned JSON checkpoint; load(save(net)) is bit-exact.
    std::string to_checkpoint_json() const;
    static EncoderNetwork from_checkpoint_json(const std::string& text);
    void save_checkpoint(const std::string& path) const;
    static EncoderNetwork load_checkpoint(const std::string& path);

  private:
    EncoderConfig config_;
    std::vector<DenseLayer> backbone_;
    DenseLayer head_cls_;
    DenseLayer head_sim_;
    DenseLayer head_soft_;
};

}  // namespace zsrl

#endif  // ZSRL_ENCODER_HPP
