#ifndef ZSRL_DISTILL_HPP
#define ZSRL_DISTILL_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "zsrl/data.hpp"
#include "zsrl/ndcore.hpp"

namespace zsrl {

struct TeacherConfig {
    std::size_t hidden_width = 32;
    double learning_rate = 0.05;
    std::size_t max_epochs = 200;
    std::size_t batch_size = 32;
    double val_fraction = 0.1;
    double accuracy_gate = 0.9;  // stop once validation accuracy reaches this

    void validate() const;
};

/// Frozen photo-domain classifier used only to produce soft labels. One
/// hidden ReLU layer plus a linear output over the proxy classes;
/// parameters are immutable after pretraining.
class TeacherNetwork {
  public:
    /// Assembles a frozen teacher from explicit parameters (hidden layer is
    /// ReLU, output affine). proxy_classes orders the output dimensions.
    static TeacherNetwork make(Matrix hidden_weights, std::vector<double> hidden_bias,
                               Matrix output_weights, std::vector<double> output_bias,
                               std::vector<int> proxy_classes);

    /// Pre-softmax activations for one feature vector.
    std::vector<double> activations(std::span<const double> features) const;

    std::size_t output_dim() const { return output_.out_dim_rows(); }
    std::size_t input_dim() const { return hidden_.cols(); }
    const std::vector<int>& proxy_classes() const { return proxy_classes_; }
    double validation_accuracy() const { return val_accuracy_; }

  private:
    struct Affine {
        Matrix w;
        std::vector<double> b;
        std::size_t out_dim_rows() const { return w.rows(); }
    };

    Matrix hidden_;                 // hidden x input
    std::vector<double> hidden_b_;
    Affine output_;
    std::vector<int> proxy_classes_;
    double val_accuracy_ = 0.0;

    friend TeacherNetwork pretrain_teacher(const std::vector<DatasetItem>&,
                                           const std::vector<int>&, const TeacherConfig&, Rng&);
};

/// Trains the teacher on photo items with plain softmax cross-entropy until
/// the validation accuracy gate is reached or the epoch cap runs out, then
/// freezes it. Throws DomainError if any sketch item is passed.
TeacherNetwork pretrain_teacher(const std::vector<DatasetItem>& photo_items,
                                const std::vector<int>& proxy_classes, const TeacherConfig& cfg,
                                Rng& rng);

enum class SoftLabelMode {
    LogitMean,        // softmax( mean of pre-softmax activations )  [default]
    ProbabilityMean,  // mean of per-item softmax outputs
};

/// Per-class soft labels q(l(I)). Every row is a probability vector over
/// the teacher's class space; lookup is by class label, so a sketch and a
/// photo of the same class receive the identical vector.
class SoftLabelTable {
  public:
    SoftLabelTable() = default;
    SoftLabelTable(std::map<int, std::vector<double>> rows);

    const std::vector<double>& lookup(const DatasetItem& item) const;
    const std::vector<double>& lookup_class(int class_id) const;
    bool contains(int class_id) const { return rows_.count(class_id) > 0; }

    std::size_t size() const { return rows_.size(); }
    std::size_t label_dim() const { return label_dim_; }
    const std::map<int, std::vector<double>>& rows() const { return rows_; }

    /// TSV rows: class_id<TAB>p_0,p_1,...  Full double precision.
    void save(const std::string& path) const;
    static SoftLabelTable load(const std::string& path);

  private:
    std::map<int, std::vector<double>> rows_;
    std::size_t label_dim_ = 0;
};

/// One-time offline extraction: for each class in `classes`, average the
/// teacher activations of that class's photos and produce one soft label.
/// Photo items only; a class in `classes` with zero photos is a data error.
SoftLabelTable extract_soft_labels(const TeacherNetwork& teacher,
                                   const std::vector<DatasetItem>& photo_items,
                                   const std::vector<int>& classes,
                                   SoftLabelMode mode = SoftLabelMode::LogitMean);

/// Convenience overload covering exactly the classes present in the items.
SoftLabelTable extract_soft_labels(const TeacherNetwork& teacher,
                                   const std::vector<DatasetItem>& photo_items,
                                   SoftLabelMode mode = SoftLabelMode::LogitMean);

}  // namespace zsrl

#endif  // ZSRL_DISTILL_HPP
