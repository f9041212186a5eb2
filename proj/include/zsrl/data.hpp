#ifndef ZSRL_DATA_HPP
#define ZSRL_DATA_HPP

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "zsrl/ndcore.hpp"

namespace zsrl {

enum class Domain { Sketch, Photo };

std::string to_string(Domain d);
Domain domain_from_string(const std::string& s);

struct DatasetItem {
    std::string id;
    Domain domain = Domain::Photo;
    int class_id = 0;
    std::vector<double> features;
};

/// Synthetic two-domain dataset shape. Photos are class centroids plus
/// Gaussian noise; sketches pass a photo-like draw through one shared
/// linear map, add noise, then hard-zero a fraction of coordinates.
struct SynthConfig {
    std::size_t num_classes = 0;
    std::size_t sketches_per_class = 0;
    std::size_t photos_per_class = 0;
    std::size_t feature_dim = 0;
    double class_separation = 3.0;
    // Seed for the shared sketch-domain map; 0 selects the identity map.
    std::uint64_t sketch_transform_seed = 1;
    double sparsify_fraction = 0.0;  // in [0,1)
    double noise_sigma = 0.5;

    void validate() const;
};

std::vector<DatasetItem> generate(const SynthConfig& cfg, Rng& rng);

struct SplitSpec {
    std::set<int> seen_classes;
    std::set<int> unseen_classes;
    std::string protocol_name;
    std::uint64_t seed = 0;

    bool is_seen(int class_id) const { return seen_classes.count(class_id) > 0; }
    bool is_unseen(int class_id) const { return unseen_classes.count(class_id) > 0; }
};

/// Random partition: shuffle the classes with the given seed and hold out
/// `unseen_k` of them.
SplitSpec make_split_random(const std::vector<int>& classes, std::size_t unseen_k,
                            std::uint64_t seed);

/// Explicit held-out list of unseen classes (the ImageNet-orthogonal style
/// protocol); everything else is seen.
SplitSpec make_split_heldout(const std::vector<int>& classes, const std::vector<int>& heldout);

std::string split_to_json(const SplitSpec& split);
SplitSpec split_from_json(const std::string& text);
void save_split(const SplitSpec& split, const std::string& path);
SplitSpec load_split(const std::string& path);

/// One training tuple as indices into the item vector the batch was
/// sampled from.
struct Quadruplet {
    std::size_t anchor_sketch = 0;
    std::size_t positive_photo = 0;
    std::size_t negative_photo = 0;
    std::size_t negative_sketch = 0;
};

/// Domain-balanced sampling: anchor class uniform over the classes present,
/// negative classes uniform over the rest, photo and sketch negatives drawn
/// independently. `items` must contain seen-class items only, with at least
/// one sketch and one photo per class and at least two classes.
std::vector<Quadruplet> sample_batch(const std::vector<DatasetItem>& items,
                                     std::size_t batch_quads, Rng& rng);

/// Dataset rows: id<TAB>domain<TAB>class_id<TAB>f0,f1,...
void save_dataset_tsv(const std::vector<DatasetItem>& items, const std::string& path);
std::vector<DatasetItem> load_dataset_tsv(const std::string& path);

/// Sorted class ids mapped to contiguous indices; used to drive the
/// classification head over seen classes.
class LabelMap {
  public:
    LabelMap() = default;
    explicit LabelMap(const std::set<int>& classes);

    std::size_t size() const { return classes_.size(); }
    std::size_t index_of(int class_id) const;  // throws KeyError if absent
    bool contains(int class_id) const;
    int class_at(std::size_t index) const { return classes_.at(index); }
    const std::vector<int>& classes() const { return classes_; }

  private:
    std::vector<int> classes_;
};

std::vector<int> distinct_classes(const std::vector<DatasetItem>& items);

}  // namespace zsrl

#endif  // ZSRL_DATA_HPP
