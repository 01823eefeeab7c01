#pragma once

#include "buzz/dataio.hpp"
#include "buzz/models.hpp"
#include "buzz/profile.hpp"
#include "buzz/target.hpp"
#include "buzz/transforms.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace buzz {

// argmax of a score vector, or kAbstain when theta is set and max < theta.
int threshold_label(std::span<const double> scores, std::optional<double> theta);

// Votes with quorum kappa. kAbstain votes never count toward a class. The
// class with the most votes wins if it has at least kappa of them; a tie for
// the most votes gives kAbstain.
int vote(std::span<const int> labels, std::size_t kappa);

// (c, i, w) plus an optional confidence cutoff.
struct ProtectedLayer {
    LinearTransform transform;
    ResizeOp resize;
    Classifier network;
    std::optional<double> threshold;
    std::uint64_t train_seed = 0; // recorded in bundle manifests

    void validate() const;

    // i(c(x)) for a batch of source images.
    Tensor preprocess(const Tensor& batch) const;
    Var preprocess(const Var& batch) const;

    Tensor scores(const Tensor& batch) const;
    std::vector<int> labels(const Tensor& batch) const;
};

struct DefenseVariant {
    enum class Kind {
        Vanilla, // the plain classifier
        Buzz,    // m transformed layers, unanimous
        Bt,      // the plain classifier with a confidence cutoff
        Bt2,     // two transformed layers; the resized one has a cutoff
    };
    Kind kind = Kind::Vanilla;
    std::size_t m = 1;
    double theta = 0.0;

    std::string name() const;
    // Positions in the profile's resize set, one per layer.
    std::vector<std::size_t> resize_indices() const;
    std::size_t layer_count() const;

    bool operator==(const DefenseVariant&) const = default;
};

// "vanilla", "buzz-1", "buzz-2", "buzz-4", "buzz-8", "bt-<theta>",
// "bt2-<theta>"; case-insensitive. "bt2-default" takes the profile cutoff.
DefenseVariant parse_variant(const std::string& name, const DatasetProfile& profile);

class BuzzDefense : public TargetModel {
public:
    BuzzDefense() = default;
    BuzzDefense(std::string variant, std::vector<ProtectedLayer> layers, std::size_t kappa);

    const std::string& variant() const { return variant_; }
    const std::vector<ProtectedLayer>& layers() const { return layers_; }
    std::size_t kappa() const { return kappa_; }
    void set_kappa(std::size_t kappa);

    // [m][N] per-layer labels (kAbstain where a cutoff rejects).
    std::vector<std::vector<int>> layer_labels(const Tensor& batch) const;

    std::vector<int> predict(const Tensor& batch) const override;
    std::size_t class_count() const override;
    Shape input_shape() const override;
    // One gradient per layer, each taken through that layer's c and i.
    std::vector<Tensor> network_loss_gradients(const Tensor& image, int label) const override;

private:
    std::string variant_;
    std::vector<ProtectedLayer> layers_;
    std::size_t kappa_ = 1;
};

// Trains and caches protected layers so that variants sharing a resize index
// share the same layer (BUZz-2 is a subset of BUZz-8, BT2 reuses BUZz-2).
class DefenseFactory {
public:
    struct Options {
        DatasetProfile profile;
        std::string network_preset = "small";
        TrainConfig train;
        std::uint64_t seed = 0;
    };

    DefenseFactory(Options options, const LabeledDataset& train_data);

    // Untransformed classifier trained on the raw data.
    const Classifier& vanilla();
    // Layer for a resize index, without threshold.
    const ProtectedLayer& layer(std::size_t resize_index);
    BuzzDefense build(const DefenseVariant& variant);

    std::uint64_t transform_seed(std::size_t resize_index) const;
    std::uint64_t train_seed(std::size_t resize_index) const;

    const Options& options() const { return options_; }
    // Progress lines ("trained layer 3 ...").
    std::function<void(const std::string&)> log;

private:
    Options options_;
    const LabeledDataset& data_;
    std::optional<Classifier> vanilla_;
    std::map<std::size_t, ProtectedLayer> layers_;
};

BuzzDefense build_buzz(const DatasetProfile& profile, const LabeledDataset& base_data, const DefenseVariant& variant,
                       std::uint64_t seed, const TrainConfig& train, const std::string& network_preset = "small");

// Bundle directory: manifest.ini, layer_<j>.bzw (network parameters),
// transform_<j>.bzw (A as [C,W,W] then b as [C,H,W]).
void save_bundle(const BuzzDefense& defense, const std::filesystem::path& dir,
                 const std::vector<std::pair<std::string, std::string>>& extra = {});
BuzzDefense load_bundle(const std::filesystem::path& dir);

} // namespace buzz
