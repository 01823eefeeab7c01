#pragma once

#include "buzz/dataio.hpp"
#include "buzz/target.hpp"
#include "buzz/tensor.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace buzz {

struct LayerSpec {
    enum class Kind { Conv, Pool, Dense, Relu, Tanh };
    Kind kind = Kind::Dense;
    std::size_t width = 0;  // conv filters or dense units
    std::size_t kernel = 0; // conv only, odd

    bool operator==(const LayerSpec&) const = default;
};

// Layers in order; the last one is a dense layer of width class_count whose
// output is read as logits.
struct NetworkSpec {
    std::vector<LayerSpec> layers;
    std::size_t class_count = 0;
    Shape input_shape; // {H,W,C}

    // Throws std::invalid_argument when layer shapes do not compose.
    void validate() const;

    // Parameter shapes in declaration order (weight then bias per layer).
    std::vector<Shape> parameter_shapes() const;
    std::size_t parameter_count() const;

    // Space separated tokens: conv<K>x<F>, pool, relu, tanh, dense<N>.
    std::string describe() const;

    bool operator==(const NetworkSpec&) const = default;
};

// Text form as produced by describe(). Validated.
NetworkSpec parse_network(const std::string& layers, const Shape& input_shape, std::size_t class_count);

// "small": conv3x8 relu pool conv3x8 relu pool dense64 relu dense<k>
// "g":     the full-width synthetic architecture (two conv blocks of 64 and
//          128 filters, two dense 256 layers)
// "mlp":   dense64 relu dense<k>
// "linear": dense<k>
NetworkSpec network_preset(const std::string& name, const Shape& input_shape, std::size_t class_count);

// Index of the largest entry per row; ties go to the lowest index.
std::vector<int> argmax_rows(const Tensor& matrix);

class Classifier : public TargetModel {
public:
    Classifier() = default;
    Classifier(NetworkSpec spec, std::vector<Tensor> params);

    // He-scaled Gaussian weights, zero biases.
    static Classifier initialize(const NetworkSpec& spec, std::uint64_t seed);

    const NetworkSpec& spec() const { return spec_; }
    const std::vector<Tensor>& params() const { return params_; }
    std::vector<Tensor>& mutable_params() { return params_; }

    std::vector<std::string> label_names;

    // Forward pass on a tape with explicit parameter handles.
    Var forward(const Var& x, std::span<const Var> params) const;
    // Parameters enter as constants; only x may carry a gradient.
    Var logits(const Var& x) const;

    // [N,k] pre-softmax outputs and softmax scores for a batch [N,H,W,C].
    Tensor logits(const Tensor& batch) const;
    Tensor scores(const Tensor& batch) const;

    // Cross-entropy gradient with respect to the input batch.
    Tensor loss_gradient(const Tensor& batch, std::span<const int> labels) const;

    std::vector<int> predict(const Tensor& batch) const override;
    std::size_t class_count() const override { return spec_.class_count; }
    Shape input_shape() const override { return spec_.input_shape; }
    std::vector<Tensor> network_loss_gradients(const Tensor& image, int label) const override;

    void save(const std::filesystem::path& path) const;
    // The spec must match the stored parameter shapes.
    static Classifier load(const NetworkSpec& spec, const std::filesystem::path& path);

private:
    void check_batch(const Tensor& batch) const;

    NetworkSpec spec_;
    std::vector<Tensor> params_;
};

struct TrainConfig {
    OptimizerKind optimizer = OptimizerKind::Adam;
    double learning_rate = 1e-4;
    std::size_t batch_size = 64;
    std::size_t epochs = 100;
    std::uint64_t seed = 0;

    void validate() const;
};

struct TrainReport {
    double initial_loss = 0.0; // mean training cross-entropy before the first step
    double final_loss = 0.0;   // same, after the last epoch
    std::vector<double> epoch_loss; // running mean over each epoch's batches
    double train_accuracy = 0.0;
};

// Applied to every image batch before the network sees it (secret layer
// transforms). Must map [N,H,W,C] to the network's input shape.
using InputMap = std::function<Tensor(const Tensor&)>;

Classifier train(const NetworkSpec& spec, const LabeledDataset& data, const TrainConfig& cfg,
                 TrainReport* report = nullptr, const InputMap& input_map = {});

// Mean cross-entropy over a dataset, chunked.
double mean_cross_entropy(const Classifier& model, const LabeledDataset& data, const InputMap& input_map = {});

} // namespace buzz
