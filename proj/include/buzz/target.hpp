#pragma once

#include "buzz/tensor.hpp"

#include <vector>

namespace buzz {

// Output of a model that may refuse to classify (the adversarial label).
inline constexpr int kAbstain = -1;

inline bool is_abstain(int label) { return label == kAbstain; }

// Anything that maps images to labels: a plain classifier or a defense.
class TargetModel {
public:
    virtual ~TargetModel() = default;

    // batch: [N,H,W,C]. Entries are class indices or kAbstain.
    virtual std::vector<int> predict(const Tensor& batch) const = 0;

    virtual std::size_t class_count() const = 0;

    // {H,W,C} of one input image.
    virtual Shape input_shape() const = 0;

    // Cross-entropy input gradient of every underlying network for a single
    // image [H,W,C]. Only decision-region plotting uses this; attack code
    // never sees it.
    virtual std::vector<Tensor> network_loss_gradients(const Tensor& image, int label) const = 0;
};

// predict() in fixed-size chunks to bound memory.
std::vector<int> predict_all(const TargetModel& model, const Tensor& images, std::size_t chunk = 256);

} // namespace buzz
