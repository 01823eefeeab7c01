#pragma once

#include "buzz/profile.hpp"
#include "buzz/tensor.hpp"

#include <cstdint>
#include <vector>

namespace buzz {

// c(X_1..X_C) = (X_1 A_1 + b_1, ..., X_C A_C + b_C) on [N,H,W,C] images,
// where X_i is the H x W plane of channel i, A_i is W x W and b_i is H x W.
// Shared matrices are stored once per channel anyway so every channel can
// be addressed uniformly.
struct LinearTransform {
    std::vector<Tensor> a; // C tensors [W,W]
    std::vector<Tensor> b; // C tensors [H,W]
    bool shared_a = true;
    bool shared_b = true;
    TransformFamily family = TransformFamily::Identity;
    std::uint64_t seed = 0;

    static LinearTransform identity(const Shape& image_shape);

    std::size_t height() const { return b.at(0).dim(0); }
    std::size_t width() const { return b.at(0).dim(1); }
    std::size_t channels() const { return b.size(); }
    Shape image_shape() const { return {height(), width(), channels()}; }

    // Throws std::invalid_argument if the matrices do not fit together.
    void validate() const;

    bool operator==(const LinearTransform&) const = default;
};

// Distinct seeds give independent draws; (distribution, shape, seed) fully
// determines the result.
LinearTransform sample_linear(const TransformDistribution& dist, const Shape& image_shape, std::uint64_t seed);
LinearTransform sample_linear(const DatasetProfile& profile, const Shape& image_shape, std::uint64_t seed);

// Output is not clipped.
Tensor apply_linear(const LinearTransform& t, const Tensor& batch);
// Same map with b = 0.
Tensor apply_linear_part(const LinearTransform& t, const Tensor& batch);
Var apply_linear(const LinearTransform& t, const Var& batch);

// Bilinear upsizing with a corner-aligned grid: output pixel i samples source
// coordinate i * (source - 1) / (target - 1).
struct ResizeOp {
    std::size_t source = 0;
    std::size_t target = 0;

    bool identity() const { return source == target; }
    void validate() const;

    bool operator==(const ResizeOp&) const = default;
};

Tensor resize_bilinear(const ResizeOp& r, const Tensor& batch);
Var resize_bilinear(const ResizeOp& r, const Var& batch);

} // namespace buzz
