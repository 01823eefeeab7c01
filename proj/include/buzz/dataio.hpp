#pragma once

#include "buzz/target.hpp"
#include "buzz/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace buzz {

inline constexpr double kPixelLo = -0.5;
inline constexpr double kPixelHi = 0.5;

// Images [N,H,W,C] with pixels in [-0.5, 0.5] and labels in [0, k).
struct LabeledDataset {
    std::string name;
    Tensor images;
    std::vector<int> labels;
    std::size_t class_count = 0;

    std::size_t size() const { return labels.size(); }
    std::size_t height() const { return images.dim(1); }
    std::size_t width() const { return images.dim(2); }
    std::size_t channels() const { return images.dim(3); }
    Shape image_shape() const { return {height(), width(), channels()}; }
    Tensor image(std::size_t i) const { return images.slice0(i); }

    // Checks the container invariants; throws std::invalid_argument.
    void validate() const;

    LabeledDataset subset(std::span<const std::size_t> indices) const;
    LabeledDataset head(std::size_t n) const;
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Byte value v maps to v/255 - 0.5.
inline double normalize_pixel(std::uint8_t v) { return static_cast<double>(v) / 255.0 - 0.5; }

LabeledDataset parse_idx(std::string_view image_bytes, std::string_view label_bytes, std::size_t class_count = 10);
LabeledDataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                        std::size_t class_count = 10);

LabeledDataset parse_cifar_binary(std::string_view bytes, std::size_t class_count = 10);
LabeledDataset load_cifar_binary(const std::filesystem::path& path, std::size_t class_count = 10);

// Grayscale k-class blobs: each class has a disc centre on a ring; per-sample
// centre jitter, radius jitter and pixel noise. Classes are interleaved in a
// seeded shuffle.
struct BlobOptions {
    double ring_fraction = 0.3;   // ring radius / side
    double center_jitter = 0.05;  // Gaussian sd of the disc centre / side
    double radius_fraction = 0.2; // disc radius / side
    double noise = 0.15;          // pixel noise sd
};

LabeledDataset synth_blobs(std::size_t k, std::size_t n_per_class, std::size_t image_side, std::uint64_t seed,
                           const BlobOptions& options = {});

struct EvalSubset {
    LabeledDataset data;
    std::vector<std::size_t> source_indices; // positions in the test set
    bool exhausted = false;                  // fewer than requested were available
};

// First n samples, in order, that the model labels correctly (abstentions
// count as wrong).
EvalSubset split_first_correct(const TargetModel& model, const LabeledDataset& test, std::size_t n);

std::string read_file_bytes(const std::filesystem::path& path);

} // namespace buzz
