#include "buzz/dataio.hpp"

#include "buzz/random.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

namespace buzz {

namespace {

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarRecord = 1 + 3 * kCifarSide * kCifarSide;

std::uint32_t read_be32(std::string_view bytes, std::size_t offset, const char* what) {
    if (offset + 4 > bytes.size()) {
        throw DataError(std::string(what) + ": truncated header at byte offset " + std::to_string(offset));
    }
    std::uint32_t v = 0;
    for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(bytes[offset + i]);
    return v;
}

std::string hex(std::uint32_t v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08x", v);
    return buf;
}

} // namespace

void LabeledDataset::validate() const {
    if (labels.empty()) throw std::invalid_argument("dataset '" + name + "': empty");
    if (images.rank() != 4 || images.dim(0) != labels.size()) {
        throw std::invalid_argument("dataset '" + name + "': images " + shape_str(images.shape()) + " vs " +
                                    std::to_string(labels.size()) + " labels");
    }
    if (class_count < 2) throw std::invalid_argument("dataset '" + name + "': class count must be at least 2");
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= class_count) {
            throw std::invalid_argument("dataset '" + name + "': label " + std::to_string(labels[i]) +
                                        " of sample " + std::to_string(i) + " outside [0," +
                                        std::to_string(class_count) + ")");
        }
    }
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
    LabeledDataset out;
    out.name = name;
    out.class_count = class_count;
    out.images = gather_rows(images, indices);
    for (auto i : indices) out.labels.push_back(labels.at(i));
    return out;
}

LabeledDataset LabeledDataset::head(std::size_t n) const {
    n = std::min(n, size());
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return subset(idx);
}

std::string read_file_bytes(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open " + path.string());
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

LabeledDataset parse_idx(std::string_view image_bytes, std::string_view label_bytes, std::size_t class_count) {
    const auto img_magic = read_be32(image_bytes, 0, "idx images");
    if (img_magic != kIdxImageMagic) {
        throw DataError("idx images: bad magic " + hex(img_magic) + " at byte offset 0 (expected " +
                        hex(kIdxImageMagic) + ")");
    }
    const auto lab_magic = read_be32(label_bytes, 0, "idx labels");
    if (lab_magic != kIdxLabelMagic) {
        throw DataError("idx labels: bad magic " + hex(lab_magic) + " at byte offset 0 (expected " +
                        hex(kIdxLabelMagic) + ")");
    }
    const std::size_t count = read_be32(image_bytes, 4, "idx images");
    const std::size_t rows = read_be32(image_bytes, 8, "idx images");
    const std::size_t cols = read_be32(image_bytes, 12, "idx images");
    const std::size_t label_count = read_be32(label_bytes, 4, "idx labels");
    if (count != label_count) {
        throw DataError("idx: image count " + std::to_string(count) + " (byte offset 4) differs from label count " +
                        std::to_string(label_count) + " (byte offset 4)");
    }
    if (count == 0 || rows == 0 || cols == 0) throw DataError("idx images: empty dimensions at byte offset 4");
    const std::size_t pixels = rows * cols;
    if (image_bytes.size() < 16 + count * pixels) {
        throw DataError("idx images: payload truncated at byte offset " + std::to_string(image_bytes.size()) +
                        ", expected " + std::to_string(16 + count * pixels) + " bytes");
    }
    if (label_bytes.size() < 8 + count) {
        throw DataError("idx labels: payload truncated at byte offset " + std::to_string(label_bytes.size()) +
                        ", expected " + std::to_string(8 + count) + " bytes");
    }

    LabeledDataset ds;
    ds.name = "idx";
    ds.class_count = class_count;
    ds.images = Tensor({count, rows, cols, 1});
    for (std::size_t i = 0; i < count * pixels; ++i) {
        ds.images[i] = normalize_pixel(static_cast<std::uint8_t>(image_bytes[16 + i]));
    }
    ds.labels.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        const auto l = static_cast<unsigned char>(label_bytes[8 + i]);
        if (l >= class_count) {
            throw DataError("idx labels: label " + std::to_string(l) + " at byte offset " + std::to_string(8 + i) +
                            " outside [0," + std::to_string(class_count) + ")");
        }
        ds.labels[i] = l;
    }
    return ds;
}

LabeledDataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                        std::size_t class_count) {
    auto ds = parse_idx(read_file_bytes(images_path), read_file_bytes(labels_path), class_count);
    ds.name = images_path.filename().string();
    return ds;
}

LabeledDataset parse_cifar_binary(std::string_view bytes, std::size_t class_count) {
    if (bytes.empty() || bytes.size() % kCifarRecord != 0) {
        throw DataError("cifar binary: length " + std::to_string(bytes.size()) + " is not a positive multiple of " +
                        std::to_string(kCifarRecord) + " (trailing record starts at byte offset " +
                        std::to_string(bytes.size() / kCifarRecord * kCifarRecord) + ")");
    }
    const std::size_t count = bytes.size() / kCifarRecord;
    const std::size_t plane = kCifarSide * kCifarSide;
    LabeledDataset ds;
    ds.name = "cifar";
    ds.class_count = class_count;
    ds.images = Tensor({count, kCifarSide, kCifarSide, 3});
    ds.labels.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t base = i * kCifarRecord;
        const auto l = static_cast<unsigned char>(bytes[base]);
        if (l >= class_count) {
            throw DataError("cifar binary: label " + std::to_string(l) + " at byte offset " + std::to_string(base) +
                            " outside [0," + std::to_string(class_count) + ")");
        }
        ds.labels[i] = l;
        for (std::size_t c = 0; c < 3; ++c) {
            for (std::size_t p = 0; p < plane; ++p) {
                const auto v = static_cast<std::uint8_t>(bytes[base + 1 + c * plane + p]);
                ds.images[(i * plane + p) * 3 + c] = normalize_pixel(v);
            }
        }
    }
    return ds;
}

LabeledDataset load_cifar_binary(const std::filesystem::path& path, std::size_t class_count) {
    auto ds = parse_cifar_binary(read_file_bytes(path), class_count);
    ds.name = path.filename().string();
    return ds;
}

LabeledDataset synth_blobs(std::size_t k, std::size_t n_per_class, std::size_t image_side, std::uint64_t seed,
                           const BlobOptions& options) {
    if (k < 2) throw std::invalid_argument("synth_blobs: need at least 2 classes");
    if (n_per_class == 0) throw std::invalid_argument("synth_blobs: n_per_class must be positive");
    if (image_side < 4) throw std::invalid_argument("synth_blobs: image side must be at least 4");

    Rng rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    const double side = static_cast<double>(image_side);
    const double mid = (side - 1.0) / 2.0;

    const std::size_t total = k * n_per_class;
    const std::size_t pixels = image_side * image_side;
    std::vector<double> raw(total * pixels);
    std::vector<int> raw_labels(total);
    for (std::size_t i = 0; i < total; ++i) {
        const std::size_t c = i % k;
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(k);
        const double cy = mid + options.ring_fraction * side * std::sin(angle) + options.center_jitter * side * gauss(rng);
        const double cx = mid + options.ring_fraction * side * std::cos(angle) + options.center_jitter * side * gauss(rng);
        const double radius = options.radius_fraction * side * (1.0 + 0.15 * unit(rng));
        for (std::size_t y = 0; y < image_side; ++y) {
            for (std::size_t x = 0; x < image_side; ++x) {
                const double d = std::hypot(static_cast<double>(y) - cy, static_cast<double>(x) - cx);
                double v = kPixelLo + 1.0 / (1.0 + std::exp((d - radius) / 0.6)) + options.noise * gauss(rng);
                raw[i * pixels + y * image_side + x] = std::clamp(v, kPixelLo, kPixelHi);
            }
        }
        raw_labels[i] = static_cast<int>(c);
    }

    std::vector<std::size_t> order(total);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);

    LabeledDataset ds;
    ds.name = "synth_blobs";
    ds.class_count = k;
    ds.images = Tensor({total, image_side, image_side, 1});
    ds.labels.resize(total);
    for (std::size_t i = 0; i < total; ++i) {
        std::copy_n(raw.data() + order[i] * pixels, pixels, ds.images.ptr() + i * pixels);
        ds.labels[i] = raw_labels[order[i]];
    }
    return ds;
}

EvalSubset split_first_correct(const TargetModel& model, const LabeledDataset& test, std::size_t n) {
    if (n == 0) throw std::invalid_argument("split_first_correct: n must be at least 1");
    EvalSubset out;
    constexpr std::size_t chunk = 128;
    for (std::size_t begin = 0; begin < test.size() && out.source_indices.size() < n; begin += chunk) {
        const std::size_t end = std::min(test.size(), begin + chunk);
        const auto predicted = model.predict(test.images.rows(begin, end));
        for (std::size_t i = begin; i < end && out.source_indices.size() < n; ++i) {
            if (predicted[i - begin] == test.labels[i]) out.source_indices.push_back(i);
        }
    }
    out.exhausted = out.source_indices.size() < n;
    if (out.source_indices.empty()) {
        out.data.name = test.name;
        out.data.class_count = test.class_count;
        return out;
    }
    out.data = test.subset(out.source_indices);
    return out;
}

} // namespace buzz
