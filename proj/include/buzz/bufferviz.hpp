#pragma once

#include "buzz/profile.hpp"
#include "buzz/target.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace buzz {

enum class RadialMode {
    OrthogonalToGradient, // r ⊥ g (default)
    OrthogonalToImage,    // r ⊥ I, as worded in the original description
};

std::string to_string(RadialMode mode);
RadialMode parse_radial_mode(const std::string& name);

struct GridConfig {
    std::size_t nx = 101;
    std::size_t ny = 101;
    double x_max = 0.0; // L2 units along g
    double y_max = 0.0; // L2 units along r
    std::uint64_t seed = 0;
    RadialMode mode = RadialMode::OrthogonalToGradient;
    double lo = -0.5;
    double hi = 0.5;

    void validate() const;
};

// 101x101 over ±2·eps·sqrt(d): the L2 length of an FGSM step of size eps on a
// d-pixel image, doubled.
GridConfig default_grid(const DatasetProfile& profile, const Shape& image_shape, std::uint64_t seed = 0);

struct RegionMap {
    std::size_t nx = 0, ny = 0;
    double x_max = 0.0, y_max = 0.0;
    RadialMode mode = RadialMode::OrthogonalToGradient;
    Tensor image; // I
    Tensor g;     // unit direction
    Tensor r;     // unit direction
    int true_label = 0;
    std::vector<int> labels; // row-major, row iy then column ix

    double x_at(std::size_t ix) const;
    double y_at(std::size_t iy) const;
    int at(std::size_t ix, std::size_t iy) const { return labels[iy * nx + ix]; }
    double gray_fraction() const;
};

// g = normalize(mean of the per-network loss gradients at I).
RegionMap build_map(const TargetModel& model, const Tensor& image, int true_label, const GridConfig& grid);

// Colors: correct label green (0,170,0), ⊥ gray (128,128,128), other labels
// from a fixed 10-entry palette indexed by label modulo 10.
std::array<std::uint8_t, 3> map_color(int label, int true_label);

// P6 pixmap, top row = largest y. The sidecar CSV has columns x,y,label.
void render_map(const RegionMap& map, const std::filesystem::path& ppm, const std::filesystem::path& csv);

} // namespace buzz
