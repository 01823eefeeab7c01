#include "buzz/bufferviz.hpp"

#include "buzz/config.hpp"
#include "buzz/random.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace buzz {

namespace {

constexpr std::array<std::array<std::uint8_t, 3>, 10> kPalette = {{
    {214, 39, 40},   // red
    {31, 119, 180},  // blue
    {255, 127, 14},  // orange
    {148, 103, 189}, // purple
    {140, 86, 75},   // brown
    {227, 119, 194}, // pink
    {188, 189, 34},  // olive
    {23, 190, 207},  // cyan
    {255, 221, 0},   // yellow
    {0, 0, 0},       // black
}};

double dot(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Removes the component along unit u.
void remove_component(Tensor& v, const Tensor& u) {
    const double c = dot(v, u);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= c * u[i];
}

void normalize(Tensor& v, const std::string& what) {
    const double n = std::sqrt(dot(v, v));
    if (!(n > 1e-12) || !std::isfinite(n)) throw std::runtime_error("build_map: " + what + " is degenerate (norm " + format_double(n) + ")");
    for (auto& x : v.data()) x /= n;
}

} // namespace

std::string to_string(RadialMode mode) {
    return mode == RadialMode::OrthogonalToGradient ? "orthogonal-to-gradient" : "orthogonal-to-image";
}

RadialMode parse_radial_mode(const std::string& name) {
    if (name == "orthogonal-to-gradient" || name == "gradient") return RadialMode::OrthogonalToGradient;
    if (name == "orthogonal-to-image" || name == "image") return RadialMode::OrthogonalToImage;
    throw std::invalid_argument("unknown r mode '" + name + "' (gradient or image)");
}

void GridConfig::validate() const {
    if (nx == 0 || ny == 0) throw std::invalid_argument("grid: nx and ny must be >= 1");
    if (!(x_max >= 0.0) || !(y_max >= 0.0)) throw std::invalid_argument("grid: extents must be >= 0");
    if (!(lo < hi)) throw std::invalid_argument("grid: lo < hi required");
}

GridConfig default_grid(const DatasetProfile& profile, const Shape& image_shape, std::uint64_t seed) {
    GridConfig g;
    const double extent = 2.0 * profile.fgsm_eps * std::sqrt(static_cast<double>(shape_size(image_shape)));
    g.x_max = extent;
    g.y_max = extent;
    g.seed = seed;
    return g;
}

double RegionMap::x_at(std::size_t ix) const {
    if (nx == 1) return 0.0;
    return x_max * (2.0 * static_cast<double>(ix) - static_cast<double>(nx - 1)) / static_cast<double>(nx - 1);
}

double RegionMap::y_at(std::size_t iy) const {
    if (ny == 1) return 0.0;
    return y_max * (2.0 * static_cast<double>(iy) - static_cast<double>(ny - 1)) / static_cast<double>(ny - 1);
}

double RegionMap::gray_fraction() const {
    if (labels.empty()) return 0.0;
    return static_cast<double>(std::count(labels.begin(), labels.end(), kAbstain)) / static_cast<double>(labels.size());
}

RegionMap build_map(const TargetModel& model, const Tensor& image, int true_label, const GridConfig& grid) {
    grid.validate();
    const Shape shape = model.input_shape();
    if (image.shape() != shape) {
        throw ShapeError("build_map: image " + shape_str(image.shape()) + " does not match " + shape_str(shape));
    }
    if (true_label < 0 || static_cast<std::size_t>(true_label) >= model.class_count()) {
        throw std::invalid_argument("build_map: label out of range");
    }
    RegionMap m;
    m.nx = grid.nx;
    m.ny = grid.ny;
    m.x_max = grid.x_max;
    m.y_max = grid.y_max;
    m.mode = grid.mode;
    m.image = image;
    m.true_label = true_label;

    const auto grads = model.network_loss_gradients(image, true_label);
    if (grads.empty()) throw std::runtime_error("build_map: model exposes no gradients");
    m.g = Tensor(shape, 0.0);
    for (const auto& gj : grads)
        for (std::size_t i = 0; i < gj.size(); ++i) m.g[i] += gj[i] / static_cast<double>(grads.size());
    normalize(m.g, "averaged loss gradient");

    Rng rng(derive_seed(grid.seed, "map-direction"));
    std::normal_distribution<double> n01(0.0, 1.0);
    m.r = Tensor(shape);
    for (auto& v : m.r.data()) v = n01(rng);
    Tensor reference = m.g;
    if (grid.mode == RadialMode::OrthogonalToImage) {
        reference = image;
        normalize(reference, "image");
    }
    // Two Gram-Schmidt passes; the second absorbs rounding left by the first.
    for (int pass = 0; pass < 2; ++pass) {
        remove_component(m.r, reference);
        normalize(m.r, "random direction");
    }

    const std::size_t per = image.size();
    m.labels.assign(m.nx * m.ny, kAbstain);
    const std::size_t rows_per_batch = std::max<std::size_t>(1, 256 / m.nx);
    for (std::size_t y0 = 0; y0 < m.ny; y0 += rows_per_batch) {
        const std::size_t y1 = std::min(m.ny, y0 + rows_per_batch);
        Tensor batch({(y1 - y0) * m.nx, shape[0], shape[1], shape[2]});
        for (std::size_t iy = y0; iy < y1; ++iy) {
            const double y = m.y_at(iy);
            for (std::size_t ix = 0; ix < m.nx; ++ix) {
                const double x = m.x_at(ix);
                double* dst = batch.ptr() + ((iy - y0) * m.nx + ix) * per;
                for (std::size_t i = 0; i < per; ++i) dst[i] = std::clamp(image[i] + x * m.g[i] + y * m.r[i], grid.lo, grid.hi);
            }
        }
        const auto out = model.predict(batch);
        std::copy(out.begin(), out.end(), m.labels.begin() + static_cast<std::ptrdiff_t>(y0 * m.nx));
    }
    return m;
}

std::array<std::uint8_t, 3> map_color(int label, int true_label) {
    if (is_abstain(label)) return {128, 128, 128};
    if (label == true_label) return {0, 170, 0};
    return kPalette[static_cast<std::size_t>(label) % kPalette.size()];
}

void render_map(const RegionMap& map, const std::filesystem::path& ppm, const std::filesystem::path& csv) {
    if (map.labels.size() != map.nx * map.ny || map.labels.empty()) throw std::invalid_argument("render_map: incomplete map");
    {
        std::ofstream f(ppm, std::ios::binary);
        if (!f) throw std::runtime_error("cannot write " + ppm.string());
        f << "P6\n"
          << "# decision regions; green = true label " << map.true_label << ", gray = abstain, "
          << "other labels: 0 red, 1 blue, 2 orange, 3 purple, 4 brown, 5 pink, 6 olive, 7 cyan, 8 yellow, 9 black (mod 10)\n"
          << "# x in [-" << format_double(map.x_max) << ", " << format_double(map.x_max) << "] along g, y in [-"
          << format_double(map.y_max) << ", " << format_double(map.y_max) << "] along r, r mode " << to_string(map.mode)
          << "\n"
          << map.nx << ' ' << map.ny << "\n255\n";
        for (std::size_t row = 0; row < map.ny; ++row) {
            const std::size_t iy = map.ny - 1 - row;
            for (std::size_t ix = 0; ix < map.nx; ++ix) {
                const auto c = map_color(map.at(ix, iy), map.true_label);
                f.write(reinterpret_cast<const char*>(c.data()), 3);
            }
        }
        if (!f) throw std::runtime_error("write failed for " + ppm.string());
    }
    std::ofstream f(csv, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + csv.string());
    f << "x,y,label\n";
    for (std::size_t iy = 0; iy < map.ny; ++iy)
        for (std::size_t ix = 0; ix < map.nx; ++ix)
            f << format_double(map.x_at(ix)) << ',' << format_double(map.y_at(iy)) << ',' << map.at(ix, iy) << '\n';
    if (!f) throw std::runtime_error("write failed for " + csv.string());
}

} // namespace buzz
