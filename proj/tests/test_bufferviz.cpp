#include "buzz/bufferviz.hpp"
#include "buzz/dataio.hpp"
#include "buzz/defense.hpp"
#include "buzz/random.hpp"

#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace buzz;

namespace {

Tensor uniform(const Shape& shape, double lo, double hi, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(shape);
    for (auto& v : t.data()) v = u(rng);
    return t;
}

Classifier linear3(std::uint64_t seed) {
    return Classifier(parse_network("dense3", {4, 4, 1}, 3), {uniform({16, 3}, -2, 2, seed), uniform({3}, -0.1, 0.1, seed + 1)});
}

double dot(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Records the range of every probed pixel.
class Recorder : public TargetModel {
public:
    explicit Recorder(const Classifier& m) : m_(m) {}
    std::vector<int> predict(const Tensor& batch) const override {
        for (double v : batch.data()) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        return m_.predict(batch);
    }
    std::size_t class_count() const override { return m_.class_count(); }
    Shape input_shape() const override { return m_.input_shape(); }
    std::vector<Tensor> network_loss_gradients(const Tensor& x, int l) const override {
        return m_.network_loss_gradients(x, l);
    }
    mutable double lo = 1e9, hi = -1e9;

private:
    const Classifier& m_;
};

GridConfig grid(std::size_t n, double extent, std::uint64_t seed = 1) {
    GridConfig g;
    g.nx = n;
    g.ny = n;
    g.x_max = extent;
    g.y_max = extent;
    g.seed = seed;
    return g;
}

} // namespace

TEST_CASE("directions are unit and orthogonal") {
    const auto model = linear3(1);
    const auto image = uniform({4, 4, 1}, -0.4, 0.4, 2);
    const auto m = build_map(model, image, 0, grid(11, 1.0));
    CHECK(std::abs(std::sqrt(dot(m.g, m.g)) - 1.0) < 1e-9);
    CHECK(std::abs(std::sqrt(dot(m.r, m.r)) - 1.0) < 1e-9);
    CHECK(std::abs(dot(m.g, m.r)) < 1e-9);

    auto gi = grid(11, 1.0);
    gi.mode = RadialMode::OrthogonalToImage;
    const auto mi = build_map(model, image, 0, gi);
    CHECK(std::abs(dot(mi.r, image)) < 1e-9);
    CHECK(std::abs(std::sqrt(dot(mi.r, mi.r)) - 1.0) < 1e-9);
    CHECK(parse_radial_mode(to_string(RadialMode::OrthogonalToImage)) == RadialMode::OrthogonalToImage);
}

TEST_CASE("origin, row recomputation, clipping and determinism") {
    const auto model = linear3(3);
    const auto image = uniform({4, 4, 1}, -0.45, 0.45, 4);
    Recorder rec(model);
    const auto m = build_map(rec, image, 1, grid(21, 3.0));
    CHECK(m.x_at(10) == 0.0);
    CHECK(m.y_at(10) == 0.0);
    CHECK(m.at(10, 10) == model.predict(image.reshaped({1, 4, 4, 1}))[0]);
    CHECK(m.gray_fraction() == 0.0);
    CHECK(rec.lo >= -0.5);
    CHECK(rec.hi <= 0.5);
    CHECK(rec.lo == -0.5); // extents large enough to hit the clip
    for (std::size_t ix = 0; ix < 21; ++ix) {
        Tensor probe = image;
        for (std::size_t i = 0; i < probe.size(); ++i) probe[i] = std::clamp(image[i] + m.x_at(ix) * m.g[i], -0.5, 0.5);
        CHECK(m.at(ix, 10) == model.predict(probe.reshaped({1, 4, 4, 1}))[0]);
    }
    // g is the normalized loss gradient: moving along it never raises the true-class score
    const auto s0 = model.scores(image.reshaped({1, 4, 4, 1}));
    Tensor step = image;
    for (std::size_t i = 0; i < step.size(); ++i) step[i] += 1e-4 * m.g[i];
    CHECK(model.scores(step.reshaped({1, 4, 4, 1}))[1] < s0[1]);

    const auto again = build_map(rec, image, 1, grid(21, 3.0));
    CHECK(again.labels == m.labels);
    CHECK(again.r == m.r);
    CHECK_FALSE(build_map(rec, image, 1, grid(21, 3.0, 2)).r == m.r);
}

TEST_CASE("degenerate gradient is rejected") {
    const Classifier flat(parse_network("dense3", {4, 4, 1}, 3), {Tensor({16, 3}, 0.0), Tensor({3}, 0.0)});
    CHECK_THROWS_WITH(build_map(flat, uniform({4, 4, 1}, -0.4, 0.4, 5), 0, grid(5, 1.0)),
                      doctest::Contains("degenerate"));
    CHECK_THROWS(build_map(linear3(1), uniform({4, 4, 1}, -0.4, 0.4, 5), 7, grid(5, 1.0)));
}

TEST_CASE("disagreeing layers leave gray buffer regions") {
    const auto a = linear3(6);
    const auto b = linear3(7);
    const ProtectedLayer la{LinearTransform::identity({4, 4, 1}), {4, 4}, a, std::nullopt};
    const ProtectedLayer lb{LinearTransform::identity({4, 4, 1}), {4, 4}, b, std::nullopt};
    const BuzzDefense d("buzz-2", {la, lb}, 2);
    const auto image = uniform({4, 4, 1}, -0.3, 0.3, 8);
    const int label = a.predict(image.reshaped({1, 4, 4, 1}))[0];
    const auto m = build_map(d, image, label, grid(31, 2.0));
    CHECK(m.gray_fraction() > 0.0);
    const auto v = build_map(a, image, label, grid(31, 2.0));
    CHECK(v.gray_fraction() == 0.0);
}

TEST_CASE("rendering") {
    const auto dir = std::filesystem::temp_directory_path() / "buzz_map_test";
    std::filesystem::create_directories(dir);
    const auto model = linear3(9);
    const auto image = uniform({4, 4, 1}, -0.3, 0.3, 10);
    const int pred = model.predict(image.reshaped({1, 4, 4, 1}))[0];
    for (int label : {pred, (pred + 1) % 3}) {
        const auto m = build_map(model, image, label, grid(1, 1.0));
        render_map(m, dir / "one.ppm", dir / "one.csv");
        const std::string bytes = read_file_bytes(dir / "one.ppm");
        CHECK(bytes.rfind("P6\n", 0) == 0);
        CHECK(bytes.find("\n1 1\n255\n") != std::string::npos);
        const std::string pixel = bytes.substr(bytes.size() - 3);
        const bool green = pixel == std::string("\x00\xaa\x00", 3);
        CHECK(green == (label == pred));
    }
    const auto m = build_map(model, image, pred, grid(7, 1.0));
    render_map(m, dir / "seven.ppm", dir / "seven.csv");
    const std::string csv = read_file_bytes(dir / "seven.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 49);
    CHECK(read_file_bytes(dir / "seven.ppm").size() > 49 * 3);
    std::filesystem::remove_all(dir);

    CHECK(map_color(kAbstain, 0) == std::array<std::uint8_t, 3>{128, 128, 128});
    CHECK(map_color(2, 2) == std::array<std::uint8_t, 3>{0, 170, 0});
    CHECK(map_color(3, 0) == map_color(3, 1));
    CHECK(map_color(3, 0) == map_color(13, 0));
    for (int l = 0; l < 10; ++l) {
        CHECK(map_color(l, -5) != map_color(kAbstain, 0));
        CHECK(map_color(l, -5) != map_color(0, 0));
    }
}

TEST_CASE("default grid scales with eps and image size") {
    const auto g = default_grid(profile_by_name("fashion-like"), {12, 12, 1});
    CHECK(g.nx == 101);
    CHECK(g.x_max == doctest::Approx(2 * 0.15 * 12));
}
