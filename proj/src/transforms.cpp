#include "buzz/transforms.hpp"

#include "buzz/random.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

namespace buzz {

namespace {

void check_image_batch(const char* who, const Shape& expected, const Tensor& batch) {
    if (batch.rank() != 4 || batch.dim(1) != expected[0] || batch.dim(2) != expected[1] || batch.dim(3) != expected[2]) {
        throw ShapeError(std::string(who) + ": batch " + shape_str(batch.shape()) + " does not match image " +
                         shape_str(expected));
    }
}

// out[n,y,x',c] (+)= sum_x in[n,y,x,c] * A_c[x,x'] (forward) or
// sum_x' in[n,y,x',c] * A_c[x,x'] (adjoint).
void multiply_planes(const LinearTransform& t, const Tensor& in, Tensor& out, bool adjoint) {
    const std::size_t n = in.dim(0), h = t.height(), w = t.width(), c = t.channels();
    for (std::size_t img = 0; img < n; ++img) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double* a = t.a[ch].ptr();
            for (std::size_t y = 0; y < h; ++y) {
                const double* row = in.ptr() + ((img * h + y) * w) * c + ch;
                double* dst = out.ptr() + ((img * h + y) * w) * c + ch;
                for (std::size_t xo = 0; xo < w; ++xo) {
                    double acc = 0.0;
                    for (std::size_t xi = 0; xi < w; ++xi) {
                        acc += row[xi * c] * (adjoint ? a[xo * w + xi] : a[xi * w + xo]);
                    }
                    dst[xo * c] += acc;
                }
            }
        }
    }
}

void add_bias_planes(const LinearTransform& t, Tensor& out) {
    const std::size_t n = out.dim(0), h = t.height(), w = t.width(), c = t.channels();
    for (std::size_t img = 0; img < n; ++img)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                for (std::size_t ch = 0; ch < c; ++ch) out[((img * h + y) * w + x) * c + ch] += t.b[ch][y * w + x];
}

// Per-axis interpolation table: output i reads lo[i] and lo[i]+1 with weight
// frac[i] on the upper neighbour.
struct Axis {
    std::vector<std::size_t> lo;
    std::vector<double> frac;
};

Axis make_axis(std::size_t source, std::size_t target) {
    Axis a;
    a.lo.resize(target);
    a.frac.resize(target);
    for (std::size_t i = 0; i < target; ++i) {
        const double pos = target == 1 ? 0.0
                                       : static_cast<double>(i) * static_cast<double>(source - 1) /
                                             static_cast<double>(target - 1);
        std::size_t base = static_cast<std::size_t>(std::floor(pos));
        if (base >= source - 1) base = source > 1 ? source - 2 : 0;
        a.lo[i] = base;
        a.frac[i] = source > 1 ? pos - static_cast<double>(base) : 0.0;
    }
    return a;
}

void resize_forward(const Axis& ay, const Axis& ax, std::size_t s, std::size_t t, std::size_t c, const Tensor& in,
                    Tensor& out) {
    const std::size_t n = in.dim(0);
    const std::size_t step = s > 1 ? 1 : 0;
    for (std::size_t img = 0; img < n; ++img) {
        const double* src = in.ptr() + img * s * s * c;
        double* dst = out.ptr() + img * t * t * c;
        for (std::size_t y = 0; y < t; ++y) {
            const std::size_t y0 = ay.lo[y], y1 = y0 + step;
            const double fy = ay.frac[y];
            for (std::size_t x = 0; x < t; ++x) {
                const std::size_t x0 = ax.lo[x], x1 = x0 + step;
                const double fx = ax.frac[x];
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const double v00 = src[(y0 * s + x0) * c + ch], v01 = src[(y0 * s + x1) * c + ch];
                    const double v10 = src[(y1 * s + x0) * c + ch], v11 = src[(y1 * s + x1) * c + ch];
                    dst[(y * t + x) * c + ch] =
                        (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
                }
            }
        }
    }
}

void resize_adjoint(const Axis& ay, const Axis& ax, std::size_t s, std::size_t t, std::size_t c, const Tensor& g,
                    Tensor& dst_grad) {
    const std::size_t n = g.dim(0);
    const std::size_t step = s > 1 ? 1 : 0;
    for (std::size_t img = 0; img < n; ++img) {
        const double* src = g.ptr() + img * t * t * c;
        double* dst = dst_grad.ptr() + img * s * s * c;
        for (std::size_t y = 0; y < t; ++y) {
            const std::size_t y0 = ay.lo[y], y1 = y0 + step;
            const double fy = ay.frac[y];
            for (std::size_t x = 0; x < t; ++x) {
                const std::size_t x0 = ax.lo[x], x1 = x0 + step;
                const double fx = ax.frac[x];
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const double v = src[(y * t + x) * c + ch];
                    dst[(y0 * s + x0) * c + ch] += (1 - fy) * (1 - fx) * v;
                    dst[(y0 * s + x1) * c + ch] += (1 - fy) * fx * v;
                    dst[(y1 * s + x0) * c + ch] += fy * (1 - fx) * v;
                    dst[(y1 * s + x1) * c + ch] += fy * fx * v;
                }
            }
        }
    }
}

void check_resize_batch(const ResizeOp& r, const Tensor& batch) {
    r.validate();
    if (batch.rank() != 4 || batch.dim(1) != r.source || batch.dim(2) != r.source) {
        throw ShapeError("resize_bilinear: batch " + shape_str(batch.shape()) + " does not match source side " +
                         std::to_string(r.source));
    }
}

} // namespace

LinearTransform LinearTransform::identity(const Shape& image_shape) {
    if (image_shape.size() != 3 || shape_size(image_shape) == 0) {
        throw std::invalid_argument("linear transform: image shape must be {H,W,C}, got " + shape_str(image_shape));
    }
    const std::size_t h = image_shape[0], w = image_shape[1], c = image_shape[2];
    LinearTransform t;
    Tensor eye({w, w});
    for (std::size_t i = 0; i < w; ++i) eye[i * w + i] = 1.0;
    t.a.assign(c, eye);
    t.b.assign(c, Tensor({h, w}));
    return t;
}

void LinearTransform::validate() const {
    if (b.empty() || a.size() != b.size()) throw std::invalid_argument("linear transform: need one A and b per channel");
    const std::size_t h = b[0].rank() == 2 ? b[0].dim(0) : 0;
    const std::size_t w = b[0].rank() == 2 ? b[0].dim(1) : 0;
    for (std::size_t c = 0; c < b.size(); ++c) {
        if (a[c].shape() != Shape{w, w} || b[c].shape() != Shape{h, w}) {
            throw ShapeError("linear transform: channel " + std::to_string(c) + " has A " + shape_str(a[c].shape()) +
                             " and b " + shape_str(b[c].shape()));
        }
    }
}

LinearTransform sample_linear(const TransformDistribution& dist, const Shape& image_shape, std::uint64_t seed) {
    LinearTransform t = LinearTransform::identity(image_shape);
    t.family = dist.family;
    t.seed = seed;
    t.shared_a = dist.share_a;
    t.shared_b = dist.share_b;
    const std::size_t h = image_shape[0], w = image_shape[1], c = image_shape[2];
    Rng rng(seed);
    switch (dist.family) {
    case TransformFamily::Identity:
        break;
    case TransformFamily::SparseBias: {
        if (!(dist.bias_fraction >= 0.0 && dist.bias_fraction <= 1.0)) {
            throw std::invalid_argument("sample_linear: bias fraction outside [0,1]");
        }
        const std::size_t cells = h * w;
        const auto chosen = static_cast<std::size_t>(std::lround(dist.bias_fraction * static_cast<double>(cells)));
        std::uniform_real_distribution<double> u(dist.bias_lo, dist.bias_hi);
        const std::size_t draws = dist.share_b ? 1 : c;
        for (std::size_t ch = 0; ch < draws; ++ch) {
            std::vector<std::size_t> cell(cells);
            std::iota(cell.begin(), cell.end(), std::size_t{0});
            std::shuffle(cell.begin(), cell.end(), rng);
            Tensor b({h, w});
            for (std::size_t i = 0; i < chosen; ++i) {
                double v = u(rng);
                while (v == 0.0) v = u(rng); // keep the support size exact
                b[cell[i]] = v;
            }
            if (dist.share_b) {
                t.b.assign(c, b);
            } else {
                t.b[ch] = std::move(b);
            }
        }
        break;
    }
    case TransformFamily::Gaussian: {
        std::normal_distribution<double> g(dist.gaussian_mean, dist.gaussian_sigma);
        const std::size_t a_draws = dist.share_a ? 1 : c;
        for (std::size_t ch = 0; ch < a_draws; ++ch) {
            Tensor a({w, w});
            for (auto& v : a.data()) v = g(rng);
            if (dist.share_a) {
                t.a.assign(c, a);
            } else {
                t.a[ch] = std::move(a);
            }
        }
        const std::size_t b_draws = dist.share_b ? 1 : c;
        for (std::size_t ch = 0; ch < b_draws; ++ch) {
            Tensor b({h, w});
            for (auto& v : b.data()) v = g(rng);
            if (dist.share_b) {
                t.b.assign(c, b);
            } else {
                t.b[ch] = std::move(b);
            }
        }
        break;
    }
    }
    return t;
}

LinearTransform sample_linear(const DatasetProfile& profile, const Shape& image_shape, std::uint64_t seed) {
    return sample_linear(profile.transform, image_shape, seed);
}

Tensor apply_linear_part(const LinearTransform& t, const Tensor& batch) {
    t.validate();
    check_image_batch("apply_linear", t.image_shape(), batch);
    Tensor out(batch.shape());
    multiply_planes(t, batch, out, false);
    return out;
}

Tensor apply_linear(const LinearTransform& t, const Tensor& batch) {
    Tensor out = apply_linear_part(t, batch);
    add_bias_planes(t, out);
    return out;
}

Var apply_linear(const LinearTransform& t, const Var& batch) {
    auto shared = std::make_shared<LinearTransform>(t);
    Tensor out = apply_linear(*shared, batch.value());
    return batch.tape().record(std::move(out), {batch}, [shared](const Tensor& g, std::span<Tensor* const> pg) {
        multiply_planes(*shared, g, *pg[0], true);
    });
}

void ResizeOp::validate() const {
    if (source == 0) throw std::invalid_argument("resize: source side must be positive");
    if (target < source) {
        throw std::invalid_argument("resize: target " + std::to_string(target) + " smaller than source " +
                                    std::to_string(source) + " (upsizing only)");
    }
}

Tensor resize_bilinear(const ResizeOp& r, const Tensor& batch) {
    check_resize_batch(r, batch);
    if (r.identity()) return batch;
    const std::size_t c = batch.dim(3);
    const Axis axis = make_axis(r.source, r.target);
    Tensor out({batch.dim(0), r.target, r.target, c});
    resize_forward(axis, axis, r.source, r.target, c, batch, out);
    return out;
}

Var resize_bilinear(const ResizeOp& r, const Var& batch) {
    check_resize_batch(r, batch.value());
    if (r.identity()) return batch;
    const std::size_t c = batch.value().dim(3);
    auto axis = std::make_shared<Axis>(make_axis(r.source, r.target));
    Tensor out({batch.value().dim(0), r.target, r.target, c});
    resize_forward(*axis, *axis, r.source, r.target, c, batch.value(), out);
    return batch.tape().record(std::move(out), {batch},
        [axis, r, c](const Tensor& g, std::span<Tensor* const> pg) {
            resize_adjoint(*axis, *axis, r.source, r.target, c, g, *pg[0]);
        });
}

} // namespace buzz
