#include "buzz/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>

namespace buzz {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
    }
}

void require_labels(const char* op, const Tensor& logits, std::span<const int> labels) {
    require_rank(op, logits, 2);
    if (labels.size() != logits.dim(0)) {
        throw ShapeError(std::string(op) + ": " + std::to_string(labels.size()) + " labels for logits " +
                         shape_str(logits.shape()));
    }
    for (int l : labels) {
        if (l < 0 || static_cast<std::size_t>(l) >= logits.dim(1)) {
            throw std::out_of_range(std::string(op) + ": label " + std::to_string(l) + " outside [0," +
                                    std::to_string(logits.dim(1)) + ")");
        }
    }
}

// Unary elementwise op; the derivative sees the input and the recomputed output.
template <typename F, typename D>
Var unary(const Var& x, F f, D dfdx) {
    const Tensor& in = x.value();
    Tensor out(in.shape().empty() ? Tensor::scalar(0.0) : Tensor(in.shape()));
    for (std::size_t i = 0; i < in.size(); ++i) {
        out[i] = f(in[i]);
    }
    const Tensor* in_ptr = &in;
    return x.tape().record(std::move(out), {x}, [in_ptr, f, dfdx](const Tensor& g, std::span<Tensor* const> pg) {
        Tensor& gx = *pg[0];
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = (*in_ptr)[i];
            gx[i] += g[i] * dfdx(v, f(v));
        }
    });
}

void softmax_rows(const double* in, double* out, std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = in + r * cols;
        double* y = out + r * cols;
        double mx = *std::max_element(x, x + cols);
        double total = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            y[j] = std::exp(x[j] - mx);
            total += y[j];
        }
        for (std::size_t j = 0; j < cols; ++j) {
            y[j] /= total;
        }
    }
}

void log_softmax_rows(const double* in, double* out, std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = in + r * cols;
        double* y = out + r * cols;
        double mx = *std::max_element(x, x + cols);
        double total = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            total += std::exp(x[j] - mx);
        }
        double lse = mx + std::log(total);
        for (std::size_t j = 0; j < cols; ++j) {
            y[j] = x[j] - lse;
        }
    }
}

struct ConvGeometry {
    std::size_t n, h, w, c, k, f, pad;
    std::size_t rows() const { return n * h * w; }
    std::size_t patch() const { return k * k * c; }
};

void im2col(const double* x, const ConvGeometry& g, double* cols) {
    const std::size_t patch = g.patch();
    for (std::size_t n = 0; n < g.n; ++n) {
        for (std::size_t y = 0; y < g.h; ++y) {
            for (std::size_t xx = 0; xx < g.w; ++xx) {
                double* dst = cols + ((n * g.h + y) * g.w + xx) * patch;
                for (std::size_t ky = 0; ky < g.k; ++ky) {
                    const long sy = static_cast<long>(y + ky) - static_cast<long>(g.pad);
                    for (std::size_t kx = 0; kx < g.k; ++kx) {
                        const long sx = static_cast<long>(xx + kx) - static_cast<long>(g.pad);
                        double* cell = dst + (ky * g.k + kx) * g.c;
                        if (sy < 0 || sx < 0 || sy >= static_cast<long>(g.h) || sx >= static_cast<long>(g.w)) {
                            std::fill(cell, cell + g.c, 0.0);
                        } else {
                            const double* src = x + ((n * g.h + sy) * g.w + sx) * g.c;
                            std::copy(src, src + g.c, cell);
                        }
                    }
                }
            }
        }
    }
}

void col2im_add(const double* cols, const ConvGeometry& g, double* x) {
    const std::size_t patch = g.patch();
    for (std::size_t n = 0; n < g.n; ++n) {
        for (std::size_t y = 0; y < g.h; ++y) {
            for (std::size_t xx = 0; xx < g.w; ++xx) {
                const double* src = cols + ((n * g.h + y) * g.w + xx) * patch;
                for (std::size_t ky = 0; ky < g.k; ++ky) {
                    const long sy = static_cast<long>(y + ky) - static_cast<long>(g.pad);
                    if (sy < 0 || sy >= static_cast<long>(g.h)) continue;
                    for (std::size_t kx = 0; kx < g.k; ++kx) {
                        const long sx = static_cast<long>(xx + kx) - static_cast<long>(g.pad);
                        if (sx < 0 || sx >= static_cast<long>(g.w)) continue;
                        const double* cell = src + (ky * g.k + kx) * g.c;
                        double* dst = x + ((n * g.h + sy) * g.w + sx) * g.c;
                        for (std::size_t c = 0; c < g.c; ++c) {
                            dst[c] += cell[c];
                        }
                    }
                }
            }
        }
    }
}

} // namespace

// ---------------------------------------------------------------------------

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
    for (auto d : shape_) {
        if (d == 0) throw ShapeError("Tensor: zero-sized dimension in " + shape_str(shape_));
    }
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size()) {
        throw ShapeError("Tensor: shape " + shape_str(shape_) + " does not hold " + std::to_string(data_.size()) +
                         " values");
    }
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size()) {
        throw ShapeError("Tensor::dim: axis " + std::to_string(axis) + " out of range for " + shape_str(shape_));
    }
    return shape_[axis];
}

double Tensor::item() const {
    if (data_.size() != 1) throw ShapeError("Tensor::item: not a single value " + shape_str(shape_));
    return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) shape_mismatch("reshape", shape_, shape);
    return Tensor(std::move(shape), data_);
}

Tensor Tensor::slice0(std::size_t index) const {
    if (rank() == 0 || index >= shape_[0]) throw ShapeError("Tensor::slice0: index out of range");
    Shape inner(shape_.begin() + 1, shape_.end());
    const std::size_t stride = shape_size(inner);
    return Tensor(std::move(inner), std::vector<double>(data_.begin() + index * stride,
                                                        data_.begin() + (index + 1) * stride));
}

Tensor Tensor::rows(std::size_t begin, std::size_t end) const {
    if (rank() == 0 || begin >= end || end > shape_[0]) throw ShapeError("Tensor::rows: bad range");
    Shape s = shape_;
    s[0] = end - begin;
    const std::size_t stride = data_.size() / shape_[0];
    return Tensor(std::move(s), std::vector<double>(data_.begin() + begin * stride, data_.begin() + end * stride));
}

Tensor stack(std::span<const Tensor> items) {
    if (items.empty()) throw ShapeError("stack: no tensors");
    Shape s{items.size()};
    s.insert(s.end(), items[0].shape().begin(), items[0].shape().end());
    std::vector<double> data;
    data.reserve(shape_size(s));
    for (const auto& t : items) {
        if (t.shape() != items[0].shape()) shape_mismatch("stack", items[0].shape(), t.shape());
        data.insert(data.end(), t.data().begin(), t.data().end());
    }
    return Tensor(std::move(s), std::move(data));
}

Tensor gather_rows(const Tensor& source, std::span<const std::size_t> indices) {
    if (source.rank() == 0) throw ShapeError("gather_rows: scalar source");
    if (indices.empty()) throw ShapeError("gather_rows: no indices");
    const std::size_t stride = source.size() / source.dim(0);
    Shape s = source.shape();
    s[0] = indices.size();
    std::vector<double> data(indices.size() * stride);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= source.dim(0)) throw std::out_of_range("gather_rows: index out of range");
        std::copy_n(source.ptr() + indices[i] * stride, stride, data.data() + i * stride);
    }
    return Tensor(std::move(s), std::move(data));
}

// ---------------------------------------------------------------------------

const Tensor& Var::value() const { return tape().node(*this).value; }
const Tensor& Var::grad() const { return tape().node(*this).grad; }
bool Var::requires_grad() const { return tape().node(*this).requires_grad; }

Tape& Var::tape() const {
    if (!tape_) throw std::logic_error("Var: not attached to a tape");
    return *tape_;
}

const Tape::Node& Tape::node(const Var& v) const {
    if (v.tape_ != this || v.id_ >= nodes_.size()) throw std::logic_error("Var: foreign or stale handle");
    return nodes_[v.id_];
}

Var Tape::leaf(Tensor value, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), Tensor(), requires_grad, {}, nullptr});
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::span<const Var> parents, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    for (const auto& p : parents) {
        if (p.tape_ != this) throw std::logic_error("Tape::record: operand belongs to another tape");
        n.parents.push_back(p.id_);
        n.requires_grad = n.requires_grad || nodes_[p.id_].requires_grad;
    }
    if (n.requires_grad) {
        n.backward = std::move(backward);
    }
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

void Tape::backward(const Var& loss) {
    const Node& root = node(loss);
    if (root.value.size() != 1) {
        throw ShapeError("backward: loss must be a scalar, got " + shape_str(root.value.shape()));
    }
    if (!root.requires_grad) {
        throw std::logic_error("backward: loss does not depend on any differentiable input");
    }
    for (auto& n : nodes_) {
        n.grad = Tensor();
    }
    nodes_[loss.id_].grad = Tensor(root.value.shape(), 1.0);

    std::vector<Tensor*> parent_grads;
    for (std::size_t i = loss.id_ + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
        parent_grads.clear();
        for (auto p : n.parents) {
            Node& parent = nodes_[p];
            if (!parent.requires_grad) {
                parent_grads.push_back(nullptr);
                continue;
            }
            if (parent.grad.empty()) {
                parent.grad = parent.value.rank() == 0 ? Tensor::scalar(0.0) : Tensor(parent.value.shape());
            }
            parent_grads.push_back(&parent.grad);
        }
        n.backward(n.grad, parent_grads);
    }
}

// ---------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_rank("matmul", av, 2);
    require_rank("matmul", bv, 2);
    if (av.dim(1) != bv.dim(0)) shape_mismatch("matmul", av.shape(), bv.shape());
    const std::size_t n = av.dim(0), k = av.dim(1), m = bv.dim(1);
    Tensor out({n, m});
    MapMat(out.ptr(), n, m).noalias() = ConstMapMat(av.ptr(), n, k) * ConstMapMat(bv.ptr(), k, m);
    const Tensor* ap = &av;
    const Tensor* bp = &bv;
    return a.tape().record(std::move(out), {a, b}, [ap, bp, n, k, m](const Tensor& g, std::span<Tensor* const> pg) {
        ConstMapMat G(g.ptr(), n, m);
        if (pg[0]) MapMat(pg[0]->ptr(), n, k).noalias() += G * ConstMapMat(bp->ptr(), k, m).transpose();
        if (pg[1]) MapMat(pg[1]->ptr(), k, m).noalias() += ConstMapMat(ap->ptr(), n, k).transpose() * G;
    });
}

Var add(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.shape() != bv.shape()) shape_mismatch("add", av.shape(), bv.shape());
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return a.tape().record(std::move(out), {a, b}, [](const Tensor& g, std::span<Tensor* const> pg) {
        for (auto* p : pg) {
            if (!p) continue;
            for (std::size_t i = 0; i < g.size(); ++i) (*p)[i] += g[i];
        }
    });
}

Var sub(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.shape() != bv.shape()) shape_mismatch("sub", av.shape(), bv.shape());
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    return a.tape().record(std::move(out), {a, b}, [](const Tensor& g, std::span<Tensor* const> pg) {
        if (pg[0]) for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i];
        if (pg[1]) for (std::size_t i = 0; i < g.size(); ++i) (*pg[1])[i] -= g[i];
    });
}

Var mul(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.shape() != bv.shape()) shape_mismatch("mul", av.shape(), bv.shape());
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    const Tensor* ap = &av;
    const Tensor* bp = &bv;
    return a.tape().record(std::move(out), {a, b}, [ap, bp](const Tensor& g, std::span<Tensor* const> pg) {
        if (pg[0]) for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i] * (*bp)[i];
        if (pg[1]) for (std::size_t i = 0; i < g.size(); ++i) (*pg[1])[i] += g[i] * (*ap)[i];
    });
}

Var scale(const Var& a, double factor) {
    Tensor out = a.value();
    for (auto& v : out.data()) v *= factor;
    return a.tape().record(std::move(out), {a}, [factor](const Tensor& g, std::span<Tensor* const> pg) {
        for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i] * factor;
    });
}

Var add_scalar(const Var& a, double offset) {
    Tensor out = a.value();
    for (auto& v : out.data()) v += offset;
    return a.tape().record(std::move(out), {a}, [](const Tensor& g, std::span<Tensor* const> pg) {
        for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i];
    });
}

Var mul_const(const Var& a, const Tensor& factor) {
    const Tensor& av = a.value();
    if (av.shape() != factor.shape()) shape_mismatch("mul_const", av.shape(), factor.shape());
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factor[i];
    return a.tape().record(std::move(out), {a}, [factor](const Tensor& g, std::span<Tensor* const> pg) {
        for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i] * factor[i];
    });
}

Var add_bias(const Var& x, const Var& bias) {
    const Tensor& xv = x.value();
    const Tensor& bv = bias.value();
    require_rank("add_bias", bv, 1);
    if (xv.rank() == 0 || xv.shape().back() != bv.dim(0)) shape_mismatch("add_bias", xv.shape(), bv.shape());
    const std::size_t m = bv.dim(0);
    const std::size_t rows = xv.size() / m;
    Tensor out = xv;
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < m; ++j) out[r * m + j] += bv[j];
    }
    return x.tape().record(std::move(out), {x, bias}, [rows, m](const Tensor& g, std::span<Tensor* const> pg) {
        if (pg[0]) for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i];
        if (pg[1]) {
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t j = 0; j < m; ++j) (*pg[1])[j] += g[r * m + j];
            }
        }
    });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias) {
    const Tensor& xv = x.value();
    const Tensor& wv = weight.value();
    const Tensor& bv = bias.value();
    require_rank("conv2d input", xv, 4);
    require_rank("conv2d weight", wv, 4);
    require_rank("conv2d bias", bv, 1);
    if (wv.dim(0) != wv.dim(1) || wv.dim(0) % 2 == 0 || wv.dim(2) != xv.dim(3)) {
        shape_mismatch("conv2d", xv.shape(), wv.shape());
    }
    if (bv.dim(0) != wv.dim(3)) shape_mismatch("conv2d bias", wv.shape(), bv.shape());

    ConvGeometry geo{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(0), wv.dim(3), wv.dim(0) / 2};
    auto cols = std::make_shared<std::vector<double>>(geo.rows() * geo.patch());
    im2col(xv.ptr(), geo, cols->data());

    Tensor out({geo.n, geo.h, geo.w, geo.f});
    MapMat O(out.ptr(), geo.rows(), geo.f);
    O.noalias() = ConstMapMat(cols->data(), geo.rows(), geo.patch()) * ConstMapMat(wv.ptr(), geo.patch(), geo.f);
    O.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bv.ptr(), geo.f);

    const Tensor* wp = &wv;
    auto result = x.tape().record(std::move(out), {x, weight, bias},
        [geo, cols, wp](const Tensor& g, std::span<Tensor* const> pg) {
            ConstMapMat G(g.ptr(), geo.rows(), geo.f);
            ConstMapMat C(cols->data(), geo.rows(), geo.patch());
            if (pg[1]) MapMat(pg[1]->ptr(), geo.patch(), geo.f).noalias() += C.transpose() * G;
            if (pg[2]) {
                // Plain loop: Eigen's vectorised reduction order depends on alignment.
                double* gb = pg[2]->ptr();
                for (std::size_t r = 0; r < geo.rows(); ++r)
                    for (std::size_t f = 0; f < geo.f; ++f) gb[f] += g[r * geo.f + f];
            }
            if (pg[0]) {
                RowMat dcols = G * ConstMapMat(wp->ptr(), geo.patch(), geo.f).transpose();
                col2im_add(dcols.data(), geo, pg[0]->ptr());
            }
        });
    return result;
}

Var max_pool2(const Var& x) {
    const Tensor& xv = x.value();
    require_rank("max_pool2", xv, 4);
    const std::size_t n = xv.dim(0), h = xv.dim(1), w = xv.dim(2), c = xv.dim(3);
    const std::size_t oh = h / 2, ow = w / 2;
    if (oh == 0 || ow == 0) throw ShapeError("max_pool2: input too small " + shape_str(xv.shape()));
    Tensor out({n, oh, ow, c});
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t xx = 0; xx < ow; ++xx) {
                for (std::size_t ch = 0; ch < c; ++ch) {
                    std::size_t best = ((b * h + 2 * y) * w + 2 * xx) * c + ch;
                    for (std::size_t dy = 0; dy < 2; ++dy) {
                        for (std::size_t dx = 0; dx < 2; ++dx) {
                            std::size_t idx = ((b * h + 2 * y + dy) * w + 2 * xx + dx) * c + ch;
                            if (xv[idx] > xv[best]) best = idx;
                        }
                    }
                    std::size_t o = ((b * oh + y) * ow + xx) * c + ch;
                    out[o] = xv[best];
                    (*argmax)[o] = best;
                }
            }
        }
    }
    return x.tape().record(std::move(out), {x}, [argmax](const Tensor& g, std::span<Tensor* const> pg) {
        for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[(*argmax)[i]] += g[i];
    });
}

Var relu(const Var& x) {
    return unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
                 [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Var tanh(const Var& x) {
    return unary(x, [](double v) { return std::tanh(v); },
                 [](double, double out) { return 1.0 - out * out; });
}

Var square(const Var& x) {
    return unary(x, [](double v) { return v * v; }, [](double in, double) { return 2.0 * in; });
}

Var softmax(const Var& x) {
    const Tensor& xv = x.value();
    if (xv.rank() == 0) throw ShapeError("softmax: scalar input");
    const std::size_t cols = xv.shape().back();
    const std::size_t rows = xv.size() / cols;
    Tensor out(xv.shape());
    softmax_rows(xv.ptr(), out.ptr(), rows, cols);
    auto s = std::make_shared<Tensor>(out);
    return x.tape().record(std::move(out), {x}, [s, rows, cols](const Tensor& g, std::span<Tensor* const> pg) {
        for (std::size_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (std::size_t j = 0; j < cols; ++j) dot += g[r * cols + j] * (*s)[r * cols + j];
            for (std::size_t j = 0; j < cols; ++j) {
                (*pg[0])[r * cols + j] += (*s)[r * cols + j] * (g[r * cols + j] - dot);
            }
        }
    });
}

Var log_softmax(const Var& x) {
    const Tensor& xv = x.value();
    if (xv.rank() == 0) throw ShapeError("log_softmax: scalar input");
    const std::size_t cols = xv.shape().back();
    const std::size_t rows = xv.size() / cols;
    Tensor out(xv.shape());
    log_softmax_rows(xv.ptr(), out.ptr(), rows, cols);
    auto ls = std::make_shared<Tensor>(out);
    return x.tape().record(std::move(out), {x}, [ls, rows, cols](const Tensor& g, std::span<Tensor* const> pg) {
        for (std::size_t r = 0; r < rows; ++r) {
            double total = 0.0;
            for (std::size_t j = 0; j < cols; ++j) total += g[r * cols + j];
            for (std::size_t j = 0; j < cols; ++j) {
                (*pg[0])[r * cols + j] += g[r * cols + j] - std::exp((*ls)[r * cols + j]) * total;
            }
        }
    });
}

Var cross_entropy(const Var& logits, std::span<const int> labels) {
    const Tensor& lv = logits.value();
    require_labels("cross_entropy", lv, labels);
    const std::size_t n = lv.dim(0), k = lv.dim(1);
    auto ls = std::make_shared<Tensor>(lv.shape());
    log_softmax_rows(lv.ptr(), ls->ptr(), n, k);
    double loss = 0.0;
    for (std::size_t r = 0; r < n; ++r) loss -= (*ls)[r * k + labels[r]];
    loss /= static_cast<double>(n);
    std::vector<int> lab(labels.begin(), labels.end());
    return logits.tape().record(Tensor::scalar(loss), {logits},
        [ls, lab = std::move(lab), n, k](const Tensor& g, std::span<Tensor* const> pg) {
            const double scale = g[0] / static_cast<double>(n);
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t j = 0; j < k; ++j) {
                    double p = std::exp((*ls)[r * k + j]);
                    (*pg[0])[r * k + j] += scale * (p - (static_cast<int>(j) == lab[r] ? 1.0 : 0.0));
                }
            }
        });
}

Var reshape(const Var& x, Shape shape) {
    Tensor out = x.value().reshaped(std::move(shape));
    return x.tape().record(std::move(out), {x}, [](const Tensor& g, std::span<Tensor* const> pg) {
        for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i];
    });
}

Var clip(const Var& x, double lo, double hi) {
    if (lo > hi) throw std::invalid_argument("clip: lo > hi");
    return unary(x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
                 [lo, hi](double in, double) { return (in >= lo && in <= hi) ? 1.0 : 0.0; });
}

Var maximum(const Var& x, double floor) {
    return unary(x, [floor](double v) { return v > floor ? v : floor; },
                 [floor](double in, double) { return in > floor ? 1.0 : 0.0; });
}

Tensor sign(const Tensor& x) {
    Tensor out = x;
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] > 0.0) - (x[i] < 0.0);
    return out;
}

Var sign(const Var& x) { return x.tape().leaf(sign(x.value()), false); }

Var sum(const Var& x) {
    const Tensor& xv = x.value();
    double total = 0.0;
    for (double v : xv.data()) total += v;
    return x.tape().record(Tensor::scalar(total), {x}, [](const Tensor& g, std::span<Tensor* const> pg) {
        for (auto& v : pg[0]->data()) v += g[0];
    });
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var sum_per_sample(const Var& x) {
    const Tensor& xv = x.value();
    if (xv.rank() == 0) throw ShapeError("sum_per_sample: scalar input");
    const std::size_t n = xv.dim(0), stride = xv.size() / n;
    Tensor out({n});
    for (std::size_t b = 0; b < n; ++b) {
        double t = 0.0;
        for (std::size_t i = 0; i < stride; ++i) t += xv[b * stride + i];
        out[b] = t;
    }
    return x.tape().record(std::move(out), {x}, [n, stride](const Tensor& g, std::span<Tensor* const> pg) {
        for (std::size_t b = 0; b < n; ++b) {
            for (std::size_t i = 0; i < stride; ++i) (*pg[0])[b * stride + i] += g[b];
        }
    });
}

Var l1_norm(const Var& x) {
    const Tensor* xp = &x.value();
    return x.tape().record(Tensor::scalar(l1_norm(*xp)), {x}, [xp](const Tensor& g, std::span<Tensor* const> pg) {
        for (std::size_t i = 0; i < xp->size(); ++i) {
            double v = (*xp)[i];
            (*pg[0])[i] += g[0] * static_cast<double>((v > 0.0) - (v < 0.0));
        }
    });
}

Var l2_norm(const Var& x) {
    const Tensor* xp = &x.value();
    const double norm = l2_norm(*xp);
    return x.tape().record(Tensor::scalar(norm), {x}, [xp, norm](const Tensor& g, std::span<Tensor* const> pg) {
        if (norm == 0.0) return;
        for (std::size_t i = 0; i < xp->size(); ++i) (*pg[0])[i] += g[0] * (*xp)[i] / norm;
    });
}

Var linf_norm(const Var& x) {
    const Tensor* xp = &x.value();
    std::size_t best = 0;
    for (std::size_t i = 1; i < xp->size(); ++i) {
        if (std::abs((*xp)[i]) > std::abs((*xp)[best])) best = i;
    }
    const double norm = xp->size() ? std::abs((*xp)[best]) : 0.0;
    return x.tape().record(Tensor::scalar(norm), {x}, [xp, best](const Tensor& g, std::span<Tensor* const> pg) {
        double v = (*xp)[best];
        (*pg[0])[best] += g[0] * static_cast<double>((v > 0.0) - (v < 0.0));
    });
}

Var pick(const Var& logits, std::span<const int> labels) {
    const Tensor& lv = logits.value();
    require_labels("pick", lv, labels);
    const std::size_t n = lv.dim(0), k = lv.dim(1);
    Tensor out({n});
    std::vector<std::size_t> idx(n);
    for (std::size_t r = 0; r < n; ++r) {
        idx[r] = r * k + static_cast<std::size_t>(labels[r]);
        out[r] = lv[idx[r]];
    }
    return logits.tape().record(std::move(out), {logits}, [idx](const Tensor& g, std::span<Tensor* const> pg) {
        for (std::size_t r = 0; r < idx.size(); ++r) (*pg[0])[idx[r]] += g[r];
    });
}

Var max_except(const Var& logits, std::span<const int> labels) {
    const Tensor& lv = logits.value();
    require_labels("max_except", lv, labels);
    const std::size_t n = lv.dim(0), k = lv.dim(1);
    if (k < 2) throw ShapeError("max_except: need at least two classes");
    Tensor out({n});
    std::vector<std::size_t> idx(n);
    for (std::size_t r = 0; r < n; ++r) {
        std::size_t best = k;
        for (std::size_t j = 0; j < k; ++j) {
            if (static_cast<int>(j) == labels[r]) continue;
            if (best == k || lv[r * k + j] > lv[r * k + best]) best = j;
        }
        idx[r] = r * k + best;
        out[r] = lv[idx[r]];
    }
    return logits.tape().record(std::move(out), {logits}, [idx](const Tensor& g, std::span<Tensor* const> pg) {
        for (std::size_t r = 0; r < idx.size(); ++r) (*pg[0])[idx[r]] += g[r];
    });
}

Tensor softmax(const Tensor& logits) {
    if (logits.rank() == 0) throw ShapeError("softmax: scalar input");
    Tensor out(logits.shape());
    const std::size_t cols = logits.shape().back();
    softmax_rows(logits.ptr(), out.ptr(), logits.size() / cols, cols);
    return out;
}

double linf_norm(const Tensor& x) {
    double m = 0.0;
    for (double v : x.data()) m = std::max(m, std::abs(v));
    return m;
}

double l2_norm(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v * v;
    return std::sqrt(s);
}

double l1_norm(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += std::abs(v);
    return s;
}

// ---------------------------------------------------------------------------

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::Adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer(const std::string& name) {
    if (name == "adam") return OptimizerKind::Adam;
    if (name == "sgd") return OptimizerKind::Sgd;
    throw std::invalid_argument("unknown optimizer '" + name + "' (expected adam or sgd)");
}

Optimizer::Optimizer(OptimizerOptions options) : options_(options) {
    if (!(options_.learning_rate > 0.0)) throw std::invalid_argument("Optimizer: learning rate must be positive");
}

void Optimizer::step(std::span<Tensor> params, std::span<const Tensor> grads) {
    if (grads.size() != params.size()) {
        throw std::invalid_argument("Optimizer::step: " + std::to_string(params.size()) + " parameters but " +
                                    std::to_string(grads.size()) + " gradients");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].empty()) {
            throw std::invalid_argument("Optimizer::step: parameter " + std::to_string(i) + " has no gradient");
        }
        if (grads[i].shape() != params[i].shape()) shape_mismatch("Optimizer::step", params[i].shape(), grads[i].shape());
    }
    ++steps_;
    const double lr = options_.learning_rate;
    if (options_.kind == OptimizerKind::Sgd) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            for (std::size_t j = 0; j < params[i].size(); ++j) params[i][j] -= lr * grads[i][j];
        }
        return;
    }
    if (first_moment_.empty()) {
        for (const auto& p : params) {
            first_moment_.emplace_back(p.rank() == 0 ? Tensor::scalar(0.0) : Tensor(p.shape()));
            second_moment_.emplace_back(p.rank() == 0 ? Tensor::scalar(0.0) : Tensor(p.shape()));
        }
    } else if (first_moment_.size() != params.size()) {
        throw std::invalid_argument("Optimizer::step: parameter set changed between steps");
    }
    const double b1 = options_.beta1, b2 = options_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& m = first_moment_[i];
        Tensor& v = second_moment_[i];
        if (m.shape() != params[i].shape()) shape_mismatch("Optimizer::step", m.shape(), params[i].shape());
        for (std::size_t j = 0; j < params[i].size(); ++j) {
            const double g = grads[i][j];
            m[j] = b1 * m[j] + (1.0 - b1) * g;
            v[j] = b2 * v[j] + (1.0 - b2) * g * g;
            params[i][j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + options_.epsilon);
        }
    }
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'B', 'Z', 'W', '1'};

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
    auto v = std::bit_cast<std::uint64_t>(d);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_le(std::string_view bytes, std::size_t offset, int width) {
    if (offset + width > bytes.size()) {
        throw std::runtime_error("checkpoint: truncated at byte offset " + std::to_string(offset));
    }
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
    }
    return v;
}

} // namespace

std::string encode_checkpoint(std::span<const Tensor> tensors) {
    std::string out(kMagic, 4);
    for (const auto& t : tensors) {
        put_u32(out, static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
        for (double v : t.data()) put_f64(out, v);
    }
    return out;
}

std::vector<Tensor> decode_checkpoint(std::string_view bytes) {
    if (bytes.size() < 4 || bytes.substr(0, 4) != std::string_view(kMagic, 4)) {
        throw std::runtime_error("checkpoint: bad magic at byte offset 0");
    }
    std::vector<Tensor> out;
    std::size_t pos = 4;
    while (pos < bytes.size()) {
        const auto rank = static_cast<std::size_t>(get_le(bytes, pos, 4));
        pos += 4;
        Shape shape(rank);
        for (auto& d : shape) {
            d = static_cast<std::size_t>(get_le(bytes, pos, 4));
            pos += 4;
        }
        const std::size_t n = shape_size(shape);
        if (n == 0) throw std::runtime_error("checkpoint: zero-sized tensor at byte offset " + std::to_string(pos));
        std::vector<double> data(n);
        for (auto& v : data) {
            v = std::bit_cast<double>(get_le(bytes, pos, 8));
            pos += 8;
        }
        out.emplace_back(std::move(shape), std::move(data));
    }
    return out;
}

void write_checkpoint(const std::filesystem::path& path, std::span<const Tensor> tensors) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
    const std::string bytes = encode_checkpoint(tensors);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

std::vector<Tensor> read_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

} // namespace buzz
