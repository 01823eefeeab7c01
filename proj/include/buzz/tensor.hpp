#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace buzz {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Dense row-major array of doubles.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double value) { return Tensor({}, std::vector<double>{value}); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t dim(std::size_t axis) const;
    bool empty() const { return data_.empty(); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    double* ptr() { return data_.data(); }
    const double* ptr() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // Value of a single-element tensor.
    double item() const;

    Tensor reshaped(Shape shape) const;

    // Sub-tensor along the leading axis, leading axis dropped.
    Tensor slice0(std::size_t index) const;
    // Rows [begin, end) along the leading axis, leading axis kept.
    Tensor rows(std::size_t begin, std::size_t end) const;

    bool operator==(const Tensor& other) const = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

// Stacks equally shaped tensors along a new leading axis.
Tensor stack(std::span<const Tensor> items);
// Picks leading-axis entries in the given order.
Tensor gather_rows(const Tensor& source, std::span<const std::size_t> indices);

class Tape;

// Handle to a value recorded on a Tape.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    // Gradient after Tape::backward; an empty tensor if none reached this node.
    const Tensor& grad() const;
    bool requires_grad() const;
    Tape& tape() const;
    std::size_t id() const { return id_; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

// Receives the output gradient and one pointer per parent; a null pointer
// means that parent does not participate in differentiation.
using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> parent_grads)>;

// Append-only record of primitive operations. Node order is a topological
// order because a node can only reference nodes recorded before it.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor value, bool requires_grad = false);
    Var record(Tensor value, std::span<const Var> parents, BackwardFn backward);
    Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn backward) {
        return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(backward));
    }

    // Reverse sweep from a scalar loss. Clears gradients from earlier sweeps.
    void backward(const Var& loss);

    std::size_t size() const { return nodes_.size(); }

private:
    friend class Var;

    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        std::vector<std::size_t> parents;
        BackwardFn backward;
    };

    const Node& node(const Var& v) const;

    std::deque<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Primitives. Every op records onto the tape of its first operand; all
// operands must share that tape.

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);
// Elementwise product with a constant of the same shape.
Var mul_const(const Var& a, const Tensor& factor);
// x[..., m] + bias[m]
Var add_bias(const Var& x, const Var& bias);

// x: [N,H,W,C], weight: [K,K,C,F], bias: [F]. Stride 1, zero padding
// keeping H and W.
Var conv2d(const Var& x, const Var& weight, const Var& bias);
// 2x2 window, stride 2, on [N,H,W,C]; odd trailing rows/cols dropped.
Var max_pool2(const Var& x);

Var relu(const Var& x);
Var tanh(const Var& x);
Var square(const Var& x);
// Softmax over the last axis.
Var softmax(const Var& x);
Var log_softmax(const Var& x);
// Mean cross-entropy of logits [N,k] against integer labels.
Var cross_entropy(const Var& logits, std::span<const int> labels);

Var reshape(const Var& x, Shape shape);
// Gradient passes where lo <= x <= hi.
Var clip(const Var& x, double lo, double hi);
// Elementwise max with a constant; gradient passes where x > floor.
Var maximum(const Var& x, double floor);
// sign(0) == 0. Not differentiable: output is a constant.
Var sign(const Var& x);

Var sum(const Var& x);
Var mean(const Var& x);
// Sum over every axis except the leading one: [N,...] -> [N].
Var sum_per_sample(const Var& x);
Var l1_norm(const Var& x);
Var l2_norm(const Var& x);
Var linf_norm(const Var& x);

// logits[n, labels[n]] for each row: [N,k] -> [N].
Var pick(const Var& logits, std::span<const int> labels);
// max over j != labels[n] of logits[n, j]: [N,k] -> [N].
Var max_except(const Var& logits, std::span<const int> labels);

// Plain-tensor helpers.
Tensor sign(const Tensor& x);
Tensor softmax(const Tensor& logits);
double linf_norm(const Tensor& x);
double l2_norm(const Tensor& x);
double l1_norm(const Tensor& x);

// ---------------------------------------------------------------------------

enum class OptimizerKind { Sgd, Adam };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(const std::string& name);

struct OptimizerOptions {
    OptimizerKind kind = OptimizerKind::Adam;
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

class Optimizer {
public:
    explicit Optimizer(OptimizerOptions options);

    // Applies one update; grads[i] must have the shape of params[i].
    void step(std::span<Tensor> params, std::span<const Tensor> grads);

    std::size_t step_count() const { return steps_; }
    const OptimizerOptions& options() const { return options_; }

private:
    OptimizerOptions options_;
    std::size_t steps_ = 0;
    std::vector<Tensor> first_moment_;
    std::vector<Tensor> second_moment_;
};

// ---------------------------------------------------------------------------
// Checkpoint format: "BZW1" then, per tensor, rank (u32 LE), dims (u32 LE
// each), payload (f64 LE each).

std::string encode_checkpoint(std::span<const Tensor> tensors);
std::vector<Tensor> decode_checkpoint(std::string_view bytes);
void write_checkpoint(const std::filesystem::path& path, std::span<const Tensor> tensors);
std::vector<Tensor> read_checkpoint(const std::filesystem::path& path);

} // namespace buzz
