#pragma once

// Test-only finite-difference oracle. Builds small random networks directly
// from tape primitives and compares reverse-mode gradients with central
// differences.

#include "buzz/random.hpp"
#include "buzz/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace buzz::testing {

struct GradCheckNet {
    enum class Kind { Dense, Conv };
    Kind kind = Kind::Dense;
    bool use_tanh = false;
    Tensor input;
    std::vector<int> labels;
    std::vector<Tensor> params;

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : params) n += p.size();
        return n;
    }
};

inline Tensor random_tensor(Shape shape, Rng& rng, double sd) {
    std::normal_distribution<double> dist(0.0, sd);
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = dist(rng);
    return t;
}

// Two-layer dense net with 12 parameters: 2 -> 2 (tanh) -> 2 classes.
inline GradCheckNet tiny_dense_net(std::uint64_t seed) {
    Rng rng(seed);
    GradCheckNet net;
    net.kind = GradCheckNet::Kind::Dense;
    net.use_tanh = true;
    net.input = random_tensor({1, 2}, rng, 1.0);
    net.labels = {1};
    net.params = {random_tensor({2, 2}, rng, 0.8), random_tensor({2}, rng, 0.3), random_tensor({2, 2}, rng, 0.8),
                  random_tensor({2}, rng, 0.3)};
    return net;
}

inline GradCheckNet random_net(std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_int_distribution<int> coin(0, 1);
    GradCheckNet net;
    net.use_tanh = coin(rng) == 1;
    const std::size_t classes = 3;
    const std::size_t batch = 2;
    std::vector<int> labels(batch);
    std::uniform_int_distribution<int> lab(0, static_cast<int>(classes) - 1);
    for (auto& l : labels) l = lab(rng);
    net.labels = labels;
    if (coin(rng) == 0) {
        net.kind = GradCheckNet::Kind::Dense;
        std::uniform_int_distribution<std::size_t> width(2, 8);
        const std::size_t in = width(rng), hidden = width(rng);
        net.input = random_tensor({batch, in}, rng, 1.0);
        net.params = {random_tensor({in, hidden}, rng, 0.7), random_tensor({hidden}, rng, 0.2),
                      random_tensor({hidden, classes}, rng, 0.7), random_tensor({classes}, rng, 0.2)};
    } else {
        net.kind = GradCheckNet::Kind::Conv;
        std::uniform_int_distribution<std::size_t> side(4, 6), chan(1, 2), filt(2, 3);
        const std::size_t s = side(rng), c = chan(rng), f = filt(rng);
        net.input = random_tensor({batch, s, s, c}, rng, 0.5);
        const std::size_t flat = (s / 2) * (s / 2) * f;
        net.params = {random_tensor({3, 3, c, f}, rng, 0.5), random_tensor({f}, rng, 0.2),
                      random_tensor({flat, classes}, rng, 0.5), random_tensor({classes}, rng, 0.2)};
    }
    return net;
}

// Loss on a fresh tape; leaves receive gradients when requested.
inline double net_loss(const GradCheckNet& net, const std::vector<Tensor>& params, const Tensor& input,
                       std::vector<Tensor>* param_grads = nullptr, Tensor* input_grad = nullptr) {
    Tape tape;
    const bool want = param_grads != nullptr;
    Var x = tape.leaf(input, want);
    std::vector<Var> p;
    for (const auto& t : params) p.push_back(tape.leaf(t, want));
    Var h;
    if (net.kind == GradCheckNet::Kind::Dense) {
        h = add_bias(matmul(x, p[0]), p[1]);
        h = net.use_tanh ? tanh(h) : relu(h);
    } else {
        h = conv2d(x, p[0], p[1]);
        h = net.use_tanh ? tanh(h) : relu(h);
        h = max_pool2(h);
        h = reshape(h, {h.shape()[0], h.value().size() / h.shape()[0]});
    }
    Var logits = add_bias(matmul(h, p[2]), p[3]);
    Var loss = add(cross_entropy(logits, net.labels), scale(sum(square(softmax(logits))), 0.1));
    if (want) {
        tape.backward(loss);
        param_grads->clear();
        for (auto& v : p) param_grads->push_back(v.grad());
        if (input_grad) *input_grad = x.grad();
    }
    return loss.value().item();
}

inline double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    return std::abs(analytic - numeric) / denom;
}

// Max relative error over every parameter and input entry.
inline double max_gradient_error(const GradCheckNet& net, double h = 1e-5) {
    std::vector<Tensor> grads;
    Tensor input_grad;
    net_loss(net, net.params, net.input, &grads, &input_grad);
    double worst = 0.0;
    std::vector<Tensor> params = net.params;
    for (std::size_t i = 0; i < params.size(); ++i) {
        for (std::size_t j = 0; j < params[i].size(); ++j) {
            const double keep = params[i][j];
            params[i][j] = keep + h;
            const double up = net_loss(net, params, net.input);
            params[i][j] = keep - h;
            const double down = net_loss(net, params, net.input);
            params[i][j] = keep;
            worst = std::max(worst, relative_error(grads[i][j], (up - down) / (2 * h)));
        }
    }
    Tensor input = net.input;
    for (std::size_t j = 0; j < input.size(); ++j) {
        const double keep = input[j];
        input[j] = keep + h;
        const double up = net_loss(net, params, input);
        input[j] = keep - h;
        const double down = net_loss(net, params, input);
        input[j] = keep;
        worst = std::max(worst, relative_error(input_grad[j], (up - down) / (2 * h)));
    }
    return worst;
}

} // namespace buzz::testing
