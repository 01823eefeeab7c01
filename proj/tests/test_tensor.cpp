#include "doctest.h"
#include "gradcheck.hpp"

#include "buzz/tensor.hpp"

#include <cmath>

using namespace buzz;
using buzz::testing::random_tensor;

namespace {

// Direct sliding-window convolution, zero padding, used as oracle.
Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor& b) {
    const std::size_t n = x.dim(0), h = x.dim(1), wd = x.dim(2), c = x.dim(3);
    const std::size_t k = w.dim(0), f = w.dim(3);
    const long pad = static_cast<long>(k / 2);
    Tensor out({n, h, wd, f});
    for (std::size_t bi = 0; bi < n; ++bi)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < wd; ++xx)
                for (std::size_t o = 0; o < f; ++o) {
                    double acc = b[o];
                    for (std::size_t ky = 0; ky < k; ++ky)
                        for (std::size_t kx = 0; kx < k; ++kx) {
                            long sy = static_cast<long>(y + ky) - pad, sx = static_cast<long>(xx + kx) - pad;
                            if (sy < 0 || sx < 0 || sy >= static_cast<long>(h) || sx >= static_cast<long>(wd)) continue;
                            for (std::size_t ci = 0; ci < c; ++ci)
                                acc += x[((bi * h + sy) * wd + sx) * c + ci] * w[((ky * k + kx) * c + ci) * f + o];
                        }
                    out[((bi * h + y) * wd + xx) * f + o] = acc;
                }
    return out;
}

Tensor run_conv(const Tensor& x, const Tensor& w, const Tensor& b) {
    Tape t;
    return conv2d(t.leaf(x), t.leaf(w), t.leaf(b)).value();
}

} // namespace

TEST_CASE("softmax of equal logits is uniform") {
    Tape t;
    Var s = softmax(t.leaf(Tensor({3}, 0.0)));
    for (double v : s.value().data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("softmax rows lie on the simplex") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor logits = random_tensor({4, 6}, rng, 20.0);
        Tensor s = softmax(logits);
        for (std::size_t r = 0; r < 4; ++r) {
            double total = 0.0;
            for (std::size_t j = 0; j < 6; ++j) {
                double v = s[r * 6 + j];
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
                total += v;
            }
            CHECK(std::abs(total - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("2x2 max pooling picks the maximum") {
    Tape t;
    Var p = max_pool2(t.leaf(Tensor({1, 2, 2, 1}, {1, 2, 3, 4})));
    CHECK(p.shape() == Shape{1, 1, 1, 1});
    CHECK(p.value()[0] == 4.0);
}

TEST_CASE("conv of constant image with constant kernel") {
    Tensor out = run_conv(Tensor({1, 5, 5, 1}, 1.0), Tensor({3, 3, 1, 1}, 1.0), Tensor({1}, 0.0));
    Tensor oracle = naive_conv(Tensor({1, 5, 5, 1}, 1.0), Tensor({3, 3, 1, 1}, 1.0), Tensor({1}, 0.0));
    CHECK(out == oracle);
    CHECK(out[2 * 5 + 2] == 9.0);
    CHECK(out[0] == 4.0);
    CHECK(out[24] == 4.0);
    CHECK(out[2] == 6.0);
}

TEST_CASE("conv matches sliding-window oracle on random inputs") {
    Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor x = random_tensor({2, 5, 4, 3}, rng, 1.0);
        Tensor w = random_tensor({3, 3, 3, 2}, rng, 1.0);
        Tensor b = random_tensor({2}, rng, 1.0);
        Tensor got = run_conv(x, w, b);
        Tensor want = naive_conv(x, w, b);
        for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
    }
}

TEST_CASE("conv and matmul are linear in their input") {
    Rng rng(11);
    std::uniform_real_distribution<double> coef(-2.0, 2.0);
    for (int trial = 0; trial < 10; ++trial) {
        const double a = coef(rng), bcoef = coef(rng);
        Tensor x = random_tensor({1, 6, 6, 2}, rng, 1.0), y = random_tensor({1, 6, 6, 2}, rng, 1.0);
        Tensor w = random_tensor({3, 3, 2, 3}, rng, 1.0), zero({3}, 0.0);
        Tensor mix(x.shape());
        for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * x[i] + bcoef * y[i];
        Tensor lhs = run_conv(mix, w, zero), fx = run_conv(x, w, zero), fy = run_conv(y, w, zero);
        for (std::size_t i = 0; i < lhs.size(); ++i) CHECK(std::abs(lhs[i] - (a * fx[i] + bcoef * fy[i])) < 1e-9);

        Tape t;
        Tensor m = random_tensor({4, 5}, rng, 1.0);
        Tensor u = random_tensor({3, 4}, rng, 1.0), v = random_tensor({3, 4}, rng, 1.0), uv(u.shape());
        for (std::size_t i = 0; i < uv.size(); ++i) uv[i] = a * u[i] + bcoef * v[i];
        Tensor mu = matmul(t.leaf(u), t.leaf(m)).value(), mv = matmul(t.leaf(v), t.leaf(m)).value();
        Tensor muv = matmul(t.leaf(uv), t.leaf(m)).value();
        for (std::size_t i = 0; i < muv.size(); ++i) CHECK(std::abs(muv[i] - (a * mu[i] + bcoef * mv[i])) < 1e-9);
    }
}

TEST_CASE("shape mismatch names both shapes") {
    Tape t;
    Var a = t.leaf(Tensor({2, 3})), b = t.leaf(Tensor({4, 5}));
    try {
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        std::string msg = e.what();
        CHECK(msg.find("[2,3]") != std::string::npos);
        CHECK(msg.find("[4,5]") != std::string::npos);
    }
    CHECK_THROWS_AS(add(a, b), ShapeError);
}

TEST_CASE("backward of sum is all ones") {
    Tape t;
    Var x = t.leaf(Tensor({2, 3, 2}, 0.7), true);
    t.backward(sum(x));
    for (double g : x.grad().data()) CHECK(g == 1.0);
}

TEST_CASE("backward of x*x at 3 is 6") {
    Tape t;
    Var x = t.leaf(Tensor::scalar(3.0), true);
    t.backward(mul(x, x));
    CHECK(x.grad().item() == 6.0);
}

TEST_CASE("backward rejects non-scalar loss") {
    Tape t;
    Var x = t.leaf(Tensor({3}, 1.0), true);
    CHECK_THROWS_AS(t.backward(square(x)), ShapeError);
}

TEST_CASE("backward visits shared nodes once and accumulates fan-out") {
    Tape t;
    Var x = t.leaf(Tensor::scalar(2.0), true);
    Var y = square(x);               // 4
    Var z = add(mul(y, y), y);       // y^2 + y
    t.backward(z);                   // dz/dx = (2y + 1) * 2x = 9 * 4
    CHECK(x.grad().item() == doctest::Approx(36.0));
}

TEST_CASE("12-parameter two-layer net matches central differences") {
    auto net = buzz::testing::tiny_dense_net(2024);
    CHECK(net.parameter_count() == 12);
    CHECK(buzz::testing::max_gradient_error(net) < 1e-4);
}

TEST_CASE("randomized small networks pass the gradient check") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        auto net = buzz::testing::random_net(seed);
        CHECK(net.parameter_count() <= 500);
        CHECK(buzz::testing::max_gradient_error(net) < 1e-4);
    }
}

TEST_CASE("gradients of norm, clip, pick and margin primitives") {
    Tape t;
    Var x = t.leaf(Tensor({2, 3}, {0.5, -2.0, 1.0, 3.0, 0.25, -0.75}), true);
    std::vector<int> lab{2, 0};
    Var loss = add(add(l1_norm(x), linf_norm(x)),
                   add(sum(sub(pick(x, lab), max_except(x, lab))), sum(clip(x, -1.0, 1.0))));
    t.backward(loss);
    // l1: sign, linf: +1 at index 3, pick/max_except: +1 at (0,2),(1,0), -1 at (0,0),(1,1), clip: 1 inside.
    std::vector<double> want{1 - 1 + 1, -1 + 0, 1 + 1 + 1, 1 + 1 + 1 + 0, 1 - 1 + 1, -1 + 1};
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(x.grad()[i] == doctest::Approx(want[i]));
}

TEST_CASE("sign maps zero to zero and carries no gradient") {
    Tensor s = sign(Tensor({4}, {-0.5, 0.0, 2.0, -0.0}));
    CHECK(s == Tensor({4}, {-1.0, 0.0, 1.0, 0.0}));
    Tape t;
    Var x = t.leaf(Tensor({2}, 1.0), true);
    CHECK_FALSE(sign(x).requires_grad());
}

TEST_CASE("plain gradient descent step") {
    Optimizer opt({OptimizerKind::Sgd, 0.1});
    std::vector<Tensor> p{Tensor::scalar(1.0)};
    std::vector<Tensor> g{Tensor::scalar(2.0)};
    opt.step(p, g);
    CHECK(p[0].item() == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(opt.step_count() == 1);

    std::vector<Tensor> zero{Tensor::scalar(0.0)};
    opt.step(p, zero);
    CHECK(p[0].item() == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(opt.step_count() == 2);
}

TEST_CASE("adaptive-moment first step has magnitude of the learning rate") {
    Optimizer opt({OptimizerKind::Adam, 0.001});
    std::vector<Tensor> p{Tensor::scalar(0.0)};
    std::vector<Tensor> g{Tensor::scalar(1.0)};
    opt.step(p, g);
    // m_hat = 1, v_hat = 1: p = -lr / (1 + 1e-8)
    CHECK(p[0].item() == doctest::Approx(-0.001 / (1.0 + 1e-8)).epsilon(1e-12));
}

TEST_CASE("optimizer rejects a missing gradient") {
    Optimizer opt({OptimizerKind::Adam, 0.01});
    std::vector<Tensor> p{Tensor({2}, 1.0)};
    std::vector<Tensor> g{Tensor()};
    CHECK_THROWS_AS(opt.step(p, g), std::invalid_argument);
    CHECK(opt.step_count() == 0);
}

TEST_CASE("checkpoint layout and round trip") {
    std::vector<Tensor> ts{Tensor({2}, {1.0, -2.5}), Tensor::scalar(3.0)};
    std::string bytes = encode_checkpoint(ts);
    CHECK(bytes.substr(0, 4) == "BZW1");
    // rank 1, dim 2, two doubles; rank 0, one double
    CHECK(bytes.size() == 4 + (4 + 4 + 16) + (4 + 8));
    CHECK(static_cast<unsigned char>(bytes[4]) == 1);
    CHECK(static_cast<unsigned char>(bytes[8]) == 2);
    CHECK(decode_checkpoint(bytes) == ts);

    CHECK_THROWS(decode_checkpoint("BZW2"));
    CHECK_THROWS(decode_checkpoint(bytes.substr(0, bytes.size() - 3)));
}

TEST_CASE("checkpoint round trip property over random tensors") {
    Rng rng(5);
    std::uniform_int_distribution<std::size_t> rank(0, 3), dim(1, 4);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<Tensor> ts;
        for (int i = 0; i < 3; ++i) {
            Shape s(rank(rng));
            for (auto& d : s) d = dim(rng);
            ts.push_back(random_tensor(s, rng, 1e3));
        }
        CHECK(decode_checkpoint(encode_checkpoint(ts)) == ts);
    }
}

TEST_CASE("identical inputs give bit-identical outputs") {
    auto run = [] {
        auto net = buzz::testing::random_net(99);
        std::vector<Tensor> grads;
        double loss = buzz::testing::net_loss(net, net.params, net.input, &grads);
        return std::make_pair(loss, grads);
    };
    auto a = run(), b = run();
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
}
