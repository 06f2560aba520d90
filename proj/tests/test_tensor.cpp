#include "doctest.h"

#include <cmath>

#include "mdmask/ops.hpp"
#include "mdmask/tensor.hpp"
#include "util.hpp"

using namespace mdmask;
using testutil::random_tensor;

TEST_SUITE_BEGIN("tensor");

TEST_CASE("tensor invariants") {
    auto t = Tensor::make({2, 3});
    CHECK(t->numel() == 6);
    CHECK(t->all_finite());
    CHECK_THROWS_AS(Tensor::make({2, 0, 3}), DimensionError);
    CHECK_THROWS_AS(Tensor::from_data({2}, {1.0f, 2.0f, 3.0f}), DimensionError);

    t->data[3] = std::nanf("");
    CHECK_FALSE(t->all_finite());
}

TEST_CASE("backward requires scalar loss") {
    Graph g;
    auto v = Tensor::from_data({2}, {1.0f, 2.0f}, true);
    CHECK_THROWS_AS(g.backward(v), DimensionError);
}

TEST_CASE("backward: sum and quadratic") {
    {
        Graph g;
        auto w = Tensor::from_data({3}, {0.5f, -1.0f, 2.0f}, true);
        auto loss = ops::sum(g, w);
        g.backward(loss);
        CHECK(w->grad == std::vector<float>{1.0f, 1.0f, 1.0f});
    }
    {
        Graph g;
        auto w = Tensor::from_data({2}, {1.0f, 2.0f}, true);
        auto loss = ops::sum(g, ops::mul(g, w, w));
        g.backward(loss);
        CHECK(w->grad == std::vector<float>{2.0f, 4.0f});
    }
}

TEST_CASE("multi-use tensors accumulate over all paths") {
    Graph g;
    auto w = Tensor::from_data({2}, {3.0f, 4.0f}, true);
    auto y = ops::add(g, w, w);
    auto loss = ops::sum(g, y);
    g.backward(loss);
    CHECK(w->grad == std::vector<float>{2.0f, 2.0f});
}

TEST_CASE("conv2d: identity, zero and hand-computed kernels") {
    Graph g;
    auto x = Tensor::full({1, 1, 3, 3}, 1.0f);
    auto ident = Tensor::from_data({1, 1, 1, 1}, {1.0f});
    auto y = ops::conv2d(g, x, ident, 1, 0);
    CHECK(y->shape == std::vector<int>{1, 1, 3, 3});
    for (float v : y->data) CHECK(v == 1.0f);

    auto zeros = Tensor::zeros({2, 1, 3, 3});
    auto y0 = ops::conv2d(g, x, zeros, 1, 1);
    CHECK(y0->shape == std::vector<int>{1, 2, 3, 3});
    for (float v : y0->data) CHECK(v == 0.0f);

    auto x2 = Tensor::from_data({1, 1, 2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
    auto wfull = Tensor::full({1, 1, 2, 2}, 1.0f);
    auto y2 = ops::conv2d(g, x2, wfull, 1, 0);
    CHECK(y2->shape == std::vector<int>{1, 1, 1, 1});
    CHECK(y2->data[0] == 10.0f);
}

TEST_CASE("conv2d: dimension errors") {
    Graph g;
    auto x = Tensor::make({1, 2, 4, 4});
    auto w = Tensor::make({3, 1, 3, 3}); // channel mismatch
    CHECK_THROWS_AS(ops::conv2d(g, x, w, 1, 0), DimensionError);

    auto w2 = Tensor::make({3, 2, 3, 3});
    CHECK_THROWS_AS(ops::conv2d(g, x, w2, 2, 0), DimensionError); // (4-3)%2 != 0
    CHECK_THROWS_AS(ops::conv2d(g, x, w2, 0, 0), DimensionError);
    CHECK_THROWS_AS(ops::conv2d(g, x, w2, 1, -1), DimensionError);
}

TEST_CASE("batchnorm: normalized input passes through") {
    Graph g;
    // Channel values {-1, +1}: zero mean, unit (biased) variance.
    auto x = Tensor::from_data({2, 1, 1, 1}, {-1.0f, 1.0f});
    auto gamma = Tensor::full({1}, 1.0f);
    auto beta = Tensor::zeros({1});
    auto rm = Tensor::zeros({1});
    auto rv = Tensor::full({1}, 1.0f);
    auto y = ops::batchnorm(g, x, gamma, beta, rm, rv, true, 1e-12f);
    CHECK(y->data[0] == doctest::Approx(-1.0f).epsilon(1e-5));
    CHECK(y->data[1] == doctest::Approx(1.0f).epsilon(1e-5));
}

TEST_CASE("batchnorm: zero gamma broadcasts beta") {
    Graph g;
    Rng rng(7);
    auto x = random_tensor({2, 3, 4, 4}, rng);
    auto gamma = Tensor::zeros({3});
    auto beta = Tensor::from_data({3}, {0.5f, -1.0f, 2.0f});
    auto rm = Tensor::zeros({3});
    auto rv = Tensor::full({3}, 1.0f);
    auto y = ops::batchnorm(g, x, gamma, beta, rm, rv, true);
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 16; ++i) {
            CHECK(y->data[static_cast<size_t>(c) * 16 + i] == beta->data[static_cast<size_t>(c)]);
        }
}

TEST_CASE("batchnorm: channel {2,4} normalizes to {-1,+1}") {
    Graph g;
    auto x = Tensor::from_data({2, 1, 1, 1}, {2.0f, 4.0f});
    auto gamma = Tensor::full({1}, 1.0f);
    auto beta = Tensor::zeros({1});
    auto rm = Tensor::zeros({1});
    auto rv = Tensor::full({1}, 1.0f);
    auto y = ops::batchnorm(g, x, gamma, beta, rm, rv, true, 0.0f);
    CHECK(y->data[0] == doctest::Approx(-1.0f));
    CHECK(y->data[1] == doctest::Approx(1.0f));
    // Running stats moved toward batch stats (momentum 0.1).
    CHECK(rm->data[0] == doctest::Approx(0.3f));
    CHECK(rv->data[0] == doctest::Approx(0.9f * 1.0f + 0.1f * 1.0f));
}

TEST_CASE("batchnorm: eval mode uses running stats") {
    Graph g;
    auto x = Tensor::from_data({1, 1, 1, 2}, {3.0f, 5.0f});
    auto gamma = Tensor::full({1}, 2.0f);
    auto beta = Tensor::full({1}, 1.0f);
    auto rm = Tensor::full({1}, 3.0f);
    auto rv = Tensor::full({1}, 4.0f);
    auto y = ops::batchnorm(g, x, gamma, beta, rm, rv, false, 0.0f);
    CHECK(y->data[0] == doctest::Approx(1.0f));          // 2*(3-3)/2 + 1
    CHECK(y->data[1] == doctest::Approx(3.0f));          // 2*(5-3)/2 + 1
    CHECK(rm->data[0] == 3.0f);                          // untouched in eval
}

TEST_CASE("dense: identity, hand matmul, zero input") {
    Graph g;
    auto x = Tensor::from_data({1, 2}, {1.0f, 2.0f});
    auto ident = Tensor::from_data({2, 2}, {1.0f, 0.0f, 0.0f, 1.0f});
    auto b0 = Tensor::zeros({2});
    auto y = ops::dense(g, x, ident, b0);
    CHECK(y->data == std::vector<float>{1.0f, 2.0f});

    auto w = Tensor::from_data({2, 2}, {1.0f, 1.0f, 0.0f, 1.0f});
    auto b = Tensor::from_data({2}, {0.0f, 1.0f});
    auto y2 = ops::dense(g, x, w, b);
    CHECK(y2->data == std::vector<float>{3.0f, 3.0f});

    auto xz = Tensor::zeros({3, 2});
    auto y3 = ops::dense(g, xz, w, b);
    for (int i = 0; i < 3; ++i) {
        CHECK(y3->data[static_cast<size_t>(i) * 2 + 0] == 0.0f);
        CHECK(y3->data[static_cast<size_t>(i) * 2 + 1] == 1.0f);
    }

    auto wbad = Tensor::make({2, 3});
    CHECK_THROWS_AS(ops::dense(g, x, wbad, b), DimensionError);
}

TEST_CASE("softmax cross entropy: closed forms") {
    Graph g;
    auto uniform = Tensor::zeros({1, 5});
    auto l1 = ops::softmax_cross_entropy(g, uniform, {3});
    CHECK(l1->data[0] == doctest::Approx(std::log(5.0f)));

    auto onehot = Tensor::zeros({1, 4});
    onehot->data[2] = 50.0f; // overwhelming logit on the true class
    auto l2 = ops::softmax_cross_entropy(g, onehot, {2});
    CHECK(l2->data[0] == doctest::Approx(0.0f).epsilon(1e-6));

    auto two = Tensor::from_data({1, 2}, {1.0f, 0.0f});
    auto l3 = ops::softmax_cross_entropy(g, two, {0});
    CHECK(l3->data[0] == doctest::Approx(std::log(1.0f + std::exp(-1.0f))));

    CHECK_THROWS_AS(ops::softmax_cross_entropy(g, two, {2}), DimensionError);
    CHECK_THROWS_AS(ops::softmax_cross_entropy(g, two, {-1}), DimensionError);
}

TEST_CASE("relu and maxpool") {
    Graph g;
    auto x = Tensor::from_data({1, 1, 2, 2}, {-1.0f, 2.0f, 0.5f, -3.0f});
    auto r = ops::relu(g, x);
    CHECK(r->data == std::vector<float>{0.0f, 2.0f, 0.5f, 0.0f});

    auto p = ops::maxpool2d(g, x, 2);
    CHECK(p->shape == std::vector<int>{1, 1, 1, 1});
    CHECK(p->data[0] == 2.0f);

    auto odd = Tensor::make({1, 1, 3, 3});
    CHECK_THROWS_AS(ops::maxpool2d(g, odd, 2), DimensionError);
}

TEST_CASE("custom_grad: straight-through and scaled backward") {
    auto threshold = [](float r) { return r >= 0.0f ? 1.0f : 0.0f; };
    {
        Graph g;
        auto r = Tensor::from_data({3}, {-0.3f, 0.0f, 0.7f}, true);
        auto m = ops::custom_grad(g, r, threshold, [](float) { return 1.0f; });
        CHECK(m->data == std::vector<float>{0.0f, 1.0f, 1.0f});
        auto loss = ops::sum(g, m);
        g.backward(loss);
        CHECK(r->grad == std::vector<float>{1.0f, 1.0f, 1.0f}); // gradient passes unchanged
    }
    {
        Graph g;
        auto r = Tensor::from_data({1}, {0.0f}, true);
        auto sig_prime = [](float v) {
            const float s = 1.0f / (1.0f + std::exp(-v));
            return s * (1.0f - s);
        };
        auto m = ops::custom_grad(g, r, threshold, sig_prime);
        auto loss = ops::sum(g, m);
        g.backward(loss);
        CHECK(r->grad[0] == doctest::Approx(0.25f));
    }
    {
        Graph g;
        auto r = Tensor::from_data({4}, {-1.0f, 0.5f, 2.0f, -0.1f}, true);
        auto m = ops::custom_grad(g, r, threshold, [](float) { return 0.0f; });
        auto loss = ops::sum(g, m);
        g.backward(loss);
        for (float gv : r->grad) CHECK(gv == 0.0f);
    }
}

TEST_CASE("forward determinism") {
    Rng rng(11);
    auto x = random_tensor({2, 3, 8, 8}, rng);
    auto w = random_tensor({4, 3, 3, 3}, rng);
    Graph g1, g2;
    auto y1 = ops::conv2d(g1, x, w, 1, 1);
    auto y2 = ops::conv2d(g2, x, w, 1, 1);
    CHECK(testutil::bits_equal(y1->data, y2->data));
}

TEST_CASE("gradients match central finite differences on a composite net") {
    Rng rng(42);
    auto x = random_tensor({2, 1, 8, 8}, rng, false, 0.0f, 1.0f);
    auto w = random_tensor({4, 1, 3, 3}, rng, true, -0.5f, 0.5f);
    auto gamma = random_tensor({4}, rng, true, 0.5f, 1.5f);
    auto beta = random_tensor({4}, rng, true, -0.2f, 0.2f);
    auto dw = random_tensor({3, 64}, rng, true, -0.3f, 0.3f);
    auto db = random_tensor({3}, rng, true, -0.1f, 0.1f);
    const std::vector<int> labels = {0, 2};

    auto forward = [&]() {
        Graph g;
        auto rm = Tensor::zeros({4});
        auto rv = Tensor::full({4}, 1.0f);
        auto h = ops::conv2d(g, x, w, 1, 1);
        h = ops::batchnorm(g, h, gamma, beta, rm, rv, true);
        h = ops::relu(g, h);
        h = ops::maxpool2d(g, h, 2);
        h = ops::reshape(g, h, {2, 64});
        h = ops::dense(g, h, dw, db);
        auto loss = ops::softmax_cross_entropy(g, h, labels);
        return loss->data[0];
    };
    auto backward_once = [&]() {
        for (auto& t : {w, gamma, beta, dw, db}) {
            t->ensure_grad();
            t->zero_grad();
        }
        Graph g;
        auto rm = Tensor::zeros({4});
        auto rv = Tensor::full({4}, 1.0f);
        auto h = ops::conv2d(g, x, w, 1, 1);
        h = ops::batchnorm(g, h, gamma, beta, rm, rv, true);
        h = ops::relu(g, h);
        h = ops::maxpool2d(g, h, 2);
        h = ops::reshape(g, h, {2, 64});
        h = ops::dense(g, h, dw, db);
        auto loss = ops::softmax_cross_entropy(g, h, labels);
        g.backward(loss);
    };

    for (auto& t : {w, gamma, beta, dw, db}) {
        const float worst = testutil::max_fd_err(forward, backward_once, *t);
        CHECK(worst <= 1e-3f);
    }
}

TEST_CASE("BN scale invariance: conv+BN output unchanged under w -> c*w") {
    Rng rng(5);
    auto x = random_tensor({2, 1, 6, 6}, rng, false, 0.0f, 1.0f);
    auto w = random_tensor({3, 1, 3, 3}, rng, false, -0.5f, 0.5f);
    auto gamma = random_tensor({3}, rng, false, 0.5f, 1.5f);
    auto beta = random_tensor({3}, rng, false, -0.2f, 0.2f);

    auto run = [&](float c) {
        Graph g;
        auto ws = Tensor::make(w->shape);
        for (size_t i = 0; i < w->data.size(); ++i) ws->data[i] = c * w->data[i];
        auto rm = Tensor::zeros({3});
        auto rv = Tensor::full({3}, 1.0f);
        auto h = ops::conv2d(g, x, ws, 1, 1);
        return ops::batchnorm(g, h, gamma, beta, rm, rv, true);
    };

    auto base = run(1.0f);
    for (float c : {0.1f, 3.0f, 10.0f}) {
        auto scaled = run(c);
        for (size_t i = 0; i < base->data.size(); ++i)
            CHECK(std::abs(base->data[i] - scaled->data[i]) <= 1e-5f);
    }
}

TEST_SUITE_END();
