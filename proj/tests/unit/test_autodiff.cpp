#include <doctest.h>

#include <cmath>

#include "cemlab/autodiff.hpp"
#include "helpers.hpp"

using namespace cemlab;
using testing::GraphFn;

TEST_SUITE("autodiff") {

TEST_CASE("matmul values") {
    Tape t;
    const DiffArray eye = t.constant(Array::from_rows({{1, 0}, {0, 1}}));
    const DiffArray col = t.constant(Array::from_rows({{3}, {4}}));
    CHECK(matmul(eye, col).value() == Array::from_rows({{3}, {4}}));
    const DiffArray row = t.constant(Array::from_rows({{1, 2}}));
    CHECK(matmul(row, col).value() == Array::from_rows({{11}}));
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Tape t;
    const DiffArray a = t.constant(Array({2, 3}, 1.0));
    const DiffArray b = t.constant(Array({2, 3}, 1.0));
    try {
        (void)matmul(a, b);
        FAIL("expected an error");
    } catch (const Error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("2x3") != std::string::npos);
    }
}

TEST_CASE("gradient of sum(A B) with respect to A matches finite differences") {
    const GraphFn f = [](Tape& t, const std::vector<DiffArray>& v) {
        return sum(matmul(v[0], t.constant(Array::from_rows({{3}, {4}}))));
    };
    const std::vector<Array> in{Array::from_rows({{1, 2}})};
    const auto analytic = testing::analytic_grads(f, in);
    const auto numeric = testing::numeric_grads(f, in);
    CHECK(numeric[0].data[0] == doctest::Approx(3.0).epsilon(1e-8));
    CHECK(numeric[0].data[1] == doctest::Approx(4.0).epsilon(1e-8));
    CHECK(testing::max_relative_error(analytic, numeric) < 1e-6);
}

TEST_CASE("elementwise values") {
    Tape t;
    CHECK(sigmoid(t.constant(Array::scalar(0.0))).value().data[0] == 0.5);
    CHECK(leaky_relu(t.constant(Array::scalar(-2.0)), 0.01).value().data[0] == doctest::Approx(-0.02));
    CHECK(leaky_relu(t.constant(Array::scalar(-2.0))).value().data[0] == doctest::Approx(-0.02));
    const DiffArray c = concat({t.constant(testing::row({1, 2})), t.constant(testing::row({3}))});
    CHECK(c.value() == testing::row({1, 2, 3}));
    CHECK(slice_cols(c, 1, 3).value() == testing::row({2, 3}));
    CHECK(scale(t.constant(testing::row({1, 2})), -1.0, 1.0).value() == testing::row({0, -1}));
}

TEST_CASE("sigmoid is stable for large magnitudes") {
    Tape t;
    const Array v = sigmoid(t.constant(testing::row({-800.0, 800.0}))).value();
    CHECK(v.data[0] >= 0.0);
    CHECK(v.data[0] < 1e-300);
    CHECK(v.data[1] == 1.0);
    CHECK(std::isfinite(stable_sigmoid(-1e4)));
}

TEST_CASE("broadcasting: scalar, row and column operands") {
    Tape t;
    const DiffArray m = t.constant(Array::from_rows({{1, 2}, {3, 4}}));
    CHECK(add(m, t.constant(Array::scalar(1))).value() == Array::from_rows({{2, 3}, {4, 5}}));
    CHECK(add(m, t.constant(testing::row({10, 20}))).value() == Array::from_rows({{11, 22}, {13, 24}}));
    CHECK(mul(m, t.constant(Array::from_rows({{2}, {3}}))).value() == Array::from_rows({{2, 4}, {9, 12}}));
    CHECK(sub(t.constant(Array::scalar(1)), m).value() == Array::from_rows({{0, -1}, {-2, -3}}));
    CHECK_THROWS_AS(add(m, t.constant(Array({3, 2}, 0.0))), Error);
    CHECK_THROWS_AS(concat({m, t.constant(Array({3, 1}, 0.0))}), Error);
}

TEST_CASE("losses") {
    Tape t;
    const std::vector<int> zero{0};
    const double ce = softmax_cross_entropy(t.constant(testing::row({10, -10})), zero).value().data[0];
    CHECK(ce == doctest::Approx(std::log1p(std::exp(-20.0))).epsilon(1e-12));
    CHECK(ce == doctest::Approx(2.06e-9).epsilon(1e-2));

    const Array one = Array::scalar(1.0);
    CHECK(binary_cross_entropy(t.constant(Array::scalar(0.0)), one).value().data[0] ==
          doctest::Approx(std::log(2.0)));
    const std::vector<double> w{2.0};
    CHECK(binary_cross_entropy(t.constant(Array::scalar(0.0)), one, w).value().data[0] ==
          doctest::Approx(2.0 * std::log(2.0)));

    CHECK_THROWS_AS(binary_cross_entropy(t.constant(Array::scalar(0.0)), Array::scalar(0.5)), Error);
    const std::vector<double> bad{0.0};
    CHECK_THROWS_AS(binary_cross_entropy(t.constant(Array::scalar(0.0)), one, bad), Error);
    const std::vector<int> out_of_range{2};
    CHECK_THROWS_AS(softmax_cross_entropy(t.constant(testing::row({1, 2})), out_of_range), Error);
}

TEST_CASE("softmax cross-entropy is finite for logits up to 1e3") {
    Tape t;
    const std::vector<int> labels{0, 1};
    const DiffArray logits = t.variable(Array::from_rows({{1000, -1000}, {1000, -1000}}));
    const DiffArray loss = softmax_cross_entropy(logits, labels);
    CHECK(std::isfinite(loss.value().data[0]));
    CHECK(loss.value().data[0] == doctest::Approx(1000.0));
    t.backward(loss);
    for (double g : logits.grad().data) CHECK(std::isfinite(g));
}

TEST_CASE("backward examples") {
    {
        Tape t;
        const DiffArray x = t.variable(testing::row({1, 2, 3}));
        t.backward(sum(mul(x, x)));
        CHECK(x.grad() == testing::row({2, 4, 6}));
    }
    {
        Tape t;
        const DiffArray x = t.variable(testing::row({1, 2, 3}));
        const DiffArray c = t.constant(Array::scalar(5.0));
        t.backward(sum(c));
        CHECK(x.grad() == testing::row({0, 0, 0}));
    }
    {
        Tape t;
        const DiffArray x = t.variable(testing::row({1, 2}));
        CHECK_THROWS_AS(t.backward(x), Error);
    }
}

TEST_CASE("sigmoid(w x) composite matches finite differences") {
    const GraphFn f = [](Tape& t, const std::vector<DiffArray>& v) {
        return sum(sigmoid(matmul(t.constant(Array::from_rows({{0.3, -1.2}, {2.0, 0.5}})), v[0])));
    };
    const std::vector<Array> in{Array::from_rows({{0.7}, {-0.4}})};
    CHECK(testing::max_relative_error(testing::analytic_grads(f, in), testing::numeric_grads(f, in)) < 1e-4);
}

TEST_CASE("stop_gradient") {
    Tape t;
    const DiffArray x = t.variable(testing::row({1, 2}));
    CHECK(stop_gradient(x).value() == testing::row({1, 2}));
    t.backward(sum(stop_gradient(x)));
    CHECK(x.grad() == testing::row({0, 0}));

    Tape t2;
    const DiffArray y = t2.variable(testing::row({1, 2}));
    t2.backward(sum(add(y, stop_gradient(y))));
    CHECK(y.grad() == testing::row({1, 1}));
}

TEST_CASE("straight-through threshold") {
    Tape t;
    const DiffArray p = t.variable(testing::row({0.2, 0.5, 0.9}));
    const DiffArray b = straight_through_threshold(p, 0.5);
    CHECK(b.value() == testing::row({0, 1, 1}));
    t.backward(sum(scale(b, 3.0)));
    CHECK(p.grad() == testing::row({3, 3, 3}));
}

TEST_CASE("every differentiable op matches finite differences on random inputs") {
    CounterRng rng(11);
    const Shape s{3, 4};
    const std::vector<std::pair<const char*, GraphFn>> ops{
        {"add", [](Tape&, const std::vector<DiffArray>& v) { return sum(mul(add(v[0], v[1]), v[0])); }},
        {"sub", [](Tape&, const std::vector<DiffArray>& v) { return sum(mul(sub(v[0], v[1]), v[1])); }},
        {"mul", [](Tape&, const std::vector<DiffArray>& v) { return sum(mul(v[0], v[1])); }},
        {"leaky_relu", [](Tape&, const std::vector<DiffArray>& v) { return sum(mul(leaky_relu(v[0]), v[1])); }},
        {"sigmoid", [](Tape&, const std::vector<DiffArray>& v) { return sum(mul(sigmoid(v[0]), v[1])); }},
        {"scale", [](Tape&, const std::vector<DiffArray>& v) { return sum(mul(scale(v[0], -1.5, 0.3), v[1])); }},
        {"concat", [](Tape&, const std::vector<DiffArray>& v) {
             const DiffArray c = concat({v[0], v[1]});
             return sum(mul(c, c));
         }},
        {"slice", [](Tape&, const std::vector<DiffArray>& v) {
             return sum(mul(slice_cols(v[0], 1, 3), slice_cols(v[1], 0, 2)));
         }},
        {"bce", [](Tape&, const std::vector<DiffArray>& v) {
             const Array targets = Array::from_rows({{1, 0, 1, 0}, {0, 0, 1, 1}, {1, 1, 0, 0}});
             const std::vector<double> w{1.0, 2.0, 0.5, 3.0};
             return binary_cross_entropy(mul(v[0], v[1]), targets, w);
         }},
        {"softmax_ce", [](Tape&, const std::vector<DiffArray>& v) {
             const std::vector<int> y{3, 0, 2};
             return softmax_cross_entropy(add(v[0], v[1]), y);
         }},
    };
    for (const auto& [name, f] : ops) {
        CAPTURE(name);
        for (int trial = 0; trial < 5; ++trial) {
            const std::vector<Array> in{testing::random_array(s, rng), testing::random_array(s, rng)};
            CHECK(testing::max_relative_error(testing::analytic_grads(f, in), testing::numeric_grads(f, in)) < 1e-4);
        }
    }
}

TEST_CASE("random composite graphs match finite differences") {
    CounterRng rng(2024);
    for (int g = 0; g < 100; ++g) {
        const testing::RandomGraph rg = testing::random_graph(rng);
        CAPTURE(g);
        CHECK(testing::max_relative_error(testing::analytic_grads(rg.f, rg.inputs),
                                          testing::numeric_grads(rg.f, rg.inputs)) < 1e-4);
    }
}

TEST_CASE("earlier values stay valid while the tape grows") {
    Tape t;
    const DiffArray x = t.variable(testing::row({1, 2, 3}));
    const Array& held = x.value();
    DiffArray y = x;
    for (int i = 0; i < 2000; ++i) y = scale(y, 1.0);
    CHECK(&held == &x.value());
    CHECK(held == testing::row({1, 2, 3}));
}

TEST_CASE("backward is deterministic") {
    CounterRng rng(5);
    const std::vector<Array> in{testing::random_array({4, 3}, rng), testing::random_array({3, 2}, rng)};
    const GraphFn f = [](Tape&, const std::vector<DiffArray>& v) { return sum(sigmoid(matmul(v[0], v[1]))); };
    const auto a = testing::analytic_grads(f, in);
    const auto b = testing::analytic_grads(f, in);
    CHECK(a[0] == b[0]);
    CHECK(a[1] == b[1]);
}

TEST_CASE("tape records parents before children and gradients match value shapes") {
    Tape t;
    const DiffArray a = t.variable(Array({2, 3}, 0.5));
    const DiffArray b = sigmoid(a);
    const DiffArray c = sum(b);
    CHECK(a.id() < b.id());
    CHECK(b.id() < c.id());
    t.backward(c);
    CHECK(a.grad().shape == a.shape());
    CHECK(b.grad().shape == b.shape());
}

}
