#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "wlas/tape.hpp"

using wlas::NDArray;
using wlas::Rng;
using wlas::Tape;

using Arr = NDArray<double>;

namespace {

Arr random_array(Rng& rng, std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
    Arr a(std::move(shape));
    for (std::int64_t i = 0; i < a.size(); ++i) a[i] = rng.uniform(lo, hi);
    return a;
}

// Values pairwise separated by at least `gap` so kinked ops (relu, maxpool)
// stay locally linear under finite-difference probing.
Arr separated_array(Rng& rng, std::vector<int> shape, double gap = 1e-3) {
    for (int attempt = 0; attempt < 200; ++attempt) {
        Arr a = random_array(rng, shape);
        bool ok = true;
        for (std::int64_t i = 0; i < a.size() && ok; ++i) {
            if (std::abs(a[i]) < gap) ok = false;
            for (std::int64_t j = i + 1; j < a.size() && ok; ++j)
                if (std::abs(a[i] - a[j]) < gap) ok = false;
        }
        if (ok) return a;
    }
    FAIL("could not draw a separated array");
    return Arr({1});
}

// Gradient check harness: builds loss = sum(weights * op(inputs)) on a fresh
// tape, compares backward() against the central-difference oracle on every
// input slot.
struct OpCase {
    std::vector<Arr> inputs;
    std::function<int(Tape<double>&, const std::vector<int>&)> build;
};

void check_case_gradients(const OpCase& c, Rng& rng, double tol = 1e-4) {
    Tape<double> probe;
    std::vector<int> probe_ids;
    for (std::size_t i = 0; i < c.inputs.size(); ++i)
        probe_ids.push_back(probe.input("x" + std::to_string(i), c.inputs[i]));
    const Arr weights = random_array(rng, probe.value(c.build(probe, probe_ids)).shape());

    auto loss_with = [&](const std::vector<Arr>& ins) {
        Tape<double> t;
        std::vector<int> ids;
        for (std::size_t i = 0; i < ins.size(); ++i)
            ids.push_back(t.input("x" + std::to_string(i), ins[i]));
        int out = c.build(t, ids);
        int l = t.sum(t.mul(out, t.constant(weights)));
        return t.value(l)[0];
    };

    Tape<double> t;
    std::vector<int> ids;
    for (std::size_t i = 0; i < c.inputs.size(); ++i)
        ids.push_back(t.input("x" + std::to_string(i), c.inputs[i]));
    int out = c.build(t, ids);
    int l = t.sum(t.mul(out, t.constant(weights)));
    t.backward(l);

    for (std::size_t slot = 0; slot < c.inputs.size(); ++slot) {
        std::vector<Arr> ins = c.inputs;
        auto f = [&](const Arr& x) {
            ins[slot] = x;
            return loss_with(ins);
        };
        const Arr fd = wlas::finite_difference_gradient<double>(f, c.inputs[slot], 1e-5);
        const Arr& an = t.grad(ids[slot]);
        CHECK(wlas::max_relative_error(an, fd) < tol);
    }
}

}  // namespace

TEST_CASE("forward examples") {
    SUBCASE("identity") {
        Tape<double> t;
        int x = t.input("x", Arr::from_data({3}, {1, 2, 3}));
        t.mark_output("y", x);
        auto out = t.forward({{"x", Arr::from_data({3}, {1, 2, 3})}});
        CHECK(out.at("y").vec() == std::vector<double>{1, 2, 3});
    }
    SUBCASE("sum of squares") {
        Tape<double> t;
        int x = t.input("x", Arr::from_data({1}, {3}));
        int y = t.sum(t.mul(x, x));
        CHECK(t.value(y)[0] == doctest::Approx(9.0));
    }
    SUBCASE("matmul of all-ones") {
        Tape<double> t;
        int a = t.input("a", Arr({2, 3}, 1.0));
        int b = t.input("b", Arr({3, 1}, 1.0));
        int c = t.matmul(a, b);
        CHECK(t.value(c).shape() == std::vector<int>{2, 1});
        CHECK(t.value(c)[0] == doctest::Approx(3.0));
        CHECK(t.value(c)[1] == doctest::Approx(3.0));
    }
}

TEST_CASE("backward examples") {
    SUBCASE("d/dx sum(x*x) = 2x") {
        Tape<double> t;
        int x = t.input("x", Arr::from_data({1}, {3}));
        int y = t.sum(t.mul(x, x));
        t.backward(y);
        CHECK(t.input_grad("x")[0] == doctest::Approx(6.0));
    }
    SUBCASE("d/dx sum(tanh(x)) at 0 = 1") {
        Tape<double> t;
        int x = t.input("x", Arr::from_data({1}, {0}));
        int y = t.sum(t.tanh(x));
        t.backward(y);
        CHECK(t.input_grad("x")[0] == doctest::Approx(1.0));
    }
    SUBCASE("two-step tiny model matches finite differences") {
        // h1 = tanh(W x1), h2 = tanh(W h1 + W x2), loss = sum(h2 * h2)
        Rng rng(7);
        const Arr w0 = random_array(rng, {3, 3});
        const Arr x1 = random_array(rng, {3});
        const Arr x2 = random_array(rng, {3});

        auto loss = [&](const Arr& w) {
            Tape<double> t;
            int wid = t.input("w", w);
            int h1 = t.tanh(t.matmul(wid, t.constant(x1)));
            int h2 = t.tanh(t.add(t.matmul(wid, h1), t.matmul(wid, t.constant(x2))));
            return t.value(t.sum(t.mul(h2, h2)))[0];
        };

        Tape<double> t;
        int wid = t.input("w", w0);
        int h1 = t.tanh(t.matmul(wid, t.constant(x1)));
        int h2 = t.tanh(t.add(t.matmul(wid, h1), t.matmul(wid, t.constant(x2))));
        t.backward(t.sum(t.mul(h2, h2)));

        const Arr fd = wlas::finite_difference_gradient<double>(loss, w0, 1e-5);
        CHECK(wlas::max_relative_error(t.input_grad("w"), fd) < 1e-4);
    }
}

TEST_CASE("finite difference oracle examples") {
    auto square = [](const Arr& x) { return x[0] * x[0]; };
    Arr g = wlas::finite_difference_gradient<double>(square, Arr::from_data({1}, {3.0}), 1e-5);
    CHECK(g[0] == doctest::Approx(6.0).epsilon(1e-8));

    auto ex = [](const Arr& x) { return std::exp(x[0]); };
    g = wlas::finite_difference_gradient<double>(ex, Arr::from_data({1}, {0.0}), 1e-5);
    CHECK(g[0] == doctest::Approx(1.0).epsilon(1e-9));

    auto bad = [](const Arr& x) { return std::log(x[0]); };
    CHECK_THROWS(wlas::finite_difference_gradient<double>(bad, Arr::from_data({1}, {0.0}), 1e-5));
}

TEST_CASE("every primitive agrees with finite differences at 100 random points") {
    Rng rng(20260808);
    const int rounds = 100;
    for (int round = 0; round < rounds; ++round) {
        // matmul, all three rank combinations
        check_case_gradients({{random_array(rng, {2, 3}), random_array(rng, {3, 2})},
                              [](Tape<double>& t, const std::vector<int>& a) {
                                  return t.matmul(a[0], a[1]);
                              }},
                             rng);
        check_case_gradients({{random_array(rng, {2, 3}), random_array(rng, {3})},
                              [](Tape<double>& t, const std::vector<int>& a) {
                                  return t.matmul(a[0], a[1]);
                              }},
                             rng);
        check_case_gradients({{random_array(rng, {2}), random_array(rng, {2, 3})},
                              [](Tape<double>& t, const std::vector<int>& a) {
                                  return t.matmul(a[0], a[1]);
                              }},
                             rng);
        check_case_gradients({{random_array(rng, {4}), random_array(rng, {4})},
                              [](Tape<double>& t, const std::vector<int>& a) {
                                  return t.add(a[0], a[1]);
                              }},
                             rng);
        check_case_gradients({{random_array(rng, {3, 2}), random_array(rng, {2})},
                              [](Tape<double>& t, const std::vector<int>& a) {
                                  return t.add_rowvec(a[0], a[1]);
                              }},
                             rng);
        check_case_gradients({{random_array(rng, {4}), random_array(rng, {4})},
                              [](Tape<double>& t, const std::vector<int>& a) {
                                  return t.mul(a[0], a[1]);
                              }},
                             rng);
        check_case_gradients({{random_array(rng, {4})},
                              [](Tape<double>& t, const std::vector<int>& a) {
                                  return t.scale(a[0], 0.37);
                              }},
                             rng);
        check_case_gradients({{random_array(rng, {4})},
                              [](Tape<double>& t, const std::vector<int>& a) { return t.tanh(a[0]); }},
                             rng);
        check_case_gradients({{random_array(rng, {4})},
                              [](Tape<double>& t, const std::vector<int>& a) {
                                  return t.sigmoid(a[0]);
                              }},
                             rng);
        check_case_gradients({{separated_array(rng, {4})},
                              [](Tape<double>& t, const std::vector<int>& a) { return t.relu(a[0]); }},
                             rng);
        check_case_gradients({{random_array(rng, {5})},
                              [](Tape<double>& t, const std::vector<int>& a) {
                                  return t.softmax(a[0]);
                              }},
                             rng);
        check_case_gradients({{random_array(rng, {3}), random_array(rng, {2})},
                              [](Tape<double>& t, const std::vector<int>& a) {
                                  return t.concat({a[0], a[1]});
                              }},
                             rng);
        check_case_gradients({{random_array(rng, {6})},
                              [](Tape<double>& t, const std::vector<int>& a) {
                                  return t.slice(a[0], 1, 3);
                              }},
                             rng);
        check_case_gradients({{random_array(rng, {3, 4})},
                              [](Tape<double>& t, const std::vector<int>& a) { return t.row(a[0], 1); }},
                             rng);
        check_case_gradients({{random_array(rng, {3}), random_array(rng, {3})},
                              [](Tape<double>& t, const std::vector<int>& a) {
                                  return t.stack_rows({a[0], a[1]});
                              }},
                             rng);
        check_case_gradients({{random_array(rng, {6})},
                              [](Tape<double>& t, const std::vector<int>& a) {
                                  return t.reshape(a[0], {3, 2});
                              }},
                             rng);
        check_case_gradients({{random_array(rng, {5})},
                              [](Tape<double>& t, const std::vector<int>& a) { return t.sum(a[0]); }},
                             rng);
        check_case_gradients({{random_array(rng, {6})},
                              [](Tape<double>& t, const std::vector<int>& a) {
                                  return t.cross_entropy(a[0], 2, 0.1);
                              }},
                             rng);
        check_case_gradients(
            {{random_array(rng, {2, 5, 5}), random_array(rng, {3, 2, 3, 3}), random_array(rng, {3})},
             [](Tape<double>& t, const std::vector<int>& a) {
                 return t.conv2d(a[0], a[1], a[2], 2, 1);
             }},
            rng);
        check_case_gradients({{separated_array(rng, {1, 4, 4})},
                              [](Tape<double>& t, const std::vector<int>& a) {
                                  return t.maxpool2d(a[0], 2, 2);
                              }},
                             rng);
    }
}

TEST_CASE("softmax properties") {
    Rng rng(11);
    for (int round = 0; round < 200; ++round) {
        Arr z = random_array(rng, {7}, -30.0, 30.0);
        Tape<double> t;
        int s = t.softmax(t.input("z", z));
        const Arr& p = t.value(s);
        double total = 0;
        for (std::int64_t i = 0; i < p.size(); ++i) {
            CHECK(p[i] >= 0.0);
            total += p[i];
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-9));

        const double shift = rng.uniform(-100.0, 100.0);
        Arr z2 = z;
        for (std::int64_t i = 0; i < z2.size(); ++i) z2[i] += shift;
        Tape<double> t2;
        const Arr& p2 = t2.value(t2.softmax(t2.input("z", z2)));
        for (std::int64_t i = 0; i < p.size(); ++i)
            CHECK(p2[i] == doctest::Approx(p[i]).epsilon(1e-9));
    }
}

TEST_CASE("forward replay is bit-identical") {
    Rng rng(5);
    Tape<double> t;
    Arr x0 = random_array(rng, {4});
    Arr w0 = random_array(rng, {4, 4});
    int x = t.input("x", x0);
    int w = t.param("w", w0);
    int h = t.tanh(t.matmul(w, x));
    int y = t.sum(t.mul(h, h));
    t.mark_output("loss", y);
    const double first = t.value(y)[0];

    auto out = t.forward({{"x", x0}});
    CHECK(out.at("loss")[0] == first);  // bitwise

    // param binding is deduplicated
    int w_again = t.param("w", w0);
    CHECK(w_again == w);
}

TEST_CASE("error paths") {
    Tape<double> t;
    CHECK_THROWS_WITH_AS(t.backward(0), doctest::Contains("before forward"), std::runtime_error);

    int a = t.input("a", Arr({2, 3}, 1.0));
    int b = t.input("b", Arr({2, 3}, 1.0));
    CHECK_THROWS_WITH_AS(t.matmul(a, b), doctest::Contains("matmul"), std::runtime_error);

    Tape<double> t2;
    t2.input("x", Arr({3}, 0.0));
    t2.mark_output("y", 0);
    CHECK_THROWS(t2.forward({{"x", Arr({4}, 0.0)}}));
    CHECK_THROWS(t2.forward({{"wrong_name", Arr({3}, 0.0)}}));
}
