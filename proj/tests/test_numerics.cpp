#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "savehr/grad_check.hpp"
#include "savehr/matrix.hpp"
#include "savehr/tape.hpp"

using namespace savehr;

namespace {

Matrix random_matrix(std::mt19937_64& rng, int rows, int cols, double scale = 1.0) {
    std::uniform_real_distribution<double> dist(-scale, scale);
    Matrix m(rows, cols);
    for (double& v : m.data) v = dist(rng);
    return m;
}

}  // namespace

TEST_CASE("matmul: identity and hand arithmetic") {
    Matrix id = Matrix::identity(3);
    std::mt19937_64 rng(1);
    Matrix m = random_matrix(rng, 3, 4);
    Matrix prod = matmul_values(id, m);
    for (std::size_t i = 0; i < m.size(); ++i) CHECK(prod.data[i] == m.data[i]);

    Matrix a = Matrix::from_rows({{1, 2}, {3, 4}});
    Matrix b = Matrix::from_rows({{5}, {6}});
    Matrix c = matmul_values(a, b);
    CHECK(c.at(0, 0) == 17.0);
    CHECK(c.at(1, 0) == 39.0);
}

TEST_CASE("matmul: shape mismatch names both shapes") {
    Matrix a(2, 3), b(4, 2);
    CHECK_THROWS_WITH_AS(matmul_values(a, b), doctest::Contains("2x3"), std::invalid_argument);
}

TEST_CASE("matmul: gradient of sum of outputs matches finite differences") {
    std::mt19937_64 rng(7);
    ParamSlot a("a", random_matrix(rng, 4, 3));
    ParamSlot b("b", random_matrix(rng, 3, 2));
    auto loss = [&](bool accumulate) {
        Tape t;
        Tape::Var s = t.sum_all(t.matmul(t.param(a), t.param(b)));
        if (accumulate) t.backward(s);
        return t.val(s).at(0, 0);
    };
    auto report = grad_check(loss, {&a, &b}, 12, 1e-6, 3);
    CHECK(report.pass);
}

TEST_CASE("row_softmax: symmetry, stability, formula oracle") {
    Tape t;
    Tape::Var z = t.row_softmax(t.constant(Matrix(1, 3)));
    for (int j = 0; j < 3; ++j) CHECK(t.val(z).at(0, j) == doctest::Approx(1.0 / 3).epsilon(1e-15));

    Tape::Var big = t.row_softmax(t.constant(Matrix(1, 2, {1000.0, 0.0})));
    CHECK(t.val(big).at(0, 0) == doctest::Approx(1.0));
    CHECK(t.val(big).at(0, 1) == doctest::Approx(0.0));
    CHECK(t.val(big).all_finite());

    // Direct high-precision evaluation of e^x_i / sum e^x_j.
    Tape::Var sm = t.row_softmax(t.constant(Matrix(1, 3, {1.0, 2.0, 3.0})));
    const long double e1 = expl(1.0L), e2 = expl(2.0L), e3 = expl(3.0L);
    const long double denom = e1 + e2 + e3;
    CHECK(t.val(sm).at(0, 0) == doctest::Approx(static_cast<double>(e1 / denom)).epsilon(1e-14));
    CHECK(t.val(sm).at(0, 1) == doctest::Approx(static_cast<double>(e2 / denom)).epsilon(1e-14));
    CHECK(t.val(sm).at(0, 2) == doctest::Approx(static_cast<double>(e3 / denom)).epsilon(1e-14));
}

TEST_CASE("row_softmax: rows sum to 1 for arbitrary finite input") {
    std::mt19937_64 rng(11);
    for (int rep = 0; rep < 50; ++rep) {
        Tape t;
        Matrix m = random_matrix(rng, 1 + rep % 5, 1 + (rep * 7) % 9, 50.0);
        Tape::Var s = t.row_softmax(t.constant(m));
        for (int i = 0; i < m.rows; ++i) {
            double sum = 0.0;
            for (int j = 0; j < m.cols; ++j) {
                sum += t.val(s).at(i, j);
                CHECK(t.val(s).at(i, j) >= 0.0);
            }
            CHECK(std::abs(sum - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("elementwise activations: values and stability") {
    Tape t;
    Tape::Var x = t.constant(Matrix(1, 3, {0.0, -1.0, 40.0}));
    CHECK(t.val(t.tanh_elem(x)).at(0, 0) == 0.0);
    CHECK(t.val(t.sigmoid_elem(x)).at(0, 0) == 0.5);
    CHECK(t.val(t.relu_elem(x)).at(0, 1) == 0.0);

    Tape::Var sat = t.sigmoid_elem(t.constant(Matrix(1, 2, {40.0, -40.0})));
    CHECK(t.val(sat).all_finite());
    CHECK(t.val(sat).at(0, 0) == doctest::Approx(1.0));
    CHECK(t.val(sat).at(0, 1) == doctest::Approx(0.0));
}

TEST_CASE("tanh gradient at x=0.7 matches finite difference within 1e-8") {
    ParamSlot x("x", Matrix(1, 1, {0.7}));
    auto loss = [&](bool accumulate) {
        Tape t;
        Tape::Var y = t.sum_all(t.tanh_elem(t.param(x)));
        if (accumulate) t.backward(y);
        return t.val(y).at(0, 0);
    };
    auto report = grad_check(loss, {&x}, 1, 1e-8);
    CHECK(report.pass);
    // Cross-check against the closed form 1 - tanh(0.7)^2.
    x.zero_grad();
    loss(true);
    CHECK(x.grad.at(0, 0) ==
          doctest::Approx(1.0 - std::tanh(0.7) * std::tanh(0.7)).epsilon(1e-12));
}

TEST_CASE("grad_check: quadratic loss exact to machine precision scale") {
    std::mt19937_64 rng(5);
    ParamSlot W("W", random_matrix(rng, 3, 4));
    Matrix x = random_matrix(rng, 4, 1);
    auto loss = [&](bool accumulate) {
        Tape t;
        Tape::Var wx = t.matmul(t.param(W), t.constant(x));
        Tape::Var l = t.scale(t.sum_all(t.hadamard(wx, wx)), 0.5);
        if (accumulate) t.backward(l);
        return t.val(l).at(0, 0);
    };
    auto report = grad_check(loss, {&W}, 12, 1e-10);
    CHECK(report.pass);
}

TEST_CASE("grad_check: corrupted backward rule fails (negative control)") {
    std::mt19937_64 rng(9);
    ParamSlot W("W", random_matrix(rng, 2, 2));
    auto loss = [&](bool accumulate) {
        Tape t;
        Tape::Var l = t.sum_all(t.tanh_elem(t.param(W)));
        if (accumulate) {
            t.backward(l);
            // Deliberate corruption.
            for (double& g : W.grad.data) g *= 1.5;
        }
        return t.val(l).at(0, 0);
    };
    auto report = grad_check(loss, {&W}, 4, 1e-4);
    CHECK_FALSE(report.pass);
}

TEST_CASE("grad_check: non-deterministic loss detected") {
    ParamSlot W("W", Matrix(1, 1, {1.0}));
    int calls = 0;
    auto loss = [&](bool) {
        return static_cast<double>(++calls);
    };
    CHECK_THROWS_WITH_AS(grad_check(loss, {&W}, 1, 1e-4), doctest::Contains("deterministic"),
                         std::runtime_error);
}

TEST_CASE("randomized composite graphs pass grad_check at 1e-4") {
    std::mt19937_64 rng(21);
    for (int rep = 0; rep < 5; ++rep) {
        ParamSlot A("A", random_matrix(rng, 3, 4));
        ParamSlot B("B", random_matrix(rng, 4, 3));
        ParamSlot c("c", random_matrix(rng, 3, 1));
        auto loss = [&](bool accumulate) {
            Tape t;
            Tape::Var prod = t.matmul(t.param(A), t.param(B));  // 3x3
            Tape::Var act = t.tanh_elem(prod);
            Tape::Var sm = t.row_softmax(t.sigmoid_elem(prod));
            Tape::Var mix = t.add(act, sm);
            Tape::Var v = t.matmul(mix, t.param(c));
            Tape::Var l = t.sum_all(t.relu_elem(v));
            if (accumulate) t.backward(l);
            return t.val(l).at(0, 0);
        };
        auto report = grad_check(loss, {&A, &B, &c}, 10, 1e-4, 100 + rep);
        CHECK(report.pass);
    }
}

TEST_CASE("matmul associativity on well-conditioned triples") {
    std::mt19937_64 rng(33);
    for (int rep = 0; rep < 10; ++rep) {
        Matrix a = random_matrix(rng, 4, 5);
        Matrix b = random_matrix(rng, 5, 3);
        Matrix c = random_matrix(rng, 3, 6);
        Matrix left = matmul_values(matmul_values(a, b), c);
        Matrix right = matmul_values(a, matmul_values(b, c));
        for (std::size_t i = 0; i < left.size(); ++i) {
            const double denom = std::max(1.0, std::abs(left.data[i]));
            CHECK(std::abs(left.data[i] - right.data[i]) / denom <= 1e-9);
        }
    }
}

TEST_CASE("zero_grads then backward is independent of prior history") {
    std::mt19937_64 rng(41);
    ParamSlot W("W", random_matrix(rng, 3, 3));
    auto run = [&]() {
        Tape t;
        Tape::Var l = t.sum_all(t.sigmoid_elem(t.param(W)));
        t.backward(l);
        return W.grad;
    };
    W.zero_grad();
    Matrix fresh = run();
    run();
    run();  // pollute
    W.zero_grad();
    Matrix again = run();
    for (std::size_t i = 0; i < fresh.size(); ++i) CHECK(fresh.data[i] == again.data[i]);
    for (double g : W.grad.data) CHECK(g == g);  // finite
    W.zero_grad();
    for (double g : W.grad.data) CHECK(g == 0.0);
}
