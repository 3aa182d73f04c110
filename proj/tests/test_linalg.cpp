#include <doctest.h>

#include <cmath>
#include <cstring>

#include "gruvar/linalg.hpp"
#include "gruvar/parallel.hpp"
#include "gruvar/rng.hpp"

using namespace gruvar;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
    Matrix m(r, c);
    for (double& v : m.data) v = rng.uniform(-2.0, 2.0);
    return m;
}

Vector random_vector(std::size_t n, Rng& rng) {
    Vector v(n);
    for (double& x : v) x = rng.uniform(-2.0, 2.0);
    return v;
}

}  // namespace

TEST_CASE("matvec identity, zero and hand-evaluated cases") {
    const Vector x{1.0, 2.0, 3.0};
    CHECK(matvec(Matrix::identity(3), x) == x);

    const Matrix zero(2, 3);
    CHECK(matvec(zero, x) == Vector{0.0, 0.0});

    Matrix a(2, 2);
    a(0, 0) = 1; a(0, 1) = 2; a(1, 0) = 3; a(1, 1) = 4;
    CHECK(matvec(a, Vector{1.0, 1.0}) == Vector{3.0, 7.0});
}

TEST_CASE("matvec rejects mismatched shapes naming both") {
    const Matrix a(2, 3);
    try {
        matvec(a, Vector{1.0, 2.0});
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("2x3") != std::string::npos);
        CHECK(msg.find("2") != std::string::npos);
    }
}

TEST_CASE("matvec is linear on random instances") {
    Rng rng(11);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t n = 1 + rng.uniform_index(6);
        const std::size_t m = 1 + rng.uniform_index(6);
        const Matrix a = random_matrix(n, m, rng);
        const Vector x = random_vector(m, rng);
        const Vector y = random_vector(m, rng);
        const double alpha = rng.uniform(-1.5, 1.5);
        const double beta = rng.uniform(-1.5, 1.5);

        Vector combo(m);
        for (std::size_t j = 0; j < m; ++j) combo[j] = alpha * x[j] + beta * y[j];
        const Vector lhs = matvec(a, combo);
        const Vector ax = matvec(a, x);
        const Vector ay = matvec(a, y);
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(lhs[i] == doctest::Approx(alpha * ax[i] + beta * ay[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("parallel kernels are bit-identical to the serial references") {
    Rng rng(23);
    const int prev_threads = max_threads();
    set_max_threads(4);
    for (const std::size_t n : {8, 64, 300, 513}) {
        const Matrix a = random_matrix(n, n + 3, rng);
        const Vector x = random_vector(n + 3, rng);
        const Vector yn = random_vector(n, rng);

        const Vector serial = matvec_serial(a, x);
        const Vector parallel = matvec(a, x);
        CHECK(std::memcmp(serial.data(), parallel.data(), n * sizeof(double)) == 0);

        const Vector ts = matvec_transpose_serial(a, yn);
        const Vector tp = matvec_transpose(a, yn);
        CHECK(std::memcmp(ts.data(), tp.data(), (n + 3) * sizeof(double)) == 0);

        Matrix acc_s = random_matrix(n, n + 3, rng);
        Matrix acc_p = acc_s;
        add_outer_serial(acc_s, yn, x);
        add_outer(acc_p, yn, x);
        CHECK(std::memcmp(acc_s.data.data(), acc_p.data.data(),
                          acc_s.data.size() * sizeof(double)) == 0);
    }
    set_max_threads(prev_threads);
}

TEST_CASE("hadamard definition, identity and annihilator") {
    CHECK(hadamard(Vector{1.0, 2.0}, Vector{3.0, 4.0}) == Vector{3.0, 8.0});

    Rng rng(3);
    const Vector a = random_vector(5, rng);
    CHECK(hadamard(a, Vector(5, 1.0)) == a);
    CHECK(hadamard(a, Vector(5, 0.0)) == Vector(5, 0.0));
    CHECK_THROWS_AS(hadamard(Vector{1.0}, Vector{1.0, 2.0}), ShapeError);
}

TEST_CASE("activations: fixed points and saturation") {
    CHECK(activate(Activation::Sigmoid, Vector{0.0}) == Vector{0.5});
    CHECK(activate(Activation::Relu, Vector{-1.0, 2.0}) == Vector{0.0, 2.0});
    CHECK(activate(Activation::Tanh, Vector{0.0}) == Vector{0.0});

    // saturating inputs must stay finite
    const Vector extremes{-1e6, -750.0, 750.0, 1e6};
    for (const Activation g : {Activation::Sigmoid, Activation::Tanh, Activation::Relu}) {
        for (double v : activate(g, extremes)) CHECK(std::isfinite(v));
    }
}

TEST_CASE("sigmoid symmetry sigma(-v) = 1 - sigma(v)") {
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
        const double v = rng.uniform(-30.0, 30.0);
        CHECK(sigmoid(-v) == doctest::Approx(1.0 - sigmoid(v)).epsilon(1e-12));
    }
}

TEST_CASE("softmax: symmetry, shift invariance, hand case") {
    const Vector uniform = softmax(Vector(10, 0.0));
    for (double p : uniform) CHECK(p == doctest::Approx(0.1).epsilon(1e-12));

    const Vector thirds = softmax(Vector{7.25, 7.25, 7.25});
    for (double p : thirds) CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    const Vector probs = softmax(Vector{std::log(1.0), std::log(2.0), std::log(3.0)});
    CHECK(probs[0] == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
    CHECK(probs[1] == doctest::Approx(2.0 / 6.0).epsilon(1e-12));
    CHECK(probs[2] == doctest::Approx(3.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("softmax properties on random logits") {
    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t k = 1 + rng.uniform_index(8);
        const Vector logits = random_vector(k, rng);
        const Vector p = softmax(logits);

        double sum = 0.0;
        for (double v : p) sum += v;
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));

        // argmax preserved
        std::size_t arg_logit = 0, arg_prob = 0;
        for (std::size_t i = 1; i < k; ++i) {
            if (logits[i] > logits[arg_logit]) arg_logit = i;
            if (p[i] > p[arg_prob]) arg_prob = i;
        }
        CHECK(arg_logit == arg_prob);

        // shift invariance
        const double c = rng.uniform(-40.0, 40.0);
        Vector shifted = logits;
        for (double& v : shifted) v += c;
        const Vector p2 = softmax(shifted);
        for (std::size_t i = 0; i < k; ++i) {
            CHECK(p2[i] == doctest::Approx(p[i]).epsilon(1e-12));
        }
    }
}
