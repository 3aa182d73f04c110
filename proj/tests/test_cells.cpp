#include <doctest.h>

#include <cmath>
#include <cstring>
#include <utility>

#include "gruvar/cells.hpp"
#include "gruvar/rng.hpp"

using namespace gruvar;

namespace {

void randomize(CellParams& p, Rng& rng, double scale = 0.5) {
    for (auto& ref : tensor_refs(p)) {
        for (std::size_t i = 0; i < ref.size; ++i) ref.data[i] = rng.uniform(-scale, scale);
    }
}

std::vector<Vector> random_inputs(std::size_t t, std::size_t m, Rng& rng) {
    std::vector<Vector> xs(t, Vector(m, 0.0));
    for (auto& x : xs) {
        for (double& v : x) v = rng.uniform(-1.0, 1.0);
    }
    return xs;
}

bool bitwise_equal(const Vector& a, const Vector& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

// Full-gate bundle equivalent to a reduced-variant one: shared candidate
// tensors, shared present gate tensors, zeros where the variant has none.
GruParams promote_to_full(const GruParams& reduced) {
    const std::size_t n = reduced.w_h.rows;
    const std::size_t m = reduced.w_h.cols;
    GruParams full;
    full.variant = GateVariant::Full;
    full.w_h = reduced.w_h;
    full.u_h = reduced.u_h;
    full.b_h = reduced.b_h;
    auto promote_gate = [&](const GruGateParams& g) {
        GruGateParams out;
        out.w = g.w ? *g.w : Matrix(n, m);
        out.u = g.u ? *g.u : Matrix(n, n);
        out.b = g.b ? *g.b : Vector(n, 0.0);
        return out;
    };
    full.update = promote_gate(reduced.update);
    full.reset = promote_gate(reduced.reset);
    return full;
}

}  // namespace

TEST_CASE("simple rnn step matches hand evaluations") {
    // zero parameters, relu: h = g(0) = 0
    auto zero = std::get<RnnParams>(make_cell_params(CellKind::Rnn, GateVariant::Full, {3, 2}));
    auto r = simple_rnn_step(zero, Vector{1.0, -2.0}, Vector{0.5, 0.5, 0.5}, Activation::Relu);
    CHECK(r.h == Vector{0.0, 0.0, 0.0});

    // bias only
    auto biased = zero;
    biased.b = Vector{1.0, 1.0, 1.0};
    r = simple_rnn_step(biased, Vector{1.0, -2.0}, Vector{0.0, 0.0, 0.0}, Activation::Relu);
    CHECK(r.h == Vector{1.0, 1.0, 1.0});

    // scalar tanh case: tanh(2*1 + 3*1 + 0.5)
    RnnParams scalar{Matrix(1, 1), Matrix(1, 1), Vector{0.5}};
    scalar.w(0, 0) = 2.0;
    scalar.u(0, 0) = 3.0;
    r = simple_rnn_step(scalar, Vector{1.0}, Vector{1.0}, Activation::Tanh);
    CHECK(r.h[0] == doctest::Approx(std::tanh(5.5)).epsilon(1e-15));
}

TEST_CASE("lstm step matches hand evaluations") {
    auto zero = std::get<LstmParams>(make_cell_params(CellKind::Lstm, GateVariant::Full, {2, 2}));
    auto r = lstm_step(zero, Vector{0.3, -0.3}, Vector{0.0, 0.0}, Vector{0.0, 0.0},
                       Activation::Tanh);
    CHECK(r.cache.i == Vector{0.5, 0.5});
    CHECK(r.cache.f == Vector{0.5, 0.5});
    CHECK(r.cache.o == Vector{0.5, 0.5});
    CHECK(r.c == Vector{0.0, 0.0});
    CHECK(r.h == Vector{0.0, 0.0});

    // zero params, c_prev = v: c = f*v = 0.5 v
    const Vector v{0.8, -1.2};
    r = lstm_step(zero, Vector{0.0, 0.0}, Vector{0.0, 0.0}, v, Activation::Tanh);
    CHECK(r.c[0] == doctest::Approx(0.4).epsilon(1e-15));
    CHECK(r.c[1] == doctest::Approx(-0.6).epsilon(1e-15));

    // scalar all-ones weights, zero bias, x=0, h_prev=0, c_prev=1
    auto ones = std::get<LstmParams>(make_cell_params(CellKind::Lstm, GateVariant::Full, {1, 1}));
    for (LstmGate* g : {&ones.input_gate, &ones.forget_gate, &ones.output_gate, &ones.candidate}) {
        g->w(0, 0) = 1.0;
        g->u(0, 0) = 1.0;
    }
    r = lstm_step(ones, Vector{0.0}, Vector{0.0}, Vector{1.0}, Activation::Tanh);
    CHECK(r.c[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(r.h[0] == doctest::Approx(0.5 * std::tanh(0.5)).epsilon(1e-15));
}

TEST_CASE("gru step matches hand evaluations for each variant form") {
    // FULL, all params zero: z = r = 0.5, h_bar = 0, h = 0.5 h_prev
    auto zero = std::get<GruParams>(make_cell_params(CellKind::Gru, GateVariant::Full, {2, 3}));
    const Vector v{1.0, -0.4};
    auto r = gru_step(zero, Vector{0.0, 0.0, 0.0}, v, Activation::Relu);
    CHECK(r.cache.z == Vector{0.5, 0.5});
    CHECK(r.cache.r == Vector{0.5, 0.5});
    CHECK(r.h[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(r.h[1] == doctest::Approx(-0.2).epsilon(1e-15));

    // BIAS_ONLY scalar: z=r=0.5, h_bar = relu(1*1 + 1*(0.5*0) + 0) = 1, h = 0.5
    auto g3 = std::get<GruParams>(make_cell_params(CellKind::Gru, GateVariant::BiasOnly, {1, 1}));
    g3.w_h(0, 0) = 1.0;
    g3.u_h(0, 0) = 1.0;
    r = gru_step(g3, Vector{1.0}, Vector{0.0}, Activation::Relu);
    CHECK(r.h == Vector{0.5});

    // STATE_ONLY with h_prev = 0: gates are 0.5 regardless of U
    auto g2 = std::get<GruParams>(make_cell_params(CellKind::Gru, GateVariant::StateOnly, {3, 2}));
    Rng rng(99);
    CellParams wrapped = g2;
    randomize(wrapped, rng, 2.0);
    g2 = std::get<GruParams>(wrapped);
    r = gru_step(g2, Vector{0.7, 0.7}, Vector{0.0, 0.0, 0.0}, Activation::Relu);
    CHECK(r.cache.z == Vector{0.5, 0.5, 0.5});
    CHECK(r.cache.r == Vector{0.5, 0.5, 0.5});
}

TEST_CASE("gru params are validated against the variant") {
    auto good = std::get<GruParams>(make_cell_params(CellKind::Gru, GateVariant::StateOnly, {2, 2}));
    CHECK_NOTHROW(validate_gru_params(good));

    auto extra_bias = good;
    extra_bias.update.b = Vector{0.0, 0.0};
    CHECK_THROWS_AS(validate_gru_params(extra_bias), VariantError);

    auto missing_u = good;
    missing_u.reset.u.reset();
    CHECK_THROWS_AS(validate_gru_params(missing_u), VariantError);

    auto bad_shape = good;
    bad_shape.update.u = Matrix(3, 2);
    CHECK_THROWS_AS(validate_gru_params(bad_shape), VariantError);
}

TEST_CASE("sequence forward: base case, repeated halving, composition oracle") {
    // T=1 equals the single step
    auto zero = std::get<GruParams>(make_cell_params(CellKind::Gru, GateVariant::Full, {2, 2}));
    const Vector h0{0.6, -0.6};
    const std::vector<Vector> one_step{Vector{0.1, 0.2}};
    auto seq = gru_sequence_forward(zero, one_step, h0, Activation::Relu);
    auto step = gru_step(zero, one_step[0], h0, Activation::Relu);
    CHECK(bitwise_equal(seq.h_seq[0], step.h));

    // all-zero params, T=3: h3 = h0 / 8
    const std::vector<Vector> three(3, Vector{0.0, 0.0});
    seq = gru_sequence_forward(zero, three, h0, Activation::Relu);
    CHECK(seq.h_seq[2][0] == doctest::Approx(0.6 / 8.0).epsilon(1e-15));
    CHECK(seq.h_seq[2][1] == doctest::Approx(-0.6 / 8.0).epsilon(1e-15));

    // oracle: composing the step operation externally, all cells, T=4
    Rng rng(1234);
    for (const GateVariant variant :
         {GateVariant::Full, GateVariant::StateBias, GateVariant::StateOnly,
          GateVariant::BiasOnly}) {
        CellParams p = make_cell_params(CellKind::Gru, variant, {3, 2});
        randomize(p, rng);
        const auto& gp = std::get<GruParams>(p);
        const auto xs = random_inputs(4, 2, rng);
        const Vector start{0.1, -0.2, 0.3};

        auto run = gru_sequence_forward(gp, xs, start, Activation::Tanh);
        Vector h = start;
        for (std::size_t t = 0; t < xs.size(); ++t) {
            h = gru_step(gp, xs[t], h, Activation::Tanh).h;
            CHECK(bitwise_equal(run.h_seq[t], h));
        }
    }

    CellParams rnn = make_cell_params(CellKind::Rnn, GateVariant::Full, {3, 2});
    randomize(rnn, rng);
    const auto& rp = std::get<RnnParams>(rnn);
    const auto xs = random_inputs(4, 2, rng);
    auto rnn_run = rnn_sequence_forward(rp, xs, Vector(3, 0.0), Activation::Tanh);
    Vector h(3, 0.0);
    for (std::size_t t = 0; t < xs.size(); ++t) {
        h = simple_rnn_step(rp, xs[t], h, Activation::Tanh).h;
        CHECK(bitwise_equal(rnn_run.h_seq[t], h));
    }

    CellParams lstm = make_cell_params(CellKind::Lstm, GateVariant::Full, {3, 2});
    randomize(lstm, rng);
    const auto& lp = std::get<LstmParams>(lstm);
    auto lstm_run = lstm_sequence_forward(lp, xs, Vector(3, 0.0), Vector(3, 0.0), Activation::Tanh);
    h.assign(3, 0.0);
    Vector c(3, 0.0);
    for (std::size_t t = 0; t < xs.size(); ++t) {
        auto st = lstm_step(lp, xs[t], h, c, Activation::Tanh);
        h = st.h;
        c = st.c;
        CHECK(bitwise_equal(lstm_run.h_seq[t], h));
    }
}

TEST_CASE("sequence forward rejects empty input, backward rejects length mismatch") {
    auto p = std::get<GruParams>(make_cell_params(CellKind::Gru, GateVariant::Full, {2, 2}));
    CHECK_THROWS(gru_sequence_forward(p, {}, Vector{0.0, 0.0}, Activation::Relu));

    const auto xs = std::vector<Vector>{Vector{0.0, 0.0}, Vector{0.0, 0.0}};
    auto run = gru_sequence_forward(p, xs, Vector{0.0, 0.0}, Activation::Relu);
    std::vector<Vector> short_upstream{Vector{0.0, 0.0}};
    CHECK_THROWS(gru_sequence_backward(p, run.caches, xs, short_upstream, Activation::Relu));
}

TEST_CASE("zero upstream gradient produces zero gradients everywhere") {
    Rng rng(55);
    for (const CellKind kind : {CellKind::Rnn, CellKind::Lstm, CellKind::Gru}) {
        CellParams p = make_cell_params(kind, GateVariant::Full, {3, 2});
        randomize(p, rng);
        const auto xs = random_inputs(4, 2, rng);
        CellForward fwd = cell_sequence_forward(p, xs, Activation::Tanh);
        const std::vector<Vector> upstream(4, Vector(3, 0.0));
        CellBackward back = cell_sequence_backward(p, fwd.caches, xs, upstream, Activation::Tanh);
        for (const auto& ref : tensor_refs(std::as_const(back.grads))) {
            for (std::size_t i = 0; i < ref.size; ++i) CHECK(ref.data[i] == 0.0);
        }
        for (const auto& dx : back.dx_seq) {
            for (double v : dx) CHECK(v == 0.0);
        }
    }
}

TEST_CASE("bias-only gradients hold exactly the variant's tensors") {
    Rng rng(56);
    CellParams p = make_cell_params(CellKind::Gru, GateVariant::BiasOnly, {3, 2});
    randomize(p, rng);
    const auto xs = random_inputs(3, 2, rng);
    CellForward fwd = cell_sequence_forward(p, xs, Activation::Tanh);
    std::vector<Vector> upstream(3, Vector(3, 0.0));
    upstream.back() = Vector{1.0, -1.0, 0.5};
    CellBackward back = cell_sequence_backward(p, fwd.caches, xs, upstream, Activation::Tanh);

    const auto& grads = std::get<GruParams>(back.grads);
    CHECK(!grads.update.w.has_value());
    CHECK(!grads.update.u.has_value());
    CHECK(grads.update.b.has_value());
    CHECK(!grads.reset.w.has_value());
    CHECK(!grads.reset.u.has_value());
    CHECK(grads.reset.b.has_value());
}

TEST_CASE("parameter counts reproduce the published tables") {
    const CellDims pixel{100, 1};
    CHECK(param_count(CellKind::Gru, GateVariant::Full, pixel) == 30600);
    CHECK(param_count(CellKind::Gru, GateVariant::StateBias, pixel) == 30400);
    CHECK(param_count(CellKind::Gru, GateVariant::StateOnly, pixel) == 30200);
    CHECK(param_count(CellKind::Gru, GateVariant::BiasOnly, pixel) == 10400);

    const CellDims row{100, 28};
    CHECK(param_count(CellKind::Gru, GateVariant::Full, row) == 38700);
    CHECK(param_count(CellKind::Gru, GateVariant::StateBias, row) == 33100);
    CHECK(param_count(CellKind::Gru, GateVariant::StateOnly, row) == 32900);
    CHECK(param_count(CellKind::Gru, GateVariant::BiasOnly, row) == 13100);

    const CellDims reviews{128, 128};
    CHECK(param_count(CellKind::Gru, GateVariant::Full, reviews) == 98688);
    CHECK(param_count(CellKind::Gru, GateVariant::StateBias, reviews) == 65920);
    CHECK(param_count(CellKind::Gru, GateVariant::StateOnly, reviews) == 65664);
    CHECK(param_count(CellKind::Gru, GateVariant::BiasOnly, reviews) == 33152);
}

TEST_CASE("param_count equals the allocated scalar count for all small dims") {
    for (std::size_t n = 1; n <= 16; ++n) {
        for (std::size_t m = 1; m <= 16; ++m) {
            const CellDims dims{n, m};
            for (const CellKind kind : {CellKind::Rnn, CellKind::Lstm}) {
                CellParams p = make_cell_params(kind, GateVariant::Full, dims);
                std::size_t allocated = 0;
                for (const auto& ref : tensor_refs(std::as_const(p))) allocated += ref.size;
                CHECK(allocated == param_count(kind, std::nullopt, dims));
            }
            for (const GateVariant variant :
                 {GateVariant::Full, GateVariant::StateBias, GateVariant::StateOnly,
                  GateVariant::BiasOnly}) {
                CellParams p = make_cell_params(CellKind::Gru, variant, dims);
                std::size_t allocated = 0;
                for (const auto& ref : tensor_refs(std::as_const(p))) allocated += ref.size;
                CHECK(allocated == param_count(CellKind::Gru, variant, dims));
            }
        }
    }
}

TEST_CASE("variant outputs equal the zero-padded full gru bitwise") {
    Rng rng(77);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + rng.uniform_index(5);
        const std::size_t m = 1 + rng.uniform_index(4);
        const GateVariant variant = static_cast<GateVariant>(1 + rng.uniform_index(3));

        CellParams wrapped = make_cell_params(CellKind::Gru, variant, {n, m});
        randomize(wrapped, rng, 1.0);
        const auto& reduced = std::get<GruParams>(wrapped);
        const GruParams full = promote_to_full(reduced);

        Vector h_prev(n), x(m);
        for (double& v : h_prev) v = rng.uniform(-1.0, 1.0);
        for (double& v : x) v = rng.uniform(-1.0, 1.0);

        const Activation g = trial % 2 == 0 ? Activation::Relu : Activation::Tanh;
        auto got = gru_step(reduced, x, h_prev, g);
        auto want = gru_step(full, x, h_prev, g);
        CHECK(bitwise_equal(got.h, want.h));
        CHECK(bitwise_equal(got.cache.z, want.cache.z));
        CHECK(bitwise_equal(got.cache.r, want.cache.r));
    }
}

TEST_CASE("bias-only gates are constant across every timestep") {
    Rng rng(78);
    for (int trial = 0; trial < 10; ++trial) {
        CellParams wrapped = make_cell_params(CellKind::Gru, GateVariant::BiasOnly, {4, 3});
        randomize(wrapped, rng, 1.5);
        const auto& p = std::get<GruParams>(wrapped);
        const auto xs = random_inputs(7, 3, rng);
        Vector h0(4);
        for (double& v : h0) v = rng.uniform(-1.0, 1.0);
        auto run = gru_sequence_forward(p, xs, h0, Activation::Relu);
        for (std::size_t t = 1; t < run.caches.size(); ++t) {
            CHECK(bitwise_equal(run.caches[t].z, run.caches[0].z));
            CHECK(bitwise_equal(run.caches[t].r, run.caches[0].r));
        }
    }
}

TEST_CASE("gate outputs stay strictly inside (0,1), h_t stays between h_prev and h_bar") {
    Rng rng(79);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + rng.uniform_index(6);
        const std::size_t m = 1 + rng.uniform_index(4);
        const GateVariant variant = static_cast<GateVariant>(rng.uniform_index(4));
        CellParams wrapped = make_cell_params(CellKind::Gru, variant, {n, m});
        // occasionally extreme weights to push the gates toward saturation
        randomize(wrapped, rng, trial % 5 == 0 ? 500.0 : 1.0);
        const auto& p = std::get<GruParams>(wrapped);

        Vector h_prev(n), x(m);
        for (double& v : h_prev) v = rng.uniform(-2.0, 2.0);
        for (double& v : x) v = rng.uniform(-2.0, 2.0);
        auto res = gru_step(p, x, h_prev, Activation::Relu);
        for (std::size_t k = 0; k < n; ++k) {
            CHECK(res.cache.z[k] > 0.0);
            CHECK(res.cache.z[k] < 1.0);
            CHECK(res.cache.r[k] > 0.0);
            CHECK(res.cache.r[k] < 1.0);
            const double lo = std::min(h_prev[k], res.cache.h_bar[k]);
            const double hi = std::max(h_prev[k], res.cache.h_bar[k]);
            CHECK(res.h[k] >= lo);
            CHECK(res.h[k] <= hi);
        }
    }
}

TEST_CASE("random_orthogonal produces orthonormal rows and columns") {
    Rng rng(80);
    for (const std::size_t n : {1, 2, 5, 16}) {
        const Matrix q = random_orthogonal(n, rng);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                double dot = 0.0;
                for (std::size_t k = 0; k < n; ++k) dot += q(k, i) * q(k, j);
                CHECK(dot == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-10));
            }
        }
    }
}

TEST_CASE("embedding forward: lookup, pad contract, determinism, oov rejection") {
    EmbeddingTable basis = make_embedding(4, 4);
    for (std::size_t i = 0; i < 4; ++i) basis.rows(i, i) = 1.0;
    const int ids[] = {2};
    auto vecs = embedding_forward(basis, ids, /*pad_id=*/-1);
    CHECK(vecs[0] == Vector{0.0, 0.0, 1.0, 0.0});

    const int pads[] = {0, 0, 0};
    auto padded = embedding_forward(basis, pads, /*pad_id=*/0);
    for (const auto& v : padded) CHECK(v == Vector(4, 0.0));

    Rng rng(81);
    EmbeddingTable table = make_embedding(6, 3);
    init_embedding(table, rng);
    const int twice[] = {0, 0};
    auto out = embedding_forward(table, twice, /*pad_id=*/-1);
    CHECK(bitwise_equal(out[0], out[1]));

    const int oov[] = {1, 99};
    try {
        embedding_forward(table, oov, /*pad_id=*/0);
        FAIL("expected out_of_range");
    } catch (const std::out_of_range& e) {
        CHECK(std::string(e.what()).find("99") != std::string::npos);
        CHECK(std::string(e.what()).find("position 1") != std::string::npos);
    }
}

TEST_CASE("embedding backward sums repeated tokens and skips pads") {
    EmbeddingTable table = make_embedding(5, 2);
    const std::vector<int> ids{3, 0, 3};
    const std::vector<Vector> upstream{Vector{1.0, 2.0}, Vector{9.0, 9.0}, Vector{0.25, -1.0}};
    EmbeddingGrad grad = embedding_backward(ids, upstream, /*pad_id=*/0, table);
    REQUIRE(grad.rows.size() == 1);
    CHECK(grad.rows[0].first == 3);
    CHECK(grad.rows[0].second == Vector{1.25, 1.0});

    const std::vector<Vector> zeros{Vector{0.0, 0.0}, Vector{0.0, 0.0}, Vector{0.0, 0.0}};
    EmbeddingGrad zg = embedding_backward(ids, zeros, /*pad_id=*/0, table);
    REQUIRE(zg.rows.size() == 1);
    CHECK(zg.rows[0].second == Vector{0.0, 0.0});
}
