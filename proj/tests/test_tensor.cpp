#include <catch_amalgamated.hpp>

#include <random>

#include "gradcheck.hpp"
#include "thermocast/adam.hpp"
#include "thermocast/tensor.hpp"

using namespace thermocast;
using namespace thermocast::ad;

namespace {

Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(std::move(shape));
    for (auto& v : t.values()) {
        do v = u(rng);
        while (std::abs(v) < 1e-3);  // stay clear of relu / abs kinks
    }
    return t;
}

// Contracts a tensor-valued op with a fixed random weight so every output entry
// reaches the loss.
Var contract(Tape& tape, Var y, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return sum(mul(y, tape.constant(random_tensor(rng, y.shape()))));
}

std::size_t pick(std::mt19937_64& rng) { return std::uniform_int_distribution<std::size_t>(1, 8)(rng); }

}  // namespace

TEST_CASE("primitive values", "[tensor]") {
    Tape tape;
    CHECK(sigmoid(tape.constant(Tensor::scalar(0.0))).value().item() == 0.5);
    std::mt19937_64 rng(1);
    const Tensor a = random_tensor(rng, {3, 3});
    Tensor eye({3, 3});
    for (std::size_t i = 0; i < 3; ++i) eye[i * 4] = 1.0;
    const Var y = matmul(tape.constant(eye), tape.constant(a));
    CHECK(y.value().values() == a.values());

    const Var c = concat({tape.constant(Tensor({2, 1}, {1, 2})), tape.constant(Tensor({2, 2}, {3, 4, 5, 6}))});
    CHECK(c.value().values() == std::vector<double>{1, 3, 4, 2, 5, 6});
    CHECK(slice(c, 1, 2).value().values() == std::vector<double>{3, 4, 5, 6});
    const Var b = add(tape.constant(Tensor({2, 2}, {1, 2, 3, 4})), tape.constant(Tensor({2}, {10, 20})));
    CHECK(b.value().values() == std::vector<double>{11, 22, 13, 24});
}

TEST_CASE("abs_sum subgradient", "[tensor]") {
    Tape tape;
    const Var x = tape.parameter(Tensor({3}, {1.5, -2.0, 0.0}));
    tape.backward(abs_sum(x));
    CHECK(tape.grad(x).values() == std::vector<double>{1.0, -1.0, 0.0});
}

TEST_CASE("linear map gradient is an outer product", "[tensor]") {
    Tape tape;
    const Var w = tape.parameter(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
    const Var x = tape.constant(Tensor({3, 1}, {0.5, -1.0, 2.0}));
    tape.backward(sum(matmul(w, x)));
    CHECK(tape.grad(w).values() == std::vector<double>{0.5, -1.0, 2.0, 0.5, -1.0, 2.0});
}

TEST_CASE("disconnected leaves get zero gradient", "[tensor]") {
    Tape tape;
    const Var a = tape.parameter(Tensor({2}, {1, 2}));
    const Var unused = tape.parameter(Tensor({2, 2}, 3.0));
    tape.backward(sum(square(a)));
    const Tensor g = tape.grad(unused);
    CHECK(g.shape() == Shape{2, 2});
    for (double v : g.values()) CHECK(v == 0.0);
}

TEST_CASE("errors", "[tensor]") {
    Tape tape;
    const Var a = tape.parameter(Tensor({2, 3}));
    const Var b = tape.parameter(Tensor({2, 3}));
    CHECK_THROWS_AS(matmul(a, b), ShapeError);
    CHECK_THROWS_AS(add(a, tape.constant(Tensor({2}))), ShapeError);
    CHECK_THROWS_AS(slice(a, 2, 2), ShapeError);
    CHECK_THROWS_AS(tape.backward(a), GraphError);
    CHECK_THROWS_AS(log(tape.constant(Tensor({1}, {-1.0}))), NumericalError);
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST_CASE("finite-difference agreement for every primitive", "[tensor][property]") {
    std::mt19937_64 rng(42);
    using gradcheck::LossFn;
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t n = pick(rng), k = pick(rng), m = pick(rng);
        const auto seed = static_cast<std::uint64_t>(trial) + 100;
        const std::vector<std::pair<const char*, std::pair<LossFn, std::vector<Tensor>>>> cases = {
            {"matmul",
             {[&](Tape& t, const std::vector<Var>& v) { return contract(t, matmul(v[0], v[1]), seed); },
              {random_tensor(rng, {n, k}), random_tensor(rng, {k, m})}}},
            {"add",
             {[&](Tape& t, const std::vector<Var>& v) { return contract(t, add(v[0], v[1]), seed); },
              {random_tensor(rng, {n, m}), random_tensor(rng, {n, m})}}},
            {"add broadcast",
             {[&](Tape& t, const std::vector<Var>& v) { return contract(t, add(v[0], v[1]), seed); },
              {random_tensor(rng, {n, m}), random_tensor(rng, {m})}}},
            {"sub",
             {[&](Tape& t, const std::vector<Var>& v) { return contract(t, sub(v[0], v[1]), seed); },
              {random_tensor(rng, {n, m}), random_tensor(rng, {m})}}},
            {"mul",
             {[&](Tape& t, const std::vector<Var>& v) { return contract(t, mul(v[0], v[1]), seed); },
              {random_tensor(rng, {n, m}), random_tensor(rng, {n, m})}}},
            {"mul broadcast",
             {[&](Tape& t, const std::vector<Var>& v) { return contract(t, mul(v[0], v[1]), seed); },
              {random_tensor(rng, {n, m}), random_tensor(rng, {m})}}},
            {"sigmoid",
             {[&](Tape& t, const std::vector<Var>& v) { return contract(t, sigmoid(v[0]), seed); },
              {random_tensor(rng, {n, m}, -3, 3)}}},
            {"tanh",
             {[&](Tape& t, const std::vector<Var>& v) { return contract(t, ad::tanh(v[0]), seed); },
              {random_tensor(rng, {n, m}, -3, 3)}}},
            {"relu",
             {[&](Tape& t, const std::vector<Var>& v) { return contract(t, relu(v[0]), seed); },
              {random_tensor(rng, {n, m})}}},
            {"softplus",
             {[&](Tape& t, const std::vector<Var>& v) { return contract(t, softplus(v[0]), seed); },
              {random_tensor(rng, {n, m}, -5, 5)}}},
            {"exp",
             {[&](Tape& t, const std::vector<Var>& v) { return contract(t, ad::exp(v[0]), seed); },
              {random_tensor(rng, {n, m})}}},
            {"log",
             {[&](Tape& t, const std::vector<Var>& v) { return contract(t, ad::log(v[0]), seed); },
              {random_tensor(rng, {n, m}, 0.5, 3.0)}}},
            {"square",
             {[&](Tape& t, const std::vector<Var>& v) { return contract(t, square(v[0]), seed); },
              {random_tensor(rng, {n, m})}}},
            {"scale",
             {[&](Tape& t, const std::vector<Var>& v) { return contract(t, add_scalar(scale(v[0], -1.7), 0.3), seed); },
              {random_tensor(rng, {n, m})}}},
            {"abs_sum",
             {[&](Tape&, const std::vector<Var>& v) { return abs_sum(v[0]); }, {random_tensor(rng, {n, m})}}},
            {"mean",
             {[&](Tape&, const std::vector<Var>& v) { return mean(square(v[0])); }, {random_tensor(rng, {n, m})}}},
            {"slice",
             {[&](Tape& t, const std::vector<Var>& v) { return contract(t, slice(v[0], m / 2, m - m / 2), seed); },
              {random_tensor(rng, {n, m})}}},
            {"concat",
             {[&](Tape& t, const std::vector<Var>& v) { return contract(t, concat({v[0], v[1]}), seed); },
              {random_tensor(rng, {n, m}), random_tensor(rng, {n, k})}}},
        };
        for (const auto& [name, c] : cases) {
            INFO(name << " n=" << n << " k=" << k << " m=" << m);
            CHECK(gradcheck::max_relative_error(c.first, c.second) < 1e-4);
        }
    }
}

TEST_CASE("sampled_affine gradient and value", "[tensor][property]") {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 5; ++trial) {
        const std::size_t n = pick(rng), in = pick(rng), out = pick(rng);
        const Tensor eps_w = random_tensor(rng, {n, in, out}, -2, 2);
        const Tensor eps_b = random_tensor(rng, {n, out}, -2, 2);
        const gradcheck::LossFn f = [&](Tape& t, const std::vector<Var>& v) {
            const Var y = sampled_affine(v[0], v[1], v[2], v[3], v[4], t.constant(eps_w), t.constant(eps_b));
            return contract(t, y, 77);
        };
        const std::vector<Tensor> leaves = {random_tensor(rng, {n, in}), random_tensor(rng, {in, out}),
                                            random_tensor(rng, {in, out}, 0.1, 1.0), random_tensor(rng, {out}),
                                            random_tensor(rng, {out}, 0.1, 1.0)};
        CHECK(gradcheck::max_relative_error(f, leaves) < 1e-4);

        // row r must equal h[r] (mu_w + sigma_w * eps_w[r]) + mu_b + sigma_b * eps_b[r]
        Tape tape;
        std::vector<Var> v;
        for (const auto& l : leaves) v.push_back(tape.constant(l));
        const Var y = sampled_affine(v[0], v[1], v[2], v[3], v[4], tape.constant(eps_w), tape.constant(eps_b));
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t o = 0; o < out; ++o) {
                double ref = leaves[3][o] + leaves[4][o] * eps_b[r * out + o];
                for (std::size_t i = 0; i < in; ++i)
                    ref += leaves[0][r * in + i] * (leaves[1][i * out + o] + leaves[2][i * out + o] * eps_w[(r * in + i) * out + o]);
                CHECK(y.value()[r * out + o] == Catch::Approx(ref).epsilon(1e-12));
            }
    }
}

TEST_CASE("fused LSTM ops match their compositions", "[tensor][property]") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 5; ++trial) {
        const std::size_t n = pick(rng), m = pick(rng), d = pick(rng);
        const std::vector<Tensor> leaves = {random_tensor(rng, {n, m}), random_tensor(rng, {m, 4 * d}),
                                            random_tensor(rng, {n, d}), random_tensor(rng, {d, 4 * d}),
                                            random_tensor(rng, {4 * d}), random_tensor(rng, {n, d})};
        const gradcheck::LossFn fused = [&](Tape& t, const std::vector<Var>& v) {
            const Var z = gate_preactivation(v[0], v[1], v[2], v[3], v[4]);
            const Var c = lstm_cell_state(z, v[5]);
            return add(contract(t, c, 5), contract(t, lstm_hidden_state(z, c), 6));
        };
        const gradcheck::LossFn plain = [&](Tape& t, const std::vector<Var>& v) {
            const Var z = add(add(matmul(v[0], v[1]), matmul(v[2], v[3])), v[4]);
            const Var c = add(mul(sigmoid(slice(z, 0, d)), v[5]), mul(sigmoid(slice(z, d, d)), ad::tanh(slice(z, 2 * d, d))));
            const Var h = mul(sigmoid(slice(z, 3 * d, d)), ad::tanh(c));
            return add(contract(t, c, 5), contract(t, h, 6));
        };
        CHECK(gradcheck::max_relative_error(fused, leaves) < 1e-4);
        CHECK(gradcheck::evaluate(fused, leaves) == Catch::Approx(gradcheck::evaluate(plain, leaves)).epsilon(1e-12));
    }
}

TEST_CASE("two-layer network gradient", "[tensor][property]") {
    std::mt19937_64 rng(3);
    const Tensor x = random_tensor(rng, {5, 4});
    const Tensor target = random_tensor(rng, {5, 1});
    const gradcheck::LossFn f = [&](Tape& t, const std::vector<Var>& v) {
        const Var hidden = ad::tanh(add(matmul(t.constant(x), v[0]), v[1]));
        const Var y = add(matmul(hidden, v[2]), v[3]);
        return mean(abs_sum(sub(y, t.constant(target))));
    };
    const std::vector<Tensor> leaves = {random_tensor(rng, {4, 6}), random_tensor(rng, {6}), random_tensor(rng, {6, 1}),
                                        random_tensor(rng, {1})};
    CHECK(gradcheck::max_relative_error(f, leaves) < 1e-4);
}

TEST_CASE("forward evaluation is deterministic", "[tensor]") {
    std::mt19937_64 rng(4);
    const Tensor a = random_tensor(rng, {8, 8}), b = random_tensor(rng, {8, 8});
    Tape t1, t2;
    const Var y1 = ad::tanh(matmul(t1.constant(a), t1.constant(b)));
    const Var y2 = ad::tanh(matmul(t2.constant(a), t2.constant(b)));
    CHECK(y1.value().values() == y2.value().values());
}

TEST_CASE("adam", "[adam]") {
    AdamConfig cfg;
    cfg.lr = 0.01;
    SECTION("zero gradient leaves parameters unchanged") {
        Tensor p({3}, {1, 2, 3});
        AdamState s;
        std::vector<Tensor*> ps{&p};
        const std::vector<Tensor> g{Tensor({3})};
        adam_step(ps, g, s, cfg);
        CHECK(p.values() == std::vector<double>{1, 2, 3});
    }
    SECTION("first step moves by lr against the gradient sign") {
        Tensor p({3}, {0, 0, 0});
        AdamState s;
        std::vector<Tensor*> ps{&p};
        const std::vector<Tensor> g{Tensor({3}, {0.3, -20.0, 1e-2})};
        adam_step(ps, g, s, cfg);
        CHECK(p[0] == Catch::Approx(-0.01).margin(1e-6));
        CHECK(p[1] == Catch::Approx(0.01).margin(1e-6));
        CHECK(p[2] == Catch::Approx(-0.01).margin(1e-6));
    }
    SECTION("identical state gives identical updates") {
        Tensor p1({2}, {1, -1}), p2({2}, {1, -1});
        AdamState s1, s2;
        const std::vector<Tensor> g{Tensor({2}, {0.5, 0.25})};
        std::vector<Tensor*> ps1{&p1}, ps2{&p2};
        for (int k = 0; k < 3; ++k) {
            adam_step(ps1, g, s1, cfg);
            adam_step(ps2, g, s2, cfg);
        }
        CHECK(p1.values() == p2.values());
    }
}
