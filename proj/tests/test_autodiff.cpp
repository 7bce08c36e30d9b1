#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "rgplan/autodiff.hpp"
#include "rgplan/params.hpp"
#include "rgplan/rng.hpp"
#include "support.hpp"

using namespace rgplan;
using rgtest::fd_worst_rel_err;
using rgtest::push_away_from;
using rgtest::random_tensor;

namespace {

// Runs fd checks of a tape-built scalar against analytic input gradients over
// several random draws; at least `min_points` scalar coordinates in total.
double check_primitive(const std::function<Tape::NodeId(Tape&, std::vector<Tape::NodeId>&)>& build,
                       const std::vector<std::vector<std::size_t>>& shapes, std::uint64_t seed,
                       int min_points = 100, double kink_margin = 0.0) {
    Rng rng(seed);
    double worst = 0.0;
    int points = 0;
    while (points < min_points) {
        std::vector<Tensor> inputs;
        for (const auto& s : shapes) {
            Tensor t = random_tensor(rng, s);
            if (kink_margin > 0.0) push_away_from(t, kink_margin);
            inputs.push_back(std::move(t));
            points += static_cast<int>(inputs.back().size());
        }
        auto f = [&](const std::vector<Tensor>& in) {
            Tape tape;
            std::vector<Tape::NodeId> ids;
            for (const auto& t : in) ids.push_back(tape.leaf(t));
            return tape.value(build(tape, ids))[0];
        };
        auto grad = [&](const std::vector<Tensor>& in) {
            Tape tape;
            std::vector<Tape::NodeId> ids;
            for (const auto& t : in) ids.push_back(tape.leaf(t));
            tape.backward(build(tape, ids));
            std::vector<Tensor> out;
            for (auto id : ids) out.push_back(tape.grad(id));
            return out;
        };
        worst = std::max(worst, fd_worst_rel_err(f, grad, inputs));
    }
    return worst;
}

}  // namespace

TEST_CASE("finite-difference checks for every primitive") {
    const double tol = 1e-5;

    CHECK(check_primitive([](Tape& t, auto& in) { return t.sum_all(t.add(in[0], in[1])); },
                          {{4, 3}, {4, 3}}, 1) < tol);
    CHECK(check_primitive([](Tape& t, auto& in) { return t.sum_all(t.sub(in[0], in[1])); },
                          {{4, 3}, {4, 3}}, 2) < tol);
    CHECK(check_primitive([](Tape& t, auto& in) { return t.sum_all(t.mul(in[0], in[1])); },
                          {{4, 3}, {4, 3}}, 3) < tol);
    CHECK(check_primitive([](Tape& t, auto& in) { return t.sum_all(t.scale(in[0], -1.7)); },
                          {{5, 2}}, 4) < tol);
    CHECK(check_primitive(
              [](Tape& t, auto& in) {
                  Tensor c({5, 2});
                  for (std::size_t i = 0; i < c.size(); ++i) c[i] = 0.1 * static_cast<double>(i) - 0.4;
                  return t.sum_all(t.mul_const(in[0], c));
              },
              {{5, 2}}, 5) < tol);
    CHECK(check_primitive([](Tape& t, auto& in) { return t.sum_all(t.silu(in[0])); }, {{6, 3}}, 6) <
          tol);
    CHECK(check_primitive([](Tape& t, auto& in) { return t.sum_all(t.relu(in[0])); }, {{6, 3}}, 7,
                          100, 0.05) < tol);
    CHECK(check_primitive(
              [](Tape& t, auto& in) { return t.sum_all(t.silu(t.dense(in[0], in[1], in[2]))); },
              {{7}, {5, 7}, {5}}, 8) < tol);
    CHECK(check_primitive(
              [](Tape& t, auto& in) { return t.sum_all(t.silu(t.conv1d(in[0], in[1], in[2]))); },
              {{8, 3}, {4, 5, 3}, {4}}, 9) < tol);
    CHECK(check_primitive(
              [](Tape& t, auto& in) {
                  return t.sum_all(t.silu(t.group_norm(in[0], in[1], in[2], 2)));
              },
              {{6, 4}, {4}, {4}}, 10) < tol);
    CHECK(check_primitive([](Tape& t, auto& in) { return t.sum_all(t.add_rows(in[0], in[1])); },
                          {{5, 3}, {3}}, 11) < tol);
    CHECK(check_primitive(
              [](Tape& t, auto& in) {
                  return t.sum_all(t.silu(t.concat_cols(in[0], in[1])));
              },
              {{4, 2}, {4, 3}}, 12) < tol);
    CHECK(check_primitive([](Tape& t, auto& in) { return t.sum_all(t.silu(t.avgpool2_rows(in[0]))); },
                          {{6, 3}}, 13) < tol);
    CHECK(check_primitive(
              [](Tape& t, auto& in) { return t.sum_all(t.silu(t.upsample2_rows(in[0]))); },
              {{4, 3}}, 14) < tol);
    CHECK(check_primitive([](Tape& t, auto& in) { return t.mean_all(t.silu(in[0])); }, {{5, 4}},
                          15) < tol);
    CHECK(check_primitive(
              [](Tape& t, auto& in) { return t.sum_all(t.silu(t.mean_rows(in[0]))); }, {{6, 3}},
              16) < tol);
    CHECK(check_primitive([](Tape& t, auto& in) { return t.sum_all(t.silu(t.sum_cols(in[0]))); },
                          {{6, 3}}, 17) < tol);
    CHECK(check_primitive([](Tape& t, auto& in) { return t.mse(in[0], in[1]); }, {{4, 3}, {4, 3}},
                          18) < tol);
    CHECK(check_primitive([](Tape& t, auto& in) { return t.tv_abs(in[0]); }, {{12}}, 19, 100,
                          0.05) < tol);
}

TEST_CASE("forward: identity and zero-weight dense") {
    Rng rng(21);
    Tensor x = random_tensor(rng, {6});
    Tape tape;
    Tape::NodeId in = tape.leaf(x);
    // identity model: output is the input node itself
    CHECK(tape.value(in).data() == x.data());

    Tensor w = Tensor::zeros({4, 6});
    Tensor b = Tensor::zeros({4});
    Tape::NodeId y = tape.dense(in, tape.leaf(w), tape.leaf(b));
    for (std::size_t i = 0; i < 4; ++i) CHECK(tape.value(y)[i] == 0.0);
}

TEST_CASE("forward: 2-layer MLP matches scalar-loop oracle") {
    Rng rng(0);
    std::size_t in_dim = 5, hid = 7, out_dim = 3;
    Tensor w1 = ParamStore::init_uniform(rng, {hid, in_dim}, in_dim);
    Tensor b1 = ParamStore::init_uniform(rng, {hid}, in_dim);
    Tensor w2 = ParamStore::init_uniform(rng, {out_dim, hid}, hid);
    Tensor b2 = ParamStore::init_uniform(rng, {out_dim}, hid);
    Tensor x = random_tensor(rng, {in_dim});

    Tape tape;
    Tape::NodeId h = tape.silu(tape.dense(tape.leaf(x), tape.leaf(w1), tape.leaf(b1)));
    Tape::NodeId y = tape.dense(h, tape.leaf(w2), tape.leaf(b2));

    // independent scalar-loop re-evaluation
    std::vector<double> hidv(hid), outv(out_dim);
    for (std::size_t o = 0; o < hid; ++o) {
        double acc = b1[o];
        for (std::size_t i = 0; i < in_dim; ++i) acc += w1[o * in_dim + i] * x[i];
        double s = 1.0 / (1.0 + std::exp(-acc));
        hidv[o] = acc * s;
    }
    for (std::size_t o = 0; o < out_dim; ++o) {
        double acc = b2[o];
        for (std::size_t i = 0; i < hid; ++i) acc += w2[o * hid + i] * hidv[i];
        outv[o] = acc;
    }
    for (std::size_t o = 0; o < out_dim; ++o)
        CHECK(std::fabs(tape.value(y)[o] - outv[o]) <= 1e-12);
}

TEST_CASE("backward_params: scalar parameter and constant loss") {
    Tape tape;
    Tape::NodeId theta = tape.param("theta", Tensor::scalar(0.37));
    tape.backward(theta);
    CHECK(tape.param_grads().at("theta")[0] == 1.0);

    Tape tape2;
    tape2.param("theta", Tensor::scalar(0.37));
    Tape::NodeId c = tape2.leaf(Tensor::scalar(3.0));
    Tape::NodeId loss = tape2.scale(c, 2.0);
    tape2.backward(loss);
    CHECK(tape2.param_grads().at("theta")[0] == 0.0);
}

TEST_CASE("backward_params: random 2-layer MLP MSE matches finite differences") {
    Rng rng(33);
    std::size_t in_dim = 4, hid = 6, out_dim = 3;
    std::vector<Tensor> inputs = {
        ParamStore::init_uniform(rng, {hid, in_dim}, in_dim),
        ParamStore::init_uniform(rng, {hid}, in_dim),
        ParamStore::init_uniform(rng, {out_dim, hid}, hid),
        ParamStore::init_uniform(rng, {out_dim}, hid),
    };
    Tensor x = random_tensor(rng, {in_dim});
    Tensor target = random_tensor(rng, {out_dim});

    auto build = [&](Tape& tape, const std::vector<Tensor>& p) {
        Tape::NodeId h = tape.silu(tape.dense(tape.leaf(x), tape.param("w1", p[0]), tape.param("b1", p[1])));
        Tape::NodeId y = tape.dense(h, tape.param("w2", p[2]), tape.param("b2", p[3]));
        return tape.mse(y, tape.leaf(target));
    };
    auto f = [&](const std::vector<Tensor>& p) {
        Tape tape;
        return tape.value(build(tape, p))[0];
    };
    auto grad = [&](const std::vector<Tensor>& p) {
        Tape tape;
        tape.backward(build(tape, p));
        auto g = tape.param_grads();
        return std::vector<Tensor>{g.at("w1"), g.at("b1"), g.at("w2"), g.at("b2")};
    };
    CHECK(fd_worst_rel_err(f, grad, inputs) < 1e-5);
}

TEST_CASE("backward_input: sum and half squared norm") {
    Rng rng(44);
    Tensor x = random_tensor(rng, {3, 4});
    {
        Tape tape;
        Tape::NodeId in = tape.leaf(x);
        tape.backward(tape.sum_all(in));
        Tensor g = tape.input_grad(in);
        for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == 1.0);
    }
    {
        Tape tape;
        Tape::NodeId in = tape.leaf(x);
        tape.backward(tape.scale(tape.sum_all(tape.mul(in, in)), 0.5));
        Tensor g = tape.input_grad(in);
        for (std::size_t i = 0; i < g.size(); ++i) CHECK(std::fabs(g[i] - x[i]) <= 1e-15);
    }
}

TEST_CASE("backward_input: node not on tape path is an error") {
    Tape tape;
    Tape::NodeId a = tape.leaf(Tensor::scalar(1.0));
    Tape::NodeId b = tape.leaf(Tensor::scalar(2.0));
    tape.backward(tape.scale(b, 3.0));
    CHECK_THROWS(tape.input_grad(a));
}

TEST_CASE("shape mismatch errors name the failing primitive") {
    Tape tape;
    Tape::NodeId a = tape.leaf(Tensor::zeros({2, 3}));
    Tape::NodeId b = tape.leaf(Tensor::zeros({3, 2}));
    CHECK_THROWS_WITH(tape.add(a, b), Catch::Matchers::ContainsSubstring("add"));
    CHECK_THROWS_WITH(tape.conv1d(a, b, b), Catch::Matchers::ContainsSubstring("conv1d"));
    Tape::NodeId w = tape.leaf(Tensor::zeros({4, 5}));
    CHECK_THROWS_WITH(tape.dense(a, w, b), Catch::Matchers::ContainsSubstring("dense"));
}

TEST_CASE("non-scalar backward root is an error") {
    Tape tape;
    Tape::NodeId a = tape.leaf(Tensor::zeros({2, 2}));
    CHECK_THROWS(tape.backward(a));
}

TEST_CASE("NaN rejected at graph boundary") {
    Tensor bad({2});
    bad[0] = std::nan("");
    Tape tape;
    CHECK_THROWS(tape.leaf(bad));
}

TEST_CASE("backward is linear in the root") {
    Rng rng(55);
    Tensor x = random_tensor(rng, {4, 3});
    const double a = 1.7, b = -0.6;
    auto f_root = [](Tape& t, Tape::NodeId in) { return t.mean_all(t.silu(in)); };
    auto g_root = [](Tape& t, Tape::NodeId in) { return t.sum_all(t.mul(in, in)); };

    Tape tf;
    Tape::NodeId inf = tf.leaf(x);
    tf.backward(f_root(tf, inf));
    Tensor gf = tf.input_grad(inf);

    Tape tg;
    Tape::NodeId ing = tg.leaf(x);
    tg.backward(g_root(tg, ing));
    Tensor gg = tg.input_grad(ing);

    Tape tc;
    Tape::NodeId inc = tc.leaf(x);
    Tape::NodeId combo = tc.add(tc.scale(f_root(tc, inc), a), tc.scale(g_root(tc, inc), b));
    tc.backward(combo);
    Tensor gc = tc.input_grad(inc);

    for (std::size_t i = 0; i < gc.size(); ++i)
        CHECK(std::fabs(gc[i] - (a * gf[i] + b * gg[i])) <= 1e-12);
}

TEST_CASE("forward+backward re-run is bit-identical") {
    auto run = [](std::uint64_t seed) {
        Rng rng(seed);
        Tensor x = random_tensor(rng, {6});
        Tensor w = ParamStore::init_uniform(rng, {4, 6}, 6);
        Tensor b = ParamStore::init_uniform(rng, {4}, 6);
        Tape tape;
        Tape::NodeId in = tape.leaf(x);
        Tape::NodeId y = tape.silu(tape.dense(in, tape.param("w", w), tape.param("b", b)));
        tape.backward(tape.mean_all(y));
        return std::pair{tape.value(y).data(), tape.param_grads().at("w").data()};
    };
    auto [v1, g1] = run(123);
    auto [v2, g2] = run(123);
    CHECK(v1 == v2);
    CHECK(g1 == g2);
}
