#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cmat/autodiff.hpp"
#include "cmat/errors.hpp"
#include "cmat/rng.hpp"

using namespace cmat;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

Tensor random_tensor(Rng& rng, int rows, int cols = 1, bool grad = true) {
    Tensor t = Tensor::matrix(rows, cols);
    for (double& x : t.v) x = rng.uniform(-1.0, 1.0);
    t.requires_grad = grad;
    return t;
}

}  // namespace

TEST_CASE("softmax of equal logits is uniform") {
    Tape tape;
    const std::vector<double> x{0.0, 0.0, 0.0};
    const Var s = tape.softmax(tape.input(x, 3));
    for (double v : tape.value(s)) CHECK(v == doctest::Approx(1.0 / 3.0));
    double sum = 0.0;
    for (double v : tape.value(s)) sum += v;
    CHECK(std::fabs(sum - 1.0) < 1e-12);
}

TEST_CASE("softmax sums to one and stays positive on wild logits") {
    Rng rng(5);
    Tape tape;
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> x(1 + rng.below(8));
        for (double& v : x) v = rng.uniform(-300.0, 300.0);
        const Var s = tape.softmax(tape.input(x, static_cast<int>(x.size())));
        double sum = 0.0;
        for (double v : tape.value(s)) {
            CHECK(v > 0.0);
            sum += v;
        }
        CHECK(std::fabs(sum - 1.0) < 1e-12);
        // log_softmax consistent with softmax
        const Var ls = tape.log_softmax(tape.input(x, static_cast<int>(x.size())));
        auto sv = tape.value(s);
        auto lv = tape.value(ls);
        for (std::size_t i = 0; i < x.size(); ++i)
            CHECK(std::exp(lv[i]) == doctest::Approx(sv[i]).epsilon(1e-12));
    }
}

TEST_CASE("relu and matvec identity") {
    Tape tape;
    const std::vector<double> x{-1.0, 2.0};
    const Var r = tape.relu(tape.input(x, 2));
    CHECK(tape.value(r)[0] == 0.0);
    CHECK(tape.value(r)[1] == 2.0);

    const std::vector<double> eye{1.0, 0.0, 0.0, 1.0};
    const Var y = tape.matvec(tape.input(eye, 2, 2), tape.input(x, 2));
    CHECK(tape.value(y)[0] == x[0]);
    CHECK(tape.value(y)[1] == x[1]);
}

TEST_CASE("simple gradients") {
    Rng rng(7);
    Tensor x = random_tensor(rng, 5);

    SUBCASE("sum gradient is ones") {
        Tape tape;
        const Var xv = tape.param(x);
        tape.backward(tape.sum(xv));
        for (double g : tape.grad(xv)) CHECK(g == 1.0);
    }
    SUBCASE("elementwise square gradient is 2x") {
        Tape tape;
        const Var xv = tape.param(x);
        tape.backward(tape.sum(tape.square(xv)));
        auto g = tape.grad(xv);
        for (int i = 0; i < 5; ++i) CHECK(g[i] == doctest::Approx(2.0 * x.v[i]));
    }
    SUBCASE("untouched tensors get zero gradient") {
        Tape tape;
        const Var xv = tape.param(x);
        Tensor other = random_tensor(rng, 3);
        const Var ov = tape.param(other);
        tape.backward(tape.sum(xv));
        for (double g : tape.grad(ov)) CHECK(g == 0.0);
    }
    SUBCASE("fan-out accumulates additively") {
        Tape tape;
        const Var xv = tape.param(x);
        const Var two = tape.add(xv, xv);
        tape.backward(tape.sum(two));
        for (double g : tape.grad(xv)) CHECK(g == 2.0);
    }
}

TEST_CASE("backward rejects non-scalar outputs and grads before backward") {
    Tape tape;
    Rng rng(9);
    Tensor x = random_tensor(rng, 4);
    const Var xv = tape.param(x);
    CHECK_THROWS_AS(tape.backward(xv), ValidationError);
    CHECK_THROWS_AS((void)tape.grad(xv), ValidationError);
}

TEST_CASE("shape mismatches produce structured errors") {
    Tape tape;
    Rng rng(11);
    Tensor a = random_tensor(rng, 3);
    Tensor b = random_tensor(rng, 4);
    Tensor w = random_tensor(rng, 3, 5);
    const Var av = tape.param(a);
    const Var bv = tape.param(b);
    const Var wv = tape.param(w);
    CHECK_THROWS_WITH_AS(tape.add(av, bv), doctest::Contains("op add"), ValidationError);
    CHECK_THROWS_AS(tape.matvec(wv, av), ValidationError);
    CHECK_THROWS_AS(tape.pick(av, 9), ValidationError);
    CHECK_THROWS_AS(tape.row(wv, -1), ValidationError);
}

TEST_CASE("backward is linear in the output") {
    Rng rng(13);
    Tensor x = random_tensor(rng, 6);

    auto grad_of = [&](double a, double b) {
        Tape tape;
        const Var xv = tape.param(x);
        const Var f = tape.sum(tape.square(xv));              // f = sum x^2
        const Var g = tape.sum(tape.mul(xv, tape.relu(xv)));  // g = sum x*relu(x)
        const Var mix = tape.add(tape.scale(f, a), tape.scale(g, b));
        tape.backward(mix);
        auto gs = tape.grad(xv);
        return std::vector<double>(gs.begin(), gs.end());
    };

    const auto gf = grad_of(1.0, 0.0);
    const auto gg = grad_of(0.0, 1.0);
    const auto gm = grad_of(2.5, -1.25);
    for (int i = 0; i < 6; ++i)
        CHECK(gm[i] == doctest::Approx(2.5 * gf[i] - 1.25 * gg[i]).epsilon(1e-12));
}

TEST_CASE("finite differences: quadratic loss") {
    Rng rng(17);
    Tensor theta = random_tensor(rng, 8);
    std::vector<std::pair<std::string, Tensor*>> params{{"theta", &theta}};

    auto loss = [&]() {
        Tape tape;
        const Var tv = tape.param(theta);
        return tape.scalar_value(tape.scale(tape.sum(tape.square(tv)), 0.5));
    };
    auto analytic = [&]() {
        Tape tape;
        const Var tv = tape.param(theta);
        tape.backward(tape.scale(tape.sum(tape.square(tv)), 0.5));
        auto g = tape.grad(tv);
        return std::vector<std::vector<double>>{{g.begin(), g.end()}};
    };

    const auto res = ad::finite_diff_check(params, loss, analytic, 1e-5);
    CHECK(res.max_rel_err < 1e-9);
    // analytic gradient of 0.5 ||t||^2 is t itself
    const auto g = analytic();
    for (int i = 0; i < 8; ++i) CHECK(g[0][i] == doctest::Approx(theta.v[i]));
}

TEST_CASE("finite differences: linear layer + softmax + cross entropy") {
    Rng rng(19);
    const int in = 6, out = 4, target = 2;
    Tensor w = random_tensor(rng, out, in);
    Tensor b = random_tensor(rng, out);
    Tensor x = random_tensor(rng, in, 1, false);

    auto build = [&](Tape& tape, Var* wv, Var* bv) {
        const Var wvar = tape.param(w);
        const Var bvar = tape.param(b);
        const Var logits = tape.add(tape.matvec(wvar, tape.param(x)), bvar);
        const Var loss = tape.scale(tape.pick(tape.log_softmax(logits), target), -1.0);
        if (wv) *wv = wvar;
        if (bv) *bv = bvar;
        return loss;
    };

    std::vector<std::pair<std::string, Tensor*>> params{{"w", &w}, {"b", &b}};
    auto loss = [&]() {
        Tape tape;
        return tape.scalar_value(build(tape, nullptr, nullptr));
    };
    auto analytic = [&]() {
        Tape tape;
        Var wv, bv;
        tape.backward(build(tape, &wv, &bv));
        auto gw = tape.grad(wv);
        auto gb = tape.grad(bv);
        return std::vector<std::vector<double>>{{gw.begin(), gw.end()}, {gb.begin(), gb.end()}};
    };
    const auto res = ad::finite_diff_check(params, loss, analytic, 1e-5);
    CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("finite differences: every primitive composed") {
    Rng rng(23);
    const int n = 5;
    Tensor a = random_tensor(rng, n);
    Tensor b = random_tensor(rng, n);
    Tensor w = random_tensor(rng, n, 2 * n);
    Tensor m = random_tensor(rng, 3, n);

    auto build = [&](Tape& tape, std::vector<Var>* vars) {
        const Var av = tape.param(a);
        const Var bv = tape.param(b);
        const Var wv = tape.param(w);
        const Var mv = tape.param(m);
        const Var cat = tape.concat(av, tape.sigmoid(bv));
        const Var t1 = tape.tanh(tape.matvec(wv, cat));
        const Var t2 = tape.mul(t1, tape.relu(av));
        const Var sm = tape.softmax(tape.add(t2, bv));
        const Var r = tape.row(mv, 1);
        const Var t3 = tape.matvec_t(mv, tape.input(std::vector<double>{0.3, -0.2, 0.9}, 3));
        const Var mix = tape.add(tape.mul(sm, t3), tape.square(r));
        const Var s = tape.smul(tape.pick(sm, 0), mix);
        const Var loss = tape.add(tape.sum(s), tape.scale(tape.sum(tape.log_softmax(t2)), 0.25));
        if (vars) *vars = {av, bv, wv, mv};
        return loss;
    };

    std::vector<std::pair<std::string, Tensor*>> params{
        {"a", &a}, {"b", &b}, {"w", &w}, {"m", &m}};
    auto loss = [&]() {
        Tape tape;
        return tape.scalar_value(build(tape, nullptr));
    };
    auto analytic = [&]() {
        Tape tape;
        std::vector<Var> vars;
        tape.backward(build(tape, &vars));
        std::vector<std::vector<double>> out;
        for (const Var v : vars) {
            auto g = tape.grad(v);
            out.emplace_back(g.begin(), g.end());
        }
        return out;
    };
    const auto res = ad::finite_diff_check(params, loss, analytic, 1e-5);
    CHECK(res.max_rel_err < 1e-6);
}
