#include <doctest.h>

#include <cmath>
#include <functional>
#include <memory>
#include <vector>

#include "helpers.hpp"
#include "nacd/tape.hpp"

using namespace nacd;
using testutil::central_diff;
using testutil::random_vec;
using testutil::rel_err;

namespace {

// Builds a scalar function of a flat input vector as a tape graph.
using GraphFn = std::function<NodeId(Tape&, NodeId x)>;

// Checks the tape gradient of `fn` against central differences at `x0`.
void check_against_fd(const GraphFn& fn, const Shape& xshape, std::vector<double> x0,
                      double tol = 1e-7) {
    Tape tape;
    NodeId x = tape.leaf(Tensor(xshape, x0), true);
    NodeId out = fn(tape, x);
    REQUIRE(tape.val(out).numel() == 1);
    auto grads = tape.grad(out, {x});
    const Tensor& g = tape.val(grads.at(x));

    auto eval = [&](const std::vector<double>& xv) {
        Tape t2;
        NodeId x2 = t2.leaf(Tensor(xshape, xv), true);
        return t2.val(fn(t2, x2)).at(0);
    };
    for (size_t i = 0; i < x0.size(); ++i) {
        const double fd = central_diff(eval, x0, i);
        INFO("coordinate ", i, " analytic=", g.at(static_cast<int64_t>(i)), " fd=", fd);
        CHECK(rel_err(g.at(static_cast<int64_t>(i)), fd) < tol);
    }
}

Tensor weights(Rng& rng, Shape s) {
    Tensor t(std::move(s));
    for (auto& v : t.data) v = rng.next_normal();
    return t;
}

}  // namespace

TEST_CASE("grad of identity is one") {
    Tape t;
    NodeId x = t.leaf(Tensor::scalar(3.5), true);
    auto g = t.grad(x, {x});
    CHECK(t.val(g.at(x)).at(0) == 1.0);
}

TEST_CASE("grad of squared norm at (1,2) is (2,4)") {
    Tape t;
    NodeId x = t.leaf(Tensor({2}, {1.0, 2.0}), true);
    NodeId out = t.sumsq(x);
    auto g = t.grad(out, {x});
    CHECK(t.val(g.at(x)).at(0) == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(t.val(g.at(x)).at(1) == doctest::Approx(4.0).epsilon(1e-14));
}

TEST_CASE("grad rejects non-scalar outputs") {
    Tape t;
    NodeId x = t.leaf(Tensor({2}, {1.0, 2.0}), true);
    NodeId y = t.mul(x, x);
    CHECK_THROWS(t.grad(y, {x}));
}

TEST_CASE("unreachable wrt nodes get zero adjoints") {
    Tape t;
    NodeId x = t.leaf(Tensor::scalar(1.0), true);
    NodeId y = t.leaf(Tensor({3}, {1, 2, 3}), true);
    NodeId out = t.mul(x, x);
    auto g = t.grad(out, {x, y});
    const Tensor& gy = t.val(g.at(y));
    CHECK(gy.shape == Shape{3});
    for (double v : gy.data) CHECK(v == 0.0);
}

TEST_CASE("elementwise and scalar primitives match finite differences") {
    Rng rng(11);
    Tensor w4 = weights(rng, {4});

    check_against_fd([&](Tape& t, NodeId x) { return t.sum_all(t.mul(t.exp(x), t.constant(w4))); },
                     {4}, random_vec(rng, 4, 0.3));
    check_against_fd(
        [&](Tape& t, NodeId x) {
            return t.sum_all(t.mul(t.log(t.cadd(t.mul(x, x), 1.5)), t.constant(w4)));
        },
        {4}, random_vec(rng, 4));
    check_against_fd([&](Tape& t, NodeId x) { return t.sum_all(t.mul(t.tanh(x), t.constant(w4))); },
                     {4}, random_vec(rng, 4));
    check_against_fd(
        [&](Tape& t, NodeId x) { return t.sum_all(t.sqrt(t.cadd(t.mul(x, x), 0.7))); }, {4},
        random_vec(rng, 4));
    check_against_fd(
        [&](Tape& t, NodeId x) { return t.sum_all(t.recip(t.cadd(t.mul(x, x), 2.0))); }, {4},
        random_vec(rng, 4));
    check_against_fd(
        [&](Tape& t, NodeId x) {
            NodeId a = t.cmul(x, 1.7);
            NodeId b = t.neg(t.cadd(x, -0.3));
            return t.sum_all(t.mul(t.sub(a, b), t.add(x, t.constant(w4))));
        },
        {4}, random_vec(rng, 4));
}

TEST_CASE("smul differentiates through both operands") {
    Rng rng(12);
    // x = [vector(4), scale(1)] packed in one leaf via slicing is awkward;
    // check the two adjoints directly against finite differences instead.
    std::vector<double> xv = random_vec(rng, 4);
    double sv = 0.8;
    Tensor w = weights(rng, {4});

    Tape t;
    NodeId x = t.leaf(Tensor({4}, xv), true);
    NodeId s = t.leaf(Tensor::scalar(sv), true);
    NodeId out = t.sum_all(t.mul(t.smul(x, s), t.constant(w)));
    auto g = t.grad(out, {x, s});

    auto eval = [&](const std::vector<double>& xin, double sin) {
        Tape t2;
        NodeId x2 = t2.leaf(Tensor({4}, xin), true);
        NodeId s2 = t2.leaf(Tensor::scalar(sin), true);
        return t2.val(t2.sum_all(t2.mul(t2.smul(x2, s2), t2.constant(w)))).at(0);
    };
    for (size_t i = 0; i < 4; ++i) {
        auto f = [&](const std::vector<double>& v) { return eval(v, sv); };
        CHECK(rel_err(t.val(g.at(x)).at(static_cast<int64_t>(i)), central_diff(f, xv, i)) < 1e-7);
    }
    auto fs = [&](const std::vector<double>& v) { return eval(xv, v[0]); };
    CHECK(rel_err(t.val(g.at(s)).at(0), central_diff(fs, {sv}, 0)) < 1e-7);
}

TEST_CASE("matmul, transpose and reshape match finite differences") {
    Rng rng(13);
    Tensor m23 = weights(rng, {2, 3});
    Tensor m32 = weights(rng, {3, 2});
    Tensor w22 = weights(rng, {2, 2});

    // x (2,3) times constant (3,2), weighted sum
    check_against_fd(
        [&](Tape& t, NodeId x) {
            return t.sum_all(t.mul(t.matmul(x, t.constant(m32)), t.constant(w22)));
        },
        {2, 3}, random_vec(rng, 6));
    // constant (2,3) times x (3,2)
    check_against_fd(
        [&](Tape& t, NodeId x) { return t.sum_all(t.mul(t.matmul(t.constant(m23), x), t.constant(w22))); },
        {3, 2}, random_vec(rng, 6));
    // batched 3-D matmul
    Tensor wb = weights(rng, {2, 2, 2});
    check_against_fd(
        [&](Tape& t, NodeId x) {
            NodeId y = t.matmul(x, t.transpose(x));  // (2,2,3)x(2,3,2) -> (2,2,2)
            return t.sum_all(t.mul(y, t.constant(wb)));
        },
        {2, 2, 3}, random_vec(rng, 12));
    // reshape + transpose
    check_against_fd(
        [&](Tape& t, NodeId x) {
            NodeId y = t.transpose(t.reshape(x, {3, 2}));
            return t.sum_all(t.mul(y, t.constant(m23)));
        },
        {6}, random_vec(rng, 6));
}

TEST_CASE("gather/scatter/select primitives match finite differences") {
    Rng rng(14);
    auto ids = std::make_shared<std::vector<int64_t>>(std::vector<int64_t>{2, 0, 2, 1});
    Tensor w43 = weights(rng, {4, 3});
    check_against_fd(
        [&](Tape& t, NodeId x) { return t.sum_all(t.mul(t.gather_rows(x, ids), t.constant(w43))); },
        {3, 3}, random_vec(rng, 9));

    auto cols = std::make_shared<std::vector<int64_t>>(std::vector<int64_t>{1, 0, 2});
    Tensor w31 = weights(rng, {3, 1});
    check_against_fd(
        [&](Tape& t, NodeId x) { return t.sum_all(t.mul(t.select_cols(x, cols), t.constant(w31))); },
        {3, 3}, random_vec(rng, 9));

    Tensor w53 = weights(rng, {5, 3});
    check_against_fd(
        [&](Tape& t, NodeId x) {
            return t.sum_all(t.mul(t.scatter_rows(x, ids, 5), t.constant(w53)));
        },
        {4, 3}, random_vec(rng, 12));
}

TEST_CASE("reduction and broadcast primitives match finite differences") {
    Rng rng(15);
    Tensor w23 = weights(rng, {2, 3});
    Tensor w21 = weights(rng, {2, 1});
    Tensor w3 = weights(rng, {3});

    check_against_fd(
        [&](Tape& t, NodeId x) { return t.sum_all(t.mul(t.row_sum(x), t.constant(w21))); }, {2, 3},
        random_vec(rng, 6));
    check_against_fd(
        [&](Tape& t, NodeId x) { return t.sum_all(t.mul(t.bcast_last(x, 3), t.constant(w23))); },
        {2, 1}, random_vec(rng, 2));
    check_against_fd(
        [&](Tape& t, NodeId x) { return t.sum_all(t.mul(t.logsumexp(x), t.constant(w21))); }, {2, 3},
        random_vec(rng, 6));
    check_against_fd(
        [&](Tape& t, NodeId x) { return t.sum_all(t.mul(t.sum_lead(x), t.constant(w3))); }, {2, 3},
        random_vec(rng, 6));
    check_against_fd(
        [&](Tape& t, NodeId x) { return t.sum_all(t.mul(t.tile_lead(x, {2, 3}), t.constant(w23))); },
        {3}, random_vec(rng, 3));
    check_against_fd(
        [&](Tape& t, NodeId x) { return t.sum_all(t.mul(t.bcast_full(t.sum_all(x), {2, 3}), t.constant(w23))); },
        {2, 3}, random_vec(rng, 6));
}

TEST_CASE("sequence-dimension primitives match finite differences") {
    Rng rng(16);
    Tensor w243 = weights(rng, {2, 4, 3});
    Tensor w223 = weights(rng, {2, 2, 3});
    Tensor w426 = weights(rng, {4, 2, 3});

    check_against_fd(
        [&](Tape& t, NodeId x) {
            NodeId both = t.concat_dim1(x, t.cmul(x, -2.0));
            return t.sum_all(t.mul(both, t.constant(w243)));
        },
        {2, 2, 3}, random_vec(rng, 12));
    check_against_fd(
        [&](Tape& t, NodeId x) { return t.sum_all(t.mul(t.slice_dim1(x, 1, 2), t.constant(w223))); },
        {2, 4, 3}, random_vec(rng, 24));
    check_against_fd(
        [&](Tape& t, NodeId x) { return t.sum_all(t.mul(t.pad_dim1(x, 1, 4), t.constant(w243))); },
        {2, 2, 3}, random_vec(rng, 12));
    check_against_fd(
        [&](Tape& t, NodeId x) {
            NodeId heads = t.split_heads(x, 2);  // (2,2,6) -> (4,2,3)
            return t.sum_all(t.mul(heads, t.constant(w426)));
        },
        {2, 2, 6}, random_vec(rng, 24));
    Tensor w226 = weights(rng, {2, 2, 6});
    check_against_fd(
        [&](Tape& t, NodeId x) {
            NodeId merged = t.merge_heads(x, 2);  // (4,2,3) -> (2,2,6)
            return t.sum_all(t.mul(merged, t.constant(w226)));
        },
        {4, 2, 3}, random_vec(rng, 24));
}

TEST_CASE("gradients are linear in the output") {
    Rng rng(17);
    std::vector<double> xv = random_vec(rng, 5);
    Tensor wa = weights(rng, {5});
    Tensor wb = weights(rng, {5});
    const double ca = 1.7, cb = -0.6;

    Tape t;
    NodeId x = t.leaf(Tensor({5}, xv), true);
    NodeId f = t.sum_all(t.mul(t.tanh(x), t.constant(wa)));
    NodeId g = t.sum_all(t.mul(t.exp(x), t.constant(wb)));
    NodeId combo = t.add(t.cmul(f, ca), t.cmul(g, cb));

    auto gf = t.grad(f, {x});
    auto gg = t.grad(g, {x});
    auto gc = t.grad(combo, {x});
    for (int64_t i = 0; i < 5; ++i) {
        const double want = ca * t.val(gf.at(x)).at(i) + cb * t.val(gg.at(x)).at(i);
        CHECK(t.val(gc.at(x)).at(i) == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("replay reproduces all values bit-exactly") {
    Rng rng(18);
    Tape t;
    NodeId x = t.leaf(Tensor({3, 4}, random_vec(rng, 12)), true);
    NodeId y = t.matmul(t.tanh(x), t.transpose(x));
    NodeId out = t.sum_all(t.mul(y, y));
    t.grad(out, {x});

    std::vector<std::vector<double>> before;
    for (size_t i = 0; i < t.size(); ++i) before.push_back(t.val(static_cast<NodeId>(i)).data);
    t.replay();
    for (size_t i = 0; i < t.size(); ++i) {
        CHECK(t.val(static_cast<NodeId>(i)).data == before[i]);
    }
}

TEST_CASE("second derivatives via grad of grad") {
    // f(x) = x^3: f' = 3x^2, f'' = 6x
    Tape t;
    const double xv = 1.3;
    NodeId x = t.leaf(Tensor::scalar(xv), true);
    NodeId f = t.mul(t.mul(x, x), x);
    auto g1 = t.grad(f, {x});
    CHECK(t.val(g1.at(x)).at(0) == doctest::Approx(3 * xv * xv).epsilon(1e-13));
    auto g2 = t.grad(g1.at(x), {x});
    CHECK(t.val(g2.at(x)).at(0) == doctest::Approx(6 * xv).epsilon(1e-13));
}

TEST_CASE("second derivatives through logsumexp-based softmax") {
    // d2/dx2 of lse(x) checked against finite differences of the analytic gradient
    Rng rng(19);
    std::vector<double> xv = random_vec(rng, 3);
    Tape t;
    NodeId x = t.leaf(Tensor({1, 3}, xv), true);
    NodeId f = t.sum_all(t.logsumexp(x));
    auto g1 = t.grad(f, {x});
    NodeId g_first = t.grad(f, {x}).at(x);
    (void)g1;
    NodeId probe = t.sum_all(t.mul(g_first, t.constant(Tensor({1, 3}, {1.0, -2.0, 0.5}))));
    auto g2 = t.grad(probe, {x});

    auto grad_probe = [&](const std::vector<double>& v) {
        Tape t2;
        NodeId x2 = t2.leaf(Tensor({1, 3}, v), true);
        NodeId f2 = t2.sum_all(t2.logsumexp(x2));
        auto gg = t2.grad(f2, {x2});
        const Tensor& gt = t2.val(gg.at(x2));
        return gt.at(0) * 1.0 + gt.at(1) * -2.0 + gt.at(2) * 0.5;
    };
    for (size_t i = 0; i < 3; ++i) {
        const double fd = central_diff(grad_probe, xv, i);
        CHECK(rel_err(t.val(g2.at(x)).at(static_cast<int64_t>(i)), fd) < 1e-6);
    }
}

TEST_CASE("one unrolled SGD step on a quadratic matches the closed form") {
    // inner loss l = (theta - c)^2 / 2; update theta1 = theta0 - a*(theta0 - c)
    const double theta0 = 2.0, c = 0.5, a = 0.3;
    Tape t;
    NodeId theta = t.leaf(Tensor::scalar(theta0), true);
    NodeId alpha = t.leaf(Tensor::scalar(a), true);
    NodeId diff = t.cadd(theta, -c);
    NodeId loss = t.cmul(t.mul(diff, diff), 0.5);
    NodeId g = t.grad(loss, {theta}).at(theta);
    NodeId theta1 = t.sub(theta, t.smul(g, alpha));

    CHECK(t.val(theta1).at(0) == doctest::Approx(theta0 - a * (theta0 - c)).epsilon(1e-15));
    // d theta1 / d alpha = -(theta0 - c), exactly
    auto hyper = t.grad(theta1, {alpha, theta});
    CHECK(t.val(hyper.at(alpha)).at(0) == doctest::Approx(-(theta0 - c)).epsilon(1e-15));
    // d theta1 / d theta0 = 1 - a
    CHECK(t.val(hyper.at(theta)).at(0) == doctest::Approx(1.0 - a).epsilon(1e-15));
}

TEST_CASE("record dump lists ops and shapes") {
    Tape t;
    NodeId x = t.leaf(Tensor({2}, {1, 2}), true);
    t.sum_all(t.mul(x, x));
    const std::string d = t.dump();
    CHECK(d.find("leaf") != std::string::npos);
    CHECK(d.find("mul") != std::string::npos);
    CHECK(d.find("sum_all") != std::string::npos);
    CHECK(d.find("(2)") != std::string::npos);
}
