#include "doctest.h"

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "tabfair/tape.hpp"

using namespace tabfair;

namespace {

using BuildFn = std::function<int(Tape&, const std::vector<int>&)>;

Tensor randt(Rng& rng, int rows, int cols, double lo = -2.0, double hi = 2.0) {
    Tensor t(rows, cols);
    for (auto& x : t.v) x = rng.uniform(lo, hi);
    return t;
}

// Random values bounded away from zero, for ops with a kink at the origin.
Tensor randt_off_origin(Rng& rng, int rows, int cols, double margin = 0.3) {
    Tensor t(rows, cols);
    for (auto& x : t.v) {
        double mag = rng.uniform(margin, 2.0);
        x = rng.uniform() < 0.5 ? -mag : mag;
    }
    return t;
}

double eval_scalar(const BuildFn& f, const std::vector<Tensor>& xs) {
    Tape t;
    std::vector<int> ids;
    for (auto& x : xs) ids.push_back(t.input(x));
    return t.val(f(t, ids)).v[0];
}

// Central finite differences, the independent oracle for every gradient.
std::vector<Tensor> fd_grads(const BuildFn& f, std::vector<Tensor> xs, double h = 1e-5) {
    std::vector<Tensor> out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        Tensor g(xs[i].rows, xs[i].cols);
        for (std::size_t j = 0; j < xs[i].size(); ++j) {
            double orig = xs[i].v[j];
            double hh = h * std::max(1.0, std::abs(orig));
            xs[i].v[j] = orig + hh;
            double fp = eval_scalar(f, xs);
            xs[i].v[j] = orig - hh;
            double fm = eval_scalar(f, xs);
            xs[i].v[j] = orig;
            g.v[j] = (fp - fm) / (2.0 * hh);
        }
        out.push_back(std::move(g));
    }
    return out;
}

void check_against_fd(const BuildFn& f, const std::vector<Tensor>& xs, double tol = 1e-4) {
    GradResult ad = grad(f, xs);
    std::vector<Tensor> fd = fd_grads(f, xs);
    REQUIRE(ad.grads.size() == fd.size());
    for (std::size_t i = 0; i < fd.size(); ++i) {
        REQUIRE(ad.grads[i].same_shape(fd[i]));
        for (std::size_t j = 0; j < fd[i].size(); ++j) {
            double denom = std::max(1.0, std::abs(fd[i].v[j]));
            CHECK(std::abs(ad.grads[i].v[j] - fd[i].v[j]) / denom < tol);
        }
    }
}

// sum(op(...) * w): the weight makes every adjoint entry distinct, so
// transposition and scatter mistakes cannot cancel out in the reduction.
int weighted_sum(Tape& t, int node, int w) { return t.sum_all(t.mul(node, w)); }

}  // namespace

TEST_CASE("elementwise arithmetic gradients match finite differences") {
    Rng rng(101);
    Tensor a = randt(rng, 3, 4);
    Tensor b = randt_off_origin(rng, 3, 4, 0.4);  // also used as divisor
    Tensor w = randt(rng, 3, 4);

    struct Case {
        const char* name;
        std::function<int(Tape&, int, int)> op;
    };
    const std::vector<Case> cases = {
        {"add", [](Tape& t, int x, int y) { return t.add(x, y); }},
        {"sub", [](Tape& t, int x, int y) { return t.sub(x, y); }},
        {"mul", [](Tape& t, int x, int y) { return t.mul(x, y); }},
        {"div", [](Tape& t, int x, int y) { return t.div(x, y); }},
        {"neg", [](Tape& t, int x, int) { return t.neg(x); }},
        {"scale", [](Tape& t, int x, int) { return t.scale(x, -1.7); }},
        {"add_const", [](Tape& t, int x, int) { return t.add_const(x, 2.5); }},
    };
    for (const auto& c : cases) {
        CAPTURE(c.name);
        check_against_fd(
            [&](Tape& t, const std::vector<int>& in) {
                return weighted_sum(t, c.op(t, in[0], in[1]), in[2]);
            },
            {a, b, w});
    }
}

TEST_CASE("matmul gradients cover all transpose combinations") {
    Rng rng(102);
    for (bool ta : {false, true})
        for (bool tb : {false, true}) {
            CAPTURE(ta);
            CAPTURE(tb);
            Tensor a = ta ? randt(rng, 3, 2) : randt(rng, 2, 3);
            Tensor b = tb ? randt(rng, 4, 3) : randt(rng, 3, 4);
            Tensor w = randt(rng, 2, 4);
            check_against_fd(
                [&](Tape& t, const std::vector<int>& in) {
                    return weighted_sum(t, t.matmul(in[0], in[1], ta, tb), in[2]);
                },
                {a, b, w});
        }
}

TEST_CASE("piecewise-linear activations match finite differences away from kinks") {
    Rng rng(103);
    Tensor a = randt_off_origin(rng, 4, 5);
    Tensor w = randt(rng, 4, 5);

    struct Case {
        const char* name;
        std::function<int(Tape&, int)> op;
    };
    const std::vector<Case> cases = {
        {"relu", [](Tape& t, int x) { return t.relu(x); }},
        {"leaky_relu", [](Tape& t, int x) { return t.leaky_relu(x, 0.2); }},
        {"abs", [](Tape& t, int x) { return t.abs(x); }},
    };
    for (const auto& c : cases) {
        CAPTURE(c.name);
        check_against_fd(
            [&](Tape& t, const std::vector<int>& in) {
                return weighted_sum(t, c.op(t, in[0]), in[1]);
            },
            {a, w});
    }
}

TEST_CASE("kink subgradients follow the documented conventions") {
    // relu'(0) = 0 and sign(0) = 0; gradients at the kink are exact, not FD.
    Tensor x(1, 3);
    x.v = {-1.0, 0.0, 2.0};

    GradResult r = grad(
        [](Tape& t, const std::vector<int>& in) { return t.sum_all(t.relu(in[0])); }, {x});
    CHECK(r.grads[0].v[0] == 0.0);
    CHECK(r.grads[0].v[1] == 0.0);  // the pinned choice at the kink
    CHECK(r.grads[0].v[2] == 1.0);

    GradResult s = grad(
        [](Tape& t, const std::vector<int>& in) { return t.sum_all(t.abs(in[0])); }, {x});
    CHECK(s.grads[0].v[0] == -1.0);
    CHECK(s.grads[0].v[1] == 0.0);  // sign(0) = 0
    CHECK(s.grads[0].v[2] == 1.0);
}

TEST_CASE("smooth scalar maps match finite differences") {
    Rng rng(104);
    Tensor a = randt(rng, 3, 3, -1.5, 1.5);
    Tensor pos = randt(rng, 3, 3, 0.5, 3.0);  // log/sqrt domain
    Tensor w = randt(rng, 3, 3);

    struct Case {
        const char* name;
        bool needs_positive;
        std::function<int(Tape&, int)> op;
    };
    const std::vector<Case> cases = {
        {"tanh", false, [](Tape& t, int x) { return t.tanh(x); }},
        {"sigmoid", false, [](Tape& t, int x) { return t.sigmoid(x); }},
        {"softplus", false, [](Tape& t, int x) { return t.softplus(x); }},
        {"exp", false, [](Tape& t, int x) { return t.exp(x); }},
        {"log", true, [](Tape& t, int x) { return t.log(x); }},
        {"sqrt", true, [](Tape& t, int x) { return t.sqrt(x); }},
    };
    for (const auto& c : cases) {
        CAPTURE(c.name);
        check_against_fd(
            [&](Tape& t, const std::vector<int>& in) {
                return weighted_sum(t, c.op(t, in[0]), in[1]);
            },
            {c.needs_positive ? pos : a, w});
    }
}

TEST_CASE("reduction and broadcast gradients match finite differences") {
    Rng rng(105);

    SUBCASE("sum_all / bcast_all") {
        Tensor a = randt(rng, 3, 4);
        Tensor w = randt(rng, 2, 5);
        check_against_fd(
            [&](Tape& t, const std::vector<int>& in) {
                int s = t.sum_all(in[0]);                  // (1,1)
                int b = t.bcast_all(t.tanh(s), 2, 5);      // non-linear in s
                return weighted_sum(t, b, in[1]);
            },
            {a, w});
    }
    SUBCASE("seg_sum / seg_bcast") {
        Tensor a = randt(rng, 2, 6);  // two segments of length 3
        Tensor w2 = randt(rng, 2, 2);
        Tensor w6 = randt(rng, 2, 6);
        check_against_fd(
            [&](Tape& t, const std::vector<int>& in) {
                return weighted_sum(t, t.seg_sum(in[0], 3), in[1]);
            },
            {a, w2});
        Tensor c = randt(rng, 2, 2);
        check_against_fd(
            [&](Tape& t, const std::vector<int>& in) {
                return weighted_sum(t, t.seg_bcast(in[0], 3), in[1]);
            },
            {c, w6});
    }
}

TEST_CASE("seg_sum values and adjoint pairing are exact") {
    Tensor a(2, 4);
    a.v = {1, 2, 3, 4, 5, 6, 7, 8};
    Tape t;
    int id = t.seg_sum(t.input(a), 2);
    CHECK(t.val(id).at(0, 0) == 3.0);
    CHECK(t.val(id).at(0, 1) == 7.0);
    CHECK(t.val(id).at(1, 0) == 11.0);
    CHECK(t.val(id).at(1, 1) == 15.0);

    int back = t.seg_bcast(id, 2);
    CHECK(t.val(back).at(0, 0) == 3.0);
    CHECK(t.val(back).at(0, 1) == 3.0);
    CHECK(t.val(back).at(1, 2) == 15.0);
}

TEST_CASE("shape ops route gradients to the right slots") {
    Rng rng(106);

    SUBCASE("transpose") {
        Tensor a = randt(rng, 2, 5);
        Tensor w = randt(rng, 5, 2);
        check_against_fd(
            [&](Tape& t, const std::vector<int>& in) {
                return weighted_sum(t, t.transpose(in[0]), in[1]);
            },
            {a, w});
    }
    SUBCASE("reshape") {
        Tensor a = randt(rng, 2, 6);
        Tensor w = randt(rng, 4, 3);
        check_against_fd(
            [&](Tape& t, const std::vector<int>& in) {
                return weighted_sum(t, t.reshape(in[0], 4, 3), in[1]);
            },
            {a, w});
    }
    SUBCASE("concat_rows") {
        Tensor a = randt(rng, 2, 3);
        Tensor b = randt(rng, 4, 3);
        Tensor w = randt(rng, 6, 3);
        check_against_fd(
            [&](Tape& t, const std::vector<int>& in) {
                return weighted_sum(t, t.concat_rows(in[0], in[1]), in[2]);
            },
            {a, b, w});
    }
    SUBCASE("slice_rows picks exactly its range") {
        Tensor a = randt(rng, 5, 3);
        Tensor w = randt(rng, 2, 3);
        check_against_fd(
            [&](Tape& t, const std::vector<int>& in) {
                return weighted_sum(t, t.slice_rows(in[0], 1, 3), in[1]);
            },
            {a, w});
        // rows outside [1, 3) must receive exactly zero
        GradResult r = grad(
            [](Tape& t, const std::vector<int>& in) {
                return t.sum_all(t.slice_rows(in[0], 1, 3));
            },
            {a});
        for (int c = 0; c < 3; ++c) {
            CHECK(r.grads[0].at(0, c) == 0.0);
            CHECK(r.grads[0].at(1, c) == 1.0);
            CHECK(r.grads[0].at(2, c) == 1.0);
            CHECK(r.grads[0].at(3, c) == 0.0);
            CHECK(r.grads[0].at(4, c) == 0.0);
        }
    }
    SUBCASE("row_embed") {
        Tensor a = randt(rng, 2, 3);
        Tensor w = randt(rng, 6, 3);
        check_against_fd(
            [&](Tape& t, const std::vector<int>& in) {
                return weighted_sum(t, t.row_embed(in[0], 2, 6), in[1]);
            },
            {a, w});
    }
}

TEST_CASE("im2col and col2im are adjoint and match finite differences") {
    Rng rng(107);
    const int C = 3, k = 4, stride = 2, pad = 1, batch = 2, len_big = 8;
    const int len_small = (len_big + 2 * pad - k) / stride + 1;

    SUBCASE("value layout on a tiny case") {
        // one channel, length 4, k=2, stride=2, pad=0 -> windows (1,2) (3,4)
        Tensor x(1, 4);
        x.v = {1, 2, 3, 4};
        Tape t;
        int y = t.im2col(t.input(x), 2, 2, 0, 1);
        REQUIRE(t.val(y).rows == 2);
        REQUIRE(t.val(y).cols == 2);
        CHECK(t.val(y).at(0, 0) == 1.0);
        CHECK(t.val(y).at(1, 0) == 2.0);
        CHECK(t.val(y).at(0, 1) == 3.0);
        CHECK(t.val(y).at(1, 1) == 4.0);
    }

    SUBCASE("adjoint identity <im2col(x), y> == <x, col2im(y)>") {
        Tensor x = randt(rng, C, len_big * batch);
        Tensor y = randt(rng, C * k, len_small * batch);
        Tape t;
        int xi = t.input(x), yi = t.input(y);
        int fwd = t.im2col(xi, k, stride, pad, batch);
        int lhs = t.sum_all(t.mul(fwd, yi));
        int adj = t.col2im(yi, k, stride, pad, batch, len_big);
        int rhs = t.sum_all(t.mul(xi, adj));
        CHECK(t.val(lhs).v[0] == doctest::Approx(t.val(rhs).v[0]).epsilon(1e-12));
    }

    SUBCASE("im2col gradient") {
        Tensor x = randt(rng, C, len_big * batch);
        Tensor w = randt(rng, C * k, len_small * batch);
        check_against_fd(
            [&](Tape& t, const std::vector<int>& in) {
                return weighted_sum(t, t.im2col(in[0], k, stride, pad, batch), in[1]);
            },
            {x, w});
    }
    SUBCASE("col2im gradient") {
        Tensor y = randt(rng, C * k, len_small * batch);
        Tensor w = randt(rng, C, len_big * batch);
        check_against_fd(
            [&](Tape& t, const std::vector<int>& in) {
                return weighted_sum(t, t.col2im(in[0], k, stride, pad, batch, len_big),
                                    in[1]);
            },
            {y, w});
    }
}

TEST_CASE("chained network gradients match finite differences") {
    Rng rng(108);
    const int D = 4, H = 5, B = 3;
    Tensor W1 = randt(rng, H, D, -0.8, 0.8);
    Tensor b1 = randt(rng, H, 1, -0.5, 0.5);
    Tensor W2 = randt(rng, 1, H, -0.8, 0.8);
    Tensor x = randt(rng, D, B);
    Tensor ones(1, B, 1.0);

    check_against_fd(
        [&](Tape& t, const std::vector<int>& in) {
            int bias = t.matmul(in[1], in[4]);                 // (H,1)x(1,B)
            int h = t.leaky_relu(t.add(t.matmul(in[0], in[3]), bias), 0.2);
            int out = t.matmul(in[2], h);                      // (1,B)
            return t.sum_all(t.tanh(out));
        },
        {W1, b1, W2, x, ones});
}

TEST_CASE("instance normalization composite matches finite differences") {
    // The same primitive composition the generator uses: per-(channel, sample)
    // mean/variance over segments of the column axis.
    Rng rng(109);
    const int C = 3, L = 4, B = 2;
    Tensor x = randt(rng, C, L * B);
    Tensor w = randt(rng, C, L * B);

    check_against_fd(
        [&](Tape& t, const std::vector<int>& in) {
            int mean = t.scale(t.seg_sum(in[0], L), 1.0 / L);
            int centered = t.sub(in[0], t.seg_bcast(mean, L));
            int var = t.scale(t.seg_sum(t.mul(centered, centered), L), 1.0 / L);
            int denom = t.seg_bcast(t.sqrt(t.add_const(var, 1e-5)), L);
            return weighted_sum(t, t.div(centered, denom), in[1]);
        },
        {x, w});
}

TEST_CASE("inputs the output ignores receive zero gradients") {
    Rng rng(110);
    Tensor a = randt(rng, 2, 2);
    Tensor b = randt(rng, 3, 4);
    GradResult r = grad(
        [](Tape& t, const std::vector<int>& in) { return t.sum_all(in[0]); }, {a, b});
    REQUIRE(r.grads[1].same_shape(b));
    for (double g : r.grads[1].v) CHECK(g == 0.0);
}

TEST_CASE("gradients are deterministic across identical runs") {
    Rng rng(111);
    Tensor a = randt(rng, 4, 4);
    Tensor w = randt(rng, 4, 4);
    auto f = [](Tape& t, const std::vector<int>& in) {
        return t.sum_all(t.mul(t.tanh(t.matmul(in[0], in[0])), in[1]));
    };
    GradResult r1 = grad(f, {a, w});
    GradResult r2 = grad(f, {a, w});
    CHECK(r1.value == r2.value);
    for (std::size_t i = 0; i < r1.grads.size(); ++i) CHECK(r1.grads[i].v == r2.grads[i].v);
}

TEST_CASE("a recorded backward pass can itself be differentiated") {
    // f(x) = sum(x^3), g = df/dx = 3x^2, s = sum(g * u) => ds/dx = 6x*u
    Rng rng(112);
    Tensor x = randt(rng, 3, 2);
    Tensor u = randt(rng, 3, 2);

    Tape t;
    int xi = t.input(x);
    int ui = t.input(u);
    int f = t.sum_all(t.mul(xi, t.mul(xi, xi)));
    int g = t.backward(f, std::vector<int>{xi})[0];

    for (std::size_t j = 0; j < x.size(); ++j)
        CHECK(t.val(g).v[j] == doctest::Approx(3.0 * x.v[j] * x.v[j]).epsilon(1e-12));

    int s = t.sum_all(t.mul(g, ui));
    int g2 = t.backward(s, std::vector<int>{xi})[0];
    for (std::size_t j = 0; j < x.size(); ++j)
        CHECK(t.val(g2).v[j] == doctest::Approx(6.0 * x.v[j] * u.v[j]).epsilon(1e-12));
}

TEST_CASE("gradient penalty matches the analytic dot-product case") {
    // D(x) = <p, x>  =>  grad_x D = p, penalty = (|p| - 1)^2,
    // d penalty / d p = 2 (|p| - 1) p / |p|
    Rng rng(113);
    Tensor p = randt(rng, 5, 1);
    Tensor x = randt(rng, 5, 1);

    PenaltyResult r = grad_penalty(
        [](Tape& t, const std::vector<int>& params, int xi) {
            return t.sum_all(t.mul(params[0], xi));
        },
        {p}, x);

    double norm = 0;
    for (double v : p.v) norm += v * v;
    norm = std::sqrt(norm);
    CHECK(r.penalty == doctest::Approx((norm - 1) * (norm - 1)).epsilon(1e-12));
    for (std::size_t j = 0; j < p.size(); ++j)
        CHECK(r.grads[0].v[j] ==
              doctest::Approx(2.0 * (norm - 1.0) * p.v[j] / norm).epsilon(1e-10));
}

TEST_CASE("gradient penalty matches finite differences through a network critic") {
    Rng rng(114);
    const int D = 4, H = 6;
    std::vector<Tensor> params = {randt(rng, H, D, -0.7, 0.7), randt(rng, H, 1, -0.4, 0.4),
                                  randt(rng, 1, H, -0.7, 0.7)};
    Tensor x = randt(rng, D, 1);

    auto critic = [](Tape& t, const std::vector<int>& ps, int xi) {
        int h = t.leaky_relu(t.add(t.matmul(ps[0], xi), ps[1]), 0.2);
        return t.sum_all(t.matmul(ps[2], h));
    };

    PenaltyResult ad = grad_penalty(critic, params, x);

    auto eval_pen = [&](const std::vector<Tensor>& ps) {
        return grad_penalty(critic, ps, x).penalty;
    };
    const double h = 1e-5;
    for (std::size_t i = 0; i < params.size(); ++i) {
        for (std::size_t j = 0; j < params[i].size(); ++j) {
            std::vector<Tensor> ps = params;
            double orig = ps[i].v[j];
            double hh = h * std::max(1.0, std::abs(orig));
            ps[i].v[j] = orig + hh;
            double fp = eval_pen(ps);
            ps[i].v[j] = orig - hh;
            double fm = eval_pen(ps);
            double fd = (fp - fm) / (2.0 * hh);
            double denom = std::max(1.0, std::abs(fd));
            CHECK(std::abs(ad.grads[i].v[j] - fd) / denom < 1e-3);
        }
    }
}

TEST_CASE("zero critic gradient yields penalty one and zero parameter gradients") {
    // All pre-activations are pushed far negative, so relu kills the input
    // gradient entirely. The norm's subgradient at the origin is 0, hence
    // penalty (0 - 1)^2 = 1 exactly and no parameter gradient.
    Rng rng(115);
    Tensor W = randt(rng, 3, 4, -0.5, 0.5);
    Tensor x = randt(rng, 4, 1);

    PenaltyResult r = grad_penalty(
        [](Tape& t, const std::vector<int>& ps, int xi) {
            int pre = t.add_const(t.matmul(ps[0], xi), -100.0);
            return t.sum_all(t.relu(pre));
        },
        {W}, x);

    CHECK(r.penalty == 1.0);
    for (double g : r.grads[0].v) CHECK(g == 0.0);
}

TEST_CASE("non-finite intermediate values raise a numerical failure") {
    Tape t;
    Tensor bad(1, 1);
    bad.v = {-1.0};
    int id = t.input(bad);
    CHECK_THROWS_AS(t.log(id), NumericalFailure);

    Tensor zero(1, 1);
    int z = t.input(zero);
    Tensor one(1, 1, 1.0);
    int o = t.input(one);
    CHECK_THROWS_AS(t.div(o, z), NumericalFailure);
}

TEST_CASE("shape violations raise contract violations") {
    Tape t;
    int a = t.input(Tensor(2, 3));
    int b = t.input(Tensor(2, 3));
    CHECK_THROWS_AS(t.matmul(a, b), ContractViolation);
    CHECK_THROWS_AS(t.add(a, t.input(Tensor(3, 2))), ContractViolation);
    CHECK_THROWS_AS(t.reshape(a, 4, 4), ContractViolation);
    CHECK_THROWS_AS(t.seg_sum(a, 2), ContractViolation);  // 3 % 2 != 0
}
