#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <functional>

#include "test_util.hpp"
#include "thumbqc/nn/tape.hpp"
#include "thumbqc/training.hpp"

using namespace thumbqc;
using nn::Tape;
using nn::Tensor;
using nn::Var;

namespace {

// Reduce [m,n] to a scalar through a nonlinearity and a fixed
// pseudo-random weighting, so no gradient component vanishes by
// normalization invariances or symmetry.
Var to_scalar(Tape& tape, Var x, uint32_t seed = 99) {
    const int rows = tape.val(x).rows();
    const int cols = tape.val(x).cols();
    Var w = tape.constant(testutil::random_tensor({cols, 1}, seed));
    Var col = tape.matmul(tape.gelu(x), w);
    return tape.mean_rows(col, 0, rows);
}

using GraphBuilder = std::function<Var(Tape&, nn::ParamSet&)>;

// Runs grad_check over a parameterized graph reduced to a scalar.
GradCheckReport check_graph(nn::ParamSet& ps, const GraphBuilder& build, double tol = 1e-6) {
    auto loss = [&](bool with_grad) {
        Tape tape;
        Var out = build(tape, ps);
        Var l = to_scalar(tape, out);
        if (with_grad) tape.backward(l);
        return tape.val(l)[0];
    };
    return grad_check(ps, loss, tol, 1e-5, 12, 7);
}

}  // namespace

TEST_CASE("gradients: matmul, transposed matmul, adds and scale") {
    nn::ParamSet ps;
    ps.add("a", {4, 5}).value = testutil::random_tensor({4, 5}, 1);
    ps.add("b", {5, 3}).value = testutil::random_tensor({5, 3}, 2);
    ps.add("bias", {1, 3}).value = testutil::random_tensor({1, 3}, 4);

    auto report = check_graph(ps, [](Tape& t, nn::ParamSet& p) {
        Var a = t.param(p.get("a"));
        Var b = t.param(p.get("b"));
        Var ab = t.matmul(a, b);  // [4,3]
        Var with_bias = t.add_rowvec(ab, t.param(p.get("bias")));
        Var doubled = t.add(with_bias, ab);
        return t.scale(doubled, 1.7);
    });
    CHECK(report.passed);
    CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("gradients: matmul_nt against explicit shapes") {
    nn::ParamSet ps;
    ps.add("a", {3, 6}).value = testutil::random_tensor({3, 6}, 11);
    ps.add("b", {4, 6}).value = testutil::random_tensor({4, 6}, 12);
    auto report = check_graph(ps, [](Tape& t, nn::ParamSet& p) {
        return t.matmul_nt(t.param(p.get("a")), t.param(p.get("b")));  // [3,4]
    });
    CHECK(report.passed);
}

TEST_CASE("gradients: activations") {
    nn::ParamSet ps;
    // Keep relu inputs away from the kink.
    Tensor init = testutil::random_tensor({4, 6}, 21);
    for (size_t i = 0; i < init.size(); ++i) {
        if (std::abs(init[i]) < 0.05) init[i] = 0.2;
    }
    ps.add("x", {4, 6}).value = init;

    for (auto kind : {0, 1, 2, 3}) {
        auto report = check_graph(ps, [kind](Tape& t, nn::ParamSet& p) {
            Var x = t.param(p.get("x"));
            switch (kind) {
                case 0: return t.relu(x);
                case 1: return t.gelu(x);
                case 2: return t.sigmoid(x);
                default: return t.softmax_rows(x);
            }
        });
        CHECK_MESSAGE(report.passed, "activation kind ", kind, " max_rel_err ", report.max_rel_err);
    }
}

TEST_CASE("gradients: layernorm") {
    nn::ParamSet ps;
    ps.add("x", {5, 8}).value = testutil::random_tensor({5, 8}, 31);
    ps.add("g", {1, 8}).value = testutil::random_tensor({1, 8}, 32, 0.5);
    ps.add("b", {1, 8}).value = testutil::random_tensor({1, 8}, 33, 0.5);
    auto report = check_graph(ps, [](Tape& t, nn::ParamSet& p) {
        return t.layernorm(t.param(p.get("x")), t.param(p.get("g")), t.param(p.get("b")));
    });
    CHECK(report.passed);
}

TEST_CASE("gradients: batchnorm in train and eval modes") {
    nn::ParamSet ps;
    ps.add("x", {6, 4}).value = testutil::random_tensor({6, 4}, 41);
    ps.add("g", {1, 4}).value = testutil::random_tensor({1, 4}, 42, 0.5);
    ps.add("b", {1, 4}).value = testutil::random_tensor({1, 4}, 43, 0.5);

    for (bool training : {true, false}) {
        nn::ParamSet stats;
        nn::Parameter& rm = stats.add_buffer("m", {1, 4});
        nn::Parameter& rv = stats.add_buffer("v", {1, 4});
        rm.value = testutil::random_tensor({1, 4}, 44, 0.3);
        rv.value = Tensor({1, 4}, 1.0);
        for (size_t i = 0; i < rv.value.size(); ++i) rv.value[i] = 0.5 + 0.1 * i;

        auto report = check_graph(ps, [&, training](Tape& t, nn::ParamSet& p) {
            // Reset the buffers so train-mode side effects do not change
            // the loss between finite-difference probes.
            nn::Parameter mean_copy = rm;
            nn::Parameter var_copy = rv;
            return t.batchnorm(t.param(p.get("x")), t.param(p.get("g")), t.param(p.get("b")),
                               mean_copy, var_copy, training);
        });
        CHECK_MESSAGE(report.passed, "training=", training, " err=", report.max_rel_err);
    }
}

TEST_CASE("batchnorm: running stats update with momentum") {
    nn::ParamSet ps;
    ps.add("g", {1, 2}).value.fill(1.0);
    ps.add("b", {1, 2});
    nn::Parameter& rm = ps.add_buffer("m", {1, 2});
    nn::Parameter& rv = ps.add_buffer("v", {1, 2});
    rv.value.fill(1.0);

    Tensor x = Tensor::from({4, 2}, {1.0, 0.0, 2.0, 0.0, 3.0, 0.0, 4.0, 0.0});
    Tape tape;
    tape.batchnorm(tape.constant(x), tape.param(ps.get("g")), tape.param(ps.get("b")), rm, rv,
                   true, 0.1);
    // Column 0: mean 2.5, biased var 1.25, unbiased 5/3.
    CHECK(rm.value[0] == doctest::Approx(0.25));
    CHECK(rv.value[0] == doctest::Approx(0.9 + 0.1 * (1.25 * 4.0 / 3.0)));
    CHECK(rm.value[1] == doctest::Approx(0.0));
    CHECK(rv.value[1] == doctest::Approx(0.9));
}

TEST_CASE("gradients: fused attention") {
    nn::ParamSet ps;
    ps.add("q", {5, 4}).value = testutil::random_tensor({5, 4}, 51);
    ps.add("k", {5, 4}).value = testutil::random_tensor({5, 4}, 52);
    ps.add("v", {5, 6}).value = testutil::random_tensor({5, 6}, 53);
    auto report = check_graph(ps, [](Tape& t, nn::ParamSet& p) {
        return t.attention(t.param(p.get("q")), t.param(p.get("k")), t.param(p.get("v")), 0.5);
    });
    CHECK(report.passed);
}

TEST_CASE("attention equals softmax(q k^T s) v built from separate ops") {
    Tensor q = testutil::random_tensor({4, 3}, 61);
    Tensor k = testutil::random_tensor({6, 3}, 62);
    Tensor v = testutil::random_tensor({6, 5}, 63);
    Tape t1;
    Var fused = t1.attention(t1.constant(q), t1.constant(k), t1.constant(v), 0.7);
    Tape t2;
    Var scores = t2.scale(t2.matmul_nt(t2.constant(q), t2.constant(k)), 0.7);
    Var composed = t2.matmul(t2.softmax_rows(scores), t2.constant(v));
    CHECK(testutil::max_abs_diff(t1.val(fused), t2.val(composed)) < 1e-12);
}

TEST_CASE("gradients: shape surgery and mean_rows") {
    nn::ParamSet ps;
    ps.add("x", {6, 7}).value = testutil::random_tensor({6, 7}, 71);
    ps.add("y", {2, 7}).value = testutil::random_tensor({2, 7}, 72);
    auto report = check_graph(ps, [](Tape& t, nn::ParamSet& p) {
        Var x = t.param(p.get("x"));
        Var y = t.param(p.get("y"));
        Var top = t.slice_rows(x, 0, 3);
        Var left = t.slice_cols(x, 0, 4);
        Var right = t.slice_cols(x, 4, 7);
        Var re = t.concat_cols(std::vector<Var>{left, right});  // [6,7] again
        Var stacked = t.concat_rows(std::vector<Var>{top, y, re});
        return t.mean_rows(stacked, 2, 9);
    });
    CHECK(report.passed);
}

TEST_CASE("gradients: bce over sigmoid probabilities") {
    nn::ParamSet ps;
    ps.add("logits", {5, 1}).value = testutil::random_tensor({5, 1}, 81, 2.0);
    const std::vector<double> labels = {1.0, 0.0, 1.0, 1.0, 0.0};
    auto loss_fn = [&](bool with_grad) {
        Tape tape;
        Var probs = tape.sigmoid(tape.param(ps.get("logits")));
        Var l = tape.bce_mean(probs, labels);
        if (with_grad) tape.backward(l);
        return tape.val(l)[0];
    };
    auto report = grad_check(ps, loss_fn, 1e-6, 1e-5, 5, 3);
    CHECK(report.passed);
}

TEST_CASE("gradients: dropout with a reseeded stream") {
    nn::ParamSet ps;
    ps.add("x", {8, 8}).value = testutil::random_tensor({8, 8}, 91);
    auto loss_fn = [&](bool with_grad) {
        Tape tape;
        std::mt19937 rng(1234);  // identical mask on every probe
        Var d = tape.dropout(tape.param(ps.get("x")), 0.4, rng, true);
        Var l = to_scalar(tape, d);
        if (with_grad) tape.backward(l);
        return tape.val(l)[0];
    };
    auto report = grad_check(ps, loss_fn, 1e-6, 1e-5, 16, 5);
    CHECK(report.passed);
}

TEST_CASE("dropout: disabled mode is an exact pass-through") {
    Tape tape;
    std::mt19937 rng(5);
    Tensor x = testutil::random_tensor({3, 3}, 92);
    Var in = tape.constant(x);
    Var out = tape.dropout(in, 0.5, rng, false);
    CHECK(out.id == in.id);
}

TEST_CASE("linear-only model: finite differences agree to near machine precision") {
    nn::ParamSet ps;
    ps.add("w", {6, 1}).value = testutil::random_tensor({6, 1}, 93);
    Tensor x = testutil::random_tensor({4, 6}, 94);
    auto loss_fn = [&](bool with_grad) {
        Tape tape;
        Var out = tape.matmul(tape.constant(x), tape.param(ps.get("w")));
        Var l = tape.mean_rows(out, 0, 4);
        if (with_grad) tape.backward(l);
        return tape.val(l)[0];
    };
    auto report = grad_check(ps, loss_fn, 1e-7, 1e-4, 6, 9);
    CHECK(report.passed);
    CHECK(report.max_rel_err < 1e-7);
}

TEST_CASE("tape determinism: identical graphs produce identical values") {
    Tensor x = testutil::random_tensor({5, 5}, 95);
    auto run = [&] {
        Tape tape;
        Var v = tape.constant(x);
        Var s = tape.softmax_rows(tape.gelu(v));
        return tape.val(s);
    };
    Tensor a = run();
    Tensor b = run();
    CHECK(testutil::max_abs_diff(a, b) == 0.0);
}
