#include <doctest.h>

#include <cmath>
#include <vector>

#include "octofold/errors.hpp"
#include "octofold/rng.hpp"
#include "octofold/tape.hpp"
#include "octofold/tensor.hpp"

using namespace octofold;

namespace {

Tensor random_tensor(std::vector<std::int64_t> shape, RngStream& rng, double lo = -1.0,
                     double hi = 1.0) {
    Tensor t(shape);
    for (std::int64_t i = 0; i < t.size(); ++i) t.at(i) = static_cast<float>(rng.uniform(lo, hi));
    return t;
}

}  // namespace

TEST_CASE("conv1d matches the hand-computed width-3 example") {
    // x = [1,2,3,4] single channel, filter taps [1,0,-1], zero padding.
    Tape tape;
    NodeId x = tape.leaf(Tensor::from({1, 4, 1}, {1, 2, 3, 4}));
    NodeId f = tape.leaf(Tensor::from({3, 1, 1}, {1, 0, -1}));
    NodeId b = tape.leaf(Tensor::zeros({1}));
    const Tensor y = tape.value(tape.conv1d(x, f, b));
    CHECK(y.at(0, 0, 0) == doctest::Approx(-2.0).epsilon(1e-12));
    CHECK(y.at(0, 1, 0) == doctest::Approx(-2.0).epsilon(1e-12));
    CHECK(y.at(0, 2, 0) == doctest::Approx(-2.0).epsilon(1e-12));
    CHECK(y.at(0, 3, 0) == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("conv1d with width-1 identity filters is exactly the identity") {
    RngStream rng(11);
    const std::int64_t D = 5;
    Tensor filters = Tensor::zeros({1, D, D});
    for (std::int64_t d = 0; d < D; ++d) filters.at(0 * D * D + d * D + d) = 1.0f;

    Tape tape;
    NodeId x = tape.leaf(random_tensor({3, 9, D}, rng));
    const Tensor y = tape.value(tape.conv1d(x, tape.leaf(filters), tape.leaf(Tensor::zeros({D}))));
    const Tensor xv = tape.value(x);
    REQUIRE(y.size() == xv.size());
    for (std::int64_t i = 0; i < y.size(); ++i) CHECK(y.at(i) == xv.at(i));
}

TEST_CASE("conv1d output shapes follow [B, L, Dout]") {
    RngStream rng(12);
    Tape tape;
    NodeId f = tape.leaf(random_tensor({9, 42, 64}, rng, -0.1, 0.1));
    NodeId b = tape.leaf(Tensor::zeros({64}));

    const Tensor y1 = tape.value(tape.conv1d(tape.leaf(random_tensor({2, 700, 42}, rng)), f, b));
    CHECK(y1.shape() == std::vector<std::int64_t>{2, 700, 64});

    const Tensor y2 = tape.value(tape.conv1d(tape.leaf(random_tensor({54, 3, 42}, rng)), f, b));
    CHECK(y2.shape() == std::vector<std::int64_t>{54, 3, 64});

    Tape bad;
    NodeId x_bad = bad.leaf(random_tensor({1, 5, 7}, rng));
    CHECK_THROWS_AS(bad.conv1d(x_bad, bad.leaf(random_tensor({9, 42, 64}, rng)),
                               bad.leaf(Tensor::zeros({64}))),
                    DimensionError);
    CHECK_THROWS_AS(bad.conv1d(x_bad, bad.leaf(random_tensor({4, 7, 3}, rng)),
                               bad.leaf(Tensor::zeros({3}))),
                    DimensionError);  // even width
}

TEST_CASE("multiscale equals depth-concatenated per-bank convolutions") {
    RngStream rng(13);
    Tape tape;
    NodeId x = tape.leaf(random_tensor({2, 7, 4}, rng));
    NodeId f3 = tape.leaf(random_tensor({3, 4, 2}, rng));
    NodeId b3 = tape.leaf(random_tensor({2}, rng));
    NodeId f5 = tape.leaf(random_tensor({5, 4, 3}, rng));
    NodeId b5 = tape.leaf(random_tensor({3}, rng));

    // Create every node before taking values: the tape may reallocate.
    NodeId ms_id = tape.multiscale(x, {{f3, b3}, {f5, b5}});
    NodeId cat_id = tape.depth_concat({tape.conv1d(x, f3, b3), tape.conv1d(x, f5, b5)});
    NodeId single_id = tape.multiscale(x, {{f3, b3}});
    NodeId conv_id = tape.conv1d(x, f3, b3);

    const Tensor ms = tape.value(ms_id);
    const Tensor cat = tape.value(cat_id);
    REQUIRE(ms.shape() == std::vector<std::int64_t>{2, 7, 5});
    for (std::int64_t i = 0; i < ms.size(); ++i) CHECK(ms.at(i) == cat.at(i));

    // A single bank degenerates to a plain convolution.
    const Tensor single = tape.value(single_id);
    const Tensor conv = tape.value(conv_id);
    for (std::int64_t i = 0; i < single.size(); ++i) CHECK(single.at(i) == conv.at(i));
}

TEST_CASE("two identity banks duplicate the input along depth") {
    RngStream rng(14);
    const std::int64_t D = 3;
    Tensor eye = Tensor::zeros({1, D, D});
    for (std::int64_t d = 0; d < D; ++d) eye.at(d * D + d) = 1.0f;

    Tape tape;
    NodeId x = tape.leaf(random_tensor({1, 6, D}, rng));
    NodeId f = tape.leaf(eye);
    NodeId b = tape.leaf(Tensor::zeros({D}));
    const Tensor y = tape.value(tape.multiscale(x, {{f, b}, {f, b}}));
    const Tensor xv = tape.value(x);
    REQUIRE(y.shape() == std::vector<std::int64_t>{1, 6, 2 * D});
    for (std::int64_t t = 0; t < 6; ++t) {
        for (std::int64_t d = 0; d < D; ++d) {
            CHECK(y.at(0, t, d) == xv.at(0, t, d));
            CHECK(y.at(0, t, D + d) == xv.at(0, t, d));
        }
    }
}

TEST_CASE("depth_concat stacks in argument order and splits gradients losslessly") {
    RngStream rng(15);
    Tape tape;
    Tensor av = random_tensor({1, 4, 2}, rng);
    Tensor bv = random_tensor({1, 4, 3}, rng);
    NodeId a = tape.leaf(av, true, "a");
    NodeId b = tape.leaf(bv, true, "b");
    NodeId cat = tape.depth_concat({a, b});
    const Tensor y = tape.value(cat);
    REQUIRE(y.shape() == std::vector<std::int64_t>{1, 4, 5});
    for (std::int64_t t = 0; t < 4; ++t) {
        CHECK(y.at(0, t, 0) == av.at(0, t, 0));
        CHECK(y.at(0, t, 1) == av.at(0, t, 1));
        CHECK(y.at(0, t, 2) == bv.at(0, t, 0));
        CHECK(y.at(0, t, 4) == bv.at(0, t, 2));
    }

    Tensor coeffs = random_tensor({1, 4, 5}, rng);
    tape.backward(tape.weighted_sum(cat, coeffs));
    const Tensor ga = tape.grad(a);
    const Tensor gb = tape.grad(b);
    for (std::int64_t t = 0; t < 4; ++t) {
        CHECK(ga.at(0, t, 0) == coeffs.at(0, t, 0));
        CHECK(ga.at(0, t, 1) == coeffs.at(0, t, 1));
        CHECK(gb.at(0, t, 0) == coeffs.at(0, t, 2));
        CHECK(gb.at(0, t, 2) == coeffs.at(0, t, 4));
    }
}

TEST_CASE("relu clamps negatives and uses subgradient 0 at exactly 0") {
    Tape tape;
    NodeId x = tape.leaf(Tensor::from({4}, {-1.0f, 0.0f, 2.0f, -0.5f}), true, "x");
    NodeId y = tape.relu(x);
    const Tensor yv = tape.value(y);
    CHECK(yv.at(0) == 0.0f);
    CHECK(yv.at(1) == 0.0f);
    CHECK(yv.at(2) == 2.0f);
    CHECK(yv.at(3) == 0.0f);

    tape.backward(tape.weighted_sum(y, Tensor::full({4}, 1.0f)));
    const Tensor g = tape.grad(x);
    CHECK(g.at(0) == 0.0f);
    CHECK(g.at(1) == 0.0f);  // fixed convention at the kink
    CHECK(g.at(2) == 1.0f);
    CHECK(g.at(3) == 0.0f);
}

TEST_CASE("dropout is the identity at rate 0 and in infer mode") {
    RngStream rng(16);
    Tape tape;
    NodeId x = tape.leaf(random_tensor({2, 5, 3}, rng));
    const Tensor xv = tape.value(x);

    NodeId infer = tape.dropout(x, 0.7, Mode::kInfer, rng);
    const Tensor iv = tape.value(infer);
    for (std::int64_t i = 0; i < iv.size(); ++i) CHECK(iv.at(i) == xv.at(i));

    NodeId zero = tape.dropout(x, 0.0, Mode::kTrain, rng);
    const Tensor zv = tape.value(zero);
    for (std::int64_t i = 0; i < zv.size(); ++i) CHECK(zv.at(i) == xv.at(i));

    CHECK_THROWS_AS(tape.dropout(x, 1.0, Mode::kTrain, rng), ConfigError);
    CHECK_THROWS_AS(tape.dropout(x, -0.1, Mode::kTrain, rng), ConfigError);
}

TEST_CASE("train-mode dropout zeroes or rescales, expectation within 5% at n=10000") {
    RngStream rng(17);
    const double rate = 0.4;
    Tape tape;
    NodeId x = tape.leaf(Tensor::full({10000}, 1.0f));
    const Tensor y = tape.value(tape.dropout(x, rate, Mode::kTrain, rng));

    const float kept = static_cast<float>(1.0 / (1.0 - rate));
    double sum = 0.0;
    for (std::int64_t i = 0; i < y.size(); ++i) {
        const float v = y.at(i);
        CHECK((v == 0.0f || v == kept));
        sum += v;
    }
    const double mean = sum / static_cast<double>(y.size());
    CHECK(mean == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("infer-mode dropout passes gradients through unchanged") {
    RngStream rng(18);
    Tape tape;
    Tensor coeffs = random_tensor({3, 4}, rng);
    NodeId x = tape.leaf(random_tensor({3, 4}, rng), true, "x");
    NodeId y = tape.dropout(x, 0.5, Mode::kInfer, rng);
    tape.backward(tape.weighted_sum(y, coeffs));
    const Tensor g = tape.grad(x);
    for (std::int64_t i = 0; i < g.size(); ++i) CHECK(g.at(i) == coeffs.at(i));
}

TEST_CASE("batchnorm normalizes {1,3} to +-1 and handles degenerate cases") {
    Tape tape;
    // Two batch rows, one channel: values 1 and 3 -> mean 2, variance 1.
    NodeId x = tape.leaf(Tensor::from({2, 1, 1}, {1.0f, 3.0f}));
    NodeId gamma = tape.leaf(Tensor::full({1}, 1.0f));
    NodeId beta = tape.leaf(Tensor::zeros({1}));
    Tensor rm = Tensor::zeros({1});
    Tensor rv = Tensor::full({1}, 1.0f);
    const Tensor& y =
        tape.value(tape.batchnorm(x, gamma, beta, Mode::kTrain, rm, rv, nullptr));
    CHECK(y.at(0) == doctest::Approx(-1.0).epsilon(1e-4));
    CHECK(y.at(1) == doctest::Approx(1.0).epsilon(1e-4));

    // Running statistics blend with momentum 0.99.
    CHECK(rm.at(0) == doctest::Approx(0.99 * 0.0 + 0.01 * 2.0).epsilon(1e-6));
    CHECK(rv.at(0) == doctest::Approx(0.99 * 1.0 + 0.01 * 1.0).epsilon(1e-6));

    // Constant channel: output collapses to beta.
    Tape tape2;
    NodeId xc = tape2.leaf(Tensor::full({3, 2, 1}, 4.0f));
    NodeId beta2 = tape2.leaf(Tensor::full({1}, 0.25f));
    Tensor rm2 = Tensor::zeros({1}), rv2 = Tensor::full({1}, 1.0f);
    const Tensor& yc = tape2.value(tape2.batchnorm(xc, tape2.leaf(Tensor::full({1}, 1.0f)), beta2,
                                                   Mode::kTrain, rm2, rv2, nullptr));
    for (std::int64_t i = 0; i < yc.size(); ++i)
        CHECK(yc.at(i) == doctest::Approx(0.25).epsilon(1e-6));

    // Population below two is an error.
    Tape tape3;
    NodeId x1 = tape3.leaf(Tensor::from({1, 1, 1}, {5.0f}));
    Tensor rm3 = Tensor::zeros({1}), rv3 = Tensor::full({1}, 1.0f);
    CHECK_THROWS_AS(tape3.batchnorm(x1, tape3.leaf(Tensor::full({1}, 1.0f)),
                                    tape3.leaf(Tensor::zeros({1})), Mode::kTrain, rm3, rv3,
                                    nullptr),
                    NumericError);
}

TEST_CASE("infer-mode batchnorm with identity running stats is the identity") {
    RngStream rng(19);
    Tape tape;
    Tensor xv = random_tensor({2, 6, 3}, rng);
    NodeId x = tape.leaf(xv);
    Tensor rm = Tensor::zeros({3});
    Tensor rv = Tensor::full({3}, 1.0f);
    const Tensor y = tape.value(tape.batchnorm(x, tape.leaf(Tensor::full({3}, 1.0f)),
                                                tape.leaf(Tensor::zeros({3})), Mode::kInfer, rm,
                                                rv, nullptr));
    for (std::int64_t i = 0; i < y.size(); ++i)
        CHECK(y.at(i) == doctest::Approx(xv.at(i)).epsilon(1e-5));
}

TEST_CASE("train-mode batchnorm statistics hit the stated tolerances") {
    RngStream rng(20);
    const std::int64_t B = 4, L = 32, C = 3;  // population 128 per channel
    Tape tape;
    NodeId x = tape.leaf(random_tensor({B, L, C}, rng, -2.0, 5.0));
    Tensor rm = Tensor::zeros({C}), rv = Tensor::full({C}, 1.0f);
    const Tensor y = tape.value(tape.batchnorm(x, tape.leaf(Tensor::full({C}, 1.0f)),
                                                tape.leaf(Tensor::zeros({C})), Mode::kTrain, rm,
                                                rv, nullptr));
    for (std::int64_t c = 0; c < C; ++c) {
        double mean = 0.0, var = 0.0;
        for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t t = 0; t < L; ++t) mean += y.at(b, t, c);
        mean /= static_cast<double>(B * L);
        for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t t = 0; t < L; ++t) {
                const double d = y.at(b, t, c) - mean;
                var += d * d;
            }
        var /= static_cast<double>(B * L);
        CHECK(std::abs(mean) < 1e-5);
        CHECK(std::abs(var - 1.0) < 1e-3);
    }
}

TEST_CASE("masked batchnorm excludes padding from statistics but still transforms it") {
    RngStream rng(21);
    const std::int64_t B = 2, L = 6, C = 2;
    Tensor xv = random_tensor({B, L, C}, rng, 0.0, 1.0);
    // Poison the padding rows with huge values; they must not move the stats.
    Tensor mask = Tensor::zeros({B, L});
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t t = 0; t < L; ++t) {
            if (t < 4) {
                mask.at(b, t) = 1.0f;
            } else {
                for (std::int64_t c = 0; c < C; ++c) xv.at(b, t, c) = 1000.0f;
            }
        }

    Tape tape;
    NodeId x = tape.leaf(xv);
    Tensor rm = Tensor::zeros({C}), rv = Tensor::full({C}, 1.0f);
    const Tensor y = tape.value(tape.batchnorm(x, tape.leaf(Tensor::full({C}, 1.0f)),
                                                tape.leaf(Tensor::zeros({C})), Mode::kTrain, rm,
                                                rv, &mask));

    for (std::int64_t c = 0; c < C; ++c) {
        double mean = 0.0, var = 0.0;
        const double m = 8.0;
        for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t t = 0; t < 4; ++t) mean += y.at(b, t, c);
        mean /= m;
        for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t t = 0; t < 4; ++t) {
                const double d = y.at(b, t, c) - mean;
                var += d * d;
            }
        var /= m;
        CHECK(std::abs(mean) < 1e-5);
        CHECK(std::abs(var - 1.0) < 1e-3);
        // Padding rows are transformed with the same statistics: far outliers
        // stay far outliers instead of being squashed to zero.
        CHECK(y.at(0, 5, c) > 100.0f);
    }
}

TEST_CASE("softmax cross-entropy matches hand oracles") {
    const std::int64_t C = 8;
    Tensor mask = Tensor::full({1, 2}, 1.0f);

    // Uniform logits: loss is ln 8 at every position.
    Tape tape;
    NodeId uniform = tape.leaf(Tensor::zeros({1, 2, C}));
    NodeId loss = tape.softmax_xent_masked(uniform, {3, 5}, mask);
    CHECK(tape.scalar(loss) == doctest::Approx(std::log(8.0)).epsilon(1e-6));

    // Logits [1,0,...,0] with true class 0: loss = ln(e+7) - 1.
    Tape tape2;
    Tensor one = Tensor::zeros({1, 1, C});
    one.at(0) = 1.0f;
    NodeId loss2 = tape2.softmax_xent_masked(tape2.leaf(one), {0}, Tensor::full({1, 1}, 1.0f));
    CHECK(tape2.scalar(loss2) ==
          doctest::Approx(std::log(std::exp(1.0) + 7.0) - 1.0).epsilon(1e-7));
    CHECK(tape2.scalar(loss2) == doctest::Approx(1.2741).epsilon(1e-3));
}

TEST_CASE("softmax probabilities sum to one per position") {
    RngStream rng(22);
    Tape tape;
    NodeId logits = tape.leaf(random_tensor({2, 5, 8}, rng, -3.0, 3.0));
    Tensor mask = Tensor::full({2, 5}, 1.0f);
    NodeId loss = tape.softmax_xent_masked(logits, std::vector<int>(10, 1), mask);
    const Tensor& probs = tape.softmax_probs(loss);
    for (std::int64_t b = 0; b < 2; ++b) {
        for (std::int64_t t = 0; t < 5; ++t) {
            double s = 0.0;
            for (std::int64_t c = 0; c < 8; ++c) s += probs.at(b, t, c);
            CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
        }
    }
}

TEST_CASE("masked positions contribute nothing to loss or gradient") {
    RngStream rng(23);
    Tensor logits = random_tensor({1, 3, 4}, rng);
    Tensor mask = Tensor::from({1, 3}, {1.0f, 0.0f, 1.0f});
    const std::vector<int> labels = {1, -1, 2};

    Tape tape;
    NodeId x = tape.leaf(logits, true, "logits");
    NodeId loss = tape.softmax_xent_masked(x, labels, mask);
    const double base = tape.scalar(loss);
    tape.backward(loss);
    const Tensor g = tape.grad(x);
    for (std::int64_t c = 0; c < 4; ++c) CHECK(g.at(0, 1, c) == 0.0f);

    // Changing the masked position's logits leaves the loss untouched.
    Tensor poked = logits;
    for (std::int64_t c = 0; c < 4; ++c) poked.at(0, 1, c) = 100.0f;
    Tape tape2;
    CHECK(tape2.scalar(tape2.softmax_xent_masked(tape2.leaf(poked), labels, mask)) ==
          doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("cross-entropy is equivariant under class relabeling") {
    RngStream rng(24);
    Tensor logits = random_tensor({1, 4, 5}, rng);
    Tensor mask = Tensor::full({1, 4}, 1.0f);
    const std::vector<int> labels = {0, 3, 2, 4};
    const std::vector<int> perm = {2, 0, 4, 1, 3};

    Tensor permuted = Tensor::zeros({1, 4, 5});
    std::vector<int> plabels(labels.size());
    for (std::int64_t t = 0; t < 4; ++t) {
        for (std::int64_t c = 0; c < 5; ++c) {
            permuted.at(0, t, perm[static_cast<std::size_t>(c)]) = logits.at(0, t, c);
        }
        plabels[static_cast<std::size_t>(t)] =
            perm[static_cast<std::size_t>(labels[static_cast<std::size_t>(t)])];
    }

    Tape a, b;
    const double la = a.scalar(a.softmax_xent_masked(a.leaf(logits), labels, mask));
    const double lb = b.scalar(b.softmax_xent_masked(b.leaf(permuted), plabels, mask));
    CHECK(la == doctest::Approx(lb).epsilon(1e-12));
}

TEST_CASE("cross-entropy rejects bad masks and labels") {
    Tape tape;
    NodeId logits = tape.leaf(Tensor::zeros({1, 2, 3}));
    CHECK_THROWS_AS(tape.softmax_xent_masked(logits, {0, 1}, Tensor::zeros({1, 2})), NumericError);

    Tape tape2;
    NodeId l2 = tape2.leaf(Tensor::zeros({1, 2, 3}));
    CHECK_THROWS_AS(tape2.softmax_xent_masked(l2, {0, 7}, Tensor::full({1, 2}, 1.0f)),
                    DimensionError);
}

TEST_CASE("dense matches the hand chain rule on a 2x2 case") {
    // y = x W + b, loss = u y0 + v y1.
    const float x0 = 1.5f, x1 = -2.0f;
    const float a = 0.5f, bw = -1.0f, c = 2.0f, d = 0.25f;
    const float b0 = 0.1f, b1 = -0.2f;
    const float u = 3.0f, v = -0.5f;

    Tape tape;
    NodeId x = tape.leaf(Tensor::from({1, 2}, {x0, x1}), true, "x");
    NodeId w = tape.leaf(Tensor::from({2, 2}, {a, bw, c, d}), true, "w");
    NodeId b = tape.leaf(Tensor::from({2}, {b0, b1}), true, "b");
    NodeId y = tape.dense(x, w, b);
    const Tensor yv = tape.value(y);
    CHECK(yv.at(0, 0) == doctest::Approx(x0 * a + x1 * c + b0).epsilon(1e-6));
    CHECK(yv.at(0, 1) == doctest::Approx(x0 * bw + x1 * d + b1).epsilon(1e-6));

    tape.backward(tape.weighted_sum(y, Tensor::from({1, 2}, {u, v})));
    const Tensor gx = tape.grad(x), gw = tape.grad(w), gb = tape.grad(b);
    CHECK(gx.at(0, 0) == doctest::Approx(u * a + v * bw).epsilon(1e-6));
    CHECK(gx.at(0, 1) == doctest::Approx(u * c + v * d).epsilon(1e-6));
    CHECK(gw.at(0, 0) == doctest::Approx(u * x0).epsilon(1e-6));
    CHECK(gw.at(0, 1) == doctest::Approx(v * x0).epsilon(1e-6));
    CHECK(gw.at(1, 0) == doctest::Approx(u * x1).epsilon(1e-6));
    CHECK(gw.at(1, 1) == doctest::Approx(v * x1).epsilon(1e-6));
    CHECK(gb.at(0) == u);
    CHECK(gb.at(1) == v);
}

TEST_CASE("window_gather pads with zeros and round-trips gradients") {
    Tape tape;
    NodeId x = tape.leaf(Tensor::from({1, 3, 1}, {1, 2, 3}), true, "x");
    NodeId y = tape.window_gather(x, 3);
    const Tensor yv = tape.value(y);
    REQUIRE(yv.shape() == std::vector<std::int64_t>{1, 3, 3});
    CHECK(yv.at(0, 0, 0) == 0.0f);
    CHECK(yv.at(0, 0, 1) == 1.0f);
    CHECK(yv.at(0, 0, 2) == 2.0f);
    CHECK(yv.at(0, 1, 0) == 1.0f);
    CHECK(yv.at(0, 1, 1) == 2.0f);
    CHECK(yv.at(0, 1, 2) == 3.0f);
    CHECK(yv.at(0, 2, 0) == 2.0f);
    CHECK(yv.at(0, 2, 1) == 3.0f);
    CHECK(yv.at(0, 2, 2) == 0.0f);

    tape.backward(tape.weighted_sum(y, Tensor::full({1, 3, 3}, 1.0f)));
    const Tensor g = tape.grad(x);
    // Each source position is read by min(3, valid windows) positions.
    CHECK(g.at(0, 0, 0) == 2.0f);
    CHECK(g.at(0, 1, 0) == 3.0f);
    CHECK(g.at(0, 2, 0) == 2.0f);
}

TEST_CASE("backward requires a scalar root and zero-fills unreached parameters") {
    RngStream rng(25);
    Tape tape;
    NodeId x = tape.leaf(random_tensor({2, 2}, rng), true, "x");
    NodeId unused = tape.leaf(random_tensor({3}, rng), true, "unused");
    CHECK_THROWS_AS(tape.backward(x), DimensionError);

    tape.backward(tape.weighted_sum(x, Tensor::full({2, 2}, 1.0f)));
    auto grads = tape.named_grads();
    REQUIRE(grads.count("unused") == 1);
    for (std::int64_t i = 0; i < grads.at("unused").size(); ++i)
        CHECK(grads.at("unused").at(i) == 0.0f);
    for (std::int64_t i = 0; i < grads.at("x").size(); ++i) CHECK(grads.at("x").at(i) == 1.0f);
    (void)unused;
}

TEST_CASE("weighted_sum gradient equals its coefficients") {
    RngStream rng(26);
    Tensor coeffs = random_tensor({4, 3}, rng);
    Tape tape;
    NodeId x = tape.leaf(random_tensor({4, 3}, rng), true, "x");
    tape.backward(tape.weighted_sum(x, coeffs));
    const Tensor g = tape.grad(x);
    for (std::int64_t i = 0; i < g.size(); ++i) CHECK(g.at(i) == coeffs.at(i));
}
