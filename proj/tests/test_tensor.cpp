#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "aggrnet/gradcheck.hpp"
#include "aggrnet/nn_ops.hpp"
#include "aggrnet/random.hpp"
#include "aggrnet/serialize.hpp"

using namespace aggrnet;

namespace {

// Scalar-loop broadcast oracle, independent of the engine's stride walk.
template <typename T>
std::vector<T> broadcast_add_oracle(const Tensor<T>& a, const Tensor<T>& b, const Shape& out) {
    std::vector<T> result(numel(out));
    std::vector<std::size_t> idx(out.size(), 0);
    auto at = [&](const Tensor<T>& t) {
        std::size_t off = 0, stride = 1;
        for (std::size_t i = t.rank(); i-- > 0;) {
            std::size_t oi = idx[i + out.size() - t.rank()];
            std::size_t ti = t.shape()[i] == 1 ? 0 : oi;
            off += ti * stride;
            stride *= t.shape()[i];
        }
        return t.data()[off];
    };
    for (std::size_t flat = 0; flat < result.size(); ++flat) {
        result[flat] = at(a) + at(b);
        for (std::size_t ax = out.size(); ax-- > 0;) {
            if (++idx[ax] < out[ax]) break;
            idx[ax] = 0;
        }
    }
    return result;
}

// Triple-loop matmul.
template <typename T>
std::vector<T> matmul_oracle(const Tensor<T>& a, const Tensor<T>& b) {
    std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
    std::vector<T> c(m * n, T(0));
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t p = 0; p < k; ++p)
                c[i * n + j] += a.data()[i * k + p] * b.data()[p * n + j];
    return c;
}

// Sliding-window conv oracle.
template <typename T>
std::vector<T> conv_oracle(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                           std::size_t stride, std::size_t pad) {
    std::size_t N = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
    std::size_t O = w.extent(0), kh = w.extent(2), kw = w.extent(3);
    std::size_t Ho = (H + 2 * pad - kh) / stride + 1, Wo = (W + 2 * pad - kw) / stride + 1;
    std::vector<T> out(N * O * Ho * Wo);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t o = 0; o < O; ++o)
            for (std::size_t oh = 0; oh < Ho; ++oh)
                for (std::size_t ow = 0; ow < Wo; ++ow) {
                    double acc = b.data()[o];
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t i = 0; i < kh; ++i)
                            for (std::size_t j = 0; j < kw; ++j) {
                                std::ptrdiff_t ih = std::ptrdiff_t(oh * stride + i) -
                                                    std::ptrdiff_t(pad);
                                std::ptrdiff_t iw = std::ptrdiff_t(ow * stride + j) -
                                                    std::ptrdiff_t(pad);
                                if (ih < 0 || iw < 0 || ih >= std::ptrdiff_t(H) ||
                                    iw >= std::ptrdiff_t(W))
                                    continue;
                                acc += double(x.data()[((n * C + c) * H + ih) * W + iw]) *
                                       double(w.data()[((o * C + c) * kh + i) * kw + j]);
                            }
                    out[((n * O + o) * Ho + oh) * Wo + ow] = T(acc);
                }
    return out;
}

}  // namespace

TEST_CASE("elementwise add and mul basics") {
    auto a = Tensor<float>::from_data({2}, {1, 2});
    auto b = Tensor<float>::from_data({2}, {3, 4});
    auto c = add(a, b);
    CHECK(c.data() == std::vector<float>{4, 6});

    Rng rng(1);
    auto x = rng.normal_tensor<float>({3, 4});
    auto y = mul(x, Tensor<float>::ones({3, 4}));
    CHECK(y.data() == x.data());

    CHECK_THROWS_AS(add(Tensor<float>::zeros({2, 3}), Tensor<float>::zeros({2, 4})), ShapeError);
}

TEST_CASE("broadcast add matches the scalar-loop oracle") {
    Rng rng(2);
    auto a = rng.normal_tensor<double>({2, 1, 3, 3});
    auto b = rng.normal_tensor<double>({2, 4, 1, 1});
    auto c = add(a, b);
    REQUIRE(c.shape() == Shape{2, 4, 3, 3});
    auto expected = broadcast_add_oracle(a, b, c.shape());
    for (std::size_t i = 0; i < expected.size(); ++i)
        CHECK(c.data()[i] == Catch::Approx(expected[i]).margin(1e-12));
}

TEST_CASE("broadcast gradient equals tile-then-sum") {
    Rng rng(3);
    auto a = rng.normal_tensor<double>({2, 3, 4});
    auto b = rng.normal_tensor<double>({3, 1});  // broadcasts over axes 0 and 2
    b.set_requires_grad(true);
    auto g = rng.normal_tensor<double>({2, 3, 4});
    sum(mul(add(a, b), g)).backward();
    // oracle: full-shape grad (= g) summed over the stretched axes
    for (std::size_t j = 0; j < 3; ++j) {
        double want = 0;
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t k = 0; k < 4; ++k) want += g.data()[(i * 3 + j) * 4 + k];
        CHECK(b.grad()[j] == Catch::Approx(want).margin(1e-12));
    }
}

TEST_CASE("matmul identity, oracle, and gradient") {
    auto eye = Tensor<double>::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Rng rng(4);
    auto m = rng.normal_tensor<double>({3, 5});
    auto prod = matmul(eye, m);
    CHECK(prod.data() == m.data());

    auto a = rng.normal_tensor<double>({2, 3});
    auto b = rng.normal_tensor<double>({3, 2});
    auto c = matmul(a, b);
    auto expected = matmul_oracle(a, b);
    for (std::size_t i = 0; i < expected.size(); ++i)
        CHECK(c.data()[i] == Catch::Approx(expected[i]).epsilon(1e-6));

    double err = grad_check([&] { return sum(matmul(a, b)); }, a);
    CHECK(err <= 1e-4);

    CHECK_THROWS_AS(matmul(Tensor<double>::zeros({2, 3}), Tensor<double>::zeros({4, 2})),
                    ShapeError);
}

TEST_CASE("sigmoid and softmax contracts") {
    CHECK(sigmoid(Tensor<double>::scalar(0.0)).item() == 0.5);

    auto s = softmax(Tensor<double>::from_data({3}, {0, 0, 0}), 0);
    for (double v : s.data()) CHECK(v == Catch::Approx(1.0 / 3).margin(1e-12));

    // stability: compare against the shifted-exponent oracle
    auto big = Tensor<double>::from_data({2}, {1000.0, 1000.5});
    auto p = softmax(big, 0);
    double e0 = std::exp(0.0), e1 = std::exp(0.5);  // shifted by max
    CHECK(p.data()[0] == Catch::Approx(e0 / (e0 + e1)).epsilon(1e-12));
    CHECK(p.data()[1] == Catch::Approx(e1 / (e0 + e1)).epsilon(1e-12));
    CHECK(p.data()[0] + p.data()[1] == Catch::Approx(1.0).margin(1e-9));
    CHECK(p.all_finite());
}

TEST_CASE("softmax rows are probability vectors at large magnitude") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        auto x = rng.normal_tensor<double>({4, 6}, 0, trial % 2 ? 1000.0 : 1.0);
        auto p = softmax(x, 1);
        for (std::size_t i = 0; i < 4; ++i) {
            double s = 0;
            for (std::size_t j = 0; j < 6; ++j) {
                CHECK(p.data()[i * 6 + j] >= 0.0);
                s += p.data()[i * 6 + j];
            }
            CHECK(s == Catch::Approx(1.0).margin(1e-6));
        }
    }
}

TEST_CASE("conv2d against the sliding-window oracle") {
    // 1x1 conv with a permutation kernel is a channel shuffle
    Rng rng(6);
    auto x = rng.normal_tensor<float>({1, 3, 4, 4});
    auto w = Tensor<float>::zeros({3, 3, 1, 1});
    w.data()[0 * 3 + 1] = 1;  // out0 <- in1
    w.data()[1 * 3 + 2] = 1;  // out1 <- in2
    w.data()[2 * 3 + 0] = 1;  // out2 <- in0
    auto y = conv2d(x, w, Tensor<float>::zeros({3}));
    for (std::size_t i = 0; i < 16; ++i) {
        CHECK(y.data()[0 * 16 + i] == x.data()[1 * 16 + i]);
        CHECK(y.data()[1 * 16 + i] == x.data()[2 * 16 + i]);
        CHECK(y.data()[2 * 16 + i] == x.data()[0 * 16 + i]);
    }

    // all-ones 3x3 kernel on a one-hot image gives local box sums
    auto onehot = Tensor<float>::zeros({1, 1, 5, 5});
    onehot.data()[2 * 5 + 2] = 1;
    auto box = conv2d(onehot, Tensor<float>::ones({1, 1, 3, 3}), Tensor<float>::zeros({1}), 1, 1);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 5; ++j) {
            float want = (i >= 1 && i <= 3 && j >= 1 && j <= 3) ? 1.f : 0.f;
            CHECK(box.data()[i * 5 + j] == want);
        }

    // shape arithmetic
    auto big = rng.normal_tensor<float>({2, 3, 8, 8});
    auto kw = rng.normal_tensor<float>({4, 3, 3, 3});
    auto out = conv2d(big, kw, Tensor<float>::zeros({4}), 2, 1);
    CHECK(out.shape() == Shape{2, 4, 4, 4});

    // random case against the oracle, f32 tolerance
    auto expected = conv_oracle(big, kw, Tensor<float>::zeros({4}), 2, 1);
    for (std::size_t i = 0; i < expected.size(); ++i)
        CHECK(out.data()[i] == Catch::Approx(expected[i]).epsilon(1e-5).margin(1e-6));

    CHECK_THROWS_AS(conv2d(big, rng.normal_tensor<float>({4, 2, 3, 3}), Tensor<float>::zeros({4})),
                    ShapeError);
}

TEST_CASE("conv2d is deterministic under the thread cap") {
    Rng rng(61);
    auto x = rng.normal_tensor<float>({4, 3, 6, 6});
    auto w = rng.normal_tensor<float>({5, 3, 3, 3});
    auto b = rng.normal_tensor<float>({5});
    int saved = max_threads();
    max_threads() = 1;
    auto serial = conv2d(x, w, b, 1, 1);
    max_threads() = 4;
    auto parallel = conv2d(x, w, b, 1, 1);
    max_threads() = saved;
    CHECK(serial.data() == parallel.data());
}

TEST_CASE("pooling ops") {
    auto x = Tensor<float>::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
    auto p = maxpool2d(x, 2, 2);
    CHECK(p.data() == std::vector<float>{4});

    auto constant = Tensor<float>(Shape{2, 3, 4, 4}, 2.5f);
    auto gap = global_avg_pool(constant);
    REQUIRE(gap.shape() == Shape{2, 3, 1, 1});
    for (float v : gap.data()) CHECK(v == 2.5f);
    auto gmp = global_max_pool(constant);
    REQUIRE(gmp.shape() == Shape{2, 3, 1, 1});
    for (float v : gmp.data()) CHECK(v == 2.5f);

    // gradient at non-tied points
    Rng rng(7);
    auto xd = rng.normal_tensor<double>({1, 2, 4, 4});
    double err = grad_check([&] { return sum(maxpool2d(xd, 2, 2)); }, xd);
    CHECK(err <= 1e-4);

    CHECK_THROWS_AS(maxpool2d(x, 5, 1, 0), ShapeError);
}

TEST_CASE("maxpool ties route gradient to the first row-major maximum") {
    auto x = Tensor<double>::from_data({1, 1, 2, 2}, {3, 3, 3, 3});
    x.set_requires_grad(true);
    sum(maxpool2d(x, 2, 2)).backward();
    CHECK(x.grad() == std::vector<double>{1, 0, 0, 0});
}

TEST_CASE("split/concat round trip and gradients") {
    Rng rng(8);
    // property over random shapes and axes
    for (int trial = 0; trial < 30; ++trial) {
        std::size_t r = 1 + rng.uniform_int(4);
        Shape shape;
        for (std::size_t i = 0; i < r; ++i) shape.push_back(1 + rng.uniform_int(4));
        std::size_t axis = rng.uniform_int(r);
        std::vector<std::size_t> divisors;
        for (std::size_t d = 1; d <= shape[axis]; ++d)
            if (shape[axis] % d == 0) divisors.push_back(d);
        std::size_t parts = divisors[rng.uniform_int(divisors.size())];
        auto x = rng.normal_tensor<double>(shape);
        auto rt = concat(split(x, axis, parts), axis);
        CHECK(rt.data() == x.data());
    }

    auto a = Tensor<double>::zeros({1, 2, 3});
    auto b = Tensor<double>::zeros({1, 5, 3});
    CHECK(concat<double>({a, b}, 1).shape() == Shape{1, 7, 3});

    a.set_requires_grad(true);
    b.set_requires_grad(true);
    sum(concat<double>({a, b}, 1)).backward();
    CHECK(a.grad() == std::vector<double>(6, 1.0));
    CHECK(b.grad() == std::vector<double>(15, 1.0));

    CHECK_THROWS_AS(split(Tensor<double>::zeros({1, 5, 3}), 1, 2), ShapeError);
}

TEST_CASE("reshape and transpose") {
    Rng rng(9);
    auto x = rng.normal_tensor<double>({2, 3, 4});
    auto t = transpose(x, {2, 0, 1});
    REQUIRE(t.shape() == Shape{4, 2, 3});
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            for (std::size_t k = 0; k < 4; ++k)
                CHECK(t.data()[(k * 2 + i) * 3 + j] == x.data()[(i * 3 + j) * 4 + k]);
    auto back = transpose(t, {1, 2, 0});
    CHECK(back.data() == x.data());

    CHECK_THROWS_AS(reshape(x, {5, 5}), ShapeError);

    double err = grad_check([&] { return sum(mul(transpose(x, {2, 0, 1}), t.detach())); }, x);
    CHECK(err <= 1e-6);
}

TEST_CASE("grad_check reference cases") {
    auto x = Tensor<double>::from_data({2}, {1, 2});
    double err = grad_check([&] { return sum(mul(x, x)); }, x, 1e-5);
    CHECK(err < 1e-8);
    x.zero_grad();
    x.set_requires_grad(true);
    sum(mul(x, x)).backward();
    CHECK(x.grad()[0] == Catch::Approx(2.0));
    CHECK(x.grad()[1] == Catch::Approx(4.0));

    Rng rng(10);
    auto y = rng.normal_tensor<double>({3, 3});
    CHECK(grad_check([&] { return sum(sigmoid(y)); }, y) < 1e-6);
}

TEST_CASE("every differentiable op passes grad_check on random shapes") {
    Rng rng(11);
    for (int rep = 0; rep < 3; ++rep) {
        Shape s = {1 + rng.uniform_int(3), 2 + rng.uniform_int(3)};
        auto x = rng.normal_tensor<double>(s);
        auto y = rng.normal_tensor<double>(s);
        CHECK(grad_check([&] { return sum(add(x, y)); }, x) <= 1e-4);
        CHECK(grad_check([&] { return sum(sub(x, y)); }, x) <= 1e-4);
        CHECK(grad_check([&] { return sum(mul(x, y)); }, x) <= 1e-4);
        CHECK(grad_check([&] { return sum(silu(x)); }, x) <= 1e-4);
        CHECK(grad_check([&] { return sum(exp(x)); }, x) <= 1e-4);
        CHECK(grad_check([&] { return sum(mul(softmax(x, 1), y)); }, x) <= 1e-4);
        CHECK(grad_check([&] { return sum(reduce_max(x, 1)); }, x) <= 1e-4);
        CHECK(grad_check([&] { return mean(x, {0, 1}); }, x) <= 1e-4);
    }
}

TEST_CASE("no in-place aliasing: ops leave inputs untouched") {
    Rng rng(12);
    auto x = rng.normal_tensor<double>({3, 3});
    auto before = x.data();
    auto y = add(mul_scalar(x, 2.0), x);
    (void)y;
    CHECK(x.data() == before);
}

TEST_CASE("determinism: same seed reproduces bit-identical tensors") {
    Rng r1(123), r2(123);
    auto a = r1.normal_tensor<double>({4, 4});
    auto b = r2.normal_tensor<double>({4, 4});
    CHECK(a.data() == b.data());
}

TEST_CASE("AGT1 round trip is bit-exact") {
    Rng rng(13);
    auto x = rng.normal_tensor<double>({2, 3, 4});
    std::stringstream ss(std::ios::binary | std::ios::in | std::ios::out);
    agt1::write_tensor(ss, x);
    auto y = agt1::read_tensor<double>(ss);
    CHECK(y.shape() == x.shape());
    CHECK(y.data() == x.data());

    // f32 and i64 payloads
    std::stringstream sf(std::ios::binary | std::ios::in | std::ios::out);
    auto xf = rng.normal_tensor<float>({5});
    agt1::write_tensor(sf, xf);
    CHECK(agt1::read_tensor<float>(sf).data() == xf.data());

    std::stringstream bad(std::ios::binary | std::ios::in | std::ios::out);
    bad << "NOPE";
    CHECK_THROWS_AS(agt1::read_tensor<double>(bad), IntegrityError);

    // dtype mismatch is an integrity error
    std::stringstream sd(std::ios::binary | std::ios::in | std::ios::out);
    agt1::write_tensor(sd, x);
    CHECK_THROWS_AS(agt1::read_tensor<float>(sd), IntegrityError);
}
