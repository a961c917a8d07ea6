#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "busdx/nn/adam.hpp"
#include "busdx/nn/ops.hpp"

using namespace busdx::nn;

namespace {

std::vector<float> randv(std::size_t n, std::uint32_t seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    std::vector<float> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

Tensor rand_tensor(int c, int h, int w, std::uint32_t seed) {
    Tensor t(c, h, w);
    t.data = randv(t.size(), seed);
    return t;
}

double xat(const Tensor& x, int c, int y, int xx) {
    if (y < 0 || xx < 0 || y >= x.h || xx >= x.w) return 0.0;
    return x.data[(static_cast<std::size_t>(c) * x.h + y) * x.w + xx];
}

// Direct-loop convolution in double.
std::vector<double> naive_conv(const Tensor& x, const std::vector<float>& w, const std::vector<float>& b, int oc,
                               const ConvGeometry& g, int& oh, int& ow) {
    oh = g.out_size(x.h);
    ow = g.out_size(x.w);
    std::vector<double> y(static_cast<std::size_t>(oc) * oh * ow);
    for (int o = 0; o < oc; ++o)
        for (int yy = 0; yy < oh; ++yy)
            for (int xx = 0; xx < ow; ++xx) {
                double s = b.empty() ? 0.0 : b[o];
                for (int i = 0; i < x.c; ++i)
                    for (int ky = 0; ky < g.kernel; ++ky)
                        for (int kx = 0; kx < g.kernel; ++kx)
                            s += w[((static_cast<std::size_t>(o) * x.c + i) * g.kernel + ky) * g.kernel + kx] *
                                 xat(x, i, yy * g.stride + ky - g.pad, xx * g.stride + kx - g.pad);
                y[(static_cast<std::size_t>(o) * oh + yy) * ow + xx] = s;
            }
    return y;
}

void check_close(const std::vector<float>& got, const std::vector<double>& want, double tol) {
    REQUIRE(got.size() == want.size());
    double worst = 0;
    for (std::size_t i = 0; i < got.size(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
    CHECK(worst < tol);
}

}  // namespace

TEST_CASE("gemm against a direct product") {
    const int m = 5, n = 7, k = 3;
    const auto a = randv(m * k, 1), b = randv(k * n, 2);
    std::vector<float> c(m * n, 1.0f);
    gemm(false, false, m, n, k, 2.0f, a.data(), b.data(), 0.5f, c.data());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double s = 0;
            for (int t = 0; t < k; ++t) s += a[i * k + t] * b[t * n + j];
            CHECK(c[i * n + j] == doctest::Approx(2.0 * s + 0.5).epsilon(1e-5));
        }
    // transposed operands
    std::vector<float> ct(m * n, 0.0f);
    std::vector<float> at(k * m), bt(n * k);
    for (int i = 0; i < m; ++i)
        for (int t = 0; t < k; ++t) at[t * m + i] = a[i * k + t];
    for (int t = 0; t < k; ++t)
        for (int j = 0; j < n; ++j) bt[j * k + t] = b[t * n + j];
    gemm(true, true, m, n, k, 1.0f, at.data(), bt.data(), 0.0f, ct.data());
    for (int i = 0; i < m * n; ++i) CHECK(ct[i] == doctest::Approx((c[i] - 0.5f) / 2.0f).epsilon(1e-5));
}

TEST_CASE("conv2d forward and backward match direct loops") {
    struct Case {
        int in, out, h, w;
        ConvGeometry g;
    };
    const Case cases[] = {{3, 4, 9, 7, {3, 1, 1}}, {2, 3, 11, 10, {7, 2, 3}}, {5, 6, 6, 6, {1, 1, 0}},
                          {4, 2, 8, 8, {3, 2, 1}}, {3, 5, 8, 9, {1, 2, 0}}};
    std::uint32_t seed = 10;
    for (const auto& c : cases) {
        const Tensor x = rand_tensor(c.in, c.h, c.w, seed++);
        const auto w = randv(static_cast<std::size_t>(c.out) * c.in * c.g.kernel * c.g.kernel, seed++);
        const auto b = randv(c.out, seed++);
        int oh = 0, ow = 0;
        const auto want = naive_conv(x, w, b, c.out, c.g, oh, ow);
        const Tensor y = conv2d(x, w, b, c.out, c.g);
        CHECK(y.c == c.out);
        CHECK(y.h == oh);
        CHECK(y.w == ow);
        check_close(y.data, want, 1e-4);

        // L = sum(y * r): dL/dy = r
        Tensor r = rand_tensor(c.out, oh, ow, seed++);
        Tensor dx(c.in, c.h, c.w);
        std::vector<float> dw(w.size(), 0.5f), db(b.size(), 0.25f);  // accumulation on top of existing values
        conv2d_backward(x, r, w, c.g, &dx, dw, db);

        std::vector<double> dw_ref(w.size()), db_ref(b.size()), dx_ref(x.size());
        const int k = c.g.kernel;
        for (int o = 0; o < c.out; ++o)
            for (int yy = 0; yy < oh; ++yy)
                for (int xx = 0; xx < ow; ++xx) {
                    const double g = r.data[(static_cast<std::size_t>(o) * oh + yy) * ow + xx];
                    db_ref[o] += g;
                    for (int i = 0; i < c.in; ++i)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                                const int sy = yy * c.g.stride + ky - c.g.pad, sx = xx * c.g.stride + kx - c.g.pad;
                                const std::size_t wi = ((static_cast<std::size_t>(o) * c.in + i) * k + ky) * k + kx;
                                dw_ref[wi] += g * xat(x, i, sy, sx);
                                if (sy >= 0 && sx >= 0 && sy < c.h && sx < c.w)
                                    dx_ref[(static_cast<std::size_t>(i) * c.h + sy) * c.w + sx] += g * w[wi];
                            }
                }
        for (auto& v : dw_ref) v += 0.5;
        for (auto& v : db_ref) v += 0.25;
        check_close(dw, dw_ref, 1e-3);
        check_close(db, db_ref, 1e-4);
        check_close(dx.data, dx_ref, 1e-4);
    }
}

TEST_CASE("transposed 2x2 convolution matches direct loops") {
    const int in = 3, out = 4, h = 5, w = 6;
    const Tensor x = rand_tensor(in, h, w, 1);
    const auto wt = randv(static_cast<std::size_t>(in) * out * 4, 2);
    const auto b = randv(out, 3);
    const Tensor y = conv_transpose2x2(x, wt, b, out);
    REQUIRE(y.c == out);
    REQUIRE(y.h == 2 * h);
    REQUIRE(y.w == 2 * w);
    std::vector<double> want(y.size());
    for (int o = 0; o < out; ++o)
        for (int yy = 0; yy < 2 * h; ++yy)
            for (int xx = 0; xx < 2 * w; ++xx) {
                double s = b[o];
                for (int i = 0; i < in; ++i)
                    s += xat(x, i, yy / 2, xx / 2) * wt[((static_cast<std::size_t>(i) * out + o) * 2 + yy % 2) * 2 + xx % 2];
                want[(static_cast<std::size_t>(o) * 2 * h + yy) * 2 * w + xx] = s;
            }
    check_close(y.data, want, 1e-5);

    const Tensor r = rand_tensor(out, 2 * h, 2 * w, 4);
    Tensor dx(in, h, w);
    std::vector<float> dw(wt.size(), 0.0f), db(out, 0.0f);
    conv_transpose2x2_backward(x, r, wt, &dx, dw, db);
    std::vector<double> dw_ref(wt.size()), db_ref(out), dx_ref(x.size());
    for (int o = 0; o < out; ++o)
        for (int yy = 0; yy < 2 * h; ++yy)
            for (int xx = 0; xx < 2 * w; ++xx) {
                const double g = r.data[(static_cast<std::size_t>(o) * 2 * h + yy) * 2 * w + xx];
                db_ref[o] += g;
                for (int i = 0; i < in; ++i) {
                    const std::size_t wi = ((static_cast<std::size_t>(i) * out + o) * 2 + yy % 2) * 2 + xx % 2;
                    dw_ref[wi] += g * xat(x, i, yy / 2, xx / 2);
                    dx_ref[(static_cast<std::size_t>(i) * h + yy / 2) * w + xx / 2] += g * wt[wi];
                }
            }
    check_close(dw, dw_ref, 1e-4);
    check_close(db, db_ref, 1e-4);
    check_close(dx.data, dx_ref, 1e-4);
}

TEST_CASE("max pooling forward and backward") {
    Tensor x(1, 4, 4);
    for (int i = 0; i < 16; ++i) x.data[i] = static_cast<float>((i * 7) % 16);
    std::vector<std::uint32_t> arg;
    const Tensor y = maxpool2x2(x, &arg);
    REQUIRE(y.h == 2);
    for (int oy = 0; oy < 2; ++oy)
        for (int ox = 0; ox < 2; ++ox) {
            float m = -1;
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx) m = std::max(m, x.data[(2 * oy + dy) * 4 + 2 * ox + dx]);
            CHECK(y.data[oy * 2 + ox] == m);
        }
    Tensor dy(1, 2, 2, 1.0f);
    const Tensor dx = maxpool2x2_backward(dy, arg, 1, 4, 4);
    double s = 0;
    for (int i = 0; i < 16; ++i) {
        s += dx.data[i];
        if (dx.data[i] != 0.0f) CHECK(x.data[i] == y.data[(i / 4 / 2) * 2 + (i % 4) / 2]);
    }
    CHECK(s == 4.0);

    // 3x3 stride-2 pad-1 pooling treats padding as -inf
    Tensor neg(1, 4, 4, -5.0f);
    const Tensor p = maxpool(neg, 3, 2, 1);
    CHECK(p.h == 2);
    for (float v : p.data) CHECK(v == -5.0f);

    Tensor ones(2, 4, 4);
    for (int i = 0; i < 32; ++i) ones.data[i] = static_cast<float>(i);
    const Tensor a = avgpool(ones, 2);
    CHECK(a.data[0] == doctest::Approx((0 + 1 + 4 + 5) / 4.0));
    CHECK(a.data[4] == doctest::Approx((16 + 17 + 20 + 21) / 4.0));
}

TEST_CASE("relu, batch norm and concatenation") {
    Tensor x(1, 1, 4);
    x.data = {-1.0f, 0.0f, 2.0f, -3.0f};
    relu_inplace(x);
    CHECK(x.data == std::vector<float>{0, 0, 2, 0});
    Tensor d(1, 1, 4, 1.0f);
    relu_backward_inplace(d, x);
    CHECK(d.data == std::vector<float>{0, 0, 1, 0});

    Tensor bn(2, 1, 2);
    bn.data = {1, 3, 2, 4};
    const std::vector<float> g{2, 1}, b{0.5f, -1}, m{1, 2}, v{4, 1};
    batchnorm_inplace(bn, g, b, m, v, 0.0f);
    CHECK(bn.data[0] == doctest::Approx(0.5));
    CHECK(bn.data[1] == doctest::Approx(2.5));
    CHECK(bn.data[2] == doctest::Approx(-1.0));
    CHECK(bn.data[3] == doctest::Approx(1.0));

    const Tensor a = rand_tensor(2, 3, 3, 1), c = rand_tensor(1, 3, 3, 2);
    const Tensor cat = concat_channels(a, c);
    CHECK(cat.c == 3);
    CHECK(std::equal(a.data.begin(), a.data.end(), cat.data.begin()));
    CHECK(std::equal(c.data.begin(), c.data.end(), cat.data.begin() + a.size()));
}

TEST_CASE("adam update follows the bias-corrected formula") {
    Param p("w", {2});
    p.value = {1.0f, -2.0f};
    AdamOptions o;
    o.learning_rate = 0.1;
    Adam adam(o);
    const std::vector<std::vector<float>> grads{{0.5f, -1.0f}, {0.2f, 3.0f}};
    double m[2] = {0, 0}, v[2] = {0, 0}, w[2] = {1.0, -2.0};
    for (std::size_t t = 0; t < grads.size(); ++t) {
        p.zero_grad();
        p.grad = grads[t];
        adam.step({&p});
        for (int i = 0; i < 2; ++i) {
            const double g = grads[t][i];
            m[i] = 0.9 * m[i] + 0.1 * g;
            v[i] = 0.999 * v[i] + 0.001 * g * g;
            const double mh = m[i] / (1 - std::pow(0.9, t + 1)), vh = v[i] / (1 - std::pow(0.999, t + 1));
            w[i] -= 0.1 * mh / (std::sqrt(vh) + 1e-7);
            CHECK(p.value[i] == doctest::Approx(w[i]).epsilon(1e-5));
        }
    }
    CHECK(adam.steps() == 2);
}

TEST_CASE("initializers respect their limits") {
    std::mt19937_64 rng(1);
    Param p("w", {64, 32, 3, 3});
    init_he_uniform(p, 32 * 9, rng);
    const double lim = std::sqrt(6.0 / (32 * 9));
    double mx = 0;
    for (float v : p.value) mx = std::max(mx, std::abs(static_cast<double>(v)));
    CHECK(mx <= lim);
    CHECK(mx > 0.9 * lim);
    Param q("d", {10, 20});
    init_glorot_uniform(q, 20, 10, rng);
    for (float v : q.value) CHECK(std::abs(v) <= std::sqrt(6.0 / 30));
}
