#include <doctest.h>

#include "cftgan/autograd.hpp"
#include "cftgan/error.hpp"
#include "test_support.hpp"

using namespace cftgan;
using namespace cftgan::testing;
using ag::Var;

namespace {

constexpr double kGradTol = 2e-2;

/// Direct evaluation of the fused nearest-upsample + convolution, in double.
std::vector<double> naive_conv(const Var& x, const Var& w, const Var* bias, const ag::ConvGeom& g) {
    const int n = x.dim(0), cin = x.dim(4), cout = w.dim(1);
    std::array<int, 3> in{x.dim(1), x.dim(2), x.dim(3)}, out{};
    for (int a = 0; a < 3; ++a) out[a] = g.axes[a].output_size(in[a]);
    std::vector<double> y(static_cast<std::size_t>(n) * out[0] * out[1] * out[2] * cout, 0.0);
    const auto xv = x.value();
    const auto wv = w.value();
    std::size_t yi = 0;
    for (int b = 0; b < n; ++b)
        for (int ot = 0; ot < out[0]; ++ot)
            for (int oy = 0; oy < out[1]; ++oy)
                for (int ox = 0; ox < out[2]; ++ox)
                    for (int co = 0; co < cout; ++co, ++yi) {
                        double acc = bias ? bias->value()[co] : 0.0;
                        int tap = 0;
                        for (int kt = 0; kt < g.axes[0].kernel; ++kt)
                            for (int ky = 0; ky < g.axes[1].kernel; ++ky)
                                for (int kx = 0; kx < g.axes[2].kernel; ++kx, ++tap) {
                                    const std::array<int, 3> o{ot, oy, ox}, k{kt, ky, kx};
                                    std::array<int, 3> src{};
                                    bool valid = true;
                                    for (int a = 0; a < 3; ++a) {
                                        const auto& ga = g.axes[a];
                                        const int j = o[a] * ga.stride + k[a] - ga.pad;
                                        if (j < 0 || j >= in[a] * ga.upsample) valid = false;
                                        src[a] = valid ? j / ga.upsample : 0;
                                    }
                                    if (!valid) continue;
                                    for (int ci = 0; ci < cin; ++ci) {
                                        const std::size_t xi =
                                            ((((static_cast<std::size_t>(b) * in[0] + src[0]) * in[1] + src[1]) * in[2] +
                                              src[2]) * cin + ci);
                                        acc += static_cast<double>(xv[xi]) * wv[(static_cast<std::size_t>(tap) * cin + ci) * cout + co];
                                    }
                                }
                        y[yi] = acc;
                    }
    return y;
}

ag::ConvGeom geom(ag::AxisGeom t, ag::AxisGeom h, ag::AxisGeom w) { return ag::ConvGeom{{t, h, w}}; }

const ag::AxisGeom kDouble{4, 4, 2, 1};
const ag::AxisGeom kHalve{1, 4, 2, 1};
const ag::AxisGeom kKeep{1, 3, 1, 1};

}  // namespace

TEST_CASE("elementwise ops have correct gradients") {
    Rng rng(1);
    const ag::Shape s{2, 3};
    auto check = [&](const std::function<Var(std::vector<Var>&)>& f, int arity = 1) {
        std::vector<Var> leaves;
        for (int i = 0; i < arity; ++i) leaves.push_back(random_param(s, rng, 0.2, 0.9));
        CHECK(gradient_error(leaves, f) < kGradTol);
    };
    check([](auto& v) { return ag::add(v[0], v[1]); }, 2);
    check([](auto& v) { return ag::sub(v[0], v[1]); }, 2);
    check([](auto& v) { return ag::mul(v[0], v[1]); }, 2);
    check([](auto& v) { return ag::scale(v[0], -1.7f); });
    check([](auto& v) { return ag::add_scalar(v[0], 0.3f); });
    check([](auto& v) { return ag::one_minus(v[0]); });
    check([](auto& v) { return ag::tanh(v[0]); });
    check([](auto& v) { return ag::sigmoid(v[0]); });
    check([](auto& v) { return ag::exp(v[0]); });
    check([](auto& v) { return ag::clamped_log(v[0], 1e-7f); });
    check([](auto& v) { return ag::sum(v[0]); });
    check([](auto& v) { return ag::mean(v[0]); });
}

TEST_CASE("piecewise ops have correct gradients away from kinks") {
    Rng rng(2);
    // Values kept at least 0.1 away from zero so the difference step never crosses a kink.
    std::vector<float> vals = random_values(12, rng, 0.1, 1.0);
    for (std::size_t i = 0; i < vals.size(); i += 2) vals[i] = -vals[i];
    for (auto f : std::vector<std::function<Var(std::vector<Var>&)>>{
             [](auto& v) { return ag::relu(v[0]); }, [](auto& v) { return ag::leaky_relu(v[0], 0.2f); },
             [](auto& v) { return ag::abs(v[0]); }}) {
        CHECK(gradient_error({Var::parameter({3, 4}, vals)}, f, 3, 1e-3) < kGradTol);
    }
}

TEST_CASE("clamped_log passes no gradient where the clamp is active") {
    Var x = Var::parameter({2}, {1e-9f, 0.5f});
    ag::backward(ag::sum(ag::clamped_log(x, 1e-7f)));
    CHECK(x.grad()[0] == 0.0f);
    CHECK(x.grad()[1] == doctest::Approx(2.0));
    CHECK(ag::clamped_log(Var::constant({1}, 0.0f), 1e-7f).item() == doctest::Approx(std::log(1e-7f)));
}

TEST_CASE("shape ops have correct gradients") {
    Rng rng(3);
    CHECK(gradient_error({random_param({2, 6}, rng)}, [](auto& v) { return ag::reshape(v[0], {3, 4}); }) < kGradTol);
    CHECK(gradient_error({random_param({2, 2, 1, 1, 3}, rng), random_param({2, 2, 1, 1, 2}, rng)},
                         [](auto& v) { return ag::concat_last({v[0], v[1]}); }) < kGradTol);
    CHECK(gradient_error({random_param({2, 3, 1}, rng)}, [](auto& v) { return ag::expand_last(v[0], 4); }) < kGradTol);
    CHECK(gradient_error({random_param({2, 1, 2, 2, 3}, rng)}, [](auto& v) { return ag::repeat_frames(v[0], 3); }) <
          kGradTol);
    CHECK(gradient_error({random_param({2, 3}, rng)}, [](auto& v) { return ag::tile_volume(v[0], 2, 2, 3); }) <
          kGradTol);
    CHECK(gradient_error({random_param({3, 4}, rng), random_param({4, 2}, rng), random_param({2}, rng)},
                         [](auto& v) { return ag::linear(v[0], v[1], v[2]); }) < kGradTol);
}

TEST_CASE("mismatched shapes are rejected") {
    Rng rng(4);
    CHECK_THROWS_AS(ag::add(random_const({2, 3}, rng), random_const({3, 2}, rng)), Error);
    CHECK_THROWS_AS(ag::reshape(random_const({2, 3}, rng), {4, 2}), Error);
}

TEST_CASE("conv3d matches a direct evaluation for plain, strided and fused up-sampling geometries") {
    Rng rng(5);
    struct Case {
        ag::Shape x;
        ag::ConvGeom g;
    };
    const std::vector<Case> cases = {
        {{2, 3, 4, 5, 2}, geom(kKeep, kKeep, kKeep)},
        {{1, 4, 6, 8, 3}, geom(kHalve, kHalve, kHalve)},
        {{2, 2, 3, 3, 2}, geom(kDouble, kDouble, kDouble)},
        {{1, 1, 2, 3, 3}, geom(kKeep, kDouble, kDouble)},
        {{1, 2, 4, 4, 2}, geom(kKeep, kHalve, kHalve)},
    };
    for (const auto& c : cases) {
        const Var x = random_const(c.x, rng);
        const int cout = 3;
        const Var w = random_const({c.g.taps() * c.x[4], cout}, rng);
        const Var b = random_const({cout}, rng);
        const Var y = ag::conv3d(x, w, &b, c.g);
        const auto ref = naive_conv(x, w, &b, c.g);
        REQUIRE(y.numel() == ref.size());
        double worst = 0.0;
        for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::fabs(y.value()[i] - ref[i]));
        CHECK(worst < 1e-5);
        for (int a = 0; a < 3; ++a) CHECK(y.dim(a + 1) == c.g.axes[a].output_size(c.x[a + 1]));
    }
}

TEST_CASE("conv3d doubles each up-sampled axis and halves each strided axis") {
    Rng rng(6);
    const Var x = random_const({1, 2, 4, 4, 1}, rng);
    CHECK(ag::conv3d(x, random_const({64, 1}, rng), nullptr, geom(kDouble, kDouble, kDouble)).shape() ==
          ag::Shape{1, 4, 8, 8, 1});
    CHECK(ag::conv3d(x, random_const({64, 1}, rng), nullptr, geom(kHalve, kHalve, kHalve)).shape() ==
          ag::Shape{1, 1, 2, 2, 1});
}

TEST_CASE("conv3d gradients match finite differences") {
    Rng rng(7);
    for (const auto& g : {geom(kKeep, kKeep, kKeep), geom(kDouble, kDouble, kKeep), geom(kHalve, kKeep, kHalve)}) {
        std::vector<Var> leaves{random_param({1, 2, 4, 4, 2}, rng), random_param({g.taps() * 2, 2}, rng),
                                random_param({2}, rng)};
        CHECK(gradient_error(leaves, [&](auto& v) { return ag::conv3d(v[0], v[1], &v[2], g); }) < kGradTol);
    }
}

TEST_CASE("batch norm in training mode normalizes per channel and has correct gradients") {
    Rng rng(8);
    ag::BatchNormState st;
    const Var x = random_const({4, 2, 2, 2, 3}, rng, -3.0, 5.0);
    const Var y = ag::batch_norm(x, Var::constant({3}, 1.0f), Var::constant({3}, 0.0f), st, true);
    for (int c = 0; c < 3; ++c) {
        double m = 0.0, v = 0.0;
        const std::size_t n = y.numel() / 3;
        for (std::size_t i = 0; i < n; ++i) m += y.value()[i * 3 + c];
        m /= n;
        for (std::size_t i = 0; i < n; ++i) v += (y.value()[i * 3 + c] - m) * (y.value()[i * 3 + c] - m);
        CHECK(std::fabs(m) < 1e-5);
        CHECK(v / n == doctest::Approx(1.0).epsilon(1e-3));
    }
    CHECK(st.running_mean.size() == 3);

    std::vector<Var> leaves{random_param({3, 1, 2, 2, 2}, rng), random_param({2}, rng, 0.5, 1.5),
                            random_param({2}, rng)};
    CHECK(gradient_error(leaves,
                         [](auto& v) {
                             ag::BatchNormState s;
                             return ag::batch_norm(v[0], v[1], v[2], s, true);
                         },
                         9, 1e-2) < 5e-2);
}

TEST_CASE("batch norm in inference mode uses running statistics") {
    ag::BatchNormState st{{1.0f}, {4.0f}};
    const Var y = ag::batch_norm(Var::constant({2, 1}, std::vector<float>{1.0f, 5.0f}), Var::constant({1}, 1.0f),
                                 Var::constant({1}, 0.0f), st, false, 0.1f, 0.0f);
    CHECK(y.value()[0] == doctest::Approx(0.0));
    CHECK(y.value()[1] == doctest::Approx(2.0));
}

TEST_CASE("gradients accumulate across shared uses and detach blocks flow") {
    Var x = Var::parameter({1}, {3.0f});
    ag::backward(ag::mul(x, x));
    CHECK(x.grad()[0] == doctest::Approx(6.0));
    x.zero_grad();
    ag::backward(ag::mul(x, x.detach()));
    CHECK(x.grad()[0] == doctest::Approx(3.0));
    Var c = x.deep_copy();
    c.mutable_value()[0] = 1.0f;
    CHECK(x.value()[0] == 3.0f);
}
