#include <doctest.h>

#include "cftgan/error.hpp"
#include "cftgan/layers.hpp"
#include "cftgan/model_dims.hpp"
#include "test_support.hpp"

using namespace cftgan;
using namespace cftgan::testing;

TEST_CASE("up-sampling plan for the large volume starts from a 2x4x4 seed") {
    const auto plan = nn::plan_upsampling(ModelDims::paper().volume(), 4);
    CHECK(plan.seed == nn::Dims3{2, 4, 4});
    nn::Dims3 d = plan.seed;
    for (const auto& s : plan.steps) {
        CHECK(s == nn::AxisSteps{true, true, true});
        d = nn::apply_steps(d, s, true);
    }
    CHECK(d == nn::Dims3{32, 64, 64});
}

TEST_CASE("up-sampling plan for the small volume doubles late axes only") {
    const auto plan = nn::plan_upsampling({8, 16, 16}, 4);
    CHECK(plan.seed == nn::Dims3{2, 2, 2});
    CHECK(plan.steps[0] == nn::AxisSteps{false, false, false});
    CHECK(plan.steps[1] == nn::AxisSteps{false, true, true});
    nn::Dims3 d = plan.seed;
    for (const auto& s : plan.steps) d = nn::apply_steps(d, s, true);
    CHECK(d == nn::Dims3{8, 16, 16});
}

TEST_CASE("down-sampling mirrors up-sampling") {
    const nn::Dims3 in{8, 16, 16};
    const auto steps = nn::plan_downsampling(in, 4);
    nn::Dims3 d = in;
    for (const auto& s : steps) d = nn::apply_steps(d, s, false);
    CHECK(d == nn::plan_upsampling(in, 4).seed);
}

TEST_CASE("unreachable sizes are rejected") {
    CHECK_THROWS_AS(nn::plan_upsampling({6, 16, 16}, 4), Error);
}

TEST_CASE("blocks produce the planned shapes") {
    Rng rng(1);
    nn::UpBlock up(4, 3, {true, false, true}, false, rng);
    const auto y = up(random_const({2, 2, 3, 4, 4}, rng), true);
    CHECK(y.shape() == ag::Shape{2, 4, 3, 8, 3});
    nn::DownBlock down(3, 5, {true, true, false}, true, rng);
    const auto z = down(random_const({2, 4, 8, 8, 3}, rng), true);
    CHECK(z.shape() == ag::Shape{2, 2, 4, 8, 5});
}

TEST_CASE("final up-sampling block has a bias and no batch norm") {
    Rng rng(2);
    nn::UpBlock last(4, 3, {true, true, true}, true, rng);
    CHECK(last.conv.bias.has_value());
    CHECK_FALSE(last.bn.has_value());
    nn::UpBlock inner(4, 3, {true, true, true}, false, rng);
    CHECK_FALSE(inner.conv.bias.has_value());
    CHECK(inner.bn.has_value());
}

TEST_CASE("pack and unpack are inverse for channel-major volumes") {
    Rng rng(3);
    const auto a = random_values(2 * 3 * 4 * 5, rng);
    const auto b = random_values(2 * 3 * 4 * 5, rng);
    const auto packed = nn::pack_volumes({&a, &b}, 2, 3, 4, 5);
    CHECK(packed.shape() == ag::Shape{2, 3, 4, 5, 2});
    CHECK(nn::unpack_volume(packed, 0) == a);
    CHECK(nn::unpack_volume(packed, 1) == b);
}
