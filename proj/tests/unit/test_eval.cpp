#include <doctest.h>

#include <fstream>

#include "cftgan/error.hpp"
#include "cftgan/eval.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace cftgan;
using namespace cftgan::eval;
using namespace cftgan::testing;

TEST_CASE("RMSD of identical videos is zero") {
    Rng rng(1);
    const auto v = VideoVolume(random_volume(3, 4, 5, 5, rng));
    CHECK(rmsd(v, v) == 0.0);
}

TEST_CASE("RMSD of a constant offset of 10 grey levels is 10") {
    const VideoVolume a(4, 6, 6, 0.0f);
    const VideoVolume b(4, 6, 6, static_cast<float>(10.0 / 127.5));
    CHECK(rmsd(a, b) == doctest::Approx(10.0).epsilon(1e-6));
}

TEST_CASE("RMSD matches a brute-force sum on random small videos") {
    Rng rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        const auto a = VideoVolume(random_volume(3, 2, 2, 2, rng));
        const auto b = VideoVolume(random_volume(3, 2, 2, 2, rng));
        CHECK(std::fabs(rmsd(a, b) - rmsd_bruteforce(a, b)) < 1e-9);
    }
}

TEST_CASE("RMSD aligns duration and resolution first") {
    Rng rng(3);
    const auto a = VideoVolume(random_volume(3, 8, 4, 4, rng));
    VideoVolume b = area_downscale(subsample_frames(a, 4), 2, 2);
    CHECK(rmsd(a, b) == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(uniform_indices(32, 8) == std::vector<int>{0, 4, 9, 13, 18, 22, 27, 31});
    CHECK_THROWS_AS(rmsd(VideoVolume(), a), Error);
}

TEST_CASE("area downscaling averages boxes") {
    VideoVolume v(1, 2, 2);
    const float vals[4] = {0.0f, 0.5f, -0.5f, 1.0f};
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 4; ++i) v.at(c, 0, i / 2, i % 2) = vals[i];
    CHECK(area_downscale(v, 1, 1).at(1, 0, 0, 0) == doctest::Approx(0.25));
}

TEST_CASE("ablation tags") {
    const auto all = all_ablation_configs();
    CHECK(all.size() == 6);
    const train::TrainConfig base;
    CHECK(ablation_config('e').apply(base).zero_caption_flow);
    CHECK(ablation_config('b').apply(base).zero_caption_tex_fg);
    CHECK(ablation_config('b').apply(base).zero_caption_tex_bg);
    CHECK_FALSE(ablation_config('c').apply(base).zero_caption_tex_bg);
    CHECK(ablation_config('f').model() == train::ModelKind::CvGan);
    CHECK(ablation_config('a').apply(base) == base);
    CHECK_THROWS_AS(ablation_config('g'), Error);
    const AblationOptions defaults;
    CHECK(defaults.n_captions == 50);
    CHECK(defaults.n_repeats == 5);
}

TEST_CASE("a small ablation run is deterministic and emits one row per config") {
    AblationOptions opt;
    opt.n_captions = 3;
    opt.n_repeats = 2;
    opt.budget = 2;
    const auto cfgs = std::vector<AblationConfig>{ablation_config('a'), ablation_config('f')};
    const auto r1 = run_ablation(cfgs, quick_config(), toy_corpus(), toy_encoder(), opt);
    const auto r2 = run_ablation(cfgs, quick_config(), toy_corpus(), toy_encoder(), opt);
    REQUIRE(r1.rows.size() == 2);
    CHECK(r1.to_csv() == r2.to_csv());
    for (const auto& row : r1.rows) {
        CHECK(std::isfinite(row.mean_rmsd));
        CHECK(row.std_rmsd >= 0.0);
    }
    CHECK(r1.to_csv().rfind("config,mean_rmsd,std_rmsd,n_captions,n_repeats\n", 0) == 0);
    opt.n_captions = 1000;
    CHECK_THROWS_AS(run_ablation(cfgs, quick_config(), toy_corpus(), toy_encoder(), opt), Error);
}

TEST_CASE("ablation uses stored models and reports missing ones") {
    TempDir dir("models");
    AblationOptions opt;
    opt.n_captions = 2;
    opt.n_repeats = 1;
    opt.budget = 1;
    opt.models_dir = dir.path();
    const std::vector<AblationConfig> cfgs{ablation_config('c')};
    try {
        run_ablation(cfgs, quick_config(), toy_corpus(), toy_encoder(), opt);
        FAIL("expected MissingModel");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::MissingModel);
    }
    opt.train_missing = true;
    const auto trained = run_ablation(cfgs, quick_config(), toy_corpus(), toy_encoder(), opt);
    CHECK(std::filesystem::exists(dir / "c.cftk"));
    opt.train_missing = false;
    const auto loaded = run_ablation(cfgs, quick_config(), toy_corpus(), toy_encoder(), opt);
    CHECK(loaded.to_csv() == trained.to_csv());
}

TEST_CASE("strips take every fourth frame and round-trip through PNG") {
    Rng rng(4);
    VideoVolume v(32, 4, 5);
    for (auto& x : v.data) x = from_byte(static_cast<std::uint8_t>(rng.below(256)));
    const RgbImage strip = frame_strip(v);
    CHECK(strip.width == 8 * 5);
    CHECK(strip.height == 4);
    TempDir dir("strip");
    write_png(dir / "s.png", strip);
    const RgbImage back = read_png(dir / "s.png");
    CHECK(back.pixels == strip.pixels);
    for (int k = 0; k < 8; ++k) {
        const RgbImage f = video_frame(v, 4 * k);
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 5; ++x)
                for (int c = 0; c < 3; ++c)
                    CHECK(back.pixels[(static_cast<std::size_t>(y) * back.width + k * 5 + x) * 3 + c] ==
                          f.pixels[(static_cast<std::size_t>(y) * 5 + x) * 3 + c]);
    }
}

TEST_CASE("sample export writes strips and a caption sidecar") {
    TempDir dir("export");
    export_samples({}, {}, dir / "none");
    CHECK_FALSE(std::filesystem::exists(dir / "none"));
    export_samples({VideoVolume(8, 4, 4), VideoVolume(8, 4, 4)}, {"one", "two"}, dir / "out");
    CHECK(std::filesystem::exists(dir / "out" / "sample_001.png"));
    std::ifstream is(dir / "out" / "captions.txt");
    std::string line;
    std::getline(is, line);
    CHECK(line == "sample_000.png\tone");
}
