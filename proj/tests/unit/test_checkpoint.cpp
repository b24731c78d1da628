#include <doctest.h>

#include <fstream>

#include "cftgan/checkpoint.hpp"
#include "cftgan/error.hpp"
#include "fixtures.hpp"
#include "test_support.hpp"

using namespace cftgan;
using namespace cftgan::train;
using namespace cftgan::testing;

namespace {

ErrorCode load_error(const std::filesystem::path& p) {
    try {
        load_checkpoint(p);
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode::IOFailure;
}

}  // namespace

TEST_CASE("resuming from a checkpoint reproduces the uninterrupted trace") {
    const TrainingSet set = TrainingSet::build(toy_corpus(), toy_encoder());
    for (ModelKind kind : {ModelKind::CftGan, ModelKind::CvGan}) {
        TempDir dir("ckpt");
        TrainState a = TrainState::create(quick_config(), kind, toy_encoder());
        std::vector<std::string> straight;
        for (int i = 0; i < 6; ++i) straight.push_back(loss_csv_row(train_iteration(a, set)));

        TrainState b = TrainState::create(quick_config(), kind, toy_encoder());
        std::vector<std::string> resumed;
        for (int i = 0; i < 3; ++i) resumed.push_back(loss_csv_row(train_iteration(b, set)));
        save_checkpoint(b, dir / "nested" / "dirs" / "mid.cftk");
        TrainState c = load_checkpoint(dir / "nested" / "dirs" / "mid.cftk");
        CHECK(c.k == 3);
        CHECK(c.kind == kind);
        CHECK(c.config == b.config);
        for (int i = 0; i < 3; ++i) resumed.push_back(loss_csv_row(train_iteration(c, set)));
        CHECK(resumed == straight);
    }
}

TEST_CASE("a checkpoint taken before any step loads") {
    TempDir dir("ckpt0");
    TrainState a = TrainState::create(quick_config(), ModelKind::CftGan, toy_encoder());
    save_checkpoint(a, dir / "zero.cftk");
    TrainState b = load_checkpoint(dir / "zero.cftk");
    CHECK(b.k == 0);
    CHECK(b.encoder.encode(toy_corpus()[0].caption) == a.encoder.encode(toy_corpus()[0].caption));
}

TEST_CASE("damaged checkpoints are rejected") {
    TempDir dir("ckptbad");
    TrainState a = TrainState::create(quick_config(), ModelKind::CftGan, toy_encoder());
    save_checkpoint(a, dir / "good.cftk");
    const auto size = std::filesystem::file_size(dir / "good.cftk");
    std::filesystem::copy_file(dir / "good.cftk", dir / "short.cftk");
    std::filesystem::resize_file(dir / "short.cftk", size / 2);
    CHECK(load_error(dir / "short.cftk") == ErrorCode::CorruptCheckpoint);
    std::ofstream(dir / "magic.cftk") << "XXXXnot a checkpoint";
    CHECK(load_error(dir / "magic.cftk") == ErrorCode::CorruptCheckpoint);
    CHECK(load_error(dir / "missing.cftk") != ErrorCode::CorruptCheckpoint);
}
