#include <doctest.h>

#include "cftgan/error.hpp"
#include "cftgan/run_config.hpp"

using namespace cftgan;

TEST_CASE("presets") {
    const RunConfig toy = RunConfig::preset("toy");
    CHECK(toy.data.crop == 16);
    CHECK(toy.data.clip_len == 8);
    const RunConfig paper = RunConfig::preset("paper");
    CHECK(paper.train.iterations == 60000);
    CHECK(paper.data.canvas == 76);
    CHECK(paper.data.crop == 64);
    CHECK(paper.data.clip_len == 32);
    CHECK_THROWS_AS(RunConfig::preset("huge"), Error);
}

TEST_CASE("config text parses with comments and round-trips") {
    const RunConfig c = parse_run_config("# comment\nbatch_size = 4  # trailing\nscale = toy\n\nconfigs = a,f\nlr0 = 0.001\n");
    CHECK(c.train.batch_size == 4);
    CHECK(c.configs == "af");
    CHECK(c.train.lr0 == doctest::Approx(0.001));
    const RunConfig back = parse_run_config(c.to_text());
    CHECK(back.to_text() == c.to_text());
    CHECK(back.train == c.train);
}

TEST_CASE("the scale key applies before other keys regardless of order") {
    const RunConfig c = parse_run_config("batch_size = 3\nscale = paper\n");
    CHECK(c.train.batch_size == 3);
    CHECK(c.train.iterations == 60000);
}

TEST_CASE("bad config input is rejected") {
    CHECK_THROWS_AS(parse_run_config("no equals sign"), Error);
    CHECK_THROWS_AS(parse_run_config("mystery = 1"), Error);
    CHECK_THROWS_AS(parse_run_config("batch_size = many"), Error);
    CHECK_THROWS_AS(parse_run_config("configs = az"), Error);
    RunConfig c;
    CHECK_THROWS_AS(apply_override(c, "novalue"), Error);
    apply_override(c, "iterations=7");
    CHECK(c.train.iterations == 7);
    c.set("canvas", "8");
    CHECK_THROWS_AS(c.validate(), Error);
}
