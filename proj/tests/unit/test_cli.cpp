#include <doctest.h>

#include <fstream>
#include <sstream>

#include "test_support.hpp"

using namespace cftgan::testing;
namespace fs = std::filesystem;

namespace {

const std::string kCli = CFTGAN_CLI_PATH;
const std::string kQuick = " --set batch_size=2 --set base_width=4 --set checkpoint_every=10";

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

int cli(const std::string& args, const fs::path& log) {
    return run_command(kCli + " " + args + " > '" + log.string() + "' 2>&1");
}

std::vector<std::string> lines(const fs::path& p) {
    std::ifstream is(p);
    std::vector<std::string> out;
    for (std::string l; std::getline(is, l);) out.push_back(l);
    return out;
}

/// One corpus shared by every case in this binary.
const fs::path& corpus() {
    static TempDir dir("clicorpus");
    static const bool made = cli("synthesize-data --out '" + (dir / "data").string() + "'", dir / "log") == 0;
    REQUIRE(made);
    return dir.path();
}

}  // namespace

TEST_CASE("synthesize-data writes 96 clips deterministically") {
    TempDir dir("synth");
    REQUIRE(cli("synthesize-data --seed 3 --out '" + (dir / "a").string() + "'", dir / "log") == 0);
    REQUIRE(cli("synthesize-data --seed 3 --out '" + (dir / "b").string() + "'", dir / "log") == 0);
    int n = 0;
    for (const auto& e : fs::directory_iterator(dir / "a")) n += e.is_directory();
    CHECK(n == 96);
    CHECK(slurp(dir / "a" / "clip_00017" / "frames" / "000003.png") ==
          slurp(dir / "b" / "clip_00017" / "frames" / "000003.png"));
    CHECK(slurp(dir / "a" / "clip_00017" / "flow.cff") == slurp(dir / "b" / "clip_00017" / "flow.cff"));
}

TEST_CASE("usage and filesystem errors give distinct exit codes") {
    TempDir dir("usage");
    CHECK(cli("", dir / "log") == 2);
    CHECK(cli("train --data x", dir / "log") == 2);
    CHECK(cli("train --data x --out y --set mystery=1", dir / "log") == 2);
    std::ofstream(dir / "file") << "x";
    CHECK(cli("synthesize-data --out '" + (dir / "file" / "sub").string() + "'", dir / "log") == 3);
    CHECK(cli("train --data '" + (dir / "missing").string() + "' --out '" + (dir / "o").string() + "'", dir / "log") == 3);
}

TEST_CASE("train logs one row per iteration and resumes identically") {
    TempDir dir("train");
    const std::string data = " --data '" + (corpus() / "data").string() + "'";
    REQUIRE(cli("train" + data + " --out '" + (dir / "full").string() + "' --set iterations=20" + kQuick, dir / "log") == 0);
    const auto full = lines(dir / "full" / "loss.csv");
    CHECK(full.size() == 21);
    CHECK(fs::exists(dir / "full" / "checkpoint_000010.cftk"));
    CHECK(fs::exists(dir / "full" / "final.cftk"));
    CHECK(fs::exists(dir / "full" / "effective_config.txt"));

    fs::create_directories(dir / "resumed");
    std::ofstream(dir / "resumed" / "loss.csv") << full[0] << '\n';
    {
        std::ofstream os(dir / "resumed" / "loss.csv", std::ios::app);
        for (int i = 1; i <= 10; ++i) os << full[i] << '\n';
    }
    REQUIRE(cli("train" + data + " --out '" + (dir / "resumed").string() + "' --resume '" +
                    (dir / "full" / "checkpoint_000010.cftk").string() + "'",
                dir / "log") == 0);
    CHECK(lines(dir / "resumed" / "loss.csv") == full);
    CHECK(slurp(dir / "resumed" / "final.cftk") == slurp(dir / "full" / "final.cftk"));
}

TEST_CASE("the large preset prints its plan") {
    TempDir dir("plan");
    // No corpus exists, so the run stops right after printing the plan.
    CHECK(cli("train --scale paper --data '" + (dir / "none").string() + "' --out '" + (dir / "o").string() + "'",
              dir / "log") == 3);
    CHECK(slurp(dir / "log").find("plan: K=60000 iterations") != std::string::npos);
}

TEST_CASE("generate is deterministic and evaluate compares its output") {
    TempDir dir("gen");
    const std::string data = " --data '" + (corpus() / "data").string() + "'";
    REQUIRE(cli("train" + data + " --out '" + (dir / "m").string() + "' --set iterations=2" + kQuick, dir / "log") == 0);
    const std::string ck = " --checkpoint '" + (dir / "m" / "final.cftk").string() + "'";
    const std::string cap = " --caption 'a red square is moving right on a black background'";
    REQUIRE(cli("generate" + ck + cap + " --seed 7 --out '" + (dir / "g1").string() + "'", dir / "log") == 0);
    REQUIRE(cli("generate" + ck + cap + " --seed 7 --out '" + (dir / "g2").string() + "'", dir / "log") == 0);
    int frames = 0;
    for (const auto& e : fs::directory_iterator(dir / "g1" / "frames")) frames += e.path().extension() == ".png";
    CHECK(frames == 8);
    CHECK(slurp(dir / "g1" / "strip.png") == slurp(dir / "g2" / "strip.png"));
    CHECK(slurp(dir / "g1" / "flow.cff") == slurp(dir / "g2" / "flow.cff"));
    CHECK(fs::exists(dir / "g1" / "caption.txt"));

    REQUIRE(cli("evaluate --a '" + (dir / "g1").string() + "' --b '" + (dir / "g2").string() + "'", dir / "out") == 0);
    CHECK(slurp(dir / "out") == "0.0\n");
    CHECK(cli("evaluate --a '" + (dir / "g1").string() + "' --b '" + (dir / "nope").string() + "'", dir / "out") != 0);
    CHECK(cli("generate" + ck + " --caption '' --out '" + (dir / "g3").string() + "'", dir / "log") == 3);
}

TEST_CASE("ablate writes one row per requested config") {
    TempDir dir("ablate");
    REQUIRE(cli("ablate --data '" + (corpus() / "data").string() + "' --out '" + (dir / "r.csv").string() +
                    "' --configs a,f --budget 2 --n-captions 2 --n-repeats 1" + kQuick,
                dir / "log") == 0);
    const auto rows = lines(dir / "r.csv");
    REQUIRE(rows.size() == 3);
    CHECK(rows[1].rfind("a,", 0) == 0);
    CHECK(rows[2].rfind("f,", 0) == 0);
}
