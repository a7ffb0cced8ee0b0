// End-to-end checks of the command-line surface. The binary path arrives via
// the SEMCORR_CLI environment variable, set by the ctest harness.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "semcorr/io.hpp"

namespace fs = std::filesystem;

namespace {

std::string cli_path() {
    const char* env = std::getenv("SEMCORR_CLI");
    REQUIRE_MESSAGE(env != nullptr, "SEMCORR_CLI must point at the built semcorr binary");
    return env;
}

int run(const std::string& args) {
    const std::string cmd = cli_path() + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("semcorr_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// fast settings shared by the CLI cases
const std::string kTiny =
    "--set h=8 --set w=8 --set d=6 --set channels=3 --set heldout_pairs=2 --set eval_every=0";

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("usage errors exit with code 1") {
    CHECK(run("") == 1);                        // missing subcommand
    CHECK(run("--bogus") == 1);                 // unknown flag
    CHECK(run("train --frob=1") == 1);          // unknown flag on a subcommand
    CHECK(run("train --config /nonexistent") == 1);
    CHECK(run("train --set nonsense") == 1);    // malformed override
    CHECK(run("train --set no_such_key=1") == 1);
    CHECK(run("train --set steps=0") == 1);     // invalid config value
    CHECK(run("--help") == 0);
}

TEST_CASE("train writes one metrics row per step") {
    const fs::path dir = fresh_dir("train1");
    CHECK(run("train --out " + dir.string() + " " + kTiny +
              " --set steps=1 --set lr_feature=0 --set lr_agg=0") == 0);
    const std::string metrics = semcorr::read_file(dir / "metrics.csv");
    int lines = 0;
    for (const char ch : metrics) lines += (ch == '\n');
    CHECK(lines == 2);  // header + exactly one data row
    CHECK(metrics.rfind("step,l_cc,l_ac,l_aa,l_ca,total,n_c,n_a\n", 0) == 0);
    CHECK(fs::exists(dir / "projector.bin"));
    CHECK(fs::exists(dir / "kernel.bin"));
    CHECK(fs::exists(dir / "heldout.csv"));
}

TEST_CASE("seeded runs are byte-identical") {
    const fs::path d1 = fresh_dir("det1");
    const fs::path d2 = fresh_dir("det2");
    const std::string args = " " + kTiny + " --set steps=6 --seed 11";
    CHECK(run("train --out " + d1.string() + args) == 0);
    CHECK(run("train --out " + d2.string() + args) == 0);
    for (const std::string f : {"metrics.csv", "heldout.csv", "projector.bin", "kernel.bin"}) {
        CHECK(semcorr::read_file(d1 / f) == semcorr::read_file(d2 / f));
    }
}

TEST_CASE("eval consumes train checkpoints and writes the pck table") {
    const fs::path dir = fresh_dir("eval1");
    CHECK(run("train --out " + dir.string() + " " + kTiny + " --set steps=2") == 0);
    CHECK(run("eval --out " + dir.string() + " " + kTiny) == 0);
    const std::string csv = semcorr::read_file(dir / "eval.csv");
    CHECK(csv.rfind("alpha,correct,total,pck,mean_epe\n", 0) == 0);
    CHECK(csv.find("\n0.05,") != std::string::npos);
    CHECK(csv.find("\n0.1,") != std::string::npos);
    CHECK(csv.find("\n0.15,") != std::string::npos);
    // eval without checkpoints is a usage error
    const fs::path empty = fresh_dir("eval2");
    CHECK(run("eval --out " + empty.string() + " " + kTiny) == 1);
}

TEST_CASE("inspect dumps volumes, flows, masks and grids") {
    const fs::path dir = fresh_dir("inspect1");
    CHECK(run("inspect --out " + dir.string() + " " + kTiny + " --seed 3") == 0);
    for (const std::string f : {"source.csv", "target.csv", "gt_flow.csv", "valid.pgm", "cost_raw.csv",
                                "cost_agg.csv", "flow_raw.csv", "flow_agg.csv", "mask_raw.pgm",
                                "mask_agg.pgm", "warped.csv"}) {
        CHECK_MESSAGE(fs::exists(dir / f), f);
    }
    const std::string pgm = semcorr::read_file(dir / "mask_raw.pgm");
    CHECK(pgm.rfind("P2\n8 8\n1\n", 0) == 0);
    const std::string flow = semcorr::read_file(dir / "flow_raw.csv");
    CHECK(flow.rfind("i,dy,dx\n", 0) == 0);
}

TEST_CASE("inspect round-trips external image csv grids") {
    const fs::path dir = fresh_dir("inspect2");
    const fs::path dir2 = fresh_dir("inspect2b");
    CHECK(run("inspect --out " + dir.string() + " " + kTiny + " --seed 5") == 0);
    CHECK(run("inspect --out " + dir2.string() + " " + kTiny + " --seed 5 --set source_csv=" +
              (dir / "source.csv").string() + " --set target_csv=" + (dir / "target.csv").string()) == 0);
    CHECK(semcorr::read_file(dir / "cost_raw.csv") == semcorr::read_file(dir2 / "cost_raw.csv"));
}

TEST_CASE("gradcheck passes on the default seed") {
    CHECK(run("gradcheck") == 0);
    CHECK(run("gradcheck --seed 12") == 0);
}

TEST_CASE("ablate trains all four loss rows and reports their PCKs") {
    const fs::path dir = fresh_dir("ablate1");
    CHECK(run("ablate --out " + dir.string() + " " + kTiny + " --set steps=40 --seed 2") == 0);
    const std::string csv = semcorr::read_file(dir / "ablate.csv");
    CHECK(csv.rfind("config,pck_agg,pck_raw\n", 0) == 0);
    for (const std::string row : {"\na,", "\nb,", "\nc,", "\nd,"}) {
        CHECK_MESSAGE(csv.find(row) != std::string::npos, row);
    }
}

}  // TEST_SUITE
