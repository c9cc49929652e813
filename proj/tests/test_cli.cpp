#include <catch_amalgamated.hpp>

#include <sys/wait.h>

#include <filesystem>
#include <string>

#include <json.hpp>

#include "spinterp/common.hpp"

namespace fs = std::filesystem;
using spinterp::read_file;
using spinterp::write_file;

namespace {

const fs::path& workdir() {
    static const fs::path dir = [] {
        const fs::path d = fs::temp_directory_path() / "spinterp_test_cli";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::string path(const std::string& name) { return (workdir() / name).string(); }

int cli(const std::string& args) {
    const std::string cmd = std::string(SPINTERP_CLI_PATH) + " " + args + " >> \"" + path("log.txt") + "\" 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

const char* kTinyModel = "--latent-dim 8 --d-model 16 --heads 2 --encoder-layers 1 --ff-dim 32 --decoder-layers 1";

// dataset + 1-epoch model shared by the cases below.
void ensure_model() {
    static bool done = false;
    if (done) return;
    REQUIRE(cli("dataset --n 30 --seed 4 --out " + path("c.spnc")) == 0);
    REQUIRE(cli("train --corpus " + path("c.spnc") + " --out " + path("m.spnv") + " --epochs 1 --quiet " + kTinyModel) == 0);
    done = true;
}

}  // namespace

TEST_CASE("usage errors exit with 2") {
    CHECK(cli("") == 2);
    CHECK(cli("frobnicate") == 2);
    CHECK(cli("dataset") == 2);
    CHECK(cli("train --corpus /nonexistent --out x") == 2);
    CHECK(cli("dataset --n 5 --out " + path("small.spnc")) == 2);
}

TEST_CASE("dataset and train write manifests and are reproducible") {
    ensure_model();
    REQUIRE(cli("dataset --n 30 --seed 4 --out " + path("c2.spnc")) == 0);
    CHECK(read_file(path("c.spnc")) == read_file(path("c2.spnc")));
    const auto m = nlohmann::json::parse(read_file(path("c.spnc.manifest.json")));
    CHECK(m["format"] == "spinterp-run/1");
    CHECK(m["command"] == "dataset");
    CHECK(m["seed"] == 4);
    CHECK(fs::exists(path("m.spnv.history.csv")));
    CHECK(fs::exists(path("m.spnv.manifest.json")));
}

TEST_CASE("eval-interp report rebuilds from the features CSV") {
    ensure_model();
    REQUIRE(cli("eval-interp --checkpoint " + path("m.spnv") + " --corpus " + path("c.spnc") + " --pairs 1 --T 3 --out " +
                path("eval")) == 0);
    for (const char* f : {"features.csv", "report.csv", "report.txt", "run_manifest.json"}) CHECK(fs::exists(workdir() / "eval" / f));
    CHECK(fs::exists(workdir() / "eval" / "audio"));
    REQUIRE(cli("eval-interp --from-features " + path("eval/features.csv") + " --out " + path("eval2")) == 0);
    CHECK(read_file(path("eval/report.csv")) == read_file(path("eval2/report.csv")));
}

TEST_CASE("render writes a preset WAV and an interpolation sequence") {
    ensure_model();
    REQUIRE(cli("render --corpus " + path("c.spnc") + " --id 0 --out " + path("one.wav")) == 0);
    CHECK(read_file(path("one.wav")).substr(0, 4) == "RIFF");
    REQUIRE(cli("render --corpus " + path("c.spnc") + " --checkpoint " + path("m.spnv") +
                " --a 0 --b 1 --method latent --T 3 --out " + path("seq")) == 0);
    int wavs = 0;
    for (const auto& e : fs::directory_iterator(workdir() / "seq")) wavs += e.path().extension() == ".wav";
    CHECK(wavs == 3);
    CHECK(cli("render --corpus " + path("c.spnc") + " --a 0 --b 1 --method reference --T 3 --from -0.5 --out " + path("ex")) == 2);
    CHECK(cli("render --corpus " + path("c.spnc") + " --a 0 --b 1 --method reference --T 3 --from -0.5 --extrapolate --out " +
              path("ex")) == 0);
}

TEST_CASE("descriptor mismatch exits with 4") {
    ensure_model();
    auto doc = nlohmann::json::parse(read_file(std::string(SPINTERP_SOURCE_DIR) + "/data/mini_fm.json"));
    doc["version"] = "2";
    write_file(path("other.json"), doc.dump());
    REQUIRE(cli("dataset --descriptor " + path("other.json") + " --n 20 --out " + path("other.spnc")) == 0);
    CHECK(cli("eval-interp --checkpoint " + path("m.spnv") + " --corpus " + path("other.spnc") + " --pairs 1 --T 3 --out " +
              path("mm")) == 4);
    CHECK(cli("train --corpus " + path("other.spnc") + " --resume " + path("m.spnv") + " --out " + path("mm.spnv") +
              " --epochs 2 --quiet") == 4);
}

TEST_CASE("a diverging run exits with 3") {
    ensure_model();
    CHECK(cli("train --corpus " + path("c.spnc") + " --out " + path("nan.spnv") + " --epochs 3 --quiet --lr 1e200 " + kTinyModel) ==
          3);
}

TEST_CASE("error messages are single lines") {
    fs::remove(path("log.txt"));
    cli("train --corpus /nonexistent --out x");
    const auto log = read_file(path("log.txt"));
    CHECK(log.rfind("spinterp: error: ", 0) == 0);
    CHECK(std::count(log.begin(), log.end(), '\n') == 1);
}
