#include <doctest.h>

#include <cstdlib>
#include <sys/wait.h>

#include "test_util.hpp"
#include "tpose/io.hpp"

using namespace tpose::test;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(TPOSE_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const std::string kSmall =
    "--set camera.width=160 --set camera.height=120 --set camera.fx=160 --set camera.fy=160 "
    "--set camera.cx=79.5 --set camera.cy=59.5 --set patch.size=32 --set sampler.points=128 "
    "--set embedding.random_width=16";

}  // namespace

TEST_CASE("usage errors exit 1") {
  CHECK(run("") == 1);
  CHECK(run("frobnicate") == 1);
  CHECK(run("generate") == 1);
  CHECK(run("--set nokey generate --out /tmp/x") == 1);
  CHECK(run("--set no.such=1 generate --out /tmp/x") == 1);
  CHECK(run("gradcheck --inject-fault wat") == 1);
}

TEST_CASE("help and print-config exit 0") {
  CHECK(run("--help") == 0);
  CHECK(run("--print-config") == 0);
}

TEST_CASE("missing inputs exit 2") {
  TempDir dir("cli_missing");
  CHECK(run("predict --dataset " + dir / "none" + " --out " + dir / "p.jsonl") == 2);
  CHECK(run("evaluate --dataset " + dir / "none" + " --predictions x --out " + dir / "r") == 2);
}

TEST_CASE("gradcheck exit codes") {
  CHECK(run("gradcheck --trials 100") == 0);
  CHECK(run("gradcheck --trials 100 --inject-fault axis-sign") == 3);
}

TEST_CASE("generate, predict, evaluate end to end") {
  TempDir dir("cli_e2e");
  const std::string ds = dir / "ds";
  REQUIRE(run(kSmall + " --seed 5 generate --out " + ds + " --count 3") == 0);
  CHECK(std::filesystem::exists(dir / "ds/manifest.json"));
  REQUIRE(run(kSmall + " --set train.epochs=20 train-ref --dataset " + ds + " --out " + dir / "m.ckpt") == 0);
  CHECK(std::filesystem::exists(dir / "m.ckpt.curve.csv"));
  REQUIRE(run(kSmall + " predict --dataset " + ds + " --checkpoint " + dir / "m.ckpt" + " --out " + dir / "p.jsonl") == 0);
  REQUIRE(run(kSmall + " evaluate --dataset " + ds + " --predictions " + dir / "p.jsonl" + " --out " + dir / "r") == 0);
  CHECK(std::filesystem::exists(dir / "r.csv"));
  CHECK(std::filesystem::exists(dir / "r.md"));
  CHECK(run(kSmall + " evaluate --dataset " + ds + " --out " + dir / "r") == 1);
  CHECK(run(kSmall + " --set embedding.random_width=8 predict --dataset " + ds + " --out " + dir / "q.jsonl") == 0);
  // A checkpoint carries its own embedding width, so this still works.
  CHECK(run(kSmall + " --set embedding.random_width=8 predict --dataset " + ds + " --checkpoint " + dir / "m.ckpt" +
            " --out " + dir / "q.jsonl") == 0);
}
