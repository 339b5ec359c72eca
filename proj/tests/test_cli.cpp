#include <doctest.h>
#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <json.hpp>
#include <string>

#include "gmar/image.hpp"
#include "gmar/synthetic.hpp"
#include "gmar/weights.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "gmar_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string at(const std::string& name) { return (workdir() / name).string(); }

struct Run {
  int code;
  std::string out;
};

Run cli(const std::string& args) {
  const std::string out_file = at("stdout.txt");
  const std::string cmd = std::string(GMAR_CLI_PATH) + " " + args + " > " + out_file + " 2> " + at("stderr.txt");
  const int status = std::system(cmd.c_str());
  std::ifstream in(out_file);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1,
          std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>())};
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Small trained weight file and a matching input image, made once.
const std::string& weights() {
  static const std::string path = [] {
    const std::string p = at("toy.gmarw");
    REQUIRE(cli("train-toy --out " + p + " --seed 3 --epochs 1 --samples 8").code == 0);
    gmar::save_image_ppm(gmar::generate_synthetic(3, 1).front().image, at("input.ppm"));
    return p;
  }();
  return path;
}

}  // namespace

TEST_CASE("cli train-toy") {
  const std::string& w = weights();
  CHECK_NOTHROW(gmar::load_weights(w));
  const auto history = json::parse(slurp(w + ".history.json"));
  CHECK(history.size() == 1);
  CHECK(cli("train-toy --out " + at("again.gmarw") + " --seed 3 --epochs 1 --samples 8").code == 0);
  CHECK(slurp(at("again.gmarw")) == slurp(w));
  CHECK(cli("train-toy --out " + at("zero.gmarw") + " --epochs 0").code == 2);
  CHECK(cli("train-toy --out /nonexistent-dir/w.gmarw --epochs 1 --samples 4").code == 2);
  CHECK(cli("train-toy --out " + at("x.gmarw") + " --bogus 1").code == 2);
}

TEST_CASE("cli explain") {
  const std::string& w = weights();
  const std::string base = "explain --weights " + w + " --image " + at("input.ppm");
  REQUIRE(cli(base + " --method gmar-l1 --out " + at("e1")).code == 0);
  const auto doc = json::parse(slurp(at("e1.json")));
  CHECK(doc["head_weights"].size() == 4);
  for (const auto& layer : doc["head_weights"]) {
    double s = 0.0;
    for (double v : layer) s += v;
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
  CHECK(doc["probabilities"].size() == 4);
  CHECK(gmar::load_image_ppm(at("e1.map.ppm")).width() == 32);
  CHECK(gmar::load_image_ppm(at("e1.overlay.ppm")).width() == 32);

  REQUIRE(cli(base + " --method random --seed 5 --out " + at("r1")).code == 0);
  REQUIRE(cli(base + " --method random --seed 5 --out " + at("r2")).code == 0);
  CHECK(slurp(at("r1.map.ppm")) == slurp(at("r2.map.ppm")));
  CHECK(slurp(at("r1.json")) == slurp(at("r2.json")));

  gmar::save_image_ppm(gmar::Image(16, 16, 0.5), at("small.ppm"));
  CHECK(cli("explain --weights " + w + " --image " + at("small.ppm") + " --out " + at("s")).code == 2);
  std::ofstream(at("corrupt.gmarw"), std::ios::binary) << "GMARW00";
  CHECK(cli("explain --weights " + at("corrupt.gmarw") + " --image " + at("input.ppm") + " --out " + at("c")).code ==
        3);
  CHECK(cli(base + " --method smoothgrad --out " + at("m")).code == 2);
  CHECK(cli(base + " --scope sideways --out " + at("m")).code == 2);
  CHECK(cli(base + " --out " + at("m") + " --unknown").code == 2);
}

TEST_CASE("cli evaluate") {
  const std::string& w = weights();
  const std::string base = "evaluate --weights " + w + " --dataset synthetic:9:4 --method gmar-l2 --steps 4";
  const Run first = cli(base + " --out " + at("rep1.json"));
  REQUIRE(first.code == 0);
  CHECK(std::count(first.out.begin(), first.out.end(), '\n') == 1);
  CHECK(first.out.rfind("gmar-l2 ", 0) == 0);
  REQUIRE(cli(base + " --out " + at("rep2.json")).code == 0);
  CHECK(slurp(at("rep1.json")) == slurp(at("rep2.json")));

  const auto doc = json::parse(slurp(at("rep1.json")));
  CHECK(doc["num_images"] == 4);
  CHECK(doc["config"]["steps"] == 4);
  for (const char* key : {"avg_drop", "avg_increase"}) {
    CHECK(doc[key] >= 0.0);
    CHECK(doc[key] <= 100.0);
  }
  for (const char* key : {"insertion_auc", "deletion_auc"}) {
    CHECK(doc[key] >= 0.0);
    CHECK(doc[key] <= 1.0);
  }
  CHECK(doc["images"][0]["deletion"].size() == 5);

  CHECK(cli("evaluate --weights " + w + " --dataset synthetic:9:4 --method magic --out " + at("x.json")).code == 2);
  CHECK(cli("evaluate --weights " + w + " --dataset imagenet --method rollout --out " + at("x.json")).code == 2);
  CHECK(cli(base + " --steps 99 --out " + at("x.json")).code == 2);
}

TEST_CASE("cli compare") {
  const std::string& w = weights();
  const std::string base = "compare --weights " + w + " --image " + at("input.ppm");
  REQUIRE(cli(base + " --methods rollout,gmar-l1 --out " + at("cmp")).code == 0);
  for (const char* f : {"cmp.a.rollout.map.ppm", "cmp.a.rollout.overlay.ppm", "cmp.b.gmar-l1.map.ppm",
                        "cmp.b.gmar-l1.overlay.ppm", "cmp.diff.ppm"}) {
    CHECK(gmar::load_image_ppm(at(f)).width() == 32);
  }
  const auto doc = json::parse(slurp(at("cmp.json")));
  CHECK(doc["methods"][1] == "gmar-l1");

  REQUIRE(cli(base + " --methods gmar-l2,gmar-l2 --out " + at("same")).code == 0);
  const gmar::Image diff = gmar::load_image_ppm(at("same.diff.ppm"));
  CHECK(std::all_of(diff.pixels().begin(), diff.pixels().end(), [](double v) { return v == 1.0; }));

  CHECK(cli(base + " --methods rollout --out " + at("one")).code == 2);
  CHECK(cli(base + " --methods rollout,gmar-l1,random --out " + at("three")).code == 2);
}

TEST_CASE("cli usage errors") {
  CHECK(cli("").code == 2);
  CHECK(cli("frobnicate").code == 2);
  CHECK(cli("--help").code == 0);
}
