#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

std::string cli() {
  const char* path = std::getenv("PVT_CLI");
  REQUIRE_MESSAGE(path != nullptr, "PVT_CLI must point at the binary");
  return std::string(path);
}

fs::path workspace() {
  static fs::path ws = [] {
    fs::path p = fs::temp_directory_path() / "pvt_cli_ws";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return ws;
}

int run(const std::string& args, const std::string& log = "") {
  std::string cmd = "\"" + cli() + "\" " + args;
  if (!log.empty()) cmd += " > \"" + log + "\" 2>&1";
  const int rc = std::system(cmd.c_str());
  REQUIRE(rc != -1);
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE_MESSAGE(static_cast<bool>(f), "cannot open ", p.string());
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("bad invocations exit 1 before touching any state") {
  const std::string log = (workspace() / "bad.log").string();
  CHECK(run("", log) == 1);                       // subcommand required
  CHECK(run("frobnicate", log) == 1);             // unknown subcommand
  CHECK(run("train --out x.ckpt", log) == 1);     // missing required --data
  CHECK(run("--help", log) == 0);
  CHECK(run("synth --help", log) == 0);
}

TEST_CASE("synth validates its arguments") {
  const std::string log = (workspace() / "synth_bad.log").string();
  const std::string out = (workspace() / "never").string();
  CHECK(run("synth --out " + out + " --patients 0", log) == 1);
  CHECK(run("synth --out " + out + " --patients 2 --slices 2 --size 64", log) ==
        1);  // 2 patients cannot fill three splits
  CHECK(!fs::exists(out));
}

TEST_CASE("synth, train, eval and predict chain end to end") {
  const fs::path ws = workspace();
  const std::string data = (ws / "data").string();
  const std::string log = (ws / "chain.log").string();

  // Dataset: 3 patients keep one per split.
  CHECK(run("synth --out " + data +
                " --patients 3 --slices 4 --size 64 --seed 5",
            log) == 0);
  REQUIRE(fs::exists(ws / "data" / "dataset.json"));
  {
    const std::string text = read_file(log);
    CHECK(text.find("resolved config") != std::string::npos);
    CHECK(text.find("split test: 1 patients, 4 slices") != std::string::npos);
  }
  nlohmann::json manifest =
      nlohmann::json::parse(read_file(ws / "data" / "dataset.json"));
  CHECK(manifest["splits"]["train"].size() == 4);
  CHECK(manifest["splits"]["val"].size() == 4);
  CHECK(manifest["splits"]["test"].size() == 4);

  // Same seed, same bytes.
  const std::string data2 = (ws / "data2").string();
  CHECK(run("synth --out " + data2 +
                " --patients 3 --slices 4 --size 64 --seed 5",
            log) == 0);
  CHECK(read_file(ws / "data" / "dataset.json") ==
        read_file(ws / "data2" / "dataset.json"));
  const std::string rel = manifest["splits"]["test"][0]["image"];
  CHECK(read_file(ws / "data" / rel) == read_file(ws / "data2" / rel));

  // Train the tiny preset briefly.
  const std::string ckpt = (ws / "model.ckpt").string();
  CHECK(run("train --data " + data + " --out " + ckpt +
                " --tiny --epochs 2 --batch 8 --seed 3",
            log) == 0);
  REQUIRE(fs::exists(ckpt));
  REQUIRE(fs::exists(ckpt + ".history.csv"));
  {
    std::ifstream h(ckpt + ".history.csv");
    std::string line;
    std::getline(h, line);
    CHECK(line == "epoch,train_loss,val_loss");
    int rows = 0;
    while (std::getline(h, line))
      if (!line.empty()) ++rows;
    CHECK(rows == 2);
  }

  // Evaluate on the held-out split and write reports.
  const std::string rep = (ws / "rep").string();
  CHECK(run("eval --data " + data + " --ckpt " + ckpt +
                " --split test --report " + rep,
            log) == 0);
  {
    const std::string text = read_file(log);
    CHECK(text.find("Dice") != std::string::npos);
    CHECK(text.find("mIoU") != std::string::npos);
    CHECK(text.find("Precision") != std::string::npos);
    CHECK(text.find("slices 4") != std::string::npos);
  }
  REQUIRE(fs::exists(rep + ".csv"));
  REQUIRE(fs::exists(rep + ".json"));
  CHECK(read_file(rep + ".csv").rfind(
            "slice_id,dice,miou,recall,precision,f2,hd\n", 0) == 0);
  nlohmann::json repj = nlohmann::json::parse(read_file(rep + ".json"));
  CHECK(repj["slices"].size() == 4);
  CHECK(repj["mean"].contains("dice"));

  // Predict one slice and render the preview.
  const std::string img = (ws / "data" / rel).string();
  const std::string msk = (ws / "pred.msk").string();
  const std::string pgm = (ws / "pred.pgm").string();
  CHECK(run("predict --ckpt " + ckpt + " --in " + img + " --out " + msk +
                " --pgm " + pgm,
            log) == 0);
  {
    const std::string mask = read_file(msk);
    REQUIRE(mask.size() == 64u * 64u);
    for (unsigned char b : mask) CHECK((b == 0 || b == 1));
  }
  {
    const std::string preview = read_file(pgm);
    CHECK(preview.rfind("P5\n64 64\n255\n", 0) == 0);
    const std::string payload = preview.substr(std::string("P5\n64 64\n255\n").size());
    REQUIRE(payload.size() == 64u * 64u);
    for (unsigned char b : payload) CHECK((b == 0 || b == 255));
  }

  // Error paths against the live artifacts.
  CHECK(run("eval --data " + data + " --ckpt " + ckpt + " --split quux",
            log) == 1);
  CHECK(run("eval --data " + (ws / "nowhere").string() + " --ckpt " + ckpt,
            log) == 2);
  CHECK(run("train --data " + data + " --out " + ckpt + " --epochs 0", log) ==
        1);

  // A dataset at the wrong slice size must be rejected before evaluation.
  const std::string small = (ws / "small").string();
  CHECK(run("synth --out " + small +
                " --patients 3 --slices 1 --size 32 --seed 6",
            log) == 0);
  CHECK(run("eval --data " + small + " --ckpt " + ckpt, log) == 2);

  // Malformed slice blobs are environment errors.
  const std::string broken = (ws / "broken.img").string();
  {
    std::ofstream f(broken, std::ios::binary);
    f << "short";
  }
  CHECK(run("predict --ckpt " + ckpt + " --in " + broken + " --out " + msk,
            log) == 2);
}

TEST_CASE("count reports the frozen budgets on stdout") {
  const fs::path ws = workspace();
  const std::string log = (ws / "count.log").string();
  CHECK(run("count", log) == 0);
  {
    const std::string text = read_file(log);
    CHECK(text.find("45420289") != std::string::npos);
    CHECK(text.find("total") != std::string::npos);
  }
  CHECK(run("count --config tiny --input 64 --json", log) == 0);
  {
    const std::string text = read_file(log);
    // Skip the single-line config echo; the payload starts at column zero.
    const auto brace = text.find("\n{");
    REQUIRE(brace != std::string::npos);
    nlohmann::json j = nlohmann::json::parse(text.substr(brace + 1));
    CHECK(j["total_params"].get<std::int64_t>() == 97209);
    CHECK(j["total_macs"].get<std::int64_t>() == 112006144);
  }
  CHECK(run("count --config huge", log) == 1);
  CHECK(run("count --input 100", log) == 1);
}

TEST_CASE("gradcheck passes from the command line") {
  const std::string log = (workspace() / "gradcheck.log").string();
  CHECK(run("gradcheck --seed 42 --coords 8", log) == 0);
  const std::string text = read_file(log);
  CHECK(text.find("all blocks pass") != std::string::npos);
  CHECK(text.find("FAIL") == std::string::npos);
}
