// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "faceguard/attacks/attacks.hpp"
#include "faceguard/dataio/dataset.hpp"
#include "faceguard/trainer/trainer.hpp"
#include "support/toy_data.hpp"

using namespace faceguard;
namespace fs = std::filesystem;

namespace {

constexpr std::size_t kHw = 16;

struct RunResult {
  int exit_code;
  std::string output;  // stdout + stderr
};

RunResult run_cli(const std::string& args) {
  const fs::path out_file =
      fs::temp_directory_path() / "faceguard_tests" / "cli_capture.txt";
  fs::create_directories(out_file.parent_path());
  const std::string cmd =
      std::string(FACEGUARD_CLI_PATH) + " " + args + " > " + out_file.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream f(out_file);
  std::stringstream ss;
  ss << f.rdbuf();
  return {WEXITSTATUS(status), ss.str()};
}

// One shared toy workspace: dataset, config, trained matcher + defense.
struct CliWorkspace {
  fs::path root;
  fs::path config;
  fs::path matcher_ckpt;
  fs::path defense_ckpt;
  fs::path sample_image;

  CliWorkspace() {
    root = fs::temp_directory_path() / "faceguard_tests" / "cli_ws";
    fs::remove_all(root);
    toy::ToyOptions opt;
    opt.subjects = 2;
    opt.images_per_subject = 6;
    opt.hw = kHw;
    opt.seed = 23;
    toy::write_toy_dataset(root / "data", opt);
    sample_image = root / "data" / "subj0" / "img000.png";

    config = root / "run.cfg";
    std::ofstream cfg(config);
    cfg << "data.root = " << (root / "data").string() << "\n"
        << "data.manifest = " << (root / "data" / "manifest.tsv").string() << "\n"
        << "data.image_size = " << kHw << "\n"
        << "matcher.spec = d8\n"
        << "matcher.embedding_dim = 8\n"
        << "matcher.epochs = 3\n"
        << "matcher.batch_size = 4\n"
        << "net.generator = c7s1-4,d8,R8,u4,c7s1-3\n"
        << "net.discriminator = d8,d16\n"
        << "net.detector = d8,d16,fc8,fc1\n"
        << "net.latent_dim = 8\n"
        << "train.batch_size = 4\n"
        << "train.iterations = 2\n"
        << "train.checkpoint_interval = 100\n"
        << "paths.out = " << (root / "out_matcher").string() << "\n";
    cfg.close();
    matcher_ckpt = root / "out_matcher" / "matcher.ckpt";
    defense_ckpt = root / "out_defense" / "defense_final.ckpt";

    RunResult m = run_cli("train-matcher --config " + config.string());
    REQUIRE(m.exit_code == 0);
    REQUIRE(fs::exists(matcher_ckpt));

    RunResult d = run_cli("train-defense --config " + config.string() + " --matcher " +
                          matcher_ckpt.string() + " --out " + (root / "out_defense").string());
    REQUIRE(d.exit_code == 0);
    REQUIRE(fs::exists(defense_ckpt));
  }
};

CliWorkspace& workspace() {
  static CliWorkspace ws;
  return ws;
}

}  // namespace

TEST_CASE("missing config file exits 2 and names the path") {
  RunResult r = run_cli("train-matcher --config /nonexistent/nope.cfg");
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("/nonexistent/nope.cfg") != std::string::npos);
}

TEST_CASE("unknown config keys are rejected") {
  const fs::path bad = fs::temp_directory_path() / "faceguard_tests" / "bad.cfg";
  fs::create_directories(bad.parent_path());
  std::ofstream(bad) << "train.iterations = 1\nnot.a.key = 5\n";
  RunResult r = run_cli("train-matcher --config " + bad.string());
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("not.a.key") != std::string::npos);
}

TEST_CASE("matcher training is reproducible byte-for-byte under --seed") {
  CliWorkspace& ws = workspace();
  const fs::path out1 = ws.root / "m_seed1";
  const fs::path out2 = ws.root / "m_seed2";
  RunResult r1 = run_cli("train-matcher --config " + ws.config.string() + " --seed 7 --out " +
                         out1.string());
  RunResult r2 = run_cli("train-matcher --config " + ws.config.string() + " --seed 7 --out " +
                         out2.string());
  REQUIRE(r1.exit_code == 0);
  REQUIRE(r2.exit_code == 0);
  auto bytes = [](const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
  };
  REQUIRE(bytes(out1 / "matcher.ckpt") == bytes(out2 / "matcher.ckpt"));
}

TEST_CASE("train-defense writes a one-row log for --iterations 1") {
  CliWorkspace& ws = workspace();
  const fs::path out = ws.root / "defense_one";
  RunResult r = run_cli("train-defense --config " + ws.config.string() + " --matcher " +
                        ws.matcher_ckpt.string() + " --iterations 1 --out " + out.string());
  REQUIRE(r.exit_code == 0);
  std::ifstream log(out / "train_log.csv");
  std::string line;
  std::size_t rows = 0;
  while (std::getline(log, line)) ++rows;
  CHECK(rows == 2);  // header + one record
}

TEST_CASE("train-defense resume continues the iteration numbering") {
  CliWorkspace& ws = workspace();
  const fs::path out = ws.root / "defense_resume";
  RunResult r1 = run_cli("train-defense --config " + ws.config.string() + " --matcher " +
                         ws.matcher_ckpt.string() + " --iterations 2 --out " + out.string());
  REQUIRE(r1.exit_code == 0);
  RunResult r2 = run_cli("train-defense --config " + ws.config.string() + " --matcher " +
                         ws.matcher_ckpt.string() + " --iterations 4 --out " + out.string() +
                         " --resume " + (out / "defense_final.ckpt").string());
  REQUIRE(r2.exit_code == 0);
  std::ifstream log(out / "train_log.csv");
  std::string line;
  std::vector<std::string> rows;
  while (std::getline(log, line)) rows.push_back(line);
  REQUIRE(rows.size() == 5);  // header + 4 records
  CHECK(rows[1].rfind("1,", 0) == 0);
  CHECK(rows[4].rfind("4,", 0) == 0);
}

TEST_CASE("negative loss weight exits 2") {
  CliWorkspace& ws = workspace();
  const fs::path bad = ws.root / "bad_lambda.cfg";
  fs::copy_file(ws.config, bad, fs::copy_options::overwrite_existing);
  std::ofstream(bad, std::ios::app) << "loss.lambda_div = -1\n";
  RunResult r = run_cli("train-defense --config " + bad.string() + " --matcher " +
                        ws.matcher_ckpt.string());
  CHECK(r.exit_code == 2);
}

TEST_CASE("train-defense without a matcher checkpoint exits 2") {
  CliWorkspace& ws = workspace();
  RunResult r = run_cli("train-defense --config " + ws.config.string() + " --matcher " +
                        (ws.root / "ghost.ckpt").string());
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("ghost.ckpt") != std::string::npos);
}

TEST_CASE("detect prints a score and a verdict") {
  CliWorkspace& ws = workspace();
  RunResult r = run_cli("detect --checkpoint " + ws.defense_ckpt.string() + " --image " +
                        ws.sample_image.string());
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("score") != std::string::npos);
  CHECK((r.output.find("verdict real") != std::string::npos ||
         r.output.find("verdict adversarial") != std::string::npos));
}

TEST_CASE("purify with an identity-initialized purifier reproduces the input") {
  // Fresh defense state: zero-initialized purifier head -> zero mask.
  CliWorkspace& ws = workspace();
  const fs::path out = ws.root / "defense_init";
  RunConfig cfg = RunConfig::load(ws.config.string());
  DefenseTrainer trainer(cfg, Matcher::load(ws.matcher_ckpt));
  fs::create_directories(out);
  trainer.save_checkpoint(out / "init.ckpt");

  const fs::path purified = ws.root / "purified.png";
  RunResult r = run_cli("purify --checkpoint " + (out / "init.ckpt").string() + " --image " +
                        ws.sample_image.string() + " --out " + purified.string());
  REQUIRE(r.exit_code == 0);
  REQUIRE(fs::exists(purified));
  RawImage a = read_raw_image(ws.sample_image, 0);
  RawImage b = read_raw_image(purified, 0);
  REQUIRE(a.pixels == b.pixels);
}

TEST_CASE("localize writes a heatmap overlay") {
  CliWorkspace& ws = workspace();
  const fs::path heat = ws.root / "heat.png";
  RunResult r = run_cli("localize --checkpoint " + ws.defense_ckpt.string() + " --image " +
                        ws.sample_image.string() + " --out " + heat.string());
  REQUIRE(r.exit_code == 0);
  CHECK(fs::exists(heat));
  CHECK(r.output.find(heat.string()) != std::string::npos);
}

TEST_CASE("mismatched image size vs checkpoint exits 2") {
  CliWorkspace& ws = workspace();
  const fs::path big = ws.root / "big.png";
  RawImage raw;
  raw.height = raw.width = 32;
  raw.pixels.assign(raw.size(), 100);
  write_raw_image(big, raw);
  RunResult r = run_cli("detect --checkpoint " + ws.defense_ckpt.string() + " --image " +
                        big.string());
  CHECK(r.exit_code == 2);
}

TEST_CASE("attack command writes images and a manifest") {
  CliWorkspace& ws = workspace();
  const fs::path out = ws.root / "attacked";
  RunResult r = run_cli("attack --config " + ws.config.string() + " --matcher " +
                        ws.matcher_ckpt.string() + " --kind fgsm --eps 0.0625 --out " +
                        out.string());
  REQUIRE(r.exit_code == 0);
  REQUIRE(fs::exists(out / "manifest.tsv"));
  Dataset real = load_dataset(ws.root / "data", ws.root / "data" / "manifest.tsv", kHw);
  auto groups = ingest_external_attacks(out, out / "manifest.tsv", kHw, &real);
  REQUIRE(groups.size() == 1);
  CHECK(groups.begin()->first == "fgsm");
  CHECK(groups.begin()->second.images.size() == real.images.size());
}

TEST_CASE("evaluate emits a JSON report; no attacks means a real-only section") {
  CliWorkspace& ws = workspace();
  const fs::path out = ws.root / "eval_out";
  RunResult r = run_cli("evaluate --config " + ws.config.string() + " --checkpoint " +
                        ws.defense_ckpt.string() + " --out " + out.string());
  REQUIRE(r.exit_code == 0);
  REQUIRE(fs::exists(out / "eval_report.json"));
  std::ifstream f(out / "eval_report.json");
  nlohmann::json j;
  f >> j;
  CHECK(j.contains("verification"));
  CHECK(j["verification"]["real"].contains("tar_no_defense"));
  CHECK_FALSE(j.contains("attacks"));

  const fs::path att = ws.root / "attacked";
  if (fs::exists(att / "manifest.tsv")) {
    RunResult r2 = run_cli("evaluate --config " + ws.config.string() + " --checkpoint " +
                           ws.defense_ckpt.string() + " --attack-dir " + att.string() +
                           " --out " + (ws.root / "eval_out2").string());
    REQUIRE(r2.exit_code == 0);
    std::ifstream f2(ws.root / "eval_out2" / "eval_report.json");
    nlohmann::json j2;
    f2 >> j2;
    CHECK(j2["attacks"].contains("fgsm"));
  }
}
