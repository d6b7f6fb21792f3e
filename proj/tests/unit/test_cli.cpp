// Runs the cotasr executable and pins its exit codes and output files.
#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#ifndef COTASR_CLI_PATH
#error "COTASR_CLI_PATH must name the cotasr executable"
#endif

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "cotasr_cli_test";

struct Result {
  int code = -1;
  std::string out;
};

// Runs `cotasr <args>` with stderr folded into the captured output.
Result run(const std::string& args, const std::string& env = "") {
  const std::string cmd = (env.empty() ? "" : env + " ") + "'" COTASR_CLI_PATH "' " + args + " 2>&1";
  Result r;
  std::FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, p)) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string path(const std::string& leaf) { return (kRoot / leaf).string(); }

const std::string kSmallModel =
    " --set d_feat=4 --set d_enc=8 --set d_model=16 --set decoder_blocks=1 --set heads=2"
    " --set encoder_blocks=1 --set adapter_hidden=8 --set max_len=12";

struct Workspace {
  Workspace() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
  }
  ~Workspace() {
    std::error_code ec;
    fs::remove_all(kRoot, ec);
  }
};

std::size_t line_count(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

}  // namespace

TEST_CASE("cli end to end") {
  Workspace ws;

  SUBCASE("usage errors exit 2") {
    CHECK(run("").code == 2);
    CHECK(run("frobnicate").code == 2);
    CHECK(run("synth").code == 2);
    CHECK(run("synth --out " + path("c") + " --set bogus=1").code == 2);
    CHECK(run("synth --out " + path("c") + " --set n").code == 2);
    CHECK(run("synth --out " + path("c") + " --config /nonexistent.cfg").code == 2);
    const auto r = run("synth --out " + path("c") + " --lexicon /nonexistent/lex.txt");
    CHECK(r.code == 2);
    CHECK(r.out.find("/nonexistent/lex.txt") != std::string::npos);
    CHECK(run("synth --out " + path("c") + " --n 0").code == 2);
    CHECK(run("--help").code == 0);
  }

  SUBCASE("synth is deterministic and echoes its configuration") {
    REQUIRE(run("synth --n 6 --seed 3 --set d_feat=4 --out " + path("a")).code == 0);
    REQUIRE(run("synth --n 6 --seed 3 --set d_feat=4 --out " + path("b")).code == 0);
    for (const char* f : {"manifest.txt", "records.jsonl", "contexts.tsv", "config.txt"})
      CHECK(slurp(kRoot / "a" / f) == slurp(kRoot / "b" / f));
    CHECK(line_count(slurp(kRoot / "a" / "records.jsonl")) == 6);
    CHECK(slurp(kRoot / "a" / "config.txt").find("seed = 3\n") != std::string::npos);
  }

  SUBCASE("settings precedence") {
    { std::ofstream(path("run.cfg")) << "seed = 1\nn = 4\nd_feat = 4\n"; }
    REQUIRE(run("synth --config " + path("run.cfg") + " --out " + path("f")).code == 0);
    CHECK(slurp(kRoot / "f" / "config.txt").find("seed = 1\n") != std::string::npos);
    REQUIRE(run("synth --config " + path("run.cfg") + " --seed 2 --out " + path("g")).code == 0);
    CHECK(slurp(kRoot / "g" / "config.txt").find("seed = 2\n") != std::string::npos);
    REQUIRE(run("synth --config " + path("run.cfg") + " --seed 2 --out " + path("h"),
                "COTASR_SEED=9")
                .code == 0);
    const std::string echo = slurp(kRoot / "h" / "config.txt");
    CHECK(echo.find("seed = 9\n") != std::string::npos);
    CHECK(echo.find("n = 4\n") != std::string::npos);
    CHECK(run("synth --config " + path("run.cfg") + " --out " + path("i"), "COTASR_SEED=x").code == 2);
  }

  SUBCASE("train, transcribe, score") {
    REQUIRE(run("synth --n 8 --seed 1 --set d_feat=4 --out " + path("corpus")).code == 0);
    const std::string train = "train --corpus " + path("corpus") + " --out " + path("m.ckpt") +
                              " --stage1-steps 2 --stage2-steps 3 --warmup-steps 1 --batch-size 2" +
                              kSmallModel;
    REQUIRE(run(train).code == 0);
    const std::string log = slurp(path("m.ckpt.loss.tsv"));
    CHECK(log.rfind("step\tstage\tlr\tce\tctc\tjoint\n", 0) == 0);
    CHECK(line_count(log) == 6);
    CHECK(fs::exists(path("m.ckpt.config.txt")));

    // Same seed, same bytes.
    REQUIRE(run(train + " --loss-log " + path("again.tsv")).code == 0);
    const std::string first = slurp(path("m.ckpt"));
    REQUIRE(run("train --corpus " + path("corpus") + " --out " + path("m2.ckpt") +
                " --stage1-steps 2 --stage2-steps 3 --warmup-steps 1 --batch-size 2" + kSmallModel)
                .code == 0);
    CHECK(slurp(path("m2.ckpt")) == first);

    REQUIRE(run("transcribe --model " + path("m.ckpt") + " --corpus " + path("corpus") + " --out " +
                path("hyp.jsonl") + " --max-len 12")
                .code == 0);
    CHECK(line_count(slurp(path("hyp.jsonl"))) == 8);
    CHECK(fs::exists(path("hyp.jsonl.config.txt")));

    REQUIRE(run("transcribe --model " + path("m.ckpt") + " --corpus " + path("corpus") + " --out " +
                path("user.jsonl") + " --max-len 12 --user-context-file " +
                (kRoot / "corpus" / "contexts.tsv").string() + " --context-error-rate 0.25")
                .code == 0);
    std::istringstream user(slurp(path("user.jsonl")));
    for (std::string line; std::getline(user, line);)
      CHECK(nlohmann::json::parse(line).at("mode") == "user");

    CHECK(run("transcribe --model " + path("m.ckpt") + " --corpus " + path("corpus") + " --out " +
              path("x.jsonl") + " --context-error-rate 0.25")
              .code == 2);
    CHECK(run("transcribe --model " + path("missing.ckpt") + " --corpus " + path("corpus") +
              " --out " + path("x.jsonl"))
              .code == 1);

    // A perfect hypothesis file scores zero.
    {
      std::istringstream in(slurp(kRoot / "corpus" / "records.jsonl"));
      std::ofstream out(path("perfect.jsonl"));
      for (std::string line; std::getline(in, line);) {
        const auto j = nlohmann::json::parse(line);
        out << nlohmann::json{{"id", j.at("id")}, {"transcript", j.at("transcript")}}.dump() << "\n";
      }
    }
    const auto perfect = run("score --corpus " + path("corpus") + " --hyp " + path("perfect.jsonl") +
                             " --report " + path("report.json"));
    REQUIRE(perfect.code == 0);
    const auto rep = nlohmann::json::parse(slurp(path("report.json")));
    CHECK(rep.at("systems").at(0).at("sets").at(0).at("wer") == 0.0);
    CHECK(fs::exists(path("report.json.config.txt")));

    { std::ofstream(path("bias.txt")) << "the\n"; }
    const auto biased = run("score --corpus " + path("corpus") + " --hyp " + path("hyp.jsonl") +
                            " --bias-list " + path("bias.txt"));
    REQUIRE(biased.code == 0);
    CHECK(biased.out.find("B-WER") != std::string::npos);
    CHECK(biased.out.find("U-WER") != std::string::npos);
    CHECK(run("score --corpus " + path("corpus") + " --hyp " + path("hyp.jsonl") +
              " --subset homophone")
              .code == 0);
    CHECK(run("score --corpus " + path("corpus") + " --hyp " + path("hyp.jsonl") +
              " --subset nonsense")
              .code == 2);
    CHECK(run("score --corpus " + path("corpus") + " --hyp " + path("nothing.jsonl")).code == 1);
  }

  SUBCASE("EER without entities is reported as undefined") {
    REQUIRE(run("synth --n 5 --set d_feat=2 --entity-rate 0 --homophone-fraction 0 --out " +
                path("plain"))
                .code == 0);
    {
      std::istringstream in(slurp(kRoot / "plain" / "records.jsonl"));
      std::ofstream out(path("p.jsonl"));
      for (std::string line; std::getline(in, line);) {
        const auto j = nlohmann::json::parse(line);
        out << nlohmann::json{{"id", j.at("id")}, {"transcript", j.at("transcript")}}.dump() << "\n";
      }
    }
    const auto r = run("score --corpus " + path("plain") + " --hyp " + path("p.jsonl") +
                       " --report " + path("r.json"));
    CHECK(r.code == 0);
    CHECK(r.out.find("n/a") != std::string::npos);
    CHECK(nlohmann::json::parse(slurp(path("r.json"))).at("systems").at(0).at("sets").at(0).at(
              "eer").is_null());
  }

  SUBCASE("divergence exits 1 and keeps the partial loss log") {
    REQUIRE(run("synth --n 6 --set d_feat=4 --out " + path("dcorpus")).code == 0);
    const auto r = run("train --corpus " + path("dcorpus") + " --out " + path("d.ckpt") +
                       " --stage1-steps 0 --stage2-steps 40 --warmup-steps 1 --batch-size 2"
                       " --peak-lr 1e300 --set clip_norm=0" +
                       kSmallModel);
    CHECK(r.code == 1);
    CHECK(r.out.find("diverged") != std::string::npos);
    CHECK(fs::exists(path("d.ckpt.loss.tsv")));
    CHECK_FALSE(fs::exists(path("d.ckpt")));
    CHECK(line_count(slurp(path("d.ckpt.loss.tsv"))) >= 1);
  }

  SUBCASE("gradcheck") {
    const auto ok = run("gradcheck --instances 2 --out " + path("gc.txt"));
    CHECK(ok.code == 0);
    CHECK(ok.out.find("FAIL") == std::string::npos);
    for (const char* c : {"ctc", "ce", "adapter", "encoder", "decoder", "joint"})
      CHECK(ok.out.find(c) != std::string::npos);
    CHECK(slurp(path("gc.txt")) == ok.out);
    const auto bad = run("gradcheck --instances 2 --inject-fault decoder");
    CHECK(bad.code == 1);
    CHECK(bad.out.find("FAIL") != std::string::npos);
  }

  SUBCASE("ablate is reproducible") {
    const std::string args = " --train-n 6 --test-n 3 --stage1-steps 1 --stage2-steps 2"
                             " --warmup-steps 1 --batch-size 2" +
                             kSmallModel;
    const auto a = run("ablate --out " + path("ab1") + args);
    REQUIRE(a.code == 0);
    REQUIRE(run("ablate --out " + path("ab2") + args).code == 0);
    CHECK(slurp(kRoot / "ab1" / "ablation_metrics.txt") ==
          slurp(kRoot / "ab2" / "ablation_metrics.txt"));
    const std::string table = slurp(kRoot / "ab1" / "ablation.txt");
    for (const char* row : {"cot x ctc", "cot x linear", "plain x ctc", "plain x linear"})
      CHECK(table.find(row) != std::string::npos);
    CHECK(table.find("RTF") != std::string::npos);
    CHECK(fs::exists(kRoot / "ab1" / "ablation.json"));
    CHECK(fs::exists(kRoot / "ab1" / "config.txt"));
  }
}
