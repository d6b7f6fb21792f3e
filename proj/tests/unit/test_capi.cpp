// Exercises the shared library through its C header only.
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cotasr/cotasr.h"

namespace fs = std::filesystem;

namespace {

struct Dir {
  fs::path path;
  explicit Dir(const std::string& name)
      : path(fs::temp_directory_path() / ("cotasr_capi_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~Dir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string operator/(const std::string& leaf) const { return (path / leaf).string(); }
};

cotasr_config* small_config() {
  cotasr_config* cfg = nullptr;
  REQUIRE(cotasr_config_create(&cfg) == COTASR_OK);
  const std::vector<std::pair<const char*, const char*>> settings = {
      {"seed", "5"},          {"n", "10"},           {"d_feat", "4"},
      {"d_enc", "8"},         {"d_model", "16"},     {"decoder_blocks", "1"},
      {"heads", "2"},         {"encoder_blocks", "1"}, {"adapter_hidden", "8"},
      {"stage1_steps", "2"},  {"stage2_steps", "3"}, {"warmup_steps", "1"},
      {"batch_size", "2"},    {"max_len", "12"}};
  for (const auto& [k, v] : settings) REQUIRE(cotasr_config_set(cfg, k, v) == COTASR_OK);
  return cfg;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string take(char* s) {
  std::string out = s != nullptr ? s : "";
  cotasr_string_free(s);
  return out;
}

void count_steps(const cotasr_step_record*, void* user) { ++*static_cast<int*>(user); }

}  // namespace

TEST_CASE("status names and errors") {
  CHECK(std::string(cotasr_version()).size() > 0);
  CHECK(std::string(cotasr_status_name(COTASR_OK)) == "ok");
  CHECK(std::string(cotasr_status_name(COTASR_ERR_CHECKPOINT)) == "checkpoint error");

  cotasr_config* cfg = nullptr;
  REQUIRE(cotasr_config_create(&cfg) == COTASR_OK);
  CHECK(cotasr_config_set(cfg, "bogus", "1") == COTASR_ERR_CONFIG);
  CHECK(std::string(cotasr_last_error()).find("bogus") != std::string::npos);
  CHECK(cotasr_config_set(cfg, "seed", "7") == COTASR_OK);
  CHECK(std::string(cotasr_last_error()).empty());
  CHECK(cotasr_config_load_file(cfg, "/nonexistent.cfg") == COTASR_ERR_CONFIG);
  CHECK(cotasr_config_set(cfg, nullptr, "1") == COTASR_ERR_INPUT);

  cotasr_corpus* corpus = nullptr;
  CHECK(cotasr_corpus_load("/nonexistent/corpus", &corpus) == COTASR_ERR_IO);
  CHECK(corpus == nullptr);

  Dir dir("errors");
  { std::ofstream(dir / "junk.ckpt") << "not a checkpoint"; }
  cotasr_model* model = nullptr;
  CHECK(cotasr_model_load((dir / "junk.ckpt").c_str(), &model) == COTASR_ERR_CHECKPOINT);
  CHECK(model == nullptr);

  char* text = nullptr;
  REQUIRE(cotasr_config_text(cfg, &text) == COTASR_OK);
  CHECK(take(text).find("seed = 7") != std::string::npos);
  cotasr_config_destroy(cfg);
}

TEST_CASE("synth, train, transcribe and score") {
  Dir dir("pipeline");
  cotasr_config* cfg = small_config();
  cotasr_corpus* corpus = nullptr;
  REQUIRE(cotasr_corpus_synth(cfg, &corpus) == COTASR_OK);
  CHECK(cotasr_corpus_size(corpus) == 10);
  REQUIRE(cotasr_corpus_save(corpus, (dir / "corpus").c_str()) == COTASR_OK);
  cotasr_corpus* loaded = nullptr;
  REQUIRE(cotasr_corpus_load((dir / "corpus").c_str(), &loaded) == COTASR_OK);
  CHECK(cotasr_corpus_size(loaded) == 10);

  int steps = 0;
  cotasr_model* model = nullptr;
  REQUIRE(cotasr_model_train(cfg, loaded, count_steps, &steps, &model) == COTASR_OK);
  CHECK(steps == 5);
  CHECK(cotasr_model_parameter_count(model) > 0);
  REQUIRE(cotasr_model_save(model, (dir / "m.ckpt").c_str()) == COTASR_OK);
  cotasr_model* reloaded = nullptr;
  REQUIRE(cotasr_model_load((dir / "m.ckpt").c_str(), &reloaded) == COTASR_OK);
  CHECK(cotasr_model_parameter_count(reloaded) == cotasr_model_parameter_count(model));

  // Decoding the reloaded model gives the same tokens as the original.
  REQUIRE(cotasr_transcribe(cfg, model, loaded, nullptr, (dir / "a.jsonl").c_str()) == COTASR_OK);
  REQUIRE(cotasr_transcribe(cfg, reloaded, loaded, nullptr, (dir / "b.jsonl").c_str()) ==
          COTASR_OK);
  auto strip_time = [&](const std::string& path) {
    std::vector<std::string> out;
    std::ifstream in(path);
    for (std::string line; std::getline(in, line);) {
      auto j = nlohmann::json::parse(line);
      CHECK(j.at("mode") == "self");
      j.erase("decode_seconds");
      out.push_back(j.dump());
    }
    return out;
  };
  const auto a = strip_time(dir / "a.jsonl");
  CHECK(a.size() == 10);
  CHECK(a == strip_time(dir / "b.jsonl"));

  // User-guided decoding with reference contexts.
  REQUIRE(cotasr_corpus_write_contexts(loaded, (dir / "ctx.tsv").c_str()) == COTASR_OK);
  REQUIRE(cotasr_transcribe(cfg, model, loaded, (dir / "ctx.tsv").c_str(),
                            (dir / "user.jsonl").c_str()) == COTASR_OK);
  {
    std::ifstream in(dir / "user.jsonl");
    std::string line;
    REQUIRE(std::getline(in, line));
    CHECK(nlohmann::json::parse(line).at("mode") == "user");
  }
  // Corruption without a context file is a configuration mistake.
  REQUIRE(cotasr_config_set(cfg, "context_error_rate", "0.25") == COTASR_OK);
  CHECK(cotasr_transcribe(cfg, model, loaded, nullptr, (dir / "c.jsonl").c_str()) ==
        COTASR_ERR_CONFIG);

  // Perfect hypotheses built from the corpus file score zero.
  {
    std::ifstream in(dir / "corpus/records.jsonl");
    std::ofstream out(dir / "perfect.jsonl");
    for (std::string line; std::getline(in, line);) {
      const auto j = nlohmann::json::parse(line);
      out << nlohmann::json{{"id", j.at("id")}, {"transcript", j.at("transcript")}}.dump() << "\n";
    }
  }
  char* table = nullptr;
  REQUIRE(cotasr_score(loaded, (dir / "perfect.jsonl").c_str(), nullptr, 0,
                       (dir / "report.json").c_str(), &table) == COTASR_OK);
  const std::string t = take(table);
  CHECK(t.find("0.00") != std::string::npos);
  const auto report = nlohmann::json::parse(slurp(dir / "report.json"));
  CHECK(report.at("systems").at(0).at("sets").at(0).at("wer") == 0.0);

  { std::ofstream(dir / "bias.txt") << "the\n"; }
  REQUIRE(cotasr_score(loaded, (dir / "a.jsonl").c_str(), (dir / "bias.txt").c_str(), 0, nullptr,
                       &table) == COTASR_OK);
  const std::string biased = take(table);
  CHECK(biased.find("B-WER") != std::string::npos);
  CHECK(biased.find("U-WER") != std::string::npos);
  CHECK(cotasr_score(loaded, (dir / "missing.jsonl").c_str(), nullptr, 0, nullptr, nullptr) ==
        COTASR_ERR_IO);

  cotasr_model_destroy(reloaded);
  cotasr_model_destroy(model);
  cotasr_corpus_destroy(loaded);
  cotasr_corpus_destroy(corpus);
  cotasr_config_destroy(cfg);
}

TEST_CASE("plain models reject user contexts") {
  Dir dir("plain");
  cotasr_config* cfg = small_config();
  REQUIRE(cotasr_config_set(cfg, "mode", "plain") == COTASR_OK);
  cotasr_corpus* corpus = nullptr;
  REQUIRE(cotasr_corpus_synth(cfg, &corpus) == COTASR_OK);
  cotasr_model* model = nullptr;
  REQUIRE(cotasr_model_train(cfg, corpus, nullptr, nullptr, &model) == COTASR_OK);
  REQUIRE(cotasr_corpus_write_contexts(corpus, (dir / "ctx.tsv").c_str()) == COTASR_OK);
  CHECK(cotasr_transcribe(cfg, model, corpus, (dir / "ctx.tsv").c_str(),
                          (dir / "out.jsonl").c_str()) == COTASR_ERR_INPUT);
  cotasr_model_destroy(model);
  cotasr_corpus_destroy(corpus);
  cotasr_config_destroy(cfg);
}

TEST_CASE("divergence keeps the completed steps") {
  cotasr_config* cfg = small_config();
  REQUIRE(cotasr_config_set(cfg, "peak_lr", "1e300") == COTASR_OK);
  REQUIRE(cotasr_config_set(cfg, "clip_norm", "0") == COTASR_OK);
  REQUIRE(cotasr_config_set(cfg, "stage2_steps", "40") == COTASR_OK);
  cotasr_corpus* corpus = nullptr;
  REQUIRE(cotasr_corpus_synth(cfg, &corpus) == COTASR_OK);
  int steps = 0;
  cotasr_model* model = nullptr;
  CHECK(cotasr_model_train(cfg, corpus, count_steps, &steps, &model) == COTASR_ERR_DIVERGED);
  CHECK(model == nullptr);
  CHECK(std::string(cotasr_last_error()).find("step " + std::to_string(steps + 1)) !=
        std::string::npos);
  cotasr_corpus_destroy(corpus);
  cotasr_config_destroy(cfg);
}

TEST_CASE("gradient check through the C API") {
  char* table = nullptr;
  int passed = -1;
  REQUIRE(cotasr_gradcheck(3, 1, nullptr, &table, &passed) == COTASR_OK);
  CHECK(passed == 1);
  CHECK(take(table).find("PASS") != std::string::npos);
  REQUIRE(cotasr_gradcheck(3, 1, "ctc", &table, &passed) == COTASR_OK);
  CHECK(passed == 0);
  CHECK(take(table).find("FAIL") != std::string::npos);
  CHECK(cotasr_gradcheck(3, 1, "nonexistent", nullptr, &passed) == COTASR_ERR_INPUT);
}
