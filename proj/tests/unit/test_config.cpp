#include <doctest.h>

#include <fstream>

#include "cotasr/config.hpp"
#include "cotasr/errors.hpp"
#include "fixtures.hpp"

using namespace cotasr;
using namespace cotasr::config;

TEST_CASE("key value parsing") {
  const auto kv = parse_key_values("# comment\n\nseed = 7\n  n=10  # trailing\nlexicon = a b\n");
  CHECK(kv.at("seed") == "7");
  CHECK(kv.at("n") == "10");
  CHECK(kv.at("lexicon") == "a b");
  CHECK(kv.size() == 3);
  CHECK_THROWS_AS(parse_key_values("seed 7\n"), ConfigError);
  CHECK_THROWS_AS(parse_key_values("seed = 1\nseed = 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_key_values(" = 2\n"), ConfigError);
  try {
    load_key_values("/nonexistent/run.cfg");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("/nonexistent/run.cfg") != std::string::npos);
  }
}

TEST_CASE("run config keys") {
  RunConfig c;
  c.set("seed", "9");
  c.set("n", "12");
  c.set("d_feat", "8");
  c.set("adapter", "linear");
  c.set("mode", "plain");
  c.set("lambda", "0.25");
  c.set("tau", "0.1");
  c.set("renormalize", "true");
  CHECK(c.seed == 9);
  CHECK(c.corpus.n_utterances == 12);
  CHECK(c.corpus.d_feat == 8);
  CHECK(c.model.d_feat == 8);
  CHECK(c.model.adapter_kind == adapter::Kind::Linear);
  CHECK(c.mode == train::Mode::Plain);
  CHECK(c.train.lambda == 0.25);
  CHECK(c.model.ctc_options.tau == 0.1);
  CHECK(c.model.ctc_options.renormalize);
  CHECK(c.corpus_config().seed == 9);
  CHECK(c.train_config().seed == 9);

  CHECK_THROWS_AS(c.set("nonsense", "1"), ConfigError);
  CHECK_THROWS_AS(c.set("vocab", "5"), ConfigError);
  CHECK_THROWS_AS(c.set("n", "ten"), ConfigError);
  CHECK_THROWS_AS(c.set("n", "-1"), ConfigError);
  CHECK_THROWS_AS(c.set("adapter", "conv"), ConfigError);
  CHECK_THROWS_AS(c.set("lambda", "0.5x"), ConfigError);
  // An unset lexicon (the built-in one) is the only key left out of the echo.
  for (const auto& key : known_keys())
    if (key != "lexicon") CHECK(c.to_text().find(key + " = ") != std::string::npos);
}

TEST_CASE("echo round trip") {
  RunConfig c;
  c.apply({{"seed", "3"}, {"peak_lr", "0.001"}, {"noise_sigma", "0.2"}, {"heads", "2"}});
  RunConfig d;
  d.apply(parse_key_values(c.to_text()));
  CHECK(d.to_text() == c.to_text());
  CHECK(d.train.peak_lr == 0.001);

  const auto m = fixtures::small_model();
  CHECK(model_config_from_text(model_config_to_text(m)) == m);
}

TEST_CASE("validation") {
  RunConfig c;
  CHECK_NOTHROW(c.validate());
  c.set("d_model", "30");
  c.set("heads", "4");
  CHECK_THROWS_AS(c.validate(), ConfigError);
  RunConfig e;
  e.set("context_error_rate", "1.5");
  CHECK_THROWS_AS(e.validate(), ConfigError);
  RunConfig f;
  f.set("warmup_steps", "100000");
  CHECK_THROWS_AS(f.validate(), ConfigError);
}
