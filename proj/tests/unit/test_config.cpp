#include <sstream>

#include "doctest.h"

#include "convgot/config.hpp"
#include "convgot/digest.hpp"
#include "convgot/errors.hpp"

using namespace convgot;

TEST_CASE("sha256 known vectors") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("engine defaults") {
  const EngineConfig c;
  CHECK(c.window == 90);
  CHECK(c.seed == 42);
  CHECK(c.perceiver_train.optimizer.lr == 3e-4);
  CHECK(c.perceiver_train.optimizer.weight_decay == 1e-2);
  CHECK(c.perceiver_train.optimizer.warmup_steps == 1000);
  CHECK(c.perceiver_train.optimizer.clip_norm == 1.0);
  CHECK(c.perceiver_train.epochs == 15);
  CHECK(c.perceiver_train.batch_size == 8);
  CHECK(c.selector.temperature == 1.0);
  CHECK(c.selector.lambda_count == 0.01);
  CHECK(c.selector.lambda_rank == 0.1);
  CHECK(c.backend == BackendKind::Template);
}

TEST_CASE("ini parsing and overrides") {
  std::istringstream in(
      "; desk run\n"
      "[engine]\n"
      "window = 30\n"
      "backend = trainable\n"
      "strict = false\n"
      "[perceiver_train]\n"
      "lr = 0.001\n");
  EngineConfig c = parse_engine_config(in);
  CHECK(c.window == 30);
  CHECK(c.backend == BackendKind::Trainable);
  CHECK_FALSE(c.strict);
  CHECK(c.perceiver_train.optimizer.lr == 0.001);
  apply_override(c, "selector.lambda_rank=0.5");
  CHECK(c.selector.lambda_rank == 0.5);
  apply_override(c, " engine.seed = 7 ");
  CHECK(c.seed == 7);
  CHECK_THROWS_AS(apply_override(c, "engine.nope=1"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "engine.window"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "engine.window=abc"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "engine.window=0"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "perceiver_train.lr=-1"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "engine.backend=gpt"), ConfigError);

  std::istringstream unknown("[engine]\nwindw = 3\n");
  CHECK_THROWS_AS(parse_engine_config(unknown), ConfigError);
  std::istringstream loose("window = 3\n");
  CHECK_THROWS_AS(parse_engine_config(loose), ConfigError);
}

TEST_CASE("canonical form round trips and hashes stably") {
  EngineConfig c;
  apply_override(c, "perceiver.beta=0.123456789012345");
  apply_override(c, "remote.endpoint=http://127.0.0.1:9/gen");
  const std::string text = canonical_ini(c);
  std::istringstream in(text);
  const EngineConfig back = parse_engine_config(in);
  CHECK(canonical_ini(back) == text);
  CHECK(config_hash(back) == config_hash(c));
  CHECK(back.perceiver.beta == c.perceiver.beta);
  apply_override(c, "engine.seed=43");
  CHECK(config_hash(c) != config_hash(back));
  CHECK(config_keys().size() > 40);
}
