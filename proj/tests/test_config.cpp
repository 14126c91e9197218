#include "doctest.h"

#include "entk/config.hpp"
#include "entk/errors.hpp"
#include "entk/pipeline.hpp"

using namespace entk;

TEST_CASE("presets are valid and carry the documented settings") {
  for (const auto& name : preset_names()) {
    const ExperimentConfig cfg = preset_config(name);
    CHECK_NOTHROW(validate(cfg));
    CHECK(cfg.preset == name);
  }
  const auto dense = preset_config("tms-dense"), sparse = preset_config("tms-sparse");
  CHECK(dense.sparsity == 0.3);
  CHECK(sparse.sparsity == 0.9);
  CHECK(dense.n == 50);
  CHECK(dense.train.hidden == 10);
  CHECK(dense.train.lr == 1e-3);
  const auto p29 = preset_config("modadd-p29");
  CHECK(p29.p == 29);
  CHECK(p29.train.optimizer == Optimizer::adamw);
  CHECK(p29.train.weight_decay == 1.0);
  CHECK(p29.train.hidden == 512);
  CHECK(preset_config("modadd-small").p == 13);
  CHECK_THROWS_AS(preset_config("nope"), ConfigError);
}

TEST_CASE("INI parsing applies keys on top of a preset") {
  const auto base = preset_config("modadd-small");
  const auto cfg = parse_config("[experiment]\nseed = 7\n[data]\nalpha = 0.5\n[training]\nepochs = 12\nlr = 0.02\n", base);
  CHECK(cfg.seed == 7);
  CHECK(cfg.alpha == 0.5);
  CHECK(cfg.train.epochs == 12);
  CHECK(cfg.train.lr == 0.02);
  CHECK(cfg.p == 13);
  // A preset key inside the file replaces the base.
  CHECK(parse_config("[experiment]\npreset = tms-sparse\n", base).experiment == DatasetKind::tms);
  // Switching kind resets kind-specific training defaults.
  const auto tms = parse_config("[experiment]\nkind = tms\n", base);
  CHECK(tms.train.hidden == 10);
  CHECK(tms.kernel_specs == default_kernel_specs(tms));
}

TEST_CASE("INI parsing rejects bad input") {
  const auto base = preset_config("modadd-small");
  CHECK_THROWS_AS(parse_config("[training]\nlearning_rate = 1\n", base), ConfigError);
  CHECK_THROWS_AS(parse_config("[training]\nepochs = many\n", base), ConfigError);
  CHECK_THROWS_AS(parse_config("[training]\nepochs = 3x\n", base), ConfigError);
  CHECK_THROWS_AS(parse_config("[training]\nearly_stop = maybe\n", base), ConfigError);
  CHECK_THROWS_AS(parse_config("[experiment]\nkind = cnn\n", base), ConfigError);
  CHECK_THROWS_AS(parse_config("epochs = 3\n", base), ConfigError);
  CHECK_THROWS_AS(validate(parse_config("[kernel]\nspecs = diagonal/all\n", base)), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/x.ini", base), ConfigError);
}

TEST_CASE("validation") {
  auto expect_bad = [](auto mutate) {
    ExperimentConfig cfg = preset_config("modadd-small");
    mutate(cfg);
    CHECK_THROWS_AS(validate(cfg), ConfigError);
  };
  expect_bad([](ExperimentConfig& c) { c.alpha = 1.0; });
  expect_bad([](ExperimentConfig& c) { c.p = 1; });
  expect_bad([](ExperimentConfig& c) { c.train.lr = -1.0; });
  expect_bad([](ExperimentConfig& c) { c.train.epochs = -1; });
  expect_bad([](ExperimentConfig& c) { c.checkpoint_every = 0; });
  expect_bad([](ExperimentConfig& c) { c.kernel_specs = {"class_trace/all/beta=0.3"}; });
  expect_bad([](ExperimentConfig& c) { c.kernel_specs = {"per_class:13/all"}; });
  expect_bad([](ExperimentConfig& c) { c.kernel_specs.clear(); });
  expect_bad([](ExperimentConfig& c) { c.steps = {"plots"}; });
  expect_bad([](ExperimentConfig& c) { c.cliff_threshold = 1.0; });
  expect_bad([](ExperimentConfig& c) { c.eval_set = "test"; });
  ExperimentConfig tms = preset_config("tms-dense");
  tms.sparsity = 1.0;
  CHECK_THROWS_AS(validate(tms), ConfigError);
  tms = preset_config("tms-dense");
  tms.kernel_specs = {"flattened/layer1"};
  CHECK_THROWS_AS(validate(tms), ConfigError);
}

TEST_CASE("to_ini round-trips and the hash tracks content") {
  for (const auto& name : preset_names()) {
    ExperimentConfig cfg = preset_config(name);
    cfg.seed = 42;
    cfg.train.lr = 0.0123;
    cfg.betas = {0.5};
    cfg.kernel_specs = default_kernel_specs(cfg);
    const auto back = parse_config(to_ini(cfg), ExperimentConfig{});
    CHECK(to_ini(back) == to_ini(cfg));
    CHECK(config_hash(back) == config_hash(cfg));
    ExperimentConfig other = cfg;
    other.seed = 43;
    CHECK(config_hash(other) != config_hash(cfg));
  }
}

TEST_CASE("kernel spec strings") {
  const KernelSpec a = parse_kernel_spec("per_class:3/layer2");
  CHECK(a.collapse == Collapse::per_class);
  CHECK(a.cls == 3);
  CHECK(a.layers == LayerSel::layer2);
  const KernelSpec b = parse_kernel_spec("flattened/all/beta=0.3");
  CHECK(b.collapse == Collapse::flattened);
  CHECK(b.beta == 0.3);
  CHECK(parse_kernel_spec("class_trace").layers == LayerSel::all);
  CHECK_THROWS_AS(parse_kernel_spec("flattened/all/gamma=1"), ConfigError);
  CHECK_THROWS_AS(parse_kernel_spec("a/b/c/d"), ConfigError);
  CHECK_THROWS_AS(parse_kernel_spec("per_class:x/all"), ConfigError);
}

TEST_CASE("checkpoint schedule and plan") {
  ExperimentConfig cfg = preset_config("modadd-small");
  cfg.train.epochs = 12;
  cfg.checkpoint_every = 5;
  CHECK(checkpoint_schedule(cfg) == std::vector<int>{0, 5, 10, 12});
  cfg.train.epochs = 10;
  CHECK(checkpoint_schedule(cfg) == std::vector<int>{0, 5, 10});
  const auto steps = plan("all", cfg);
  CHECK(steps.size() >= 4);
  CHECK(plan("train", cfg).size() < steps.size());
}
