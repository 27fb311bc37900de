#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "pseg/op_checks.hpp"
#include "pseg/train.hpp"

using namespace pseg;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

KeyValues tiny_cfg_kv() {
  return KeyValues::parse_string(
      "image_extent = 32\n"
      "patch = 8\n"
      "embed_len = 16\n"
      "heads = 4\n"
      "blocks = 2\n"
      "epochs = 1\n"
      "batch = 4\n"
      "seed = 3\n"
      "train_fraction = 0.75\n");
}

Dataset tiny_dataset(std::size_t count = 8, std::uint64_t seed = 5) {
  SynthSpec spec;
  spec.extent = 32;
  spec.count = count;
  spec.seed = seed;
  spec.noise = 0.02;
  return gen_dataset(spec);
}

}  // namespace

TEST_CASE("config: parse, comments, defaults") {
  KeyValues kv = KeyValues::parse_string(
      "# a comment\n"
      "epochs = 3   # trailing comment\n"
      "\n"
      "lr = 0.001\n");
  CHECK(kv.get_size("epochs", 0) == 3);
  CHECK(kv.get_f64("lr", 0) == 0.001);
  CHECK(kv.get_size("batch", 8) == 8);
}

TEST_CASE("config: unknown keys are errors") {
  KeyValues kv = KeyValues::parse_string("epochs = 3\nnot_a_key = 1\n");
  CHECK_THROWS_AS(train_config_from(kv), ConfigError);
}

TEST_CASE("config: malformed lines, duplicates, bad values") {
  CHECK_THROWS_AS(KeyValues::parse_string("no equals sign here\n"), ConfigError);
  CHECK_THROWS_AS(KeyValues::parse_string("a = 1\na = 2\n"), ConfigError);
  KeyValues kv = KeyValues::parse_string("epochs = many\n");
  CHECK_THROWS_AS(kv.get_size("epochs", 0), ConfigError);
  KeyValues kb = KeyValues::parse_string("space_depth = perhaps\n");
  CHECK_THROWS_AS(kb.get_bool("space_depth", false), ConfigError);
}

TEST_CASE("prompt settings parse both spellings") {
  CHECK(prompt_setting_from_string("1point") == PromptSetting::one_point);
  CHECK(prompt_setting_from_string("1-point") == PromptSetting::one_point);
  CHECK(prompt_setting_from_string("bbox0.75") == PromptSetting::bbox75);
  CHECK_THROWS_AS(prompt_setting_from_string("5points"), ConfigError);
}

TEST_CASE("make_prompts maps the four settings") {
  BinaryMask m({16, 16});
  for (long r = 4; r < 12; ++r) {
    for (long c = 4; c < 12; ++c) m.bits[r * 16 + c] = 1;
  }
  PromptSet p1 = make_prompts(m, PromptSetting::one_point, 1);
  CHECK(p1.clicks.size() == 1);
  CHECK_FALSE(p1.box.has_value());
  PromptSet p3 = make_prompts(m, PromptSetting::three_points, 1);
  CHECK(p3.clicks.size() == 3);
  PromptSet pb = make_prompts(m, PromptSetting::bbox50, 1);
  CHECK(pb.clicks.empty());
  CHECK(pb.box.has_value());
  PromptSet pm = make_prompts(m, PromptSetting::mixed, 2);
  CHECK_FALSE(pm.degenerate());
}

TEST_CASE("checkpoint save/load/save round-trips bitwise") {
  const std::string dir = std::filesystem::temp_directory_path() / "pseg_ckpt_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  TrainConfig cfg = train_config_from(tiny_cfg_kv());
  Model m = Model::init(cfg.model, 1);
  save_checkpoint(m, dir + "/a", 7, cfg.echo);
  const std::string ja = slurp(dir + "/a.json");
  const std::string ba = slurp(dir + "/a.bin");

  Model m2 = Model::init(cfg.model, 999);  // different init, then overwritten by load
  CheckpointMeta meta = load_checkpoint(m2, dir + "/a");
  CHECK(meta.step == 7);
  save_checkpoint(m2, dir + "/b", 7, cfg.echo);
  CHECK(slurp(dir + "/b.json") == ja);
  CHECK(slurp(dir + "/b.bin") == ba);
  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint rejects mismatched architectures") {
  const std::string dir = std::filesystem::temp_directory_path() / "pseg_ckpt_bad";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  TrainConfig cfg = train_config_from(tiny_cfg_kv());
  Model m = Model::init(cfg.model, 1);
  save_checkpoint(m, dir + "/a", 0, cfg.echo);

  ModelConfig other = cfg.model;
  other.backbone.embed_len = 32;
  other.adapter.embed_len = 32;
  Model m2 = Model::init(other, 1);
  CHECK_THROWS_AS(load_checkpoint(m2, dir + "/a"), CheckpointError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("epochs=0 training returns the initialization") {
  TrainConfig cfg = train_config_from(tiny_cfg_kv());
  cfg.epochs = 0;
  Dataset data = tiny_dataset();
  TrainResult r = train_on(cfg, data);
  Model fresh = Model::init(cfg.model, cfg.seed);
  r.model.for_each_param([&](const std::string& name, Tensor& t, bool) {
    fresh.for_each_param([&](const std::string& name2, Tensor& t2, bool) {
      if (name == name2) CHECK(t.data() == t2.data());
    });
  });
  CHECK(r.log.empty());
}

TEST_CASE("training changes only freeze-mask-true parameters") {
  TrainConfig cfg = train_config_from(tiny_cfg_kv());
  Dataset data = tiny_dataset();
  Model fresh = Model::init(cfg.model, cfg.seed);
  std::map<std::string, std::vector<double>> before;
  fresh.for_each_param([&](const std::string& name, Tensor& t, bool) {
    before[name] = t.data();
  });

  TrainResult r = train_on(cfg, data);
  std::size_t changed = 0, frozen_changed = 0;
  r.model.for_each_param([&](const std::string& name, Tensor& t, bool trainable) {
    const bool moved = t.data() != before.at(name);
    if (trainable && moved) ++changed;
    if (!trainable && moved) ++frozen_changed;
  });
  CHECK(frozen_changed == 0);
  CHECK(changed > 0);
}

TEST_CASE("no-trainable-parameters run leaves everything bitwise in place") {
  KeyValues kv = KeyValues::parse_string(
      "image_extent = 32\npatch = 8\nembed_len = 16\nheads = 4\nblocks = 2\n"
      "adapters_enabled = false\nepochs = 2\nbatch = 4\nseed = 3\n");
  TrainConfig cfg = train_config_from(kv);
  Dataset data = tiny_dataset();
  Model fresh = Model::init(cfg.model, cfg.seed);
  TrainResult r = train_on(cfg, data);
  std::size_t visited = 0;
  std::map<std::string, std::vector<double>> before;
  fresh.for_each_param([&](const std::string& n, Tensor& t, bool) { before[n] = t.data(); });
  r.model.for_each_param([&](const std::string& n, Tensor& t, bool) {
    CHECK(t.data() == before.at(n));
    ++visited;
  });
  CHECK(visited == before.size());
  // with nothing to train, the held-out score cannot move between epochs
  REQUIRE(r.log.size() == 2);
  CHECK(r.log[0].dice == r.log[1].dice);
}

TEST_CASE("count-params: enumerated layout matches the assembled model exactly") {
  for (const char* mode : {"none", "add", "concat", "hyper"}) {
    KeyValues kv = KeyValues::parse_string(std::string("image_extent = 32\npatch = 8\n") +
                                           "embed_len = 16\nheads = 4\nblocks = 2\nmode = " +
                                           mode + "\n");
    TrainConfig cfg = train_config_from(kv);
    Model m = Model::init(cfg.model, 0);

    std::vector<std::tuple<std::string, Shape, bool>> real, layout;
    m.for_each_param([&](const std::string& n, Tensor& t, bool tr) {
      real.emplace_back(n, t.shape(), tr);
    });
    enumerate_param_shapes(cfg.model, [&](const std::string& n, const Shape& s, bool tr) {
      layout.emplace_back(n, s, tr);
    });
    CHECK(real == layout);

    ParamCounts a = m.count_params();
    ParamCounts b = count_params_from_layout(cfg.model);
    ParamCounts e = expected_param_counts(cfg.model);
    CHECK(a.total == b.total);
    CHECK(a.trainable == b.trainable);
    CHECK(a.total == e.total);
    CHECK(a.trainable == e.trainable);
  }
}

TEST_CASE("evaluate_with a perfect-oracle stub scores dice 1, hd95 0") {
  Dataset data = tiny_dataset(6);
  EvalReport r = evaluate_with(
      [](const SynthSample& s, const PromptSet&) { return s.mask; }, data,
      PromptSetting::one_point, 9);
  CHECK(r.mean_dice == 1.0);
  CHECK(r.mean_iou == 1.0);
  CHECK(r.mean_hd95 == 0.0);
}

TEST_CASE("evaluation is deterministic per seed") {
  Dataset data = tiny_dataset(6);
  TrainConfig cfg = train_config_from(tiny_cfg_kv());
  Model m = Model::init(cfg.model, 0);
  EvalReport a = evaluate(m, data, PromptSetting::one_point, 4);
  EvalReport b = evaluate(m, data, PromptSetting::one_point, 4);
  CHECK(a.mean_dice == b.mean_dice);
  CHECK(a.mean_hd95 == b.mean_hd95);
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(a.samples[i].dice == b.samples[i].dice);
  }
}

TEST_CASE("training runs are reproducible per seed") {
  TrainConfig cfg = train_config_from(tiny_cfg_kv());
  Dataset data = tiny_dataset();
  TrainResult r1 = train_on(cfg, data);
  TrainResult r2 = train_on(cfg, data);
  std::map<std::string, std::vector<double>> w1;
  r1.model.for_each_param([&](const std::string& n, Tensor& t, bool) { w1[n] = t.data(); });
  r2.model.for_each_param([&](const std::string& n, Tensor& t, bool) {
    CHECK(t.data() == w1.at(n));
  });
  REQUIRE(r1.log.size() == r2.log.size());
  for (std::size_t i = 0; i < r1.log.size(); ++i) {
    CHECK(r1.log[i].loss == r2.log[i].loss);
    CHECK(r1.log[i].dice == r2.log[i].dice);
  }
}

TEST_CASE("loss decreases over a short adapter-training run") {
  KeyValues kv = KeyValues::parse_string(
      "image_extent = 32\npatch = 8\nembed_len = 32\nheads = 4\nblocks = 2\n"
      "epochs = 8\nbatch = 4\nseed = 1\nlr = 0.003\nprompt = 1point\n");
  TrainConfig cfg = train_config_from(kv);
  Dataset data = tiny_dataset(16, 77);
  TrainResult r = train_on(cfg, data);
  REQUIRE(r.log.size() == 8);
  CHECK(r.log.back().loss < r.log.front().loss);
}

TEST_CASE("iterative-click augmentation trains and stays deterministic") {
  KeyValues kv = KeyValues::parse_string(
      "image_extent = 32\npatch = 8\nembed_len = 16\nheads = 4\nblocks = 1\n"
      "epochs = 1\nbatch = 4\nseed = 2\niter_click_prob = 1.0\nprompt = 1point\n");
  TrainConfig cfg = train_config_from(kv);
  Dataset data = tiny_dataset(8, 31);
  TrainResult a = train_on(cfg, data);
  TrainResult b = train_on(cfg, data);
  CHECK(a.log[0].loss == b.log[0].loss);
}

TEST_CASE("train_run surfaces a missing dataset as an error") {
  TrainConfig cfg = train_config_from(tiny_cfg_kv());
  cfg.dataset_dir = "/nonexistent/dataset/dir";
  CHECK_THROWS_AS(train_run(cfg), DataError);
  cfg.dataset_dir.clear();
  CHECK_THROWS_AS(train_run(cfg), ConfigError);
}

TEST_CASE("gradcheck suite names every op exactly once and a quick sweep passes") {
  auto checks = run_op_checks(3, 2);
  std::set<std::string> names;
  for (const auto& c : checks) {
    CHECK(names.insert(c.op).second);
    CHECK(c.pass);
  }
  CHECK(names.size() >= 30);
}
