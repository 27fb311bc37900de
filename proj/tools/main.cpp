#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "pseg/op_checks.hpp"
#include "pseg/train.hpp"

namespace {

using namespace pseg;

SynthSpec synth_spec_from(const KeyValues& kv) {
  kv.require_known({"extent", "depth", "count", "seed", "decoys", "clutter", "noise",
                    "low_contrast", "drift", "slice_decoys", "invisible_frac"});
  SynthSpec s;
  s.extent = kv.get_size("extent", 64);
  s.depth = kv.get_size("depth", 1);
  s.count = kv.get_size("count", 16);
  s.seed = kv.get_u64("seed", 0);
  s.decoys = static_cast<int>(kv.get_u64("decoys", 0));
  s.clutter = static_cast<int>(kv.get_u64("clutter", 1));
  s.noise = kv.get_f64("noise", 0.04);
  s.low_contrast = kv.get_bool("low_contrast", false);
  s.drift = kv.get_f64("drift", 0.0);
  s.slice_decoys = static_cast<int>(kv.get_u64("slice_decoys", 0));
  s.invisible_frac = kv.get_f64("invisible_frac", 0.0);
  return s;
}

int cmd_train(const std::string& config_path, const std::string& seed_str,
              const std::string& mode_str, const std::string& prompt_str,
              const std::string& out_str) {
  KeyValues kv = KeyValues::parse_file(config_path);
  auto entries = kv.entries();
  if (!seed_str.empty()) entries["seed"] = seed_str;
  if (!mode_str.empty()) entries["mode"] = mode_str;
  if (!prompt_str.empty()) entries["prompt"] = prompt_str;
  if (!out_str.empty()) entries["out"] = out_str;
  TrainConfig cfg = train_config_from(KeyValues::from_map(entries));

  std::ofstream log(cfg.out_prefix + ".log.jsonl", std::ios::trunc);
  if (!log) {
    std::cerr << "error: cannot open log file " << cfg.out_prefix << ".log.jsonl\n";
    return 1;
  }
  std::cout << "training: dataset=" << cfg.dataset_dir << " epochs=" << cfg.epochs
            << " mode=" << to_string(cfg.model.mode) << " seed=" << cfg.seed << "\n";
  TrainResult result = train_run(cfg, &log);
  if (!result.log.empty()) {
    const auto& last = result.log.back();
    std::cout << "final: loss=" << last.loss << " dice=" << last.dice << " iou=" << last.iou
              << " hd95=" << last.hd95 << "\n";
  }
  std::cout << "checkpoint written to " << cfg.out_prefix << ".json/.bin\n";
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& dataset_dir,
             const std::string& prompt_str, std::uint64_t seed, const std::string& out_path) {
  Model model = load_model(ckpt);
  LoadedDataset data = load_dataset(dataset_dir);
  const PromptSetting setting = prompt_setting_from_string(prompt_str);
  if (setting == PromptSetting::mixed) {
    std::cerr << "error: eval needs a concrete prompt setting\n";
    return 1;
  }
  EvalReport r = evaluate(model, data.data, setting, seed);
  nlohmann::json j;
  j["setting"] = to_string(setting);
  j["seed"] = seed;
  j["mean_dice"] = r.mean_dice;
  j["mean_iou"] = r.mean_iou;
  j["mean_hd95"] = r.mean_hd95;
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& s : r.samples) {
    samples.push_back({{"dice", s.dice}, {"iou", s.iou}, {"hd95", s.hd95}});
  }
  j["samples"] = samples;
  const std::string text = j.dump(2) + "\n";
  if (out_path.empty()) {
    std::cout << text;
  } else {
    std::ofstream f(out_path, std::ios::trunc);
    f << text;
    std::cout << "report written to " << out_path << "\n";
  }
  return 0;
}

int cmd_count_params(const std::string& config_path) {
  KeyValues kv = KeyValues::parse_file(config_path);
  TrainConfig cfg = train_config_from(kv);
  Model model = Model::init(cfg.model, cfg.seed);
  ParamCounts actual = model.count_params();
  ParamCounts expected = expected_param_counts(cfg.model);
  std::cout << "total:      " << actual.total << "\n"
            << "trainable:  " << actual.trainable << "\n"
            << "fraction:   " << actual.fraction() << "\n"
            << "closed-form: total " << expected.total << ", trainable " << expected.trainable
            << (expected.total == actual.total && expected.trainable == actual.trainable
                    ? " (match)"
                    : " (MISMATCH)")
            << "\n";
  return (expected.total == actual.total && expected.trainable == actual.trainable) ? 0 : 1;
}

int cmd_gradcheck(std::uint64_t seed, std::size_t cases) {
  auto checks = run_op_checks(seed, cases);
  bool all_pass = true;
  for (const auto& c : checks) {
    std::cout << (c.pass ? "PASS " : "FAIL ") << c.op << "  cases=" << c.cases
              << " coords=" << c.coords << " max_rel_err=" << c.max_rel_err << "\n";
    all_pass = all_pass && c.pass;
  }
  std::cout << (all_pass ? "all gradient checks passed" : "GRADIENT CHECK FAILURES") << "\n";
  return all_pass ? 0 : 1;
}

int cmd_gen_data(const std::string& spec_path, const std::string& out_dir) {
  SynthSpec spec = synth_spec_from(KeyValues::parse_file(spec_path));
  Dataset data = gen_dataset(spec);
  write_dataset(out_dir, spec, data);
  std::cout << "wrote " << data.size() << " samples to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"promptseg: parameter-efficient promptable segmentation kit"};
  app.require_subcommand(1);

  std::string config_path, seed_str, mode_str, prompt_str, out_str;
  auto* train = app.add_subcommand("train", "train adapters on a frozen backbone");
  train->add_option("--config", config_path, "key=value config file")->required();
  train->add_option("--seed", seed_str, "override config seed");
  train->add_option("--mode", mode_str, "override prompt-condition mode");
  train->add_option("--prompt", prompt_str, "override training prompt setting");
  train->add_option("--out", out_str, "override checkpoint prefix");

  std::string ckpt, dataset_dir, eval_prompt = "1point", eval_out;
  std::uint64_t eval_seed = 0;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", ckpt, "checkpoint prefix")->required();
  eval->add_option("--dataset", dataset_dir, "dataset directory")->required();
  eval->add_option("--prompt", eval_prompt, "1point|3points|bbox0.5|bbox0.75");
  eval->add_option("--seed", eval_seed, "evaluation seed");
  eval->add_option("--out", eval_out, "write the JSON report here");

  std::string count_config;
  auto* count = app.add_subcommand("count-params", "parameter budget of a config");
  count->add_option("--config", count_config, "key=value config file")->required();

  std::uint64_t gc_seed = 0;
  std::size_t gc_cases = 100;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference sweep over all ops");
  gc->add_option("--seed", gc_seed, "sweep seed");
  gc->add_option("--cases", gc_cases, "cases per op");

  std::string spec_path, gen_out;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen->add_option("--spec", spec_path, "key=value dataset spec")->required();
  gen->add_option("--out", gen_out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(config_path, seed_str, mode_str, prompt_str, out_str);
    if (eval->parsed()) return cmd_eval(ckpt, dataset_dir, eval_prompt, eval_seed, eval_out);
    if (count->parsed()) return cmd_count_params(count_config);
    if (gc->parsed()) return cmd_gradcheck(gc_seed, gc_cases);
    if (gen->parsed()) return cmd_gen_data(spec_path, gen_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
