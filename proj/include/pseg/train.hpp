#pragma once

#include <iosfwd>
#include <memory>

#include "pseg/checkpoint.hpp"
#include "pseg/config.hpp"
#include "pseg/metrics.hpp"
#include "pseg/synth_data.hpp"

namespace pseg {

enum class PromptSetting { one_point, three_points, bbox50, bbox75, mixed };

PromptSetting prompt_setting_from_string(const std::string& s);
std::string to_string(PromptSetting s);

struct TrainConfig {
  ModelConfig model;
  std::string dataset_dir;
  std::string out_prefix = "checkpoint";
  std::size_t epochs = 40;
  std::size_t batch = 8;
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double bce_weight = 0.5;
  double dice_weight = 0.5;
  std::uint64_t seed = 0;
  double train_fraction = 0.75;
  PromptSetting prompt = PromptSetting::mixed;  // per-sample draw when mixed
  double iter_click_prob = 0.0;  // chance of appending one error-region click
  std::map<std::string, std::string> echo;  // raw entries, echoed into checkpoints
};

ModelConfig model_config_from(const KeyValues& kv);
TrainConfig train_config_from(const KeyValues& kv);
/// Rebuilds the TrainConfig a checkpoint was trained with from its echo.
TrainConfig train_config_from_echo(const std::map<std::string, std::string>& echo);

/// Prompts for one sample: 1/3 positive clicks or a jittered box. `mixed`
/// draws one of the four settings from the seed.
PromptSet make_prompts(const BinaryMask& gt, PromptSetting setting, std::uint64_t seed);

/// 0.5*BCE + 0.5*soft-Dice by default (weights from the config).
Tensor sample_loss(const Model& m, const SynthSample& s, const PromptSet& prompts, double bce_w,
                   double dice_w);

/// Decoupled-weight-decay adaptive-moment optimizer over an explicit
/// parameter list (the freeze mask is applied by whoever builds the list).
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, double lr, double weight_decay);
  void step();
  std::size_t steps_taken() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, wd_;
  std::size_t t_ = 0;
};

struct SampleMetrics {
  double dice = 0, iou = 0, hd95 = 0;
};

struct EvalReport {
  PromptSetting setting = PromptSetting::one_point;
  std::uint64_t seed = 0;
  std::vector<SampleMetrics> samples;
  double mean_dice = 0, mean_iou = 0, mean_hd95 = 0;
};

using Predictor = std::function<BinaryMask(const SynthSample&, const PromptSet&)>;

/// Per-sample prompts from derived seeds, aggregate = mean. An empty
/// prediction scores hd95 as the grid diagonal (the metric itself is
/// undefined there).
EvalReport evaluate_with(const Predictor& predict, const Dataset& data, PromptSetting setting,
                         std::uint64_t seed);
EvalReport evaluate(const Model& model, const Dataset& data, PromptSetting setting,
                    std::uint64_t seed);

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0, dice = 0, iou = 0, hd95 = 0;
};

struct TrainResult {
  Model model;
  std::vector<EpochLog> log;
  Dataset train_set, test_set;
};

/// Core loop over an in-memory dataset. Writes one JSON object per epoch to
/// `log_stream` when given. Only freeze-mask-true parameters change.
TrainResult train_on(const TrainConfig& cfg, const Dataset& dataset,
                     std::ostream* log_stream = nullptr);

/// Loads cfg.dataset_dir, trains, saves <out_prefix>.json/.bin.
TrainResult train_run(const TrainConfig& cfg, std::ostream* log_stream = nullptr);

/// Builds the model a checkpoint describes and loads its weights.
Model load_model(const std::string& checkpoint_prefix);

struct ModeAblationRow {
  ConditionMode mode;
  std::vector<double> dice_per_seed;
  double mean_dice = 0;
};

struct ModeAblationReport {
  std::vector<ModeAblationRow> rows;  // none, add, concat, hyper
};

/// Trains the same config under all four prompt-condition modes across the
/// given seeds and evaluates each with `eval_setting`.
ModeAblationReport run_mode_ablation(const TrainConfig& base, const Dataset& data,
                                     const std::vector<std::uint64_t>& seeds,
                                     PromptSetting eval_setting);
std::string ablation_report_json(const ModeAblationReport& r);

}  // namespace pseg
