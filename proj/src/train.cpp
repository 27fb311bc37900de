#include "pseg/train.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

#include <json.hpp>

#include "pseg/prompts.hpp"
#include "pseg/rng.hpp"

namespace pseg {

PromptSetting prompt_setting_from_string(const std::string& s) {
  if (s == "1point" || s == "1-point") return PromptSetting::one_point;
  if (s == "3points" || s == "3-points") return PromptSetting::three_points;
  if (s == "bbox0.5") return PromptSetting::bbox50;
  if (s == "bbox0.75") return PromptSetting::bbox75;
  if (s == "mixed") return PromptSetting::mixed;
  throw ConfigError("unknown prompt setting: " + s);
}

std::string to_string(PromptSetting s) {
  switch (s) {
    case PromptSetting::one_point: return "1point";
    case PromptSetting::three_points: return "3points";
    case PromptSetting::bbox50: return "bbox0.5";
    case PromptSetting::bbox75: return "bbox0.75";
    case PromptSetting::mixed: return "mixed";
  }
  return "?";
}

namespace {

const std::vector<std::string> kTrainKeys = {
    "image_extent", "depth", "patch", "embed_len", "heads", "blocks", "mlp_ratio",
    "adapter_r", "adapter_s", "mode", "space_depth", "prompt_reduced_len", "decoder_blocks",
    "adapters_enabled", "epochs", "batch", "lr", "weight_decay", "bce_weight", "dice_weight",
    "seed", "train_fraction", "prompt", "iter_click_prob", "dataset", "out"};

}  // namespace

ModelConfig model_config_from(const KeyValues& kv) {
  ModelConfig m;
  m.backbone.image_extent = kv.get_size("image_extent", 64);
  m.backbone.depth = kv.get_size("depth", 1);
  m.backbone.patch = kv.get_size("patch", 8);
  m.backbone.embed_len = kv.get_size("embed_len", 64);
  m.backbone.heads = kv.get_size("heads", 4);
  m.backbone.blocks = kv.get_size("blocks", 4);
  m.backbone.mlp_ratio = kv.get_f64("mlp_ratio", 4.0);
  m.adapter.embed_len = m.backbone.embed_len;
  m.adapter.reduction = kv.get_size("adapter_r", 4);
  m.adapter.scale = kv.get_f64("adapter_s", 0.5);
  m.mode = condition_mode_from_string(kv.get_str("mode", "hyper"));
  m.space_depth = kv.get_bool("space_depth", m.backbone.depth > 1);
  m.prompt_reduced_len = kv.get_size("prompt_reduced_len", 16);
  m.decoder_blocks = kv.get_size("decoder_blocks", 2);
  m.adapters_enabled = kv.get_bool("adapters_enabled", true);
  m.validate();
  return m;
}

TrainConfig train_config_from(const KeyValues& kv) {
  kv.require_known(kTrainKeys);
  TrainConfig c;
  c.model = model_config_from(kv);
  c.dataset_dir = kv.get_str("dataset", "");
  c.out_prefix = kv.get_str("out", "checkpoint");
  c.epochs = kv.get_size("epochs", 40);
  c.batch = kv.get_size("batch", 8);
  c.lr = kv.get_f64("lr", 1e-4);
  c.weight_decay = kv.get_f64("weight_decay", 1e-4);
  c.bce_weight = kv.get_f64("bce_weight", 0.5);
  c.dice_weight = kv.get_f64("dice_weight", 0.5);
  c.seed = kv.get_u64("seed", 0);
  c.train_fraction = kv.get_f64("train_fraction", 0.75);
  c.prompt = prompt_setting_from_string(kv.get_str("prompt", "mixed"));
  c.iter_click_prob = kv.get_f64("iter_click_prob", 0.0);
  if (c.batch == 0) throw ConfigError("batch must be positive");
  if (!(c.lr > 0.0)) throw ConfigError("lr must be positive");
  if (c.iter_click_prob < 0.0 || c.iter_click_prob > 1.0) {
    throw ConfigError("iter_click_prob must be in [0,1]");
  }
  c.echo = kv.entries();
  return c;
}

TrainConfig train_config_from_echo(const std::map<std::string, std::string>& echo) {
  return train_config_from(KeyValues::from_map(echo));
}

PromptSet make_prompts(const BinaryMask& gt, PromptSetting setting, std::uint64_t seed) {
  if (setting == PromptSetting::mixed) {
    static const PromptSetting menu[4] = {PromptSetting::one_point, PromptSetting::three_points,
                                          PromptSetting::bbox50, PromptSetting::bbox75};
    Rng pick(Rng::mix(seed, 0xd1ce));
    return make_prompts(gt, menu[pick.index(4)], Rng::mix(seed, 0x9001));
  }
  PromptSet p;
  switch (setting) {
    case PromptSetting::one_point:
      p.clicks = sample_random_clicks(gt, 1, 0, seed);
      break;
    case PromptSetting::three_points:
      p.clicks = sample_random_clicks(gt, 3, 0, seed);
      break;
    case PromptSetting::bbox50:
      p.box = generate_bbox(gt, 0.5, seed);
      break;
    case PromptSetting::bbox75:
      p.box = generate_bbox(gt, 0.75, seed);
      break;
    default:
      break;
  }
  return p;
}

Tensor sample_loss(const Model& m, const SynthSample& s, const PromptSet& prompts, double bce_w,
                   double dice_w) {
  Tensor logits = m.forward_logits(s.image, prompts);
  std::vector<double> target(s.mask.bits.begin(), s.mask.bits.end());
  Tensor t = Tensor::from(logits.shape(), std::move(target));

  Tensor bce = bce_with_logits_mean(logits, t);
  Tensor probs = sigmoid(logits);
  Tensor one = Tensor::scalar(1.0);
  Tensor inter = sum(mul(probs, t));
  Tensor denom = add(add(sum(probs), sum(t)), one);
  Tensor dice_ratio = div(add(scale(inter, 2.0), one), denom);
  Tensor dice_loss = sub(one, dice_ratio);
  return add(scale(bce, bce_w), scale(dice_loss, dice_w));
}

AdamW::AdamW(std::vector<Tensor> params, double lr, double weight_decay)
    : params_(std::move(params)), lr_(lr), wd_(weight_decay) {
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void AdamW::step() {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++t_;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& x = params_[i].mutable_data();
    auto& g = params_[i].grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < x.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      x[j] -= lr_ * (mhat / (std::sqrt(vhat) + eps) + wd_ * x[j]);
    }
  }
}

EvalReport evaluate_with(const Predictor& predict, const Dataset& data, PromptSetting setting,
                         std::uint64_t seed) {
  EvalReport r;
  r.setting = setting;
  r.seed = seed;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data[i];
    PromptSet prompts = make_prompts(s.mask, setting, Rng::mix(seed, i));
    BinaryMask pred = predict(s, prompts);
    SampleMetrics sm;
    sm.dice = dice(pred, s.mask);
    sm.iou = iou(pred, s.mask);
    if (pred.empty_mask() || s.mask.empty_mask()) {
      double diag = 0.0;  // undefined distance; score the grid diagonal
      for (auto e : s.mask.extents) diag += static_cast<double>(e * e);
      sm.hd95 = std::sqrt(diag);
    } else {
      sm.hd95 = hd95(pred, s.mask);
    }
    r.samples.push_back(sm);
    r.mean_dice += sm.dice;
    r.mean_iou += sm.iou;
    r.mean_hd95 += sm.hd95;
  }
  if (!r.samples.empty()) {
    const double n = static_cast<double>(r.samples.size());
    r.mean_dice /= n;
    r.mean_iou /= n;
    r.mean_hd95 /= n;
  }
  return r;
}

EvalReport evaluate(const Model& model, const Dataset& data, PromptSetting setting,
                    std::uint64_t seed) {
  auto& tape = Tape::active();
  return evaluate_with(
      [&](const SynthSample& s, const PromptSet& p) {
        BinaryMask out = model.predict_mask(s.image, p);
        tape.clear();
        return out;
      },
      data, setting, seed);
}

TrainResult train_on(const TrainConfig& cfg, const Dataset& dataset, std::ostream* log_stream) {
  cfg.model.validate();
  if (dataset.empty()) throw DataError("train: dataset is empty");
  auto [train_set, test_set] = split(dataset, cfg.train_fraction, Rng::mix(cfg.seed, 0x5917));

  TrainResult result{Model::init(cfg.model, cfg.seed), {}, {}, {}};
  Model& model = result.model;

  std::vector<Tensor> trainable, all_params;
  model.for_each_param([&](const std::string&, Tensor& t, bool tr) {
    all_params.push_back(t);
    if (tr) trainable.push_back(t);
  });
  AdamW opt(trainable, cfg.lr, cfg.weight_decay);
  auto& tape = Tape::active();

  const PromptSetting eval_setting =
      cfg.prompt == PromptSetting::mixed ? PromptSetting::one_point : cfg.prompt;
  const std::uint64_t eval_seed = Rng::mix(cfg.seed, 0xe7a1);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(Rng::mix(Rng::mix(cfg.seed, 0x0e9c), epoch));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.index(i)]);
    }

    double epoch_loss = 0.0;
    std::size_t n_steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      tape.clear();
      for (auto& p : all_params) p.zero_grad();
      Tensor total;
      std::size_t nb = 0;
      for (std::size_t k = start; k < std::min(start + cfg.batch, order.size()); ++k) {
        const auto& s = train_set[order[k]];
        const std::uint64_t pseed =
            Rng::mix(Rng::mix(cfg.seed, 0x9a01), Rng::mix(epoch, order[k]));
        PromptSet prompts = make_prompts(s.mask, cfg.prompt, pseed);
        if (cfg.iter_click_prob > 0.0) {
          Rng gate(Rng::mix(pseed, 0x17e2));
          if (gate.uniform() < cfg.iter_click_prob) {
            BinaryMask pred = model.predict_mask(s.image, prompts);
            tape.clear();
            if (auto k2 = sample_iterative_click(pred, s.mask)) {
              prompts.clicks.push_back(*k2);
              prompts.encoded.reset();
            }
          }
        }
        Tensor li = sample_loss(model, s, prompts, cfg.bce_weight, cfg.dice_weight);
        total = total.defined() ? add(total, li) : li;
        ++nb;
      }
      Tensor loss = scale(total, 1.0 / static_cast<double>(nb));
      epoch_loss += loss.item();
      ++n_steps;
      if (!trainable.empty()) {
        tape.backward(loss);
        opt.step();
      }
      tape.clear();
    }

    EvalReport er = evaluate(model, test_set, eval_setting, eval_seed);
    EpochLog el;
    el.epoch = epoch;
    el.loss = n_steps ? epoch_loss / static_cast<double>(n_steps) : 0.0;
    el.dice = er.mean_dice;
    el.iou = er.mean_iou;
    el.hd95 = er.mean_hd95;
    result.log.push_back(el);
    if (log_stream) {
      nlohmann::json j;
      j["epoch"] = el.epoch;
      j["loss"] = el.loss;
      j["dice"] = el.dice;
      j["iou"] = el.iou;
      j["hd95"] = el.hd95;
      (*log_stream) << j.dump() << "\n" << std::flush;
    }
  }

  result.train_set = std::move(train_set);
  result.test_set = std::move(test_set);
  return result;
}

TrainResult train_run(const TrainConfig& cfg, std::ostream* log_stream) {
  if (cfg.dataset_dir.empty()) throw ConfigError("train: config has no dataset path");
  if (!std::filesystem::exists(cfg.dataset_dir + "/manifest.json")) {
    throw DataError("train: dataset not found at " + cfg.dataset_dir);
  }
  LoadedDataset loaded = load_dataset(cfg.dataset_dir);
  TrainResult result = train_on(cfg, loaded.data, log_stream);
  save_checkpoint(result.model, cfg.out_prefix,
                  cfg.epochs * ((result.train_set.size() + cfg.batch - 1) / cfg.batch),
                  cfg.echo);
  return result;
}

Model load_model(const std::string& checkpoint_prefix) {
  CheckpointMeta meta = read_checkpoint_meta(checkpoint_prefix);
  TrainConfig cfg = train_config_from_echo(meta.config);
  Model model = Model::init(cfg.model, cfg.seed);
  load_checkpoint(model, checkpoint_prefix);
  return model;
}

ModeAblationReport run_mode_ablation(const TrainConfig& base, const Dataset& data,
                                     const std::vector<std::uint64_t>& seeds,
                                     PromptSetting eval_setting) {
  ModeAblationReport report;
  for (ConditionMode mode : {ConditionMode::none, ConditionMode::add, ConditionMode::concat,
                             ConditionMode::hyper}) {
    ModeAblationRow row;
    row.mode = mode;
    for (std::uint64_t seed : seeds) {
      TrainConfig cfg = base;
      cfg.model.mode = mode;
      cfg.seed = seed;
      TrainResult tr = train_on(cfg, data);
      EvalReport er = evaluate(tr.model, tr.test_set, eval_setting, Rng::mix(seed, 0xab1a));
      row.dice_per_seed.push_back(er.mean_dice);
      row.mean_dice += er.mean_dice;
    }
    row.mean_dice /= static_cast<double>(seeds.size());
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::string ablation_report_json(const ModeAblationReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    nlohmann::json j;
    j["mode"] = to_string(row.mode);
    j["dice_per_seed"] = row.dice_per_seed;
    j["mean_dice"] = row.mean_dice;
    rows.push_back(std::move(j));
  }
  nlohmann::json out;
  out["prompt_condition_ablation"] = rows;
  return out.dump(2);
}

}  // namespace pseg
