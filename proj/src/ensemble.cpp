#include "biqa/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "biqa/checkpoint.hpp"
#include "biqa/error.hpp"
#include "biqa/metrics.hpp"

namespace biqa {

using net::LayerKind;
using net::LayerSpec;
using net::Mode;
using net::Tensor;

const char* to_string(FuseMode mode) noexcept {
  return mode == FuseMode::concat_then_gap ? "concat_then_gap" : "gap_then_concat";
}

const char* to_string(HeadKind kind) noexcept { return kind == HeadKind::classifier ? "classifier" : "regressor"; }

const char* to_string(AblationVariant variant) noexcept {
  switch (variant) {
    case AblationVariant::full: return "full";
    case AblationVariant::drop_branch_a: return "drop_branch_a";
    case AblationVariant::drop_branch_b: return "drop_branch_b";
    case AblationVariant::drop_head: return "drop_head";
  }
  return "unknown";
}

AblationVariant ablation_from_string(const std::string& name) {
  for (auto v : {AblationVariant::full, AblationVariant::drop_branch_a, AblationVariant::drop_branch_b,
                 AblationVariant::drop_head})
    if (name == to_string(v)) return v;
  fail(ErrorCode::invalid_config, "unknown ablation variant '" + name + "'");
}

EnsembleConfig EnsembleConfig::toy(int input_size, int width) {
  EnsembleConfig c;
  c.input_size = input_size;
  const auto relu = LayerSpec::of(LayerKind::relu);
  c.branch_a = {LayerSpec::conv(3, width, 3, 1, 1, net::Padding::same), relu,
                LayerSpec::conv(width, 2 * width, 3, 2), relu,
                LayerSpec::conv(2 * width, 2 * width, 3), relu};
  c.branch_b = {LayerSpec::conv(3, width, 7, 2), relu,
                LayerSpec::conv(width, 2 * width, 3, 1, 2, net::Padding::same), relu};
  return c;
}

std::pair<int, int> EnsembleConfig::branch_output(const std::vector<LayerSpec>& branch, int in_channels, int extent) {
  if (branch.empty()) return {0, 0};
  int channels = in_channels;
  for (const auto& l : branch) {
    l.validate();
    if (l.kind == LayerKind::conv2d) {
      if (l.in_channels != channels)
        fail(ErrorCode::invalid_config, "branch conv expects " + std::to_string(l.in_channels) +
                                            " channels but receives " + std::to_string(channels));
      channels = l.out_channels;
      extent = l.conv_out(extent);
      if (extent <= 0) fail(ErrorCode::invalid_config, "branch reduces the input below one pixel");
    } else if (l.kind != LayerKind::relu && l.kind != LayerKind::dropout) {
      fail(ErrorCode::invalid_config, std::string("branches may only hold conv2d/relu/dropout, found ") +
                                          net::to_string(l.kind));
    }
  }
  return {channels, extent};
}

void EnsembleConfig::validate() const {
  if (input_size <= 0) fail(ErrorCode::invalid_config, "input_size must be positive");
  if (in_channels != 1 && in_channels != 3) fail(ErrorCode::invalid_config, "in_channels must be 1 or 3");
  if (branch_a.empty() && branch_b.empty()) fail(ErrorCode::invalid_config, "at least one branch is required");
  const auto [ca, ea] = branch_output(branch_a, in_channels, input_size);
  const auto [cb, eb] = branch_output(branch_b, in_channels, input_size);
  if (!branch_a.empty() && ca == in_channels && ea == input_size)
    fail(ErrorCode::invalid_config, "branch_a has no convolution");
  if (!branch_b.empty() && cb == in_channels && eb == input_size)
    fail(ErrorCode::invalid_config, "branch_b has no convolution");
  if (!branch_a.empty() && !branch_b.empty() && fuse == FuseMode::concat_then_gap && ea != eb)
    fail(ErrorCode::invalid_config, "concat_then_gap needs equal branch extents, got " + std::to_string(ea) + " and " +
                                        std::to_string(eb));
  if (head_widths.empty() || head_widths.back() != 1)
    fail(ErrorCode::invalid_config, "head_widths must end in 1");
  if (head_widths.size() < 2 && variant != AblationVariant::drop_head)
    fail(ErrorCode::invalid_config, "head needs at least two layers");
  for (int w : head_widths)
    if (w <= 0) fail(ErrorCode::invalid_config, "head widths must be positive");
  if (!(dropout_early >= 0.0 && dropout_early < 1.0) || !(dropout_late >= 0.0 && dropout_late < 1.0))
    fail(ErrorCode::invalid_config, "dropout probabilities must lie in [0, 1)");
  if (n_classes_pretrain < 2) fail(ErrorCode::invalid_config, "n_classes_pretrain must be at least 2");
}

int EnsembleConfig::fused_features() const {
  return branch_output(branch_a, in_channels, input_size).first + branch_output(branch_b, in_channels, input_size).first;
}

std::vector<LayerSpec> head_layers(const EnsembleConfig& config, int output_width) {
  std::vector<LayerSpec> head;
  int fan_in = config.fused_features();
  const std::size_t hidden = config.head_widths.size() - 1;
  for (std::size_t i = 0; i < hidden; ++i) {
    head.push_back(LayerSpec::fc(fan_in, config.head_widths[i]));
    head.push_back(LayerSpec::of(LayerKind::relu));
    head.push_back(LayerSpec::dropout(i + 1 == hidden ? config.dropout_late : config.dropout_early));
    fan_in = config.head_widths[i];
  }
  head.push_back(LayerSpec::fc(fan_in, output_width));
  return head;
}

namespace {

nlohmann::json layer_to_json(const LayerSpec& l) {
  nlohmann::json j{{"kind", net::to_string(l.kind)}};
  if (l.kind == LayerKind::conv2d) {
    j["in_channels"] = l.in_channels;
    j["out_channels"] = l.out_channels;
    j["kernel"] = l.kernel;
    j["stride"] = l.stride;
    j["dilation"] = l.dilation;
    j["padding"] = l.padding == net::Padding::same ? "same" : "valid";
  } else if (l.kind == LayerKind::fully_connected) {
    j["in_features"] = l.in_features;
    j["out_features"] = l.out_features;
  } else if (l.kind == LayerKind::dropout) {
    j["drop_prob"] = l.drop_prob;
  }
  return j;
}

LayerSpec layer_from_json(const nlohmann::json& j) {
  LayerSpec l;
  l.kind = net::layer_kind_from_string(j.at("kind").get<std::string>());
  l.in_channels = j.value("in_channels", 0);
  l.out_channels = j.value("out_channels", 0);
  l.kernel = j.value("kernel", 1);
  l.stride = j.value("stride", 1);
  l.dilation = j.value("dilation", 1);
  l.padding = j.value("padding", std::string("valid")) == "same" ? net::Padding::same : net::Padding::valid;
  l.in_features = j.value("in_features", 0);
  l.out_features = j.value("out_features", 0);
  l.drop_prob = j.value("drop_prob", 0.0);
  return l;
}

}  // namespace

nlohmann::json to_json(const EnsembleConfig& c) {
  nlohmann::json a = nlohmann::json::array(), b = nlohmann::json::array();
  for (const auto& l : c.branch_a) a.push_back(layer_to_json(l));
  for (const auto& l : c.branch_b) b.push_back(layer_to_json(l));
  return {{"input_size", c.input_size},
          {"in_channels", c.in_channels},
          {"branch_a", a},
          {"branch_b", b},
          {"fuse", to_string(c.fuse)},
          {"head_widths", c.head_widths},
          {"dropout_early", c.dropout_early},
          {"dropout_late", c.dropout_late},
          {"n_classes_pretrain", c.n_classes_pretrain},
          {"variant", to_string(c.variant)}};
}

EnsembleConfig config_from_json(const nlohmann::json& j) {
  try {
    EnsembleConfig c = EnsembleConfig::toy(j.value("input_size", 32), j.value("width", 8));
    c.in_channels = j.value("in_channels", 3);
    if (j.contains("branch_a")) {
      c.branch_a.clear();
      for (const auto& l : j.at("branch_a")) c.branch_a.push_back(layer_from_json(l));
    }
    if (j.contains("branch_b")) {
      c.branch_b.clear();
      for (const auto& l : j.at("branch_b")) c.branch_b.push_back(layer_from_json(l));
    }
    const auto fuse = j.value("fuse", std::string("concat_then_gap"));
    if (fuse != "concat_then_gap" && fuse != "gap_then_concat")
      fail(ErrorCode::invalid_config, "unknown fuse mode '" + fuse + "'");
    c.fuse = fuse == "concat_then_gap" ? FuseMode::concat_then_gap : FuseMode::gap_then_concat;
    c.head_widths = j.value("head_widths", c.head_widths);
    c.dropout_early = j.value("dropout_early", c.dropout_early);
    c.dropout_late = j.value("dropout_late", c.dropout_late);
    c.n_classes_pretrain = j.value("n_classes_pretrain", c.n_classes_pretrain);
    c.variant = ablation_from_string(j.value("variant", std::string("full")));
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::invalid_config, std::string("malformed model config: ") + e.what());
  }
}

EnsembleModel EnsembleModel::build(const EnsembleConfig& config, std::uint64_t init_seed, HeadKind head) {
  config.validate();
  EnsembleModel m;
  m.head_kind_ = head;
  m.net_ = TwoBranchNet<float>(config, head == HeadKind::classifier ? config.n_classes_pretrain : 1);
  RngStream rng(init_seed, 0x1A17);
  m.net_.initialize(rng);
  m.provenance_.push_back({"scratch", "seed=" + std::to_string(init_seed)});
  return m;
}

Tensor<float> to_batch(std::span<const Raster> crops, int channels) {
  if (crops.empty()) fail(ErrorCode::invalid_argument, "empty batch");
  const int w = crops[0].width(), h = crops[0].height();
  const std::size_t plane = static_cast<std::size_t>(w) * h;
  Tensor<float> x({crops.size(), static_cast<std::size_t>(channels), static_cast<std::size_t>(h),
                   static_cast<std::size_t>(w)});
  for (std::size_t n = 0; n < crops.size(); ++n) {
    const Raster& r = crops[n];
    if (r.width() != w || r.height() != h) fail(ErrorCode::shape_mismatch, "batch crops differ in size");
    float* dst = x.data() + n * channels * plane;
    if (r.channels() == channels) {
      std::copy(r.data().begin(), r.data().end(), dst);
    } else if (r.channels() == 1) {
      for (int c = 0; c < channels; ++c) std::copy(r.plane(0).begin(), r.plane(0).end(), dst + c * plane);
    } else {
      for (std::size_t i = 0; i < plane; ++i)
        dst[i] = 0.299F * r.plane(0)[i] + 0.587F * r.plane(1)[i] + 0.114F * r.plane(2)[i];
    }
  }
  return x;
}

std::vector<double> EnsembleModel::score_crops(std::span<const Raster> crops) const {
  const auto x = to_batch(crops, config().in_channels);
  RngStream unused;
  const auto y = net_.forward(x, Mode::eval, unused);
  std::vector<double> out(crops.size());
  const auto width = static_cast<std::size_t>(output_width());
  for (std::size_t n = 0; n < crops.size(); ++n) out[n] = y[n * width];
  return out;
}

std::string TrainingLog::to_jsonl() const {
  std::string out;
  for (const auto& e : epochs) {
    nlohmann::json j{{"epoch", e.epoch}, {"lr", e.lr}, {"train_loss", e.train_loss}};
    j["val_rmse"] = e.val_rmse ? nlohmann::json(*e.val_rmse) : nlohmann::json(nullptr);
    if (e.train_accuracy) j["train_accuracy"] = *e.train_accuracy;
    out += j.dump() + "\n";
  }
  return out;
}

void TrainingLog::write_jsonl(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot write " + path.string());
  out << to_jsonl();
}

std::vector<LabeledImage> load_corpus_images(const CorpusManifest& corpus) {
  if (corpus.entries.empty()) fail(ErrorCode::invalid_argument, "empty corpus");
  std::map<int, int> dense;
  for (const auto& e : corpus.entries) dense.emplace(e.spec.class_index(), 0);
  int next = 0;
  for (auto& [cls, label] : dense) label = next++;
  std::vector<LabeledImage> out;
  out.reserve(corpus.entries.size());
  for (const auto& e : corpus.entries)
    out.push_back({e.distorted.string(), load_image(e.distorted), dense.at(e.spec.class_index())});
  return out;
}

std::vector<ScoredImage> load_scored_images(const Manifest& manifest) {
  manifest.validate();
  std::vector<ScoredImage> out;
  out.reserve(manifest.size());
  for (const auto& r : manifest.records) out.push_back({r.path, load_image(r.path), r.mos});
  return out;
}

namespace {

struct TrainSet {
  std::vector<const Raster*> images;
  std::vector<const std::string*> ids;
  int target_width = 1;
  std::function<void(std::size_t, float*)> write_target;
  std::function<int(std::size_t)> class_of;  // classification only
};

struct EvalResult {
  double loss = 0.0;
  std::optional<double> accuracy;
};

Tensor<float> targets_for(const TrainSet& set, std::span<const std::size_t> idx) {
  Tensor<float> t({idx.size(), static_cast<std::size_t>(set.target_width)});
  for (std::size_t k = 0; k < idx.size(); ++k)
    set.write_target(idx[k], t.data() + k * static_cast<std::size_t>(set.target_width));
  return t;
}

int count_correct(const Tensor<float>& logits, const TrainSet& set, std::span<const std::size_t> idx) {
  const std::size_t K = logits.dim(1);
  int correct = 0;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const float* row = logits.data() + k * K;
    const auto pred = static_cast<int>(std::max_element(row, row + K) - row);
    if (pred == set.class_of(idx[k])) ++correct;
  }
  return correct;
}

// Loss of the current parameters over the training set (center crops, eval mode).
EvalResult evaluate_train_set(const EnsembleModel& model, const TrainSet& set, const net::LossSpec& loss) {
  const int size = model.config().input_size;
  double total = 0.0;
  int correct = 0;
  constexpr std::size_t kChunk = 64;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < set.images.size(); start += kChunk) {
    idx.clear();
    std::vector<Raster> crops;
    for (std::size_t i = start; i < std::min(set.images.size(), start + kChunk); ++i) {
      idx.push_back(i);
      crops.push_back(center_crop(*set.images[i], size, size));
    }
    RngStream unused;
    const auto out = model.net().forward(to_batch(crops, model.config().in_channels), Mode::eval, unused);
    total += net::loss_value_and_grad(loss, out, targets_for(set, idx)).first * static_cast<double>(idx.size());
    if (set.class_of) correct += count_correct(out, set, idx);
  }
  EvalResult r;
  r.loss = total / static_cast<double>(set.images.size());
  if (set.class_of) r.accuracy = static_cast<double>(correct) / static_cast<double>(set.images.size());
  return r;
}

double validation_rmse(const EnsembleModel& model, std::span<const ScoredImage> validation, int n_crops,
                       RngStream rng) {
  ScorePair p;
  for (std::size_t i = 0; i < validation.size(); ++i) {
    RngStream r = rng.derive(i);
    p.predicted.push_back(predict_image(model, validation[i].image, n_crops, r));
    p.subjective.push_back(validation[i].mos);
  }
  return rmse(p);
}

TrainingLog train_loop(EnsembleModel& model, const TrainSet& set, const net::LossSpec& loss,
                       const TrainOptions& options, RngStream rng,
                       const std::function<std::optional<double>()>& validate) {
  if (options.epochs < 0 || options.batch_size <= 0) fail(ErrorCode::invalid_config, "invalid epochs/batch size");
  const int size = model.config().input_size;
  auto& net = model.net();
  std::vector<net::Tensor<float>*> params;
  for (auto& [name, t] : net.named_parameters()) params.push_back(t);
  net::Adam<float> adam(options.schedule, options.adam);

  TrainingLog log;
  {
    const auto r = evaluate_train_set(model, set, loss);
    log.epochs.push_back({0, options.schedule.at(0), r.loss, validate(), r.accuracy});
  }

  const std::size_t n = set.images.size();
  std::vector<std::size_t> order(n);
  for (int epoch = 1; epoch <= options.epochs; ++epoch) {
    const int schedule_epoch = epoch - 1;
    RngStream er = rng.derive(static_cast<std::uint64_t>(epoch));
    std::iota(order.begin(), order.end(), std::size_t{0});
    er.shuffle(order.begin(), order.end());
    double total = 0.0;
    int correct = 0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(options.batch_size)) {
      const std::span<const std::size_t> idx(order.data() + start,
                                             std::min(n, start + static_cast<std::size_t>(options.batch_size)) - start);
      std::vector<Raster> crops;
      crops.reserve(idx.size());
      for (auto i : idx) {
        if (options.forbidden_ids && options.forbidden_ids->contains(*set.ids[i]))
          fail(ErrorCode::leakage, "held-out image '" + *set.ids[i] + "' reached a training batch");
        Raster crop = random_crop(*set.images[i], size, size, er);
        crops.push_back(options.augment ? augment(crop, er) : std::move(crop));
      }
      NetTrace<float> trace;
      const auto out = net.forward(to_batch(crops, model.config().in_channels), Mode::train, er, &trace);
      auto [value, grad] = net::loss_value_and_grad(loss, out, targets_for(set, idx));
      if (!std::isfinite(value)) fail(ErrorCode::numeric, "training loss became non-finite");
      auto grads = net.backward(trace, grad);
      const auto flat = TwoBranchNet<float>::flatten(grads, net);
      adam.step(params, flat, schedule_epoch);
      total += value * static_cast<double>(idx.size());
      if (set.class_of) correct += count_correct(out, set, idx);
    }
    EpochRecord rec{epoch, options.schedule.at(schedule_epoch), total / static_cast<double>(n), validate(), {}};
    if (set.class_of) rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    log.epochs.push_back(rec);
  }
  return log;
}

}  // namespace

TrainingLog pretrain(EnsembleModel& model, std::span<const LabeledImage> data, const TrainOptions& options,
                     RngStream rng, const std::string& corpus_id) {
  if (data.empty()) fail(ErrorCode::invalid_argument, "empty pretraining corpus");
  if (model.head_kind() != HeadKind::classifier) fail(ErrorCode::state, "pretraining needs a classification head");
  int max_label = 0;
  for (const auto& d : data) max_label = std::max(max_label, d.label);
  if (max_label + 1 != model.output_width())
    fail(ErrorCode::invalid_argument, "corpus has " + std::to_string(max_label + 1) + " classes but the head has " +
                                          std::to_string(model.output_width()));
  TrainSet set;
  set.target_width = model.output_width();
  for (const auto& d : data) {
    set.images.push_back(&d.image);
    set.ids.push_back(&d.id);
  }
  set.write_target = [&](std::size_t i, float* row) {
    std::fill(row, row + set.target_width, 0.0F);
    row[data[i].label] = 1.0F;
  };
  set.class_of = [&](std::size_t i) { return data[i].label; };
  auto log = train_loop(model, set, {net::LossKind::cross_entropy, 1.0}, options, rng, [] { return std::nullopt; });
  model.append_provenance("pretrained", corpus_id);
  return log;
}

TrainingLog pretrain(EnsembleModel& model, const CorpusManifest& corpus, const TrainOptions& options, RngStream rng,
                     const std::string& corpus_id) {
  if (corpus.entries.empty()) fail(ErrorCode::invalid_argument, "empty pretraining corpus");
  if (corpus.class_count() != model.output_width())
    fail(ErrorCode::invalid_argument, "corpus has " + std::to_string(corpus.class_count()) +
                                          " classes but the head has " + std::to_string(model.output_width()));
  const auto data = load_corpus_images(corpus);
  return pretrain(model, data, options, rng, corpus_id);
}

EnsembleModel transfer_to_regressor(const EnsembleModel& model, std::uint64_t seed) {
  if (model.head_kind() != HeadKind::classifier) fail(ErrorCode::state, "model already has a regression head");
  EnsembleModel out;
  out.head_kind_ = HeadKind::regressor;
  out.net_ = TwoBranchNet<float>(model.config(), 1);
  auto& src = const_cast<TwoBranchNet<float>&>(model.net_);
  out.net_.params_a() = src.params_a();
  out.net_.params_b() = src.params_b();
  out.net_.params_head() = src.params_head();
  RngStream rng(seed, 0x7EAD);
  out.net_.init_head_layer(out.net_.head().size() - 1, rng);
  out.provenance_ = model.provenance_;
  out.provenance_.push_back({"transferred", "seed=" + std::to_string(seed)});
  return out;
}

TrainingLog finetune(EnsembleModel& model, std::span<const ScoredImage> train, std::span<const ScoredImage> validation,
                     const net::LossSpec& loss, const TrainOptions& options, RngStream rng,
                     const std::string& manifest_id) {
  if (train.empty()) fail(ErrorCode::invalid_argument, "empty training manifest");
  if (model.head_kind() != HeadKind::regressor) fail(ErrorCode::state, "fine-tuning needs a regression head");
  if (loss.kind == net::LossKind::cross_entropy) fail(ErrorCode::invalid_config, "cross_entropy is not a regression loss");
  for (const auto& s : train)
    if (!(s.mos >= 0.0 && s.mos <= 1.0))
      fail(ErrorCode::out_of_range, "MOS for '" + s.id + "' is not normalized to [0, 1]");
  for (const auto& s : validation)
    if (!(s.mos >= 0.0 && s.mos <= 1.0))
      fail(ErrorCode::out_of_range, "MOS for '" + s.id + "' is not normalized to [0, 1]");
  TrainSet set;
  for (const auto& s : train) {
    set.images.push_back(&s.image);
    set.ids.push_back(&s.id);
  }
  set.write_target = [&](std::size_t i, float* row) { row[0] = static_cast<float>(train[i].mos); };
  const RngStream val_rng = rng.derive(0x5A11D);
  auto validate = [&]() -> std::optional<double> {
    if (validation.size() < 2) return std::nullopt;
    return validation_rmse(model, validation, options.val_crops, val_rng);
  };
  auto log = train_loop(model, set, loss, options, rng, validate);
  model.append_provenance("finetuned", manifest_id);
  return log;
}

TrainingLog finetune(EnsembleModel& model, const Manifest& train, const Manifest* validation,
                     const net::LossSpec& loss, const TrainOptions& options, RngStream rng) {
  if (train.empty()) fail(ErrorCode::invalid_argument, "empty training manifest");
  train.validate();
  const auto train_images = load_scored_images(train);
  std::vector<ScoredImage> val_images;
  if (validation) val_images = load_scored_images(*validation);
  return finetune(model, train_images, val_images, loss, options, rng, train.dataset_id);
}

double average_crop_scores(std::span<const double> scores) {
  if (scores.empty()) fail(ErrorCode::invalid_argument, "no crop scores to average");
  double sum = 0.0;
  for (double q : scores) sum += q;
  return sum / static_cast<double>(scores.size());
}

double predict_crops(const Raster& image, int size, int n_crops, RngStream& rng, const CropScorer& scorer) {
  if (n_crops < 1) fail(ErrorCode::invalid_argument, "n_crops must be at least 1");
  if (image.width() < size || image.height() < size)
    fail(ErrorCode::out_of_range, "image " + std::to_string(image.width()) + "x" + std::to_string(image.height()) +
                                      " is smaller than the model input " + std::to_string(size));
  std::vector<Raster> crops;
  crops.reserve(static_cast<std::size_t>(n_crops));
  for (int i = 0; i < n_crops; ++i) crops.push_back(random_crop(image, size, size, rng));
  const auto scores = scorer(crops);
  if (scores.size() != crops.size()) fail(ErrorCode::shape_mismatch, "scorer returned the wrong number of scores");
  return average_crop_scores(scores);
}

double predict_image(const EnsembleModel& model, const Raster& image, int n_crops, RngStream& rng) {
  if (model.head_kind() != HeadKind::regressor) fail(ErrorCode::state, "prediction needs a regression head");
  return predict_crops(image, model.config().input_size, n_crops, rng,
                       [&](std::span<const Raster> crops) { return model.score_crops(crops); });
}

EnsembleModel ablate(const EnsembleModel& model, AblationVariant variant, bool retain_weights, std::uint64_t seed) {
  const EnsembleConfig& old_config = model.config();
  EnsembleConfig config = old_config;
  const bool single_branch = old_config.branch_a.empty() || old_config.branch_b.empty();
  const auto [ca, ea] = EnsembleConfig::branch_output(old_config.branch_a, old_config.in_channels, old_config.input_size);
  const auto [cb, eb] = EnsembleConfig::branch_output(old_config.branch_b, old_config.in_channels, old_config.input_size);
  (void)ea;
  (void)eb;
  // columns of the first head layer that survive, as [begin, end) of the fused vector
  int keep_begin = 0, keep_end = ca + cb;
  switch (variant) {
    case AblationVariant::full:
      return model;
    case AblationVariant::drop_branch_a:
      if (single_branch) fail(ErrorCode::state, "model is already single-branch");
      config.branch_a.clear();
      keep_begin = ca;
      break;
    case AblationVariant::drop_branch_b:
      if (single_branch) fail(ErrorCode::state, "model is already single-branch");
      config.branch_b.clear();
      keep_end = ca;
      break;
    case AblationVariant::drop_head:
      if (old_config.head_widths.size() == 1) fail(ErrorCode::state, "model head is already pruned");
      config.head_widths = {1};
      break;
  }
  config.variant = variant;

  EnsembleModel out;
  out.head_kind_ = model.head_kind();
  out.net_ = TwoBranchNet<float>(config, model.output_width());
  RngStream rng(seed, 0xAB1A7E);
  out.net_.initialize(rng);
  if (retain_weights) {
    auto& src = const_cast<TwoBranchNet<float>&>(model.net_);
    if (!config.branch_a.empty()) out.net_.params_a() = src.params_a();
    if (!config.branch_b.empty()) out.net_.params_b() = src.params_b();
    if (variant != AblationVariant::drop_head) {
      auto& dst_head = out.net_.params_head();
      const auto& src_head = src.params_head();
      for (std::size_t i = 1; i < dst_head.size(); ++i) dst_head[i] = src_head[i];
      // first FC: keep the columns fed by the surviving branch
      const auto& w = src_head[0].weight;
      auto& nw = dst_head[0].weight;
      const std::size_t rows = w.dim(0), old_cols = w.dim(1), cols = nw.dim(1);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
          nw[r * cols + c] = w[r * old_cols + static_cast<std::size_t>(keep_begin) + c];
      dst_head[0].bias = src_head[0].bias;
      (void)keep_end;
    }
  }
  out.provenance_ = model.provenance_;
  out.provenance_.push_back({"ablated", std::string(to_string(variant)) + (retain_weights ? ":retained" : ":reinit")});
  return out;
}

void save_model(const EnsembleModel& model, const std::filesystem::path& path) {
  nlohmann::json prov = nlohmann::json::array();
  for (const auto& p : model.provenance()) prov.push_back({{"kind", p.kind}, {"id", p.id}});
  const nlohmann::json meta{{"format", "biqa-ensemble"},
                            {"config", to_json(model.config())},
                            {"head_kind", to_string(model.head_kind())},
                            {"output_width", model.output_width()},
                            {"provenance", prov}};
  Checkpoint ckpt;
  ckpt.metadata = meta.dump();
  for (const auto& [name, t] : model.net().named_parameters()) ckpt.tensors.push_back({name, *t});
  write_checkpoint(ckpt, path);
}

EnsembleModel load_model(const std::filesystem::path& path) {
  const auto ckpt = read_checkpoint(path);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(ckpt.metadata);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::corrupt_data, std::string("checkpoint metadata is not JSON: ") + e.what());
  }
  if (meta.value("format", std::string()) != "biqa-ensemble")
    fail(ErrorCode::corrupt_data, "checkpoint does not hold an ensemble model");
  EnsembleModel m;
  m.head_kind_ = meta.at("head_kind").get<std::string>() == "classifier" ? HeadKind::classifier : HeadKind::regressor;
  m.net_ = TwoBranchNet<float>(config_from_json(meta.at("config")), meta.at("output_width").get<int>());
  for (const auto& p : meta.at("provenance"))
    m.provenance_.push_back({p.at("kind").get<std::string>(), p.at("id").get<std::string>()});
  auto named = m.net_.named_parameters();
  if (named.size() != ckpt.tensors.size())
    fail(ErrorCode::corrupt_data, "checkpoint tensor count does not match the architecture");
  for (std::size_t i = 0; i < named.size(); ++i) {
    const auto& stored = ckpt.tensors[i];
    if (stored.name != named[i].first) fail(ErrorCode::corrupt_data, "unexpected tensor '" + stored.name + "'");
    // shape derives from the architecture; init_params fixes it
    *named[i].second = stored.tensor;
  }
  RngStream unused;
  // verify shapes by re-deriving them from a fresh network
  TwoBranchNet<float> ref(m.config(), m.output_width());
  ref.initialize(unused);
  const auto ref_named = ref.named_parameters();
  for (std::size_t i = 0; i < named.size(); ++i)
    if (named[i].second->shape() != ref_named[i].second->shape())
      fail(ErrorCode::corrupt_data, "tensor '" + named[i].first + "' has shape " +
                                        net::shape_string(named[i].second->shape()));
  return m;
}

net::GradCheckReport model_grad_check(const EnsembleConfig& config, std::uint64_t seed, int batch,
                                      std::size_t max_entries_per_tensor) {
  TwoBranchNet<double> net(config, 1);
  RngStream rng(seed, 0x6C);
  net.initialize(rng);
  for (auto& [name, t] : net.named_parameters())
    if (name.ends_with("bias"))
      for (auto& b : t->values()) b = 0.05 * rng.normal();
  const auto s = static_cast<std::size_t>(config.input_size);
  auto x = net::random_tensor({static_cast<std::size_t>(batch), static_cast<std::size_t>(config.in_channels), s, s}, rng);
  const auto target = net::random_tensor({static_cast<std::size_t>(batch), 1}, rng);
  const RngStream mask_rng = rng.derive(99);
  const net::LossSpec mse{net::LossKind::mse, 1.0};

  auto loss = [&] {
    RngStream r = mask_rng;
    return net::loss_value_and_grad(mse, net.forward(x, Mode::train, r), target).first;
  };
  RngStream r = mask_rng;
  NetTrace<double> trace;
  const auto out = net.forward(x, Mode::train, r, &trace);
  const auto grad_out = net::loss_value_and_grad(mse, out, target).second;
  auto grads = net.backward(trace, grad_out);
  const auto flat = TwoBranchNet<double>::flatten(grads, net);
  auto named = net.named_parameters();
  net::GradCheckReport report;
  for (std::size_t i = 0; i < named.size(); ++i)
    report.entries.push_back(
        net::check_tensor(named[i].first, *named[i].second, *flat[i], loss, net::kGradCheckEpsilon, max_entries_per_tensor));
  return report;
}

}  // namespace biqa
