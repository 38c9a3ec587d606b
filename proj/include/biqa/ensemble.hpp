#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <unordered_set>
#include <utility>
#include <vector>

#include "json.hpp"

#include "biqa/distort.hpp"
#include "biqa/manifest.hpp"
#include "biqa/net/adam.hpp"
#include "biqa/net/gradcheck.hpp"
#include "biqa/net/layers.hpp"
#include "biqa/net/loss.hpp"
#include "biqa/raster.hpp"
#include "biqa/rng.hpp"

namespace biqa {

enum class FuseMode { concat_then_gap, gap_then_concat };
enum class HeadKind { classifier, regressor };
enum class AblationVariant { full, drop_branch_a, drop_branch_b, drop_head };

const char* to_string(FuseMode mode) noexcept;
const char* to_string(HeadKind kind) noexcept;
const char* to_string(AblationVariant variant) noexcept;
AblationVariant ablation_from_string(const std::string& name);

/// Two-branch convolutional ensemble with a fully connected head.
///
/// Branch A stacks 3x3 convolutions (fine receptive field); branch B uses a
/// strided 7x7 followed by a dilated 3x3 (coarse receptive field). Both end at
/// the same spatial extent so their maps can be concatenated before global
/// average pooling (concat_then_gap), or each branch is pooled first and the
/// vectors concatenated (gap_then_concat). head_widths lists the hidden FC
/// widths followed by the output width (1); every hidden layer is followed by
/// ReLU and dropout (dropout_late on the last hidden layer, dropout_early on
/// the others).
struct EnsembleConfig {
  int input_size = 32;
  int in_channels = 3;
  std::vector<net::LayerSpec> branch_a;
  std::vector<net::LayerSpec> branch_b;
  FuseMode fuse = FuseMode::concat_then_gap;
  std::vector<int> head_widths{128, 32, 1};
  double dropout_early = 0.25;
  double dropout_late = 0.5;
  int n_classes_pretrain = 25;
  AblationVariant variant = AblationVariant::full;

  /// Default CPU-sized model: branches of width 8/16, head 128/32/1.
  static EnsembleConfig toy(int input_size = 32, int width = 8);

  void validate() const;
  /// Width of the pooled feature vector entering the head.
  int fused_features() const;
  /// (channels, extent) at the end of a branch; extent 0 for an empty branch.
  static std::pair<int, int> branch_output(const std::vector<net::LayerSpec>& branch, int in_channels, int extent);

  friend bool operator==(const EnsembleConfig&, const EnsembleConfig&) = default;
};

nlohmann::json to_json(const EnsembleConfig& config);
EnsembleConfig config_from_json(const nlohmann::json& j);

/// Layer specs of the head for a given output width.
std::vector<net::LayerSpec> head_layers(const EnsembleConfig& config, int output_width);

template <class T>
struct NetTrace {
  std::vector<net::Cache<T>> a, b, head;
  net::Cache<T> gap_a, gap_b, gap_fused;
  net::ConcatCache<T> concat;
  net::Shape map_a, map_b;
};

template <class T>
struct NetGrads {
  std::vector<net::LayerParams<T>> a, b, head;
};

/// The differentiable graph; parameters stored per layer.
template <class T>
class TwoBranchNet {
 public:
  TwoBranchNet() = default;
  TwoBranchNet(const EnsembleConfig& config, int output_width)
      : config_(config),
        output_width_(output_width),
        a_(config.branch_a),
        b_(config.branch_b),
        head_(head_layers(config, output_width)) {
    config.validate();
    pa_.resize(a_.size());
    pb_.resize(b_.size());
    ph_.resize(head_.size());
  }

  const EnsembleConfig& config() const noexcept { return config_; }
  int output_width() const noexcept { return output_width_; }
  const std::vector<net::LayerSpec>& branch_a() const noexcept { return a_; }
  const std::vector<net::LayerSpec>& branch_b() const noexcept { return b_; }
  const std::vector<net::LayerSpec>& head() const noexcept { return head_; }
  std::vector<net::LayerParams<T>>& params_a() noexcept { return pa_; }
  std::vector<net::LayerParams<T>>& params_b() noexcept { return pb_; }
  std::vector<net::LayerParams<T>>& params_head() noexcept { return ph_; }
  const std::vector<net::LayerParams<T>>& params_a() const noexcept { return pa_; }
  const std::vector<net::LayerParams<T>>& params_b() const noexcept { return pb_; }
  const std::vector<net::LayerParams<T>>& params_head() const noexcept { return ph_; }

  /// Fan-in scaled Gaussian init; the output layer uses gain 0.1 so the
  /// untrained network starts near a uniform / constant prediction.
  void initialize(RngStream& rng) {
    for (std::size_t i = 0; i < a_.size(); ++i) pa_[i] = net::init_params<T>(a_[i], rng);
    for (std::size_t i = 0; i < b_.size(); ++i) pb_[i] = net::init_params<T>(b_[i], rng);
    for (std::size_t i = 0; i < head_.size(); ++i) init_head_layer(i, rng);
  }

  void init_head_layer(std::size_t i, RngStream& rng) {
    const bool output = i + 1 == head_.size();
    ph_[i] = net::init_params<T>(head_[i], rng, output ? 0.1 / std::sqrt(2.0) : 1.0);
  }

  /// Named views of every parameter tensor in a stable order.
  std::vector<std::pair<std::string, net::Tensor<T>*>> named_parameters() {
    std::vector<std::pair<std::string, net::Tensor<T>*>> out;
    auto add = [&](const char* prefix, std::vector<net::LayerSpec>& specs, std::vector<net::LayerParams<T>>& ps) {
      for (std::size_t i = 0; i < specs.size(); ++i)
        if (specs[i].has_params()) {
          const std::string base = std::string(prefix) + "." + std::to_string(i) + ".";
          out.emplace_back(base + "weight", &ps[i].weight);
          out.emplace_back(base + "bias", &ps[i].bias);
        }
    };
    add("branch_a", a_, pa_);
    add("branch_b", b_, pb_);
    add("head", head_, ph_);
    return out;
  }

  std::vector<std::pair<std::string, const net::Tensor<T>*>> named_parameters() const {
    std::vector<std::pair<std::string, const net::Tensor<T>*>> out;
    for (auto& [name, t] : const_cast<TwoBranchNet*>(this)->named_parameters()) out.emplace_back(name, t);
    return out;
  }

  static std::vector<const net::Tensor<T>*> flatten(NetGrads<T>& g, const TwoBranchNet& net) {
    std::vector<const net::Tensor<T>*> out;
    auto add = [&](const std::vector<net::LayerSpec>& specs, std::vector<net::LayerParams<T>>& ps) {
      for (std::size_t i = 0; i < specs.size(); ++i)
        if (specs[i].has_params()) {
          out.push_back(&ps[i].weight);
          out.push_back(&ps[i].bias);
        }
    };
    add(net.a_, g.a);
    add(net.b_, g.b);
    add(net.head_, g.head);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : named_parameters()) n += t->size();
    return n;
  }

  /// x: [N, C, S, S]. Returns [N, output_width].
  net::Tensor<T> forward(const net::Tensor<T>& x, net::Mode mode, RngStream& rng, NetTrace<T>* trace = nullptr) const {
    NetTrace<T> local;
    NetTrace<T>& tr = trace ? *trace : local;
    tr = NetTrace<T>{};
    auto run_seq = [&](const std::vector<net::LayerSpec>& specs, const std::vector<net::LayerParams<T>>& ps,
                       net::Tensor<T> h, std::vector<net::Cache<T>>& caches) {
      for (std::size_t i = 0; i < specs.size(); ++i) {
        auto [y, c] = net::forward(specs[i], ps[i], h, mode, rng);
        caches.push_back(std::move(c));
        h = std::move(y);
      }
      return h;
    };
    const bool has_a = !a_.empty(), has_b = !b_.empty();
    net::Tensor<T> fa, fb, pooled;
    if (has_a) fa = run_seq(a_, pa_, x, tr.a);
    if (has_b) fb = run_seq(b_, pb_, x, tr.b);
    tr.map_a = fa.shape();
    tr.map_b = fb.shape();
    const net::LayerSpec gap = net::LayerSpec::of(net::LayerKind::gap);
    const net::LayerParams<T> none;
    if (has_a && has_b) {
      if (config_.fuse == FuseMode::concat_then_gap) {
        auto [cat, cc] = net::concat_forward(fa, fb);
        tr.concat = cc;
        auto [v, gc] = net::forward(gap, none, cat, mode, rng);
        tr.gap_fused = std::move(gc);
        pooled = std::move(v);
      } else {
        auto [va, ga] = net::forward(gap, none, fa, mode, rng);
        auto [vb, gb] = net::forward(gap, none, fb, mode, rng);
        tr.gap_a = std::move(ga);
        tr.gap_b = std::move(gb);
        auto [v, cc] = net::concat_forward(va, vb);
        tr.concat = cc;
        pooled = std::move(v);
      }
    } else {
      auto [v, gc] = net::forward(gap, none, has_a ? fa : fb, mode, rng);
      tr.gap_fused = std::move(gc);
      pooled = std::move(v);
    }
    return run_seq(head_, ph_, std::move(pooled), tr.head);
  }

  NetGrads<T> backward(const NetTrace<T>& tr, const net::Tensor<T>& grad_out) const {
    NetGrads<T> g;
    g.a.resize(a_.size());
    g.b.resize(b_.size());
    g.head.resize(head_.size());
    auto back_seq = [&](const std::vector<net::LayerSpec>& specs, const std::vector<net::LayerParams<T>>& ps,
                        const std::vector<net::Cache<T>>& caches, std::vector<net::LayerParams<T>>& grads,
                        net::Tensor<T> d) {
      if (caches.size() != specs.size()) fail(ErrorCode::state, "trace does not match the network");
      for (std::size_t i = specs.size(); i-- > 0;) {
        auto [dx, pg] = net::backward(specs[i], ps[i], caches[i], d);
        grads[i] = std::move(pg);
        d = std::move(dx);
      }
      return d;
    };
    net::Tensor<T> d = back_seq(head_, ph_, tr.head, g.head, grad_out);
    const net::LayerSpec gap = net::LayerSpec::of(net::LayerKind::gap);
    const net::LayerParams<T> none;
    const bool has_a = !a_.empty(), has_b = !b_.empty();
    if (has_a && has_b) {
      net::Tensor<T> da, db;
      if (config_.fuse == FuseMode::concat_then_gap) {
        auto dcat = net::backward(gap, none, tr.gap_fused, d).first;
        std::tie(da, db) = net::concat_backward(tr.concat, dcat);
      } else {
        auto [dva, dvb] = net::concat_backward(tr.concat, d);
        da = net::backward(gap, none, tr.gap_a, dva).first;
        db = net::backward(gap, none, tr.gap_b, dvb).first;
      }
      back_seq(a_, pa_, tr.a, g.a, std::move(da));
      back_seq(b_, pb_, tr.b, g.b, std::move(db));
    } else {
      auto dmap = net::backward(gap, none, tr.gap_fused, d).first;
      if (has_a)
        back_seq(a_, pa_, tr.a, g.a, std::move(dmap));
      else
        back_seq(b_, pb_, tr.b, g.b, std::move(dmap));
    }
    return g;
  }

  template <class U>
  TwoBranchNet<U> cast() const {
    TwoBranchNet<U> out(config_, output_width_);
    for (std::size_t i = 0; i < pa_.size(); ++i) out.params_a()[i] = pa_[i].template cast<U>();
    for (std::size_t i = 0; i < pb_.size(); ++i) out.params_b()[i] = pb_[i].template cast<U>();
    for (std::size_t i = 0; i < ph_.size(); ++i) out.params_head()[i] = ph_[i].template cast<U>();
    return out;
  }

 private:
  EnsembleConfig config_;
  int output_width_ = 1;
  std::vector<net::LayerSpec> a_, b_, head_;
  std::vector<net::LayerParams<T>> pa_, pb_, ph_;
};

struct ProvenanceStep {
  std::string kind;  // scratch | pretrained | transferred | finetuned | ablated
  std::string id;

  friend bool operator==(const ProvenanceStep&, const ProvenanceStep&) = default;
};

/// Trained (or freshly built) network plus where it came from.
class EnsembleModel {
 public:
  EnsembleModel() = default;

  /// He-style random init, deterministic in init_seed.
  static EnsembleModel build(const EnsembleConfig& config, std::uint64_t init_seed,
                             HeadKind head = HeadKind::regressor);

  const EnsembleConfig& config() const noexcept { return net_.config(); }
  HeadKind head_kind() const noexcept { return head_kind_; }
  int output_width() const noexcept { return net_.output_width(); }
  TwoBranchNet<float>& net() noexcept { return net_; }
  const TwoBranchNet<float>& net() const noexcept { return net_; }
  const std::vector<ProvenanceStep>& provenance() const noexcept { return provenance_; }
  void append_provenance(std::string kind, std::string id) { provenance_.push_back({std::move(kind), std::move(id)}); }
  std::size_t parameter_count() const { return net_.parameter_count(); }

  /// Eval-mode scores for a batch of input_size crops (one score per crop).
  std::vector<double> score_crops(std::span<const Raster> crops) const;

 private:
  friend EnsembleModel load_model(const std::filesystem::path& path);
  friend EnsembleModel transfer_to_regressor(const EnsembleModel& model, std::uint64_t seed);
  friend EnsembleModel ablate(const EnsembleModel& model, AblationVariant variant, bool retain_weights,
                              std::uint64_t seed);

  TwoBranchNet<float> net_;
  HeadKind head_kind_ = HeadKind::regressor;
  std::vector<ProvenanceStep> provenance_;
};

/// Packs crops (converted to the model's channel count) into [N, C, S, S].
net::Tensor<float> to_batch(std::span<const Raster> crops, int channels);

struct TrainOptions {
  int epochs = 20;
  int batch_size = 16;
  net::LearningRateSchedule schedule{1e-3, 0.5, 10};
  net::AdamConfig adam;
  bool augment = true;
  int val_crops = 10;
  /// Sample ids that must never enter a training batch.
  std::shared_ptr<const std::unordered_set<std::string>> forbidden_ids;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<double> val_rmse;
  std::optional<double> train_accuracy;
};

struct TrainingLog {
  std::vector<EpochRecord> epochs;

  /// JSON lines: {"epoch", "lr", "train_loss", "val_rmse"} (+ "train_accuracy").
  std::string to_jsonl() const;
  void write_jsonl(const std::filesystem::path& path) const;
};

struct LabeledImage {
  std::string id;
  Raster image;
  int label = 0;
};

struct ScoredImage {
  std::string id;
  Raster image;
  double mos = 0.0;
};

/// Dense class labels for a corpus: sorted distinct classes mapped to 0..K-1.
std::vector<LabeledImage> load_corpus_images(const CorpusManifest& corpus);
std::vector<ScoredImage> load_scored_images(const Manifest& manifest);

/// Classification pretraining with softmax cross-entropy, random crops and
/// the flip/right-angle augmentation.
TrainingLog pretrain(EnsembleModel& model, std::span<const LabeledImage> data, const TrainOptions& options,
                     RngStream rng, const std::string& corpus_id = "in-memory");
TrainingLog pretrain(EnsembleModel& model, const CorpusManifest& corpus, const TrainOptions& options, RngStream rng,
                     const std::string& corpus_id = "corpus");

/// Replaces the classification layer with a fresh width-1 regression layer.
EnsembleModel transfer_to_regressor(const EnsembleModel& model, std::uint64_t seed);

/// Regression fine-tuning. Validation RMSE (crop-averaged) is logged per epoch
/// when a validation set is given; it never influences training.
TrainingLog finetune(EnsembleModel& model, std::span<const ScoredImage> train, std::span<const ScoredImage> validation,
                     const net::LossSpec& loss, const TrainOptions& options, RngStream rng,
                     const std::string& manifest_id = "in-memory");
TrainingLog finetune(EnsembleModel& model, const Manifest& train, const Manifest* validation,
                     const net::LossSpec& loss, const TrainOptions& options, RngStream rng);

inline constexpr int kDefaultCrops = 10;

/// q = (1 / N_c) sum q_i.
double average_crop_scores(std::span<const double> scores);

using CropScorer = std::function<std::vector<double>(std::span<const Raster>)>;

/// Draws n_crops random size x size crops and averages their scores.
double predict_crops(const Raster& image, int size, int n_crops, RngStream& rng, const CropScorer& scorer);

double predict_image(const EnsembleModel& model, const Raster& image, int n_crops, RngStream& rng);

/// Structural ablation. Layers whose shapes survive keep their weights when
/// retain_weights is set; everything else is freshly initialized from seed.
EnsembleModel ablate(const EnsembleModel& model, AblationVariant variant, bool retain_weights = true,
                     std::uint64_t seed = 0);

void save_model(const EnsembleModel& model, const std::filesystem::path& path);
EnsembleModel load_model(const std::filesystem::path& path);

/// Finite-difference check of the whole two-branch network (double precision)
/// on a random batch with an MSE objective; dropout masks are replayed.
/// max_entries_per_tensor = 0 checks every parameter.
net::GradCheckReport model_grad_check(const EnsembleConfig& config, std::uint64_t seed, int batch = 2,
                                      std::size_t max_entries_per_tensor = 0);

}  // namespace biqa
