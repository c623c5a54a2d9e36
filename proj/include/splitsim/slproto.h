// Copyright 2026 The splitsim Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Split-learning protocol: one coordinator (the label site's decoder) and K
// sites that each own an encoder over one modality. Every iteration runs
// BatchSelect -> ActShare -> GradShare -> Ack in lock step.

#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "splitsim/data.h"
#include "splitsim/message.h"
#include "splitsim/metrics.h"
#include "splitsim/model.h"
#include "splitsim/nn.h"
#include "splitsim/transport.h"

namespace splitsim {

// Defense applied to the copy of each activation that leaves a site.
struct ShareGuard {
  double dropout_p = 0.0;
  double noise_sigma = 0.0;

  // Throws std::invalid_argument unless p in [0,1) and sigma >= 0.
  void Validate() const;
  bool identity() const { return dropout_p == 0.0 && noise_sigma == 0.0; }
  // "none", "p=0.5", "sigma=2" or "p=0.5,sigma=2".
  std::string Label() const;
};

// Dropout then additive Gaussian noise on every level of `bundle`. Masks and
// noise come from (seed, iteration, site, level). Gradients flow through
// the dropout mask; the noise is additive and passes them unchanged.
ActivationBundle ApplyGuard(Graph& g, const ShareGuard& guard,
                            const ActivationBundle& bundle, uint64_t seed,
                            uint32_t iteration);

enum class Schedule { kSequential, kThreaded };

struct ProtocolOptions {
  SplitConfig split;
  ShareGuard guard;
  uint64_t seed = 0;
  double lr = 1e-3;
  bool augment = true;
  Schedule schedule = Schedule::kSequential;
  // Order in which sites run under the sequential schedule; empty means
  // ascending. Must be a permutation of 0..K-1.
  std::vector<int> site_order;
  std::chrono::milliseconds timeout = std::chrono::seconds(30);
};

struct StepRecord {
  uint32_t iteration = 0;
  double loss = 0.0;
  std::vector<int64_t> indices;
  uint64_t aug_seed = 0;
  std::vector<double> site_seconds;
  double coordinator_seconds = 0.0;
  Tensor predictions;  // argmax labels [B,1,H,W]
  Tensor labels;
};

struct EvalResult {
  double loss = 0.0;
  DiceScores dice;
};

// Common driver interface for the split protocol and the centralized
// baseline.
class Trainer {
 public:
  virtual ~Trainer() = default;
  virtual StepRecord Step(std::span<const int64_t> indices) = 0;
  virtual EvalResult Evaluate(std::span<const int64_t> indices,
                              int64_t batch_size) = 0;
  virtual ParameterList Parameters() const = 0;
  virtual uint32_t iteration() const = 0;
};

struct Tap {
  int site = 0;
  int level = 0;
};

// Every shared level of every site under `config`.
std::vector<Tap> AllTaps(const SplitConfig& config);

// Augmentation seed and flipped image / label batches for one iteration.
uint64_t AugmentSeed(uint64_t seed, uint32_t iteration);

class Site {
 public:
  Site(int id, Encoder encoder, const PhantomSet* data, const ProtocolOptions* options,
       Transport* transport, int coordinator_endpoint);

  // Receives BatchSelect, runs the encoder, sends the guarded ActShare.
  void HandleBatchSelect();
  // Receives GradShare, backpropagates, updates the encoder, sends Ack.
  void HandleGradShare();

  int id() const { return id_; }
  const Encoder& encoder() const { return encoder_; }
  const ActivationBundle& last_shared() const { return shared_; }
  const Tensor& last_input() const { return input_; }
  double last_seconds() const { return seconds_; }

 private:
  int id_;
  Encoder encoder_;
  Adam adam_;
  const PhantomSet* data_;
  const ProtocolOptions* options_;
  Transport* transport_;
  int coordinator_;
  uint32_t iteration_ = 0;  // last completed iteration
  bool awaiting_grad_ = false;
  std::unique_ptr<Graph> graph_;
  ActivationBundle shared_;
  Tensor input_;
  double seconds_ = 0.0;
};

class Coordinator {
 public:
  Coordinator(Decoder decoder, const PhantomSet* data, const ProtocolOptions* options,
              Transport* transport, int endpoint);

  void BroadcastBatch(uint32_t iteration, std::span<const int64_t> indices,
                      uint64_t aug_seed);
  // Receives every ActShare, runs decoder + loss, updates the decoder and
  // returns per-site gradients through GradShare.
  void ProcessActivations(StepRecord& record);
  void CollectAcks(uint32_t iteration);

  const Decoder& decoder() const { return decoder_; }
  // Bundles received in the last iteration, in site order.
  const std::vector<ActivationBundle>& last_received() const { return received_; }

 private:
  Decoder decoder_;
  Adam adam_;
  const PhantomSet* data_;
  const ProtocolOptions* options_;
  Transport* transport_;
  int endpoint_;
  int num_sites_;
  std::vector<ActivationBundle> received_;
};

// Coordinator plus K sites over one transport.
class Simulation : public Trainer {
 public:
  Simulation(SplitModel model, const PhantomSet* data, ProtocolOptions options);
  ~Simulation() override;

  StepRecord Step(std::span<const int64_t> indices) override;
  // Centralized forward over the label site's view: sites' activations pass
  // through the noise part of the guard, dropout is off.
  EvalResult Evaluate(std::span<const int64_t> indices, int64_t batch_size) override;
  ParameterList Parameters() const override;
  uint32_t iteration() const override { return iteration_; }

  // Records, at `iteration` (1-based), the received guarded activations,
  // the sites' inputs and the encoders as used for that iteration. Throws
  // std::invalid_argument for levels the variant does not share.
  void InterceptAt(uint32_t iteration, std::vector<Tap> taps,
                   std::filesystem::path dir);

  // Snapshot of the current model parameters.
  SplitModel Model() const;
  const ProtocolOptions& options() const { return options_; }
  const Transport& transport() const { return *transport_; }

 private:
  void WriteIntercept(const StepRecord& record, const ParameterList& encoders_before);

  ProtocolOptions options_;
  const PhantomSet* data_;
  std::unique_ptr<Transport> transport_;
  std::vector<std::unique_ptr<Site>> sites_;
  std::unique_ptr<Coordinator> coordinator_;
  uint32_t iteration_ = 0;
  std::optional<uint32_t> tap_iteration_;
  std::vector<Tap> taps_;
  std::filesystem::path tap_dir_;
};

// Monolithic U-Net over stacked modalities, same loss, optimizer and
// augmentation as the protocol.
class CentralTrainer : public Trainer {
 public:
  CentralTrainer(UNet model, const PhantomSet* data, uint64_t seed, double lr,
                 bool augment = true);

  StepRecord Step(std::span<const int64_t> indices) override;
  EvalResult Evaluate(std::span<const int64_t> indices, int64_t batch_size) override;
  ParameterList Parameters() const override { return model_.Parameters(); }
  uint32_t iteration() const override { return iteration_; }

 private:
  UNet model_;
  Adam adam_;
  const PhantomSet* data_;
  uint64_t seed_;
  double lr_;
  bool augment_;
  uint32_t iteration_ = 0;
};

struct TrainOptions {
  int epochs = 1;
  int64_t batch_size = 4;
  uint64_t seed = 0;
};

struct EpochMetrics {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  DiceScores train_dice;
  double val_loss = 0.0;
  DiceScores val_dice;
};

// Shuffled batches of `train` for one epoch (0-based); the last batch may be
// short.
std::vector<std::vector<int64_t>> EpochBatches(std::span<const int64_t> train,
                                               int64_t batch_size, uint64_t seed,
                                               int epoch);

// Runs epochs over `split.train`, evaluating on `split.val` after each.
std::vector<EpochMetrics> Train(
    Trainer& trainer, const DatasetSplit& split, const TrainOptions& options,
    const std::function<void(const EpochMetrics&)>& on_epoch = {});

// epoch,split,loss,dice_mean,dice_per_class rows (per-class values
// ';'-joined).
std::string MetricsCsv(std::span<const EpochMetrics> history);

}  // namespace splitsim
