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

#include "splitsim/slproto.h"

#include <algorithm>
#include <exception>
#include <numeric>
#include <thread>

#include <fmt/format.h>

#include "splitsim/intercept.h"
#include "splitsim/random.h"
#include "splitsim/ten_format.h"

namespace splitsim {

namespace {

using Clock = std::chrono::steady_clock;

double SecondsSince(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Evaluation noise seeds live under an iteration tag training never uses.
constexpr uint64_t kEvalTag = 0xFFFFFFFFull;

std::vector<Tensor> ParamTensors(const ParameterList& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

Tensor CopyGrad(const Tensor& t) {
  auto g = t.grad();
  return Tensor(t.shape(), std::vector<float>(g.begin(), g.end()));
}

void ExpectMessage(const Message& m, MessageType type, uint32_t iteration,
                   int site, const char* who) {
  if (m.type != type) {
    throw ProtocolError(fmt::format("{} expected {} but got {}", who,
                                    ToString(type), ToString(m.type)));
  }
  if (m.iteration != iteration) {
    throw ProtocolError(fmt::format("{} expected {} for iteration {}, got iteration {}",
                                    who, ToString(type), iteration, m.iteration));
  }
  if (site >= 0 && m.site != site) {
    throw ProtocolError(fmt::format("{} expected {} from site {}, got site {}", who,
                                    ToString(type), site, m.site));
  }
}

void ExpectLevels(const std::map<int, Tensor>& got, const std::map<int, Tensor>& want,
                  const char* what) {
  if (got.size() != want.size()) {
    throw ProtocolError(fmt::format("{} carries {} levels, expected {}", what,
                                    got.size(), want.size()));
  }
  for (const auto& [level, t] : want) {
    auto it = got.find(level);
    if (it == got.end()) {
      throw ProtocolError(fmt::format("{} is missing level {}", what, level));
    }
    if (it->second.shape() != t.shape()) {
      throw ProtocolError(fmt::format("{} level {} has shape {}, expected {}", what,
                                      level, it->second.shape().ToString(),
                                      t.shape().ToString()));
    }
  }
}

Tensor MaybeFlip(const Tensor& batch, bool augment, uint64_t aug_seed) {
  if (!augment) return batch;
  return ApplyFlips(batch, FlipDecisions(aug_seed, batch.shape().b));
}

}  // namespace

void ShareGuard::Validate() const {
  std::vector<std::string> errors;
  if (!(dropout_p >= 0.0) || dropout_p >= 1.0) {
    errors.push_back(fmt::format("dropout_p must lie in [0, 1), got {}", dropout_p));
  }
  if (!(noise_sigma >= 0.0)) {
    errors.push_back(fmt::format("noise_sigma must be >= 0, got {}", noise_sigma));
  }
  if (!errors.empty()) throw std::invalid_argument(fmt::format("{}", fmt::join(errors, "; ")));
}

std::string ShareGuard::Label() const {
  if (identity()) return "none";
  std::vector<std::string> parts;
  if (dropout_p != 0.0) parts.push_back(fmt::format("p={}", dropout_p));
  if (noise_sigma != 0.0) parts.push_back(fmt::format("sigma={}", noise_sigma));
  return fmt::format("{}", fmt::join(parts, ";"));
}

ActivationBundle ApplyGuard(Graph& g, const ShareGuard& guard,
                            const ActivationBundle& bundle, uint64_t seed,
                            uint32_t iteration) {
  guard.Validate();
  ActivationBundle out;
  out.site = bundle.site;
  for (const auto& [level, x] : bundle.levels) {
    const std::initializer_list<uint64_t> tags = {
        iteration, static_cast<uint64_t>(bundle.site), static_cast<uint64_t>(level)};
    Tensor y = Dropout(g, x, guard.dropout_p, DeriveSeed(seed, Stream::kDropout, tags));
    y = GaussianNoise(g, y, guard.noise_sigma, DeriveSeed(seed, Stream::kNoise, tags));
    out.levels[level] = y;
  }
  return out;
}

std::vector<Tap> AllTaps(const SplitConfig& config) {
  std::vector<Tap> taps;
  for (int k = 0; k < config.num_sites; ++k) {
    for (int level : SharedLevels(config.skip_variant)) taps.push_back({k, level});
  }
  return taps;
}

uint64_t AugmentSeed(uint64_t seed, uint32_t iteration) {
  return DeriveSeed(seed, Stream::kAugment, {iteration});
}

// ---------------------------------------------------------------------------
// Site

Site::Site(int id, Encoder encoder, const PhantomSet* data,
           const ProtocolOptions* options, Transport* transport,
           int coordinator_endpoint)
    : id_(id),
      encoder_(std::move(encoder)),
      adam_(ParamTensors(encoder_.Parameters())),
      data_(data),
      options_(options),
      transport_(transport),
      coordinator_(coordinator_endpoint) {}

void Site::HandleBatchSelect() {
  const std::string who = fmt::format("site {}", id_);
  Message m = transport_->Receive(id_, coordinator_);
  if (awaiting_grad_) {
    throw ProtocolError(who + " received a new message before its GradShare");
  }
  ExpectMessage(m, MessageType::kBatchSelect, iteration_ + 1, -1, who.c_str());
  const auto start = Clock::now();
  input_ = MaybeFlip(data_->ModalityBatch(id_, m.indices), options_->augment, m.aug_seed);
  graph_ = std::make_unique<Graph>();
  const auto acts = encoder_.Forward(*graph_, input_);
  shared_ = ApplyGuard(*graph_, options_->guard,
                       MakeBundle(id_, acts, options_->split.skip_variant),
                       options_->seed, m.iteration);
  seconds_ = SecondsSince(start);
  awaiting_grad_ = true;
  transport_->Send(id_, coordinator_, MakeActShare(m.iteration, id_, shared_.levels));
}

void Site::HandleGradShare() {
  const std::string who = fmt::format("site {}", id_);
  Message m = transport_->Receive(id_, coordinator_);
  if (!awaiting_grad_) {
    throw ProtocolError(who + " received a GradShare without a pending ActShare");
  }
  ExpectMessage(m, MessageType::kGradShare, iteration_ + 1, id_, who.c_str());
  ExpectLevels(m.levels, shared_.levels, "GradShare");
  const auto start = Clock::now();
  std::vector<std::pair<Tensor, Tensor>> seeds;
  for (const auto& [level, t] : shared_.levels) seeds.emplace_back(t, m.levels.at(level));
  graph_->Backward(seeds);
  adam_.Step(static_cast<float>(options_->lr));
  graph_.reset();
  seconds_ += SecondsSince(start);
  awaiting_grad_ = false;
  iteration_ = m.iteration;
  transport_->Send(id_, coordinator_, MakeAck(m.iteration, id_));
}

// ---------------------------------------------------------------------------
// Coordinator

Coordinator::Coordinator(Decoder decoder, const PhantomSet* data,
                         const ProtocolOptions* options, Transport* transport,
                         int endpoint)
    : decoder_(std::move(decoder)),
      adam_(ParamTensors(decoder_.Parameters())),
      data_(data),
      options_(options),
      transport_(transport),
      endpoint_(endpoint),
      num_sites_(options->split.num_sites) {}

void Coordinator::BroadcastBatch(uint32_t iteration, std::span<const int64_t> indices,
                                 uint64_t aug_seed) {
  const Message m = MakeBatchSelect(iteration, indices, aug_seed);
  for (int k = 0; k < num_sites_; ++k) transport_->Send(endpoint_, k, m);
}

void Coordinator::ProcessActivations(StepRecord& record) {
  received_.clear();
  const auto shared = SharedLevels(options_->split.skip_variant);
  for (int k = 0; k < num_sites_; ++k) {
    Message m = transport_->Receive(endpoint_, k);
    ExpectMessage(m, MessageType::kActShare, record.iteration, k, "coordinator");
    if (m.levels.size() != shared.size()) {
      throw ProtocolError(fmt::format("site {} shared {} levels, variant {} shares {}",
                                      k, m.levels.size(),
                                      ToString(options_->split.skip_variant),
                                      shared.size()));
    }
    ActivationBundle bundle;
    bundle.site = k;
    bundle.levels = std::move(m.levels);
    for (auto& [level, t] : bundle.levels) t.set_requires_grad(true);
    received_.push_back(std::move(bundle));
  }
  const Tensor labels = MaybeFlip(data_->LabelBatch(record.indices),
                                  options_->augment, record.aug_seed);
  Graph g;
  const Tensor logits = decoder_.Forward(g, received_);
  const Tensor loss = DiceCeLoss(g, logits, labels);
  g.Backward(loss);
  adam_.Step(static_cast<float>(options_->lr));
  record.loss = loss.item();
  record.predictions = ArgmaxChannels(logits);
  record.labels = labels;
  for (int k = 0; k < num_sites_; ++k) {
    std::map<int, Tensor> grads;
    for (const auto& [level, t] : received_[static_cast<size_t>(k)].levels) {
      grads[level] = CopyGrad(t);
    }
    transport_->Send(endpoint_, k, MakeGradShare(record.iteration, k, std::move(grads)));
  }
}

void Coordinator::CollectAcks(uint32_t iteration) {
  for (int k = 0; k < num_sites_; ++k) {
    ExpectMessage(transport_->Receive(endpoint_, k), MessageType::kAck, iteration, k,
                  "coordinator");
  }
}

// ---------------------------------------------------------------------------
// Simulation

Simulation::Simulation(SplitModel model, const PhantomSet* data, ProtocolOptions options)
    : options_(std::move(options)), data_(data) {
  const int k = options_.split.num_sites;
  options_.guard.Validate();
  if (static_cast<int>(model.encoders.size()) != k) {
    throw std::invalid_argument(fmt::format("model has {} encoders for {} sites",
                                            model.encoders.size(), k));
  }
  if (data_->num_modalities != k) {
    throw std::invalid_argument(fmt::format("data has {} modalities for {} sites",
                                            data_->num_modalities, k));
  }
  if (!(options_.lr > 0.0)) {
    throw std::invalid_argument(fmt::format("learning rate must be > 0, got {}", options_.lr));
  }
  if (options_.site_order.empty()) {
    options_.site_order.resize(static_cast<size_t>(k));
    std::iota(options_.site_order.begin(), options_.site_order.end(), 0);
  }
  auto sorted = options_.site_order;
  std::sort(sorted.begin(), sorted.end());
  std::vector<int> expect(static_cast<size_t>(k));
  std::iota(expect.begin(), expect.end(), 0);
  if (sorted != expect) {
    throw std::invalid_argument("site_order must be a permutation of the site ids");
  }
  transport_ = std::make_unique<Transport>(k + 1, options_.timeout);
  for (int s = 0; s < k; ++s) {
    sites_.push_back(std::make_unique<Site>(s, std::move(model.encoders[static_cast<size_t>(s)]),
                                            data_, &options_, transport_.get(), k));
  }
  coordinator_ = std::make_unique<Coordinator>(std::move(model.decoder), data_, &options_,
                                               transport_.get(), k);
}

Simulation::~Simulation() = default;

StepRecord Simulation::Step(std::span<const int64_t> indices) {
  if (indices.empty()) throw std::invalid_argument("training step needs a non-empty batch");
  StepRecord record;
  record.iteration = iteration_ + 1;
  record.indices.assign(indices.begin(), indices.end());
  record.aug_seed = AugmentSeed(options_.seed, record.iteration);

  ParameterList encoders_before;
  const bool tap = tap_iteration_ && *tap_iteration_ == record.iteration;
  if (tap) {
    for (const auto& site : sites_) {
      for (auto& p : site->encoder().Parameters(fmt::format("site{}.enc", site->id()))) {
        encoders_before.push_back({p.name, p.tensor.Clone()});
      }
    }
  }

  coordinator_->BroadcastBatch(record.iteration, record.indices, record.aug_seed);
  if (options_.schedule == Schedule::kSequential) {
    for (int k : options_.site_order) sites_[static_cast<size_t>(k)]->HandleBatchSelect();
    const auto start = Clock::now();
    coordinator_->ProcessActivations(record);
    record.coordinator_seconds = SecondsSince(start);
    for (int k : options_.site_order) sites_[static_cast<size_t>(k)]->HandleGradShare();
    coordinator_->CollectAcks(record.iteration);
  } else {
    std::vector<std::exception_ptr> errors(sites_.size());
    std::vector<std::thread> threads;
    for (size_t k = 0; k < sites_.size(); ++k) {
      threads.emplace_back([this, k, &errors] {
        try {
          sites_[k]->HandleBatchSelect();
          sites_[k]->HandleGradShare();
        } catch (...) {
          errors[k] = std::current_exception();
        }
      });
    }
    std::exception_ptr coordinator_error;
    try {
      const auto start = Clock::now();
      coordinator_->ProcessActivations(record);
      record.coordinator_seconds = SecondsSince(start);
      coordinator_->CollectAcks(record.iteration);
    } catch (...) {
      coordinator_error = std::current_exception();
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
    if (coordinator_error) std::rethrow_exception(coordinator_error);
  }
  iteration_ = record.iteration;
  for (const auto& site : sites_) record.site_seconds.push_back(site->last_seconds());
  if (tap) WriteIntercept(record, encoders_before);
  return record;
}

EvalResult Simulation::Evaluate(std::span<const int64_t> indices, int64_t batch_size) {
  if (indices.empty()) throw std::invalid_argument("evaluation needs a non-empty index set");
  if (batch_size < 1) throw std::invalid_argument("evaluation batch size must be >= 1");
  ShareGuard noise_only;
  noise_only.noise_sigma = options_.guard.noise_sigma;
  DiceAccumulator dice;
  double loss_sum = 0.0;
  const auto n = static_cast<int64_t>(indices.size());
  for (int64_t start = 0; start < n; start += batch_size) {
    const auto batch = indices.subspan(static_cast<size_t>(start),
                                       static_cast<size_t>(std::min(batch_size, n - start)));
    Graph g(false);
    std::vector<ActivationBundle> bundles;
    for (const auto& site : sites_) {
      const auto acts = site->encoder().Forward(g, data_->ModalityBatch(site->id(), batch));
      const auto bundle = MakeBundle(site->id(), acts, options_.split.skip_variant);
      bundles.push_back(ApplyGuard(g, noise_only, bundle,
                                   DeriveSeed(options_.seed, Stream::kNoise,
                                              {kEvalTag, static_cast<uint64_t>(start)}),
                                   0));
    }
    const Tensor logits = coordinator_->decoder().Forward(g, bundles);
    const Tensor labels = data_->LabelBatch(batch);
    loss_sum += DiceCeLossParts(logits, labels).total() * static_cast<double>(batch.size());
    dice.Add(ArgmaxChannels(logits), labels);
  }
  return {loss_sum / static_cast<double>(n), dice.Result()};
}

ParameterList Simulation::Parameters() const {
  ParameterList out;
  for (const auto& site : sites_) {
    for (auto& p : site->encoder().Parameters(fmt::format("site{}.enc", site->id()))) {
      out.push_back(std::move(p));
    }
  }
  for (auto& p : coordinator_->decoder().Parameters()) out.push_back(std::move(p));
  return out;
}

SplitModel Simulation::Model() const {
  SplitModel model;
  model.config = options_.split;
  for (const auto& site : sites_) model.encoders.push_back(site->encoder().Clone());
  model.decoder = coordinator_->decoder().Clone();
  return model;
}

void Simulation::InterceptAt(uint32_t iteration, std::vector<Tap> taps,
                             std::filesystem::path dir) {
  if (iteration == 0) throw std::invalid_argument("intercept iterations start at 1");
  for (const auto& t : taps) {
    if (t.site < 0 || t.site >= options_.split.num_sites) {
      throw std::invalid_argument(fmt::format("intercept site {} out of range", t.site));
    }
    if (!IsShared(options_.split.skip_variant, t.level)) {
      throw std::invalid_argument(fmt::format("level {} is not shared under {}", t.level,
                                              ToString(options_.split.skip_variant)));
    }
  }
  tap_iteration_ = iteration;
  taps_ = std::move(taps);
  tap_dir_ = std::move(dir);
}

void Simulation::WriteIntercept(const StepRecord& record,
                                const ParameterList& encoders_before) {
  std::filesystem::create_directories(tap_dir_);
  std::vector<int> sites;
  std::string tap_list;
  for (const auto& t : taps_) {
    const auto& bundle = coordinator_->last_received()[static_cast<size_t>(t.site)];
    SaveTen(ActivationDumpPath(tap_dir_, t.site, t.level), bundle.levels.at(t.level));
    if (std::find(sites.begin(), sites.end(), t.site) == sites.end()) sites.push_back(t.site);
    tap_list += fmt::format("{}{}:{}", tap_list.empty() ? "" : ",", t.site, t.level);
  }
  for (int s : sites) {
    SaveTen(InputDumpPath(tap_dir_, s), sites_[static_cast<size_t>(s)]->last_input());
  }
  const std::map<std::string, std::string> header = {
      {"sites", std::to_string(options_.split.num_sites)},
      {"variant", std::string(ToString(options_.split.skip_variant))},
      {"iteration", std::to_string(record.iteration)},
  };
  SaveCheckpoint(EncoderSnapshotPath(tap_dir_), header, encoders_before);
  std::string info;
  info += fmt::format("iteration={}\n", record.iteration);
  info += fmt::format("sites={}\n", options_.split.num_sites);
  info += fmt::format("variant={}\n", ToString(options_.split.skip_variant));
  info += fmt::format("defense={}\n", options_.guard.Label());
  info += fmt::format("taps={}\n", tap_list);
  std::string idx;
  for (size_t i = 0; i < record.indices.size(); ++i) {
    idx += fmt::format("{}{}", i ? "," : "", record.indices[i]);
  }
  info += fmt::format("indices={}\n", idx);
  WriteFileBytes(InterceptInfoPath(tap_dir_),
                 std::vector<uint8_t>(info.begin(), info.end()));
}

// ---------------------------------------------------------------------------
// Centralized baseline

CentralTrainer::CentralTrainer(UNet model, const PhantomSet* data, uint64_t seed,
                               double lr, bool augment)
    : model_(std::move(model)),
      adam_(ParamTensors(model_.Parameters())),
      data_(data),
      seed_(seed),
      lr_(lr),
      augment_(augment) {
  if (model_.encoder.in_channels() != data_->num_modalities) {
    throw std::invalid_argument(fmt::format("model takes {} channels, data has {} modalities",
                                            model_.encoder.in_channels(),
                                            data_->num_modalities));
  }
}

StepRecord CentralTrainer::Step(std::span<const int64_t> indices) {
  if (indices.empty()) throw std::invalid_argument("training step needs a non-empty batch");
  StepRecord record;
  record.iteration = iteration_ + 1;
  record.indices.assign(indices.begin(), indices.end());
  record.aug_seed = AugmentSeed(seed_, record.iteration);
  const auto start = Clock::now();
  const Tensor x = MaybeFlip(data_->StackedBatch(indices), augment_, record.aug_seed);
  const Tensor labels = MaybeFlip(data_->LabelBatch(indices), augment_, record.aug_seed);
  Graph g;
  const Tensor logits = model_.Forward(g, x);
  const Tensor loss = DiceCeLoss(g, logits, labels);
  g.Backward(loss);
  adam_.Step(static_cast<float>(lr_));
  record.loss = loss.item();
  record.predictions = ArgmaxChannels(logits);
  record.labels = labels;
  record.coordinator_seconds = SecondsSince(start);
  iteration_ = record.iteration;
  return record;
}

EvalResult CentralTrainer::Evaluate(std::span<const int64_t> indices, int64_t batch_size) {
  if (indices.empty()) throw std::invalid_argument("evaluation needs a non-empty index set");
  if (batch_size < 1) throw std::invalid_argument("evaluation batch size must be >= 1");
  DiceAccumulator dice;
  double loss_sum = 0.0;
  const auto n = static_cast<int64_t>(indices.size());
  for (int64_t start = 0; start < n; start += batch_size) {
    const auto batch = indices.subspan(static_cast<size_t>(start),
                                       static_cast<size_t>(std::min(batch_size, n - start)));
    Graph g(false);
    const Tensor logits = model_.Forward(g, data_->StackedBatch(batch));
    const Tensor labels = data_->LabelBatch(batch);
    loss_sum += DiceCeLossParts(logits, labels).total() * static_cast<double>(batch.size());
    dice.Add(ArgmaxChannels(logits), labels);
  }
  return {loss_sum / static_cast<double>(n), dice.Result()};
}

// ---------------------------------------------------------------------------
// Training loop

std::vector<std::vector<int64_t>> EpochBatches(std::span<const int64_t> train,
                                               int64_t batch_size, uint64_t seed,
                                               int epoch) {
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  std::vector<int64_t> order(train.begin(), train.end());
  Rng rng(DeriveSeed(seed, Stream::kEpochShuffle, {static_cast<uint64_t>(epoch)}));
  rng.Shuffle(order);
  std::vector<std::vector<int64_t>> batches;
  for (size_t i = 0; i < order.size(); i += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(order.size(), i + static_cast<size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

std::vector<EpochMetrics> Train(Trainer& trainer, const DatasetSplit& split,
                                const TrainOptions& options,
                                const std::function<void(const EpochMetrics&)>& on_epoch) {
  if (options.epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (split.train.empty()) throw std::invalid_argument("training split is empty");
  std::vector<EpochMetrics> history;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    DiceAccumulator dice;
    double loss_sum = 0.0;
    int64_t seen = 0;
    for (const auto& batch : EpochBatches(split.train, options.batch_size, options.seed, epoch)) {
      const StepRecord rec = trainer.Step(batch);
      loss_sum += rec.loss * static_cast<double>(batch.size());
      seen += static_cast<int64_t>(batch.size());
      dice.Add(rec.predictions, rec.labels);
    }
    EpochMetrics m;
    m.epoch = epoch + 1;
    m.train_loss = loss_sum / static_cast<double>(seen);
    m.train_dice = dice.Result();
    if (!split.val.empty()) {
      const EvalResult eval = trainer.Evaluate(split.val, options.batch_size);
      m.val_loss = eval.loss;
      m.val_dice = eval.dice;
    }
    history.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return history;
}

std::string MetricsCsv(std::span<const EpochMetrics> history) {
  auto per_class = [](const DiceScores& d) {
    return fmt::format("{};{};{}", FormatDouble(d.per_class[0]), FormatDouble(d.per_class[1]),
                       FormatDouble(d.per_class[2]));
  };
  std::string out = "epoch,split,loss,dice_mean,dice_per_class\n";
  for (const auto& m : history) {
    out += fmt::format("{},train,{},{},{}\n", m.epoch, FormatDouble(m.train_loss),
                       FormatDouble(m.train_dice.mean), per_class(m.train_dice));
    out += fmt::format("{},val,{},{},{}\n", m.epoch, FormatDouble(m.val_loss),
                       FormatDouble(m.val_dice.mean), per_class(m.val_dice));
  }
  return out;
}

}  // namespace splitsim
