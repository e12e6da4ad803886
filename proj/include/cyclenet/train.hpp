#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cyclenet/checkpoint.hpp"
#include "cyclenet/config.hpp"
#include "cyclenet/network.hpp"
#include "cyclenet/optim.hpp"
#include "cyclenet/pathfinder.hpp"

namespace cyclenet {

struct TrainConfig {
  std::string train_data, test_data;
  NetworkSpec network;
  int epochs = 10;
  int batch_size = 32;
  double lr = 1e-3;
  double l2_lambda = 0.0;
  OptimizerKind optimizer = OptimizerKind::Adam;
  int plateau_patience = 10;
  double plateau_min_delta = 1e-3;
  uint64_t seed = 1;
  bool augment = false;    // horizontal flips and up-to-20% shifts
  double stop_at_eval_acc = 1.1;  // early stop once eval accuracy reaches this

  void validate() const;
};

TrainConfig train_config_from_config(const KeyValueConfig& cfg);

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0, train_acc = 0, eval_loss = 0, eval_acc = 0, lr = 0;
};

// CSV with header epoch,train_loss,train_acc,eval_loss,eval_acc,lr.
std::string metrics_csv(const std::vector<EpochMetrics>& history);

struct TrainResult {
  Network network;
  std::unique_ptr<Optimizer> optimizer;
  std::vector<EpochMetrics> history;
  uint64_t seed = 0;
  uint64_t dropout_rng_state = 0;

  std::vector<std::pair<std::string, Tensor>> checkpoint_records();
};

// Mini-batch loop: seeded shuffle each epoch, forward/backward/optimizer
// step, per-epoch evaluation, plateau learning-rate decay by 10. Aborts with
// a diagnostic naming the first non-finite layer if the loss leaves the
// reals. Fully reproducible for a fixed (config, seed).
TrainResult train_on(const TrainConfig& cfg, const PfdsDataset& train, const PfdsDataset& test,
                     bool verbose = false);
// Variant loading the PFDS files named by the config.
TrainResult train(const TrainConfig& cfg, bool verbose = false);

struct EvalResult {
  double accuracy = 0;
  double loss = 0;  // mean cross-entropy, no L2 term
  int count = 0;
};

// Eval mode: BatchNorm running statistics, dropout off; accuracy by argmax
// with ties toward the lower class index. Never mutates the network.
EvalResult evaluate(Network& net, const PfdsDataset& data, int batch_size = 64);

// Assemble (n, x, y, channels) inputs from dataset samples [begin, end).
Tensor batch_tensor(const PfdsDataset& data, const std::vector<int>& order, int begin, int end);

}  // namespace cyclenet
