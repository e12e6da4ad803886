#include "cyclenet/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace cyclenet {

void TrainConfig::validate() const {
  if (epochs <= 0) throw std::invalid_argument("train config: epochs must be positive");
  if (batch_size < 8)
    throw std::invalid_argument("train config: batch_size must be >= 8 to keep batch statistics stable");
  if (lr < 0.0) throw std::invalid_argument("train config: lr must be >= 0");
  if (l2_lambda < 0.0) throw std::invalid_argument("train config: l2_lambda must be >= 0");
  if (plateau_patience <= 0) throw std::invalid_argument("train config: plateau_patience must be positive");
  if (plateau_min_delta < 0.0) throw std::invalid_argument("train config: plateau_min_delta must be >= 0");
}

TrainConfig train_config_from_config(const KeyValueConfig& cfg) {
  TrainConfig tc;
  tc.network = network_spec_from_config(cfg);
  tc.train_data = cfg.get_string_or("train_data", "");
  tc.test_data = cfg.get_string_or("test_data", "");
  tc.epochs = int(cfg.get_int_or("epochs", 10));
  tc.batch_size = int(cfg.get_int_or("batch_size", 32));
  tc.lr = cfg.get_double_or("lr", 1e-3);
  tc.l2_lambda = cfg.get_double_or("l2_lambda", 0.0);
  tc.optimizer = optimizer_kind_from_string(cfg.get_string_or("optimizer", "adam"));
  tc.plateau_patience = int(cfg.get_int_or("plateau_patience", 10));
  tc.plateau_min_delta = cfg.get_double_or("plateau_min_delta", 1e-3);
  tc.seed = uint64_t(cfg.get_int_or("seed", 1));
  tc.augment = cfg.get_bool_or("augment", false);
  tc.stop_at_eval_acc = cfg.get_double_or("stop_at_eval_acc", 1.1);
  tc.validate();
  return tc;
}

std::string metrics_csv(const std::vector<EpochMetrics>& history) {
  std::string out = "epoch,train_loss,train_acc,eval_loss,eval_acc,lr\n";
  char buf[200];
  for (const EpochMetrics& m : history) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g,%.9g\n", m.epoch, m.train_loss,
                  m.train_acc, m.eval_loss, m.eval_acc, m.lr);
    out += buf;
  }
  return out;
}

Tensor batch_tensor(const PfdsDataset& data, const std::vector<int>& order, int begin, int end) {
  const int N = end - begin;
  const int W = data.width, H = data.height;
  Tensor batch({N, W, H, 1});
  for (int i = 0; i < N; ++i) {
    const uint8_t* px = data.image(order[size_t(begin + i)]);
    double* dst = batch.data() + size_t(i) * W * H;
    for (int x = 0; x < W; ++x)
      for (int y = 0; y < H; ++y) dst[size_t(x) * H + size_t(y)] = double(px[size_t(y) * W + size_t(x)]) / 255.0;
  }
  return batch;
}

namespace {

// horizontal flip and integer shifts up to 20% of the frame, zero filled
void augment_batch(Tensor& batch, SeededRng& rng) {
  const int N = batch.extent(0), X = batch.extent(1), Y = batch.extent(2), C = batch.extent(3);
  const int max_shift_x = X / 5, max_shift_y = Y / 5;
  for (int n = 0; n < N; ++n) {
    double* img = batch.data() + size_t(n) * X * Y * C;
    bool flip = rng.bernoulli(0.5);
    int sx = int(rng.next_below(uint64_t(2 * max_shift_x + 1))) - max_shift_x;
    int sy = int(rng.next_below(uint64_t(2 * max_shift_y + 1))) - max_shift_y;
    if (!flip && sx == 0 && sy == 0) continue;
    std::vector<double> src(img, img + size_t(X) * Y * C);
    for (int x = 0; x < X; ++x)
      for (int y = 0; y < Y; ++y) {
        int fx = flip ? X - 1 - x : x;
        int ox = fx - sx, oy = y - sy;
        for (int c = 0; c < C; ++c) {
          double v = 0.0;
          if (ox >= 0 && ox < X && oy >= 0 && oy < Y)
            v = src[(size_t(ox) * Y + size_t(oy)) * C + size_t(c)];
          img[(size_t(x) * Y + size_t(y)) * C + size_t(c)] = v;
        }
      }
  }
}

int argmax_row(const double* row, int n) {
  int best = 0;
  for (int c = 1; c < n; ++c)
    if (row[c] > row[best]) best = c;  // ties keep the lower class index
  return best;
}

[[noreturn]] void diagnose_nonfinite(const Tape& tape, int batch_index) {
  for (int i = 0; i < tape.size(); ++i) {
    const Tensor& v = tape.value(i);
    for (size_t j = 0; j < v.size(); ++j)
      if (!std::isfinite(v[j]))
        throw std::runtime_error("non-finite loss in batch " + std::to_string(batch_index) +
                                 "; first offending layer: " + tape.tag(i));
  }
  throw std::runtime_error("non-finite loss in batch " + std::to_string(batch_index) +
                           " (gradient overflow)");
}

double mean_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  const int N = logits.extent(0), C = logits.extent(1);
  double total = 0.0;
  for (int n = 0; n < N; ++n) {
    const double* row = logits.data() + size_t(n) * C;
    double m = row[0];
    for (int c = 1; c < C; ++c) m = std::max(m, row[c]);
    double lse = 0.0;
    for (int c = 0; c < C; ++c) lse += std::exp(row[c] - m);
    total += std::log(lse) - (row[labels[size_t(n)]] - m);
  }
  return total / double(N);
}

}  // namespace

EvalResult evaluate(Network& net, const PfdsDataset& data, int batch_size) {
  if (data.count() == 0) throw std::invalid_argument("evaluate: empty dataset");
  if (data.width != net.spec().input_shape[0] || data.height != net.spec().input_shape[1])
    throw std::invalid_argument("evaluate: dataset resolution " + std::to_string(data.width) + "x" +
                                std::to_string(data.height) + " does not match network input");
  std::vector<int> order(size_t(data.count()));
  std::iota(order.begin(), order.end(), 0);

  EvalResult r;
  r.count = data.count();
  double loss_sum = 0.0;
  int correct = 0;
  for (int begin = 0; begin < data.count(); begin += batch_size) {
    int end = std::min(data.count(), begin + batch_size);
    Tensor batch = batch_tensor(data, order, begin, end);
    std::vector<int> labels(size_t(end - begin));
    for (int i = begin; i < end; ++i) labels[size_t(i - begin)] = data.labels[size_t(i)];

    Tape tape;
    Network::Trace trace = net.forward(tape, std::move(batch), Mode::Eval, nullptr);
    const Tensor& logits = tape.value(trace.logits);
    const int C = logits.extent(1);
    for (int i = 0; i < end - begin; ++i)
      if (argmax_row(logits.data() + size_t(i) * C, C) == labels[size_t(i)]) ++correct;
    loss_sum += mean_cross_entropy(logits, labels) * double(end - begin);
  }
  r.accuracy = double(correct) / double(r.count);
  r.loss = loss_sum / double(r.count);
  return r;
}

std::vector<std::pair<std::string, Tensor>> TrainResult::checkpoint_records() {
  std::vector<std::pair<std::string, Tensor>> records;
  for (Param* p : network.params()) records.emplace_back(p->name, p->value);
  for (auto& [name, tensor] : network.buffers()) records.emplace_back(name, *tensor);
  if (optimizer) {
    for (auto& [name, tensor] : optimizer->state_buffers())
      records.emplace_back("__opt." + name, *tensor);
    records.emplace_back("__opt.t", Tensor({1}, {double(optimizer->t())}));
    records.emplace_back("__opt.kind", Tensor({1}, {double(int(optimizer->config().kind))}));
    records.emplace_back("__opt.lr", Tensor({1}, {optimizer->lr()}));
  }
  records.emplace_back("__meta.seed", Tensor({1}, {double(seed)}));
  records.emplace_back("__meta.epoch", Tensor({1}, {double(history.size())}));
  records.emplace_back("__meta.rng.dropout", Tensor({1}, {double(dropout_rng_state)}));
  if (!history.empty()) {
    Tensor h({int(history.size()), 6});
    for (size_t i = 0; i < history.size(); ++i) {
      h[i * 6 + 0] = double(history[i].epoch);
      h[i * 6 + 1] = history[i].train_loss;
      h[i * 6 + 2] = history[i].train_acc;
      h[i * 6 + 3] = history[i].eval_loss;
      h[i * 6 + 4] = history[i].eval_acc;
      h[i * 6 + 5] = history[i].lr;
    }
    records.emplace_back("__meta.history", std::move(h));
  }
  return records;
}

TrainResult train_on(const TrainConfig& cfg, const PfdsDataset& train_set,
                     const PfdsDataset& test_set, bool verbose) {
  cfg.validate();
  if (train_set.count() == 0) throw std::invalid_argument("train: empty training set");

  TrainResult result;
  result.seed = cfg.seed;
  result.network = Network(cfg.network);
  SeededRng init_rng(SeededRng::derive(cfg.seed, 0x696e6974));  // "init"
  result.network.init_weights(init_rng);

  OptimizerConfig opt_cfg;
  opt_cfg.kind = cfg.optimizer;
  opt_cfg.lr = cfg.lr;
  result.optimizer = std::make_unique<Optimizer>(opt_cfg, result.network.params());

  SeededRng dropout_rng(SeededRng::derive(cfg.seed, 0x64726f70));  // "drop"
  std::vector<Param*> l2 = result.network.l2_params();
  std::vector<double> eval_errors;

  std::vector<int> order(size_t(train_set.count()));
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double lr = plateau_lr(cfg.lr, eval_errors, cfg.plateau_patience, cfg.plateau_min_delta);
    result.optimizer->set_lr(lr);

    SeededRng shuffle_rng(SeededRng::derive(SeededRng::derive(cfg.seed, 0x73687566), uint64_t(epoch)));
    for (int i = train_set.count() - 1; i > 0; --i) {
      int j = int(shuffle_rng.next_below(uint64_t(i + 1)));
      std::swap(order[size_t(i)], order[size_t(j)]);
    }
    SeededRng augment_rng(SeededRng::derive(SeededRng::derive(cfg.seed, 0x61756766), uint64_t(epoch)));

    double loss_sum = 0.0;
    int correct = 0;
    int batch_index = 0;
    for (int begin = 0; begin < train_set.count(); begin += cfg.batch_size, ++batch_index) {
      int end = std::min(train_set.count(), begin + cfg.batch_size);
      Tensor batch = batch_tensor(train_set, order, begin, end);
      if (cfg.augment) augment_batch(batch, augment_rng);
      std::vector<int> labels(size_t(end - begin));
      for (int i = begin; i < end; ++i) labels[size_t(i - begin)] = train_set.labels[size_t(order[size_t(i)])];

      Tape tape;
      Network::Trace trace = result.network.forward(tape, std::move(batch), Mode::Train, &dropout_rng);
      int loss_node = softmax_cross_entropy_loss(tape, trace.logits, labels, cfg.l2_lambda, l2);
      double loss = tape.value(loss_node)[0];
      if (!std::isfinite(loss)) diagnose_nonfinite(tape, batch_index);

      const Tensor& logits = tape.value(trace.logits);
      const int C = logits.extent(1);
      for (int i = 0; i < end - begin; ++i)
        if (argmax_row(logits.data() + size_t(i) * C, C) == labels[size_t(i)]) ++correct;
      loss_sum += loss * double(end - begin);

      result.network.zero_grads();
      tape.backward_scalar(loss_node);
      result.optimizer->step();
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss_sum / double(train_set.count());
    m.train_acc = double(correct) / double(train_set.count());
    if (test_set.count() > 0) {
      EvalResult ev = evaluate(result.network, test_set, cfg.batch_size);
      m.eval_loss = ev.loss;
      m.eval_acc = ev.accuracy;
    }
    m.lr = lr;
    eval_errors.push_back(test_set.count() > 0 ? 1.0 - m.eval_acc : 1.0 - m.train_acc);
    result.history.push_back(m);
    if (verbose)
      std::fprintf(stderr, "epoch %d: train_loss %.4f train_acc %.4f eval_acc %.4f lr %g\n",
                   epoch, m.train_loss, m.train_acc, m.eval_acc, lr);
    if (m.eval_acc >= cfg.stop_at_eval_acc) break;
  }
  result.dropout_rng_state = dropout_rng.state();
  return result;
}

TrainResult train(const TrainConfig& cfg, bool verbose) {
  if (cfg.train_data.empty()) throw std::invalid_argument("train: train_data path missing");
  PfdsDataset train_set = read_pfds(cfg.train_data);
  PfdsDataset test_set;
  if (!cfg.test_data.empty()) test_set = read_pfds(cfg.test_data);
  return train_on(cfg, train_set, test_set, verbose);
}

}  // namespace cyclenet
