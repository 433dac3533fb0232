#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

#include "ocr/checkpoint.hpp"
#include "ocr/evaluate.hpp"
#include "ocr/threads.hpp"

namespace ocr {

using TrainScalar = float;

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 0.0;
  std::int64_t epochs = 15;
  std::int64_t batch_size = 48;
  std::uint64_t seed = 0;
  MixSpec mix;                                   // fractions per dataset tag
  std::map<std::string, std::string> datasets;   // tag -> JSONL path or "synth:<n>:<seed>"
  CaseMode case_mode = CaseMode::insensitive;
  std::string preset = "desk";
  std::string checkpoint_dir = "checkpoints";
  std::string metrics_path;                      // default: <checkpoint_dir>/metrics.csv
  std::int64_t log_every = 50;
  std::int64_t max_steps = 0;                    // 0 = run the epoch schedule
  double stop_at_train_acc = 0.0;                // 0 = off
  std::int64_t acc_slice = 32;                   // held slice for train accuracy
  int threads = 1;
  int workers = 0;                               // 0 = synchronous batch assembly
  std::string resume;                            // checkpoint to continue from
};

struct TrainResult {
  std::string final_checkpoint;
  std::string metrics_path;
  double final_train_acc = 0.0;
  std::int64_t steps = 0;
};

// Raised on a non-finite loss; the most recent checkpoint stays on disk.
struct TrainAbort : std::runtime_error {
  explicit TrainAbort(const std::string& msg, std::string last_good)
      : std::runtime_error(msg), last_good_checkpoint(std::move(last_good)) {}
  std::string last_good_checkpoint;
};

// Flat key=value file or a JSON object; '#' starts a comment line.
TrainConfig parse_train_config(const std::string& path);
void apply_override(TrainConfig& config, const std::string& key_value);

// "synth:<n>:<seed>" generates a corpus in memory; anything else loads the
// JSONL annotation at that path.
std::map<std::string, std::vector<WordSample>> resolve_datasets(const TrainConfig& config);

namespace detail {

// Mixing with replacement has no natural epoch; one epoch is defined as
// ceil(N_largest / (batch * fraction_largest)) steps.
inline std::int64_t steps_per_epoch(const MixSpec& mix, const std::map<std::string, std::vector<WordSample>>& data) {
  std::int64_t n_largest = 0;
  double frac_largest = 1.0;
  for (const auto& [tag, frac] : mix.entries) {
    const auto it = data.find(tag);
    if (it == data.end()) throw std::invalid_argument("train: unknown dataset tag '" + tag + "' in mix");
    const auto n = static_cast<std::int64_t>(it->second.size());
    if (n > n_largest) {
      n_largest = n;
      frac_largest = frac;
    }
  }
  const double denom = static_cast<double>(mix.batch_size) * std::max(frac_largest, 1e-12);
  return std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(static_cast<double>(n_largest) / denom)));
}

// Bounded producer/consumer queue for prepared batches. Batch content is a
// pure function of (seed, step), so worker count never changes results.
class BatchQueue {
 public:
  explicit BatchQueue(std::size_t capacity = 4) : capacity_(capacity) {}

  // Returns false once the consumer has stopped; the producer exits then.
  bool push(Batch<TrainScalar>&& b) {
    std::unique_lock lk(mu_);
    cv_space_.wait(lk, [&] { return q_.size() < capacity_ || stopped_; });
    if (stopped_) return false;
    q_.push_back(std::move(b));
    cv_item_.notify_one();
    return true;
  }

  Batch<TrainScalar> pop() {
    std::unique_lock lk(mu_);
    cv_item_.wait(lk, [&] { return !q_.empty() || err_; });
    if (q_.empty() && err_) std::rethrow_exception(err_);
    Batch<TrainScalar> b = std::move(q_.front());
    q_.pop_front();
    cv_space_.notify_one();
    return b;
  }

  void fail(std::exception_ptr e) {
    std::lock_guard lk(mu_);
    err_ = e;
    cv_item_.notify_all();
  }

  void stop() {
    std::lock_guard lk(mu_);
    stopped_ = true;
    cv_space_.notify_all();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_item_, cv_space_;
  std::deque<Batch<TrainScalar>> q_;
  std::size_t capacity_;
  bool stopped_ = false;
  std::exception_ptr err_;
};

}  // namespace detail

// End-to-end training: batch -> preprocess -> TPS -> backbone ->
// teacher-forced head -> NLL(ignore pad) -> backward -> Adam, constant lr,
// one checkpoint per epoch plus a final one, metrics appended to CSV.
inline TrainResult train(const TrainConfig& config,
                         const std::map<std::string, std::vector<WordSample>>& datasets) {
  namespace fs = std::filesystem;
  if (config.lr <= 0) throw std::invalid_argument("train: lr must be positive");
  if (config.epochs < 1 || config.batch_size < 1) throw std::invalid_argument("train: epochs and batch_size must be >= 1");
  for (const auto& [tag, frac] : config.mix.entries) {
    const auto it = datasets.find(tag);
    if (it == datasets.end() || (it->second.empty() && frac > 0))
      throw std::invalid_argument("train: dataset '" + tag + "' is missing or empty");
  }
  set_num_threads(config.threads);
  fs::create_directories(config.checkpoint_dir);
  const std::string metrics_path =
      config.metrics_path.empty() ? (fs::path(config.checkpoint_dir) / "metrics.csv").string() : config.metrics_path;

  MixSpec mix = config.mix;
  mix.batch_size = config.batch_size;
  const std::int64_t per_epoch = detail::steps_per_epoch(mix, datasets);
  const std::int64_t total_steps = config.max_steps > 0 ? config.max_steps : config.epochs * per_epoch;

  ModelConfig model_config = ModelConfig::preset_by_name(config.preset, config.case_mode);
  Model<TrainScalar> model = Model<TrainScalar>::make(model_config, config.seed);
  NamedParams<TrainScalar> params = model.params();
  std::vector<Tensor<TrainScalar>> param_list = params.tensors();
  AdamState<TrainScalar> adam = AdamState<TrainScalar>::init(param_list, config.lr);
  adam.weight_decay = config.weight_decay;
  std::int64_t start_step = 0;
  if (!config.resume.empty()) {
    auto loaded = load_checkpoint<TrainScalar>(config.resume);
    if (loaded.config.preset != config.preset)
      throw std::invalid_argument("train: checkpoint preset '" + loaded.config.preset + "' does not match requested '" +
                                  config.preset + "'");
    if (!loaded.has_optimizer) throw std::invalid_argument("train: checkpoint has no optimizer state, cannot resume");
    model = std::move(loaded.model);
    params = model.params();
    param_list = params.tensors();
    adam = std::move(loaded.optimizer);
    start_step = loaded.step;
  }

  // Held slice for train accuracy, in dataset order.
  std::vector<WordSample> acc_slice;
  for (const auto& [tag, frac] : mix.entries) {
    for (const auto& s : datasets.at(tag)) {
      if (static_cast<std::int64_t>(acc_slice.size()) >= config.acc_slice) break;
      acc_slice.push_back(s);
    }
  }

  std::ofstream metrics(metrics_path);
  if (!metrics) throw std::runtime_error("train: cannot write metrics to " + metrics_path);
  metrics << "step,epoch,loss,lr,ms_per_step,train_acc\n";

  auto make_step_batch = [&](std::int64_t step) {
    RandomStream rng(RandomStream::mix(config.seed, static_cast<std::uint64_t>(step)));
    return make_batch<TrainScalar>(datasets, mix, model.vocab, rng, /*augment=*/true);
  };

  detail::BatchQueue queue;
  std::thread producer;
  if (config.workers > 0) {
    producer = std::thread([&] {
      try {
        for (std::int64_t s = start_step; s < total_steps; ++s)
          if (!queue.push(make_step_batch(s))) break;
      } catch (...) {
        queue.fail(std::current_exception());
      }
    });
  }
  auto join_producer = [&] {
    if (producer.joinable()) {
      queue.stop();
      producer.join();
    }
  };

  std::string last_checkpoint;
  double train_acc = 0.0;
  std::int64_t steps_run = 0;
  char row[256];
  try {
    for (std::int64_t s = start_step; s < total_steps; ++s) {
      const auto t0 = std::chrono::steady_clock::now();
      Batch<TrainScalar> batch = config.workers > 0 ? queue.pop() : make_step_batch(s);
      params.zero_grads();
      Tensor<TrainScalar> log_probs = model.teacher_forced_log_probs(batch.images, batch.targets, batch.target_len);
      Tensor<TrainScalar> loss = nll_loss(log_probs, batch.targets, model.vocab.pad());
      const double loss_v = static_cast<double>(loss.item());
      if (!std::isfinite(loss_v)) {
        join_producer();
        throw TrainAbort("train: non-finite loss " + std::to_string(loss_v) + " at step " + std::to_string(s + 1) +
                             (last_checkpoint.empty() ? " (no checkpoint written yet)"
                                                      : ", last good checkpoint: " + last_checkpoint),
                         last_checkpoint);
      }
      backward(loss);
      adam_step(param_list, adam);
      const double ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      steps_run = s + 1;

      const bool log_now = s == start_step || (s + 1) % config.log_every == 0 || s + 1 == total_steps;
      if (log_now) {
        if (!acc_slice.empty()) {
          std::vector<std::string> truths;
          for (const auto& w : acc_slice) truths.push_back(w.text);
          train_acc = word_accuracy(predict_strings(model, acc_slice, config.batch_size), truths, config.case_mode);
        }
        std::snprintf(row, sizeof(row), "%lld,%lld,%.17g,%.17g,%.3f,%.17g\n", static_cast<long long>(s + 1),
                      static_cast<long long>(s / per_epoch + 1), loss_v, config.lr, ms, train_acc);
        metrics << row;
        metrics.flush();
        if (config.stop_at_train_acc > 0 && train_acc >= config.stop_at_train_acc) {
          const std::string path = (fs::path(config.checkpoint_dir) / "final.trck").string();
          save_checkpoint(path, model, s + 1, &adam);
          last_checkpoint = path;
          join_producer();
          return {path, metrics_path, train_acc, steps_run};
        }
      }
      if ((s + 1) % per_epoch == 0) {
        std::snprintf(row, sizeof(row), "epoch_%04lld.trck", static_cast<long long>((s + 1) / per_epoch));
        const std::string path = (fs::path(config.checkpoint_dir) / row).string();
        save_checkpoint(path, model, s + 1, &adam);
        last_checkpoint = path;
      }
    }
  } catch (...) {
    join_producer();
    throw;
  }
  join_producer();
  const std::string path = (fs::path(config.checkpoint_dir) / "final.trck").string();
  save_checkpoint(path, model, total_steps, &adam);
  return {path, metrics_path, train_acc, steps_run};
}

inline TrainResult train(const TrainConfig& config) { return train(config, resolve_datasets(config)); }

}  // namespace ocr
