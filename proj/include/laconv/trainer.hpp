#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "laconv/net.hpp"
#include "laconv/synthworld.hpp"
#include "laconv/vocab.hpp"

namespace laconv {

struct TrainConfig {
    double lr0 = 1e-4;
    int epochs = 40;
    int warmup_epochs = 3;
    int batch_size = 32;
    std::uint64_t seed = 0;
    int eval_interval = 5;
    std::string checkpoint_dir;
    double clip_norm = 5.0;
    int threads = 0;  // 0 = one replica per hardware thread

    void validate() const {
        if (lr0 <= 0) throw ConfigError("lr0 must be positive");
        if (epochs < 1) throw ConfigError("epochs must be positive");
        if (warmup_epochs < 0 || warmup_epochs >= epochs)
            throw ConfigError("warmup_epochs must be in [0, epochs)");
        if (batch_size < 1) throw ConfigError("batch size must be positive");
        if (eval_interval < 1) throw ConfigError("eval interval must be positive");
    }
};

// Linear ramp to lr0 over the warmup steps, then half-cosine decay to zero.
inline double lr_schedule(std::int64_t step, std::int64_t total_steps, std::int64_t warmup_steps,
                          double lr0) {
    if (step < 0 || step > total_steps) throw ConfigError("lr_schedule step out of range");
    if (warmup_steps > 0 && step <= warmup_steps)
        return lr0 * static_cast<double>(step) / static_cast<double>(warmup_steps);
    const double t = static_cast<double>(step - warmup_steps) /
                     static_cast<double>(total_steps - warmup_steps);
    return lr0 * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
}

struct AdamState {
    std::int64_t t = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::vector<std::vector<float>> m, v;

    static AdamState init(const std::vector<Tensor<float>>& params);
};

// Standard bias-corrected update; grads[i] pairs with params[i].
void adam_step(std::vector<Tensor<float>>& params, const std::vector<std::vector<float>>& grads,
               AdamState& state, double lr);

// Scales grads in place when the global L2 norm exceeds max_norm; returns
// the factor applied (1 when under the threshold).
double clip_global_norm(std::vector<std::vector<float>>& grads, double max_norm);

struct EpochMetrics {
    double loss = 0;
    double accuracy = 0;
    double lr_last = 0;
};

struct EvalMetrics {
    double acc = 0, acc_attribute = 0, acc_spatial = 0;
    int n = 0, n_attribute = 0, n_spatial = 0;
};

struct EvalResult {
    EvalMetrics metrics;
    std::vector<int> predictions;  // argmax cell per example
};

// Owns the master parameters, the optimizer state and the per-thread model
// replicas. Batches fan out one example per replica slot; gradients merge in
// replica order and deferred BN running-stat updates commit in example
// order, so a run is reproducible for a fixed thread count.
class Trainer {
  public:
    Trainer(const NetConfig& netcfg, const TrainConfig& cfg, const Vocabulary& vocab,
            int n_train_examples);

    Model<float>& model() { return model_; }
    const Vocabulary& vocab() const { return vocab_; }
    std::int64_t total_steps() const { return total_steps_; }
    std::int64_t warmup_steps() const { return warmup_steps_; }
    std::int64_t steps_done() const { return step_; }

    // One pass over the examples: seeded shuffle, cross-entropy on the
    // locate head, backward, global-norm clip at cfg.clip_norm, Adam.
    // Aborts with a diagnostic dump on non-finite loss.
    EpochMetrics train_epoch(const std::vector<SynthExample>& examples, int epoch_index);

    EvalResult evaluate(const std::vector<SynthExample>& examples);

    void save_checkpoint(const std::string& path);

  private:
    struct Replica;

    NetConfig netcfg_;
    TrainConfig cfg_;
    Vocabulary vocab_;
    Model<float> model_;
    std::vector<Tensor<float>> params_;
    std::vector<BnState<float>*> bn_states_;
    AdamState adam_;
    std::int64_t step_ = 0;
    std::int64_t total_steps_ = 0;
    std::int64_t warmup_steps_ = 0;
    std::vector<std::shared_ptr<Replica>> replicas_;

    void ensure_replicas(int n);
    void refresh_replicas(bool copy_bn);
};

// Read-only evaluation with per-thread model replicas; exact-cell accuracy
// overall and split by expression kind. BN always runs on running stats.
EvalResult evaluate_model(const Model<float>& model, const Vocabulary& vocab,
                          const std::vector<SynthExample>& examples, int threads = 0);

// Model + vocab + config packaged into the LCKP container.
void save_model_checkpoint(Model<float>& model, const Vocabulary& vocab, const std::string& path);
struct LoadedModel {
    Model<float> model;
    Vocabulary vocab;
};
LoadedModel load_model_checkpoint(const std::string& path);

struct TrainRunResult {
    double best_acc = -1;
    int best_epoch = -1;
    std::string best_path;
    EvalMetrics final_eval;
    std::vector<std::string> metric_lines;
};

// Full recipe: epochs of train_epoch, periodic evaluation and checkpoints,
// best.lckp tracked by eval accuracy, metrics appended to metrics.jsonl
// under out_dir.
TrainRunResult train_run(const NetConfig& netcfg, const TrainConfig& cfg, const SynthDataset& data,
                         const std::string& out_dir, std::ostream* log);

}  // namespace laconv
