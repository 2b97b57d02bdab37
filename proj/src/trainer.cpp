#include "laconv/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <unordered_map>

#include <json.hpp>

#include "laconv/checkpoint.hpp"

namespace laconv {

AdamState AdamState::init(const std::vector<Tensor<float>>& params) {
    AdamState s;
    s.m.resize(params.size());
    s.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        s.m[i].assign(static_cast<std::size_t>(params[i].numel()), 0.f);
        s.v[i].assign(static_cast<std::size_t>(params[i].numel()), 0.f);
    }
    return s;
}

void adam_step(std::vector<Tensor<float>>& params, const std::vector<std::vector<float>>& grads,
               AdamState& state, double lr) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw DimError("adam_step: param/grad/state count mismatch");
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (static_cast<std::int64_t>(grads[i].size()) != params[i].numel())
            throw DimError("adam_step: grad shape mismatch at param " + std::to_string(i));
        float* p = params[i].data();
        float* m = state.m[i].data();
        float* v = state.v[i].data();
        const float* g = grads[i].data();
        const std::int64_t n = params[i].numel();
        for (std::int64_t j = 0; j < n; ++j) {
            m[j] = static_cast<float>(state.beta1 * m[j] + (1.0 - state.beta1) * g[j]);
            v[j] = static_cast<float>(state.beta2 * v[j] +
                                      (1.0 - state.beta2) * static_cast<double>(g[j]) * g[j]);
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p[j] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + state.eps));
        }
    }
}

double clip_global_norm(std::vector<std::vector<float>>& grads, double max_norm) {
    double sq = 0;
    for (const auto& g : grads)
        for (float v : g) sq += static_cast<double>(v) * v;
    const double norm = std::sqrt(sq);
    if (norm <= max_norm || norm == 0) return 1.0;
    const double factor = max_norm / norm;
    for (auto& g : grads)
        for (float& v : g) v = static_cast<float>(v * factor);
    return factor;
}

struct Trainer::Replica {
    Model<float> model;
    std::vector<Tensor<float>> params;
    std::unordered_map<BnState<float>*, int> bn_index;
};

Trainer::Trainer(const NetConfig& netcfg, const TrainConfig& cfg, const Vocabulary& vocab,
                 int n_train_examples)
    : netcfg_(netcfg), cfg_(cfg), vocab_(vocab) {
    cfg_.validate();
    if (n_train_examples < 1) throw InputError("trainer needs at least one training example");
    model_ = Model<float>::init(netcfg_, vocab_.size(), cfg_.seed + 1);
    model_.set_requires_grad(true);
    model_.visit_params([this](const std::string&, Tensor<float>& t) { params_.push_back(t); });
    model_.visit_bn([this](const std::string&, BnState<float>& s) { bn_states_.push_back(&s); });
    adam_ = AdamState::init(params_);
    const std::int64_t steps_per_epoch =
        (n_train_examples + cfg_.batch_size - 1) / cfg_.batch_size;
    total_steps_ = steps_per_epoch * cfg_.epochs;
    warmup_steps_ = steps_per_epoch * cfg_.warmup_epochs;
}

void Trainer::ensure_replicas(int n) {
    while (static_cast<int>(replicas_.size()) < n) {
        auto rep = std::make_shared<Replica>();
        rep->model = model_.clone();
        rep->model.set_requires_grad(true);
        rep->model.visit_params(
            [&rep](const std::string&, Tensor<float>& t) { rep->params.push_back(t); });
        int idx = 0;
        rep->model.visit_bn([&rep, &idx](const std::string&, BnState<float>& s) {
            rep->bn_index[&s] = idx++;
        });
        replicas_.push_back(std::move(rep));
    }
}

void Trainer::refresh_replicas(bool copy_bn) {
    for (auto& rep : replicas_) {
        for (std::size_t i = 0; i < params_.size(); ++i) {
            std::copy(params_[i].value().begin(), params_[i].value().end(),
                      rep->params[i].value().begin());
            rep->params[i].zero_grad();
        }
        if (copy_bn) {
            int idx = 0;
            rep->model.visit_bn([this, &idx](const std::string&, BnState<float>& s) {
                BnState<float>* master = bn_states_[static_cast<std::size_t>(idx++)];
                std::copy(master->running_mean.value().begin(), master->running_mean.value().end(),
                          s.running_mean.value().begin());
                std::copy(master->running_var.value().begin(), master->running_var.value().end(),
                          s.running_var.value().begin());
            });
        }
    }
}

namespace {

int desired_replicas(int cfg_threads, int batch) {
    int n = cfg_threads > 0 ? cfg_threads : hardware_threads();
    return std::max(1, std::min(n, batch));
}

struct ExampleOutcome {
    double loss = 0;
    int prediction = -1;
};

}  // namespace

EpochMetrics Trainer::train_epoch(const std::vector<SynthExample>& examples, int epoch_index) {
    if (examples.empty()) throw InputError("train_epoch: empty dataset");
    const int n = static_cast<int>(examples.size());
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng shuffle_rng(cfg_.seed * 0x9e3779b97f4a7c15ull + 0xc2b2ae3d27d4eb4full +
                    static_cast<std::uint64_t>(epoch_index));
    for (int i = n - 1; i > 0; --i) {
        const int j = static_cast<int>(shuffle_rng.below(static_cast<std::uint64_t>(i + 1)));
        std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }

    double loss_sum = 0;
    std::int64_t correct = 0;
    double lr_last = 0;
    std::vector<std::vector<float>> grads(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i)
        grads[i].assign(static_cast<std::size_t>(params_[i].numel()), 0.f);

    for (int b0 = 0; b0 < n; b0 += cfg_.batch_size) {
        const int bn = std::min(cfg_.batch_size, n - b0);
        const int nrep = desired_replicas(cfg_.threads, bn);
        ensure_replicas(nrep);
        refresh_replicas(false);

        std::vector<BnUpdateLog<float>> logs(static_cast<std::size_t>(bn));
        std::vector<ExampleOutcome> outcomes(static_cast<std::size_t>(bn));
        std::vector<int> owner(static_cast<std::size_t>(bn));
        for (int e = 0; e < bn; ++e)
            owner[static_cast<std::size_t>(e)] = static_cast<int>(std::int64_t(e) * nrep / bn);

#pragma omp parallel for schedule(static, 1) num_threads(nrep)
        for (int r = 0; r < nrep; ++r) {
            Replica& rep = *replicas_[static_cast<std::size_t>(r)];
            for (int e = 0; e < bn; ++e) {
                if (owner[static_cast<std::size_t>(e)] != r) continue;
                const SynthExample& ex = examples[static_cast<std::size_t>(
                    order[static_cast<std::size_t>(b0 + e)])];
                Tensor<float> img = render(gen_scene(ex.seed));
                const std::vector<int> ids = tokenize(ex.expression, vocab_);
                Tape<float> tape;
                Ctx<float> ctx{&tape, true, &logs[static_cast<std::size_t>(e)]};
                TextFeatures<float> y = encode_text(ctx, ids, rep.model.text);
                auto feats = forward_backbone(ctx, rep.model, img, y);
                Tensor<float> logits = locate_head(ctx, rep.model, feats.back());
                Tensor<float> loss = cross_entropy_logits(&tape, logits, ex.target);
                int argmax = 0;
                for (int c = 1; c < logits.numel(); ++c)
                    if (logits.data()[c] > logits.data()[argmax]) argmax = c;
                outcomes[static_cast<std::size_t>(e)] = {static_cast<double>(loss.data()[0]),
                                                         argmax};
                loss.grad()[0] = 1.f / static_cast<float>(bn);
                tape.backward();
            }
        }

        bool finite = true;
        for (int e = 0; e < bn; ++e) {
            const auto& oc = outcomes[static_cast<std::size_t>(e)];
            if (!std::isfinite(oc.loss)) finite = false;
            loss_sum += oc.loss;
            const SynthExample& ex =
                examples[static_cast<std::size_t>(order[static_cast<std::size_t>(b0 + e)])];
            if (oc.prediction == ex.target) ++correct;
        }
        if (!finite) {
            nlohmann::json dump;
            dump["epoch"] = epoch_index;
            dump["step"] = step_ + 1;
            dump["batch"] = nlohmann::json::array();
            for (int e = 0; e < bn; ++e) {
                const SynthExample& ex =
                    examples[static_cast<std::size_t>(order[static_cast<std::size_t>(b0 + e)])];
                dump["batch"].push_back({{"seed", ex.seed},
                                         {"expression", ex.expression},
                                         {"target", ex.target},
                                         {"loss", outcomes[static_cast<std::size_t>(e)].loss}});
            }
            const std::string path =
                (cfg_.checkpoint_dir.empty() ? std::string(".") : cfg_.checkpoint_dir) +
                "/nan_batch_dump.json";
            std::ofstream(path) << dump.dump(2) << "\n";
            throw NumericError("non-finite training loss at epoch " + std::to_string(epoch_index) +
                               ", diagnostic dump written to " + path);
        }

        // deterministic merge: replica order for gradients
        for (auto& g : grads) std::fill(g.begin(), g.end(), 0.f);
        for (int r = 0; r < nrep; ++r) {
            Replica& rep = *replicas_[static_cast<std::size_t>(r)];
            for (std::size_t i = 0; i < params_.size(); ++i) {
                const auto gsrc = rep.params[i].grad();
                float* dst = grads[i].data();
                for (std::int64_t j = 0; j < params_[i].numel(); ++j) dst[j] += gsrc[j];
            }
        }
        clip_global_norm(grads, cfg_.clip_norm);
        ++step_;
        lr_last = lr_schedule(step_, total_steps_, warmup_steps_, cfg_.lr0);
        adam_step(params_, grads, adam_, lr_last);

        // example order for the deferred BN running-stat updates
        for (int e = 0; e < bn; ++e) {
            Replica& rep = *replicas_[static_cast<std::size_t>(owner[static_cast<std::size_t>(e)])];
            for (const auto& up : logs[static_cast<std::size_t>(e)]) {
                const int idx = rep.bn_index.at(up.state);
                bn_states_[static_cast<std::size_t>(idx)]->apply_update(up.mean, up.var);
            }
        }
    }

    EpochMetrics m;
    m.loss = loss_sum / n;
    m.accuracy = static_cast<double>(correct) / n;
    m.lr_last = lr_last;
    return m;
}

EvalResult Trainer::evaluate(const std::vector<SynthExample>& examples) {
    return evaluate_model(model_, vocab_, examples, cfg_.threads);
}

EvalResult evaluate_model(const Model<float>& model, const Vocabulary& vocab,
                          const std::vector<SynthExample>& examples, int threads) {
    if (examples.empty()) throw InputError("evaluate: empty dataset");
    const int n = static_cast<int>(examples.size());
    const int nrep = desired_replicas(threads, n);
    std::vector<Model<float>> reps;
    reps.reserve(static_cast<std::size_t>(nrep));
    for (int r = 0; r < nrep; ++r) reps.push_back(model.clone());

    std::vector<int> preds(static_cast<std::size_t>(n), -1);
#pragma omp parallel for schedule(static, 1) num_threads(nrep)
    for (int r = 0; r < nrep; ++r) {
        Model<float>& rep = reps[static_cast<std::size_t>(r)];
        for (int e = r; e < n; e += nrep) {
            const SynthExample& ex = examples[static_cast<std::size_t>(e)];
            Tensor<float> img = render(gen_scene(ex.seed));
            const std::vector<int> ids = tokenize(ex.expression, vocab);
            Ctx<float> ctx{nullptr, false, nullptr};
            TextFeatures<float> y = encode_text(ctx, ids, rep.text);
            auto feats = forward_backbone(ctx, rep, img, y);
            Tensor<float> logits = locate_head(ctx, rep, feats.back());
            int argmax = 0;
            for (int c = 1; c < logits.numel(); ++c)
                if (logits.data()[c] > logits.data()[argmax]) argmax = c;
            preds[static_cast<std::size_t>(e)] = argmax;
        }
    }

    EvalResult res;
    res.predictions = preds;
    for (int e = 0; e < n; ++e) {
        const SynthExample& ex = examples[static_cast<std::size_t>(e)];
        const bool hit = preds[static_cast<std::size_t>(e)] == ex.target;
        res.metrics.n += 1;
        res.metrics.acc += hit ? 1 : 0;
        if (ex.kind == "attribute") {
            res.metrics.n_attribute += 1;
            res.metrics.acc_attribute += hit ? 1 : 0;
        } else if (ex.kind == "spatial") {
            res.metrics.n_spatial += 1;
            res.metrics.acc_spatial += hit ? 1 : 0;
        }
    }
    res.metrics.acc /= res.metrics.n;
    if (res.metrics.n_attribute) res.metrics.acc_attribute /= res.metrics.n_attribute;
    if (res.metrics.n_spatial) res.metrics.acc_spatial /= res.metrics.n_spatial;
    return res;
}

void Trainer::save_checkpoint(const std::string& path) {
    save_model_checkpoint(model_, vocab_, path);
}

void save_model_checkpoint(Model<float>& model, const Vocabulary& vocab, const std::string& path) {
    Checkpoint ck;
    model.visit_params(
        [&ck](const std::string& name, Tensor<float>& t) { ck.add(name, t); });
    model.visit_bn([&ck](const std::string& name, BnState<float>& s) {
        ck.add(name + ".running_mean", s.running_mean);
        ck.add(name + ".running_var", s.running_var);
    });
    nlohmann::json meta;
    meta["net"] = nlohmann::json::parse(model.cfg.to_json());
    meta["vocab"] = nlohmann::json::parse(vocab.to_json());
    ck.meta_json = meta.dump();
    ck.save(path);
}

LoadedModel load_model_checkpoint(const std::string& path) {
    Checkpoint ck = Checkpoint::load(path);
    nlohmann::json meta = nlohmann::json::parse(ck.meta_json);
    if (!meta.contains("net") || !meta.contains("vocab"))
        throw IoError("checkpoint missing net/vocab metadata: " + path);
    LoadedModel lm;
    lm.vocab = Vocabulary::from_json(meta["vocab"].dump());
    const NetConfig cfg = NetConfig::from_json(meta["net"].dump());
    lm.model = Model<float>::init(cfg, lm.vocab.size(), 0);
    auto restore = [&ck](const std::string& name, Tensor<float>& t) {
        const auto& e = ck.find(name);
        if (e.shape != t.shape())
            throw IoError("checkpoint entry " + name + " has shape " + shape_str(e.shape) +
                          ", expected " + shape_str(t.shape()));
        std::copy(e.data.begin(), e.data.end(), t.value().begin());
    };
    lm.model.visit_params(restore);
    lm.model.visit_bn([&restore](const std::string& name, BnState<float>& s) {
        restore(name + ".running_mean", s.running_mean);
        restore(name + ".running_var", s.running_var);
    });
    return lm;
}

TrainRunResult train_run(const NetConfig& netcfg, const TrainConfig& cfg, const SynthDataset& data,
                         const std::string& out_dir, std::ostream* log) {
    cfg.validate();
    std::filesystem::create_directories(out_dir);
    const auto train = data.split("train");
    const auto test = data.split("test");
    if (train.empty()) throw InputError("train_run: no training examples");

    Vocabulary vocab = Vocabulary::from_tokens(grammar_tokens());
    TrainConfig tc = cfg;
    tc.checkpoint_dir = out_dir;
    Trainer trainer(netcfg, tc, vocab, static_cast<int>(train.size()));

    const std::string metrics_path = out_dir + "/metrics.jsonl";
    std::ofstream metrics(metrics_path, std::ios::trunc);
    if (!metrics) throw IoError("cannot open " + metrics_path);

    TrainRunResult result;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        EpochMetrics em = trainer.train_epoch(train, epoch);
        nlohmann::json line;
        line["epoch"] = epoch;
        line["lr"] = em.lr_last;
        line["train_loss"] = em.loss;
        const bool eval_now = !test.empty() && (epoch % cfg.eval_interval == 0 || epoch == cfg.epochs);
        if (eval_now) {
            EvalResult ev = trainer.evaluate(test);
            line["eval_acc"] = ev.metrics.acc;
            line["eval_acc_attr"] = ev.metrics.acc_attribute;
            line["eval_acc_spatial"] = ev.metrics.acc_spatial;
            trainer.save_checkpoint(out_dir + "/ckpt_epoch" + std::to_string(epoch) + ".lckp");
            if (ev.metrics.acc > result.best_acc) {
                result.best_acc = ev.metrics.acc;
                result.best_epoch = epoch;
                result.best_path = out_dir + "/best.lckp";
                trainer.save_checkpoint(result.best_path);
            }
            result.final_eval = ev.metrics;
        }
        const std::string ls = line.dump();
        metrics << ls << "\n";
        metrics.flush();
        result.metric_lines.push_back(ls);
        if (log) (*log) << ls << std::endl;
    }
    return result;
}

}  // namespace laconv
