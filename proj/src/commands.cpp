#include "laconv/commands.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "laconv/checkpoint.hpp"
#include "laconv/cost_model.hpp"
#include "laconv/net.hpp"
#include "laconv/synthworld.hpp"
#include "laconv/trainer.hpp"

namespace laconv {

namespace {

std::string timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%S", std::gmtime(&t));
    return buf;
}

void log_line(bool no_timestamp, const std::string& msg) {
    if (no_timestamp)
        std::cout << msg << "\n";
    else
        std::cout << "[" << timestamp() << "] " << msg << "\n";
}

struct TrainFlags {
    std::string data_dir;
    std::string config = "toy";
    std::string out_dir = "runs/out";
    std::string config_file;
    std::string ablation;
    TrainConfig tc;
    int groups = 0;
    int kernel = 0;
    bool no_packing = false;
    bool no_timestamp = false;
};

// --config-file supplies values for flags the user did not set explicitly:
// precedence is flags > file > defaults.
void merge_config_file(const CLI::App* cmd, TrainFlags& fl) {
    if (fl.config_file.empty()) return;
    std::ifstream is(fl.config_file);
    if (!is) throw IoError("cannot open config file: " + fl.config_file);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const std::exception& e) {
        throw ParseError(fl.config_file + ": " + e.what());
    }
    auto unset = [cmd](const std::string& flag) { return cmd->count(flag) == 0; };
    if (j.contains("config") && unset("--config")) fl.config = j["config"].get<std::string>();
    if (j.contains("epochs") && unset("--epochs")) fl.tc.epochs = j["epochs"].get<int>();
    if (j.contains("lr") && unset("--lr")) fl.tc.lr0 = j["lr"].get<double>();
    if (j.contains("seed") && unset("--seed")) fl.tc.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("batch_size") && unset("--batch-size"))
        fl.tc.batch_size = j["batch_size"].get<int>();
    if (j.contains("warmup_epochs") && unset("--warmup"))
        fl.tc.warmup_epochs = j["warmup_epochs"].get<int>();
    if (j.contains("eval_interval") && unset("--eval-interval"))
        fl.tc.eval_interval = j["eval_interval"].get<int>();
    if (j.contains("threads") && unset("--threads")) fl.tc.threads = j["threads"].get<int>();
}

NetConfig configured_net(const std::string& name, int groups, int kernel, bool no_packing,
                         const std::string& ablation) {
    NetConfig cfg = build_net(name);
    AblationSpec ab;
    ab.groups_override = groups;
    ab.kernel_override = kernel;
    ab.no_packing = no_packing;
    if (ablation == "language-only")
        ab.language_only = true;
    else if (!ablation.empty())
        throw ConfigError("unknown ablation '" + ablation + "' (expected language-only)");
    return apply_ablation(cfg, ab);
}

int cmd_gen_data(const std::string& out_dir, int n_train, int n_test, std::uint64_t seed,
                 bool no_timestamp) {
    std::filesystem::create_directories(out_dir);
    SynthDataset ds = generate_dataset(n_train, n_test, seed);
    const std::string path = out_dir + "/dataset.jsonl";
    write_dataset(ds, path);
    log_line(no_timestamp, "wrote " + std::to_string(ds.examples.size()) + " examples to " + path);
    return 0;
}

int cmd_train(const TrainFlags& fl) {
    const NetConfig net = configured_net(fl.config, fl.groups, fl.kernel, fl.no_packing, fl.ablation);
    SynthDataset ds = read_dataset(fl.data_dir + "/dataset.jsonl");
    log_line(fl.no_timestamp, "training " + net.name + " on " +
                                  std::to_string(ds.split("train").size()) + " examples");
    TrainRunResult res = train_run(net, fl.tc, ds, fl.out_dir, &std::cout);
    std::ostringstream os;
    os << "done; best eval_acc " << res.best_acc << " at epoch " << res.best_epoch << " ("
       << res.best_path << ")";
    log_line(fl.no_timestamp, os.str());
    return 0;
}

int cmd_eval(const std::string& data_dir, const std::string& ckpt, const std::string& split,
             int threads) {
    LoadedModel lm = load_model_checkpoint(ckpt);
    SynthDataset ds = read_dataset(data_dir + "/dataset.jsonl");
    const auto examples = ds.split(split);
    EvalResult ev = evaluate_model(lm.model, lm.vocab, examples, threads);
    nlohmann::json j;
    j["split"] = split;
    j["n"] = ev.metrics.n;
    j["acc"] = ev.metrics.acc;
    j["acc_attr"] = ev.metrics.acc_attribute;
    j["acc_spatial"] = ev.metrics.acc_spatial;
    std::cout << j.dump() << "\n";
    return 0;
}

int cmd_cost(const std::string& config, int resolution, int text_len, const std::string& csv_path,
             int groups, int kernel, bool no_packing) {
    NetConfig cfg = configured_net(config, groups, kernel, no_packing, "");
    if (resolution > 0) cfg.input_res = resolution;
    CostReport rep = report(cfg, text_len);
    std::cout << rep.table();
    if (!csv_path.empty()) {
        std::ofstream os(csv_path);
        if (!os) throw IoError("cannot open for write: " + csv_path);
        os << rep.csv();
    }
    return 0;
}

int cmd_inspect(const std::string& ckpt, const std::string& expression, std::uint64_t image_seed,
                const std::string& layer, const std::string& out_dir) {
    LoadedModel lm = load_model_checkpoint(ckpt);

    int stage = 0, block = 0;
    {
        std::istringstream is(layer);
        char dot = 0;
        if (!(is >> stage >> dot >> block) || dot != '.' || stage < 1 || block < 1)
            throw ConfigError("--layer must be '<stage>.<block>' (1-based), got '" + layer + "'");
    }
    if (stage > static_cast<int>(lm.model.cfg.stages.size()))
        throw ConfigError("stage " + std::to_string(stage) + " out of range");
    if (block > lm.model.cfg.stages[static_cast<std::size_t>(stage - 1)].blocks)
        throw ConfigError("block " + std::to_string(block) + " out of range for stage " +
                          std::to_string(stage));
    int flat = block - 1;
    for (int s = 0; s < stage - 1; ++s) flat += lm.model.cfg.stages[static_cast<std::size_t>(s)].blocks;

    Scene scene = gen_scene(image_seed);
    Tensor<float> img = render(scene);
    const std::vector<int> ids = tokenize(expression, lm.vocab);
    Ctx<float> ctx{nullptr, false, nullptr};
    TextFeatures<float> y = encode_text(ctx, ids, lm.model.text);
    std::vector<LaConvTrace<float>> traces;
    forward_backbone(ctx, lm.model, img, y, &traces);
    const LaConvTrace<float>& tr = traces[static_cast<std::size_t>(flat)];

    const StageConfig& st = lm.model.cfg.stages[static_cast<std::size_t>(stage - 1)];
    const int res = lm.model.cfg.input_res >> stage;
    const int k = st.kernel, g = st.groups;
    const int n = tr.affinity_heads.front().dim(0);
    const int l = tr.affinity_heads.front().dim(1);
    const int heads = static_cast<int>(tr.affinity_heads.size());

    std::filesystem::create_directories(out_dir);
    Checkpoint dump;
    {
        Tensor<float> a = Tensor<float>::zeros({heads, n, l});
        for (int hh = 0; hh < heads; ++hh)
            std::copy_n(tr.affinity_heads[static_cast<std::size_t>(hh)].data(),
                        std::int64_t(n) * l, a.data() + std::int64_t(hh) * n * l);
        dump.add("affinity", a);
    }
    dump.add("condition_packed", tr.condition_packed);
    dump.add("condition", tr.condition);
    {
        // same buffer, kernel-shaped view: (di, dj, group) row-major per position
        Tensor<float> w = Tensor<float>::from(
            {res, res, k, k, g}, std::vector<float>(tr.kernels.value().begin(), tr.kernels.value().end()));
        dump.add("kernels", w);
    }
    nlohmann::json meta;
    meta["expression"] = expression;
    meta["image_seed"] = image_seed;
    meta["layer"] = layer;
    dump.meta_json = meta.dump();
    dump.save(out_dir + "/inspect.lckp");

    std::ofstream csv(out_dir + "/summary.csv");
    if (!csv) throw IoError("cannot open for write: " + out_dir + "/summary.csv");
    csv << "position,group,kernel_l2\n";
    for (int pos = 0; pos < res * res; ++pos)
        for (int grp = 0; grp < g; ++grp) {
            double sq = 0;
            for (int tap = 0; tap < k * k; ++tap) {
                const float v = tr.kernels.data()[std::int64_t(pos) * (k * k * g) + tap * g + grp];
                sq += static_cast<double>(v) * v;
            }
            csv << pos << "," << grp << "," << std::sqrt(sq) << "\n";
        }
    std::cout << "wrote " << out_dir << "/inspect.lckp and " << out_dir << "/summary.csv\n";
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"language-guided dynamic convolution network"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate the synthetic referring-grid dataset");
    std::string gen_out;
    int n_train = 10000, n_test = 2000;
    std::uint64_t gen_seed = 0;
    bool gen_nots = false;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--n-train", n_train, "training examples");
    gen->add_option("--n-test", n_test, "test examples");
    gen->add_option("--seed", gen_seed, "generation seed");
    gen->add_flag("--no-timestamp", gen_nots, "suppress timestamps in log lines");

    // train
    auto* train = app.add_subcommand("train", "train on a generated dataset");
    TrainFlags fl;
    train->add_option("--data", fl.data_dir, "dataset directory")->required();
    train->add_option("--config", fl.config, "toy | paper-S | paper-B");
    train->add_option("--epochs", fl.tc.epochs, "training epochs");
    train->add_option("--lr", fl.tc.lr0, "initial learning rate");
    train->add_option("--seed", fl.tc.seed, "global seed");
    train->add_option("--out", fl.out_dir, "output directory")->required();
    train->add_option("--batch-size", fl.tc.batch_size, "batch size");
    train->add_option("--warmup", fl.tc.warmup_epochs, "warmup epochs");
    train->add_option("--eval-interval", fl.tc.eval_interval, "epochs between evaluations");
    train->add_option("--threads", fl.tc.threads, "worker threads (0 = hardware)");
    train->add_option("--config-file", fl.config_file, "JSON defaults merged under explicit flags");
    train->add_option("--ablation", fl.ablation, "language-only");
    train->add_option("--groups", fl.groups, "override group count in every stage");
    train->add_option("--kernel", fl.kernel, "override kernel size in every stage");
    train->add_flag("--no-packing", fl.no_packing, "force packing size 1 everywhere");
    train->add_flag("--no-timestamp", fl.no_timestamp, "suppress timestamps in log lines");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string ev_data, ev_ckpt, ev_split = "test";
    int ev_threads = 0;
    ev->add_option("--data", ev_data, "dataset directory")->required();
    ev->add_option("--checkpoint", ev_ckpt, "LCKP checkpoint")->required();
    ev->add_option("--split", ev_split, "train | test");
    ev->add_option("--threads", ev_threads, "worker threads");

    // cost
    auto* cost = app.add_subcommand("cost", "parameter / FLOP report");
    std::string cost_cfg, cost_csv;
    int cost_res = 0, cost_len = 8, cost_groups = 0, cost_kernel = 0;
    bool cost_nopack = false;
    cost->add_option("--config", cost_cfg, "toy | paper-S | paper-B")->required();
    cost->add_option("--resolution", cost_res, "override input resolution");
    cost->add_option("--text-len", cost_len, "text length used for attention FLOPs");
    cost->add_option("--csv", cost_csv, "also write CSV here");
    cost->add_option("--groups", cost_groups, "override group count");
    cost->add_option("--kernel", cost_kernel, "override kernel size");
    cost->add_flag("--no-packing", cost_nopack, "force packing size 1");

    // inspect
    auto* insp = app.add_subcommand("inspect", "dump affinity / condition / kernels for one layer");
    std::string i_ckpt, i_expr, i_layer, i_out;
    std::uint64_t i_seed = 0;
    insp->add_option("--checkpoint", i_ckpt, "LCKP checkpoint")->required();
    insp->add_option("--expression", i_expr, "referring expression")->required();
    insp->add_option("--image-seed", i_seed, "scene seed to render");
    insp->add_option("--layer", i_layer, "<stage>.<block>, 1-based")->required();
    insp->add_option("--out", i_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(gen_out, n_train, n_test, gen_seed, gen_nots);
        if (train->parsed()) {
            merge_config_file(train, fl);
            return cmd_train(fl);
        }
        if (ev->parsed()) return cmd_eval(ev_data, ev_ckpt, ev_split, ev_threads);
        if (cost->parsed())
            return cmd_cost(cost_cfg, cost_res, cost_len, cost_csv, cost_groups, cost_kernel,
                            cost_nopack);
        if (insp->parsed()) return cmd_inspect(i_ckpt, i_expr, i_seed, i_layer, i_out);
    } catch (const ConfigError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const InputError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << e.what() << "\n";
        return 3;
    } catch (const ParseError& e) {
        std::cerr << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

}  // namespace laconv
