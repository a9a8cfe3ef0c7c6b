#include "relforge/config.hpp"
#include "relforge/fd_agent.hpp"
#include "relforge/grad_check.hpp"
#include "relforge/metrics.hpp"
#include "relforge/rg_agent.hpp"
#include "relforge/scene.hpp"
#include "relforge/srg.hpp"
#include "relforge/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <iostream>
#include <memory>
#include <string>
#include <vector>

namespace {

using namespace relforge;
using nlohmann::json;

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string data_path;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool with_data = true) {
    cmd->add_option("--config", opts.config_path, "JSON config file");
    cmd->add_option("--set", opts.overrides, "key=value override, repeatable");
    if (with_data)
        cmd->add_option("--data", opts.data_path,
                        "dataset JSONL (generated from the config when omitted)");
}

RunConfig resolve(const CommonOpts& opts) {
    RunConfig cfg = load_run_config(opts.config_path);
    for (const auto& assignment : opts.overrides) apply_override(cfg, assignment);
    validate_run_config(cfg);
    return cfg;
}

struct Splits {
    std::vector<SceneClip> train, eval;
};

Splits load_splits(const RunConfig& cfg, const std::string& data_path) {
    std::vector<SceneClip> all = data_path.empty()
                                     ? generate_dataset(scene_config(cfg), cfg.seed)
                                     : read_dataset_jsonl(data_path);
    const size_t need = static_cast<size_t>(cfg.train_clips) + static_cast<size_t>(cfg.eval_clips);
    if (all.size() < need)
        throw std::runtime_error("dataset holds " + std::to_string(all.size()) +
                                 " clips, config needs " + std::to_string(need));
    Splits s;
    s.train.assign(all.begin(), all.begin() + cfg.train_clips);
    s.eval.assign(all.begin() + cfg.train_clips, all.begin() + static_cast<long>(need));
    return s;
}

// One bundle of the three models over their stores, zero-initialized or
// randomly initialized depending on `init`.
struct System {
    ParamStore srg_store, fd_store, rg_store;
    std::unique_ptr<SrgModel> srg;
    std::unique_ptr<FdAgent> fd;
    std::unique_ptr<RgAgent> rg;
};

System build_system(const RunConfig& cfg, bool random_init) {
    System sys;
    Rng root(cfg.seed);
    Rng r1 = root.fork(11), r2 = root.fork(12), r3 = root.fork(13);
    sys.srg = std::make_unique<SrgModel>(srg_config(cfg), sys.srg_store,
                                         random_init ? &r1 : nullptr);
    sys.fd = std::make_unique<FdAgent>(fd_config(cfg), sys.fd_store, random_init ? &r2 : nullptr);
    sys.rg = std::make_unique<RgAgent>(rg_config(cfg), sys.rg_store, random_init ? &r3 : nullptr);
    return sys;
}

void load_system(System& sys, const std::string& path, bool require_agents) {
    const Checkpoint ckpt = Checkpoint::read(path);
    ckpt.load_into(sys.srg_store);
    if (ckpt.has_prefix("fd."))
        ckpt.load_into(sys.fd_store);
    else if (require_agents)
        throw std::runtime_error("checkpoint " + path + " holds no distillation agent");
    if (ckpt.has_prefix("rg."))
        ckpt.load_into(sys.rg_store);
    else if (require_agents)
        throw std::runtime_error("checkpoint " + path + " holds no gating agent");
}

std::string start_run(const RunConfig& cfg, std::unique_ptr<MetricsWriter>& metrics) {
    const std::string run_dir = make_run_dir(cfg);
    metrics = std::make_unique<MetricsWriter>(run_dir + "/metrics.jsonl");
    metrics->write("config", effective_config(cfg));
    std::cout << "run dir: " << run_dir << "\n";
    std::cout << "config: " << effective_config(cfg).dump() << "\n";
    return run_dir;
}

// Upper triangle of a symmetric gate matrix, row-major, one entry per edge.
std::vector<double> upper_tri(const Tensor& gates) {
    const int n = static_cast<int>(gates.dim(0));
    std::vector<double> upper;
    upper.reserve(static_cast<size_t>(n * (n - 1) / 2));
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) upper.push_back(gates.at(i, j));
    return upper;
}

int cmd_generate(const CommonOpts& opts, const std::string& out_path) {
    const RunConfig cfg = resolve(opts);
    const auto clips = generate_dataset(scene_config(cfg), cfg.seed);
    write_dataset_jsonl(out_path, clips);
    std::cout << "wrote " << clips.size() << " clips to " << out_path << "\n";
    return 0;
}

int cmd_train_srg(const CommonOpts& opts) {
    const RunConfig cfg = resolve(opts);
    std::unique_ptr<MetricsWriter> metrics;
    const std::string run_dir = start_run(cfg, metrics);
    const Splits data = load_splits(cfg, opts.data_path);

    System sys = build_system(cfg, true);
    const SrgTrainStats stats =
        train_srg(*sys.srg, data.train, nullptr, nullptr, srg_train_config(cfg), metrics.get(),
                  "srg");
    const double acc =
        evaluate_accuracy(data.eval, *sys.srg, nullptr, nullptr, cfg.fd_steps, cfg.rg_steps);
    const std::string ckpt_path = run_dir + "/srg.ckpt";
    Checkpoint::from_stores({&sys.srg_store}).write(ckpt_path);
    metrics->write("result", {{"eval_acc", acc}, {"checkpoint", ckpt_path}});
    std::cout << "final train loss " << stats.epoch_loss.back() << ", eval accuracy " << acc
              << "\ncheckpoint: " << ckpt_path << "\n";
    return 0;
}

int cmd_train_agent(const CommonOpts& opts, const std::string& ckpt_in, AgentKind kind) {
    const RunConfig cfg = resolve(opts);
    std::unique_ptr<MetricsWriter> metrics;
    const std::string run_dir = start_run(cfg, metrics);
    const Splits data = load_splits(cfg, opts.data_path);

    System sys = build_system(cfg, true);
    const Checkpoint ckpt = Checkpoint::read(ckpt_in);
    ckpt.load_into(sys.srg_store);
    if (ckpt.has_prefix("fd.")) ckpt.load_into(sys.fd_store);
    if (ckpt.has_prefix("rg.")) ckpt.load_into(sys.rg_store);

    const bool gating = kind == AgentKind::Gating;
    const std::string name = gating ? "rg" : "fd";
    AsyncTrainConfig train_cfg = gating ? rg_train_config(cfg) : fd_train_config(cfg);
    train_cfg.failure_checkpoint = run_dir + "/" + name + "_partial.ckpt";
    ParamStore& shared = gating ? sys.rg_store : sys.fd_store;
    const FdAgent* frozen_fd = gating && ckpt.has_prefix("fd.") ? sys.fd.get() : nullptr;

    const AsyncTrainStats stats =
        train_agent_async(kind, shared, *sys.srg, frozen_fd, data.train, rg_config(cfg),
                          fd_config(cfg), train_cfg, metrics.get(), name);

    const double acc = evaluate_accuracy(
        data.eval, *sys.srg, gating ? frozen_fd : sys.fd.get(), gating ? sys.rg.get() : nullptr,
        cfg.fd_steps, cfg.rg_steps);
    const std::string ckpt_path = run_dir + "/" + name + ".ckpt";
    Checkpoint::from_stores({&sys.srg_store, &sys.fd_store, &sys.rg_store}).write(ckpt_path);
    metrics->write("result", {{"eval_acc", acc},
                              {"episodes", stats.episodes_run},
                              {"checkpoint", ckpt_path}});
    std::cout << "episodes " << stats.episodes_run << ", eval accuracy " << acc
              << "\ncheckpoint: " << ckpt_path << "\n";
    return 0;
}

int cmd_train_alternate(const CommonOpts& opts, const std::string& resume_from) {
    const RunConfig cfg = resolve(opts);
    std::unique_ptr<MetricsWriter> metrics;
    const std::string run_dir = start_run(cfg, metrics);
    const Splits data = load_splits(cfg, opts.data_path);

    System sys = build_system(cfg, true);
    if (!resume_from.empty()) load_system(sys, resume_from, false);

    const auto stages = alternate_training(*sys.srg, *sys.fd, *sys.rg, data.train, data.eval,
                                           alternate_config(cfg, run_dir), metrics.get());
    const std::string final_path = run_dir + "/final.ckpt";
    Checkpoint::from_stores({&sys.srg_store, &sys.fd_store, &sys.rg_store}).write(final_path);
    for (const auto& s : stages)
        std::cout << s.stage << ": eval accuracy " << s.eval_acc << "\n";
    std::cout << "final checkpoint: " << final_path << "\n";
    return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& ckpt_path, bool per_clip, bool trace) {
    const RunConfig cfg = resolve(opts);
    const Splits data = load_splits(cfg, opts.data_path);
    System sys = build_system(cfg, false);
    load_system(sys, ckpt_path, false);
    const Checkpoint ckpt = Checkpoint::read(ckpt_path);
    const FdAgent* fd = ckpt.has_prefix("fd.") ? sys.fd.get() : nullptr;
    const RgAgent* rg = ckpt.has_prefix("rg.") ? sys.rg.get() : nullptr;
    if (trace && !rg)
        throw std::runtime_error("--trace needs a gating agent in the checkpoint");

    int correct = 0;
    for (const auto& clip : data.eval) {
        const SystemForward out =
            system_forward(clip, *sys.srg, fd, rg, cfg.fd_steps, cfg.rg_steps);
        if (out.fwd.predicted == clip.activity_label) ++correct;
        if (trace) {
            const RgEpisodeResult ep = rg_episode(clip, *sys.srg, *sys.rg, out.sel.mask,
                                                  cfg.rg_steps, cfg.omega_rg, nullptr);
            int step_idx = 0;
            for (const auto& s : ep.steps) {
                json rec = {{"clip_id", clip.clip_id}, {"step", ++step_idx},
                            {"l21", s.l21},           {"p_correct", s.p_correct},
                            {"reward", s.reward},     {"gates", upper_tri(s.gates)}};
                std::cout << rec.dump() << "\n";
            }
        }
        if (per_clip) {
            json line = {{"clip", clip.clip_id},
                         {"label", clip.activity_label},
                         {"predicted", out.fwd.predicted},
                         {"p_correct", out.fwd.probs[static_cast<size_t>(clip.activity_label)]},
                         {"mask", out.sel.mask}};
            std::cout << line.dump() << "\n";
        }
    }
    const double acc = static_cast<double>(correct) / static_cast<double>(data.eval.size());
    json summary = {{"clips", data.eval.size()},
                    {"correct", correct},
                    {"accuracy", acc},
                    {"distill", fd != nullptr},
                    {"gating", rg != nullptr}};
    std::cout << summary.dump() << "\n";
    return 0;
}

int cmd_inspect_gates(const CommonOpts& opts, const std::string& ckpt_path, int clip_id) {
    const RunConfig cfg = resolve(opts);
    const Splits data = load_splits(cfg, opts.data_path);
    System sys = build_system(cfg, false);
    load_system(sys, ckpt_path, false);
    const Checkpoint ckpt = Checkpoint::read(ckpt_path);
    const FdAgent* fd = ckpt.has_prefix("fd.") ? sys.fd.get() : nullptr;
    const RgAgent* rg = ckpt.has_prefix("rg.") ? sys.rg.get() : nullptr;

    for (const auto& clip : data.eval) {
        if (clip_id >= 0 && clip.clip_id != clip_id) continue;
        const SystemForward out =
            system_forward(clip, *sys.srg, fd, rg, cfg.fd_steps, cfg.rg_steps);
        const int n = clip.n_persons;
        // Row sums of G rescaled to total 1: each person's share of gate mass.
        std::vector<double> importance(static_cast<size_t>(n), 0.0);
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            double row = 0.0;
            for (int j = 0; j < n; ++j)
                if (j != i) row += out.sel.gates.at(i, j);
            importance[static_cast<size_t>(i)] = row;
            total += row;
        }
        for (auto& v : importance)
            v = total > 0.0 ? v / total : 1.0 / static_cast<double>(n);
        json line = {{"clip_id", clip.clip_id},
                     {"predicted", out.fwd.predicted},
                     {"label", clip.activity_label},
                     {"gates", upper_tri(out.sel.gates)},
                     {"person_importance", importance}};
        std::cout << line.dump() << "\n";
    }
    return 0;
}

int cmd_grad_check(const CommonOpts& opts) {
    RunConfig cfg = resolve(opts);
    // Desk-sized model: small enough for dense central differences.
    apply_override(cfg, "n_persons=3");
    apply_override(cfg, "n_frames=4");
    apply_override(cfg, "d_feature=6");
    apply_override(cfg, "d_v=6");
    apply_override(cfg, "d_e=4");
    apply_override(cfg, "m_iters=2");
    apply_override(cfg, "t_distill=2");
    apply_override(cfg, "noise_frames=1");
    apply_override(cfg, "distractor_persons=1");
    SceneConfig sc = scene_config(cfg);
    sc.n_clips = 1;
    const SceneClip clip = generate_dataset(sc, cfg.seed)[0];

    bool ok = true;
    auto report = [&ok](const std::string& name, const GradCheckResult& res) {
        const bool pass = res.max_rel_err <= 1e-4;
        ok = ok && pass;
        std::cout << name << ": max rel err " << res.max_rel_err << " at " << res.worst_param
                  << "[" << res.worst_index << "] (analytic " << res.analytic << ", numeric "
                  << res.numeric << ") " << (pass ? "ok" : "FAIL") << "\n";
    };

    {
        ParamStore store;
        Rng rng(cfg.seed);
        SrgModel srg(srg_config(cfg), store, &rng);
        Tensor gates = ones_gates(clip.n_persons);
        const std::vector<int> mask = {0, 2, 3};
        report("classifier", grad_check(store, [&] {
                   SrgForward fwd = srg.forward_classify(clip, gates, mask, true);
                   srg.backward(fwd);
                   return fwd.loss;
               }));
    }
    {
        ParamStore store;
        Rng rng(cfg.seed);
        RgConfig rcfg = rg_config(cfg);
        RgAgent agent(rcfg, store, &rng);
        ParamStore srg_store;
        Rng srg_rng = Rng(cfg.seed).fork(7);
        SrgModel srg(srg_config(cfg), srg_store, &srg_rng);
        const SrgForward fwd =
            srg.forward_classify(clip, ones_gates(clip.n_persons), all_frames(clip.n_frames));
        const RgState state = build_rg_state(fwd.summary, 0, 2);
        // Constant-advantage objective: the policy term treats A as data.
        const double advantage = 0.7, target = 0.5, beta = 0.01, action = 0.3;
        report("gating agent", grad_check(store, [&] {
                   RgMemory mem = RgMemory::zero(rcfg.lstm_hidden);
                   RgForwardCache cache;
                   const RgOutput out = agent.forward(state, mem, &cache);
                   const double loss = -advantage * gaussian_log_pdf(action, out.mu, out.sigma) -
                                       beta * gaussian_entropy(out.sigma) +
                                       0.5 * (target - out.value) * (target - out.value);
                   const double dmu = -advantage * (action - out.mu) / (out.sigma * out.sigma);
                   const double dsigma =
                       -advantage *
                           ((action - out.mu) * (action - out.mu) - out.sigma * out.sigma) /
                           (out.sigma * out.sigma * out.sigma) -
                       beta / out.sigma;
                   Tensor dmem_h = Tensor::zeros({1, rcfg.lstm_hidden});
                   Tensor dmem_c = Tensor::zeros({1, rcfg.lstm_hidden});
                   agent.backward(cache, dmu, dsigma, out.value - target, dmem_h, dmem_c);
                   return loss;
               }));
    }
    {
        ParamStore store;
        Rng rng(cfg.seed);
        FdConfig fcfg = fd_config(cfg);
        FdAgent agent(fcfg, store, &rng);
        const auto [mask, queue] = init_selection(cfg.n_frames, cfg.t_distill);
        (void)queue;
        const FdState state = build_fd_state(clip, mask);
        const double advantage = -0.4, target = 0.2, beta = 0.01;
        const std::vector<int> actions = {1, 0};
        report("distillation agent", grad_check(store, [&] {
                   FdMemory mem = FdMemory::zero(fcfg.lstm_hidden);
                   FdForwardCache cache;
                   const FdOutput out = agent.forward(state, mem, &cache);
                   double loss = 0.5 * (target - out.value) * (target - out.value);
                   Tensor dlogits = Tensor::zeros({fcfg.t_distill, 2});
                   for (int k = 0; k < fcfg.t_distill; ++k) {
                       const auto& p = out.probs[static_cast<size_t>(k)];
                       const int a = actions[static_cast<size_t>(k)];
                       double entropy = 0.0;
                       for (double q : p)
                           if (q > 0.0) entropy -= q * std::log(q);
                       loss += -advantage * std::log(p[static_cast<size_t>(a)]) - beta * entropy;
                       for (int i = 0; i < 2; ++i) {
                           const double onehot = i == a ? 1.0 : 0.0;
                           const double lp = std::log(std::max(p[static_cast<size_t>(i)], 1e-300));
                           dlogits.at(k, i) =
                               -advantage * (onehot - p[static_cast<size_t>(i)]) +
                               beta * p[static_cast<size_t>(i)] * (lp + entropy);
                       }
                   }
                   Tensor dmem_h = Tensor::zeros({1, fcfg.lstm_hidden});
                   Tensor dmem_c = Tensor::zeros({1, fcfg.lstm_hidden});
                   agent.backward(cache, dlogits, out.value - target, dmem_h, dmem_c);
                   return loss;
               }));
    }
    std::cout << (ok ? "all gradients verified" : "gradient check failed") << "\n";
    return ok ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Relation-graph group activity recognition"};
    app.require_subcommand(1);

    CommonOpts gen_opts;
    std::string gen_out = "dataset.jsonl";
    uint64_t gen_seed = 0;
    auto* gen = app.add_subcommand("generate", "Generate a synthetic dataset JSONL");
    add_common(gen, gen_opts, false);
    gen->add_option("--out", gen_out, "output path");
    auto* gen_seed_opt = gen->add_option("--seed", gen_seed, "generation seed");

    CommonOpts srg_opts;
    auto* tsrg = app.add_subcommand("train-srg", "Train the classifier on full scenes");
    add_common(tsrg, srg_opts);

    CommonOpts fd_opts;
    std::string fd_ckpt;
    auto* tfd = app.add_subcommand("train-fd", "Train the frame-distillation agent");
    add_common(tfd, fd_opts);
    tfd->add_option("--checkpoint", fd_ckpt, "trained classifier checkpoint")->required();

    CommonOpts rg_opts;
    std::string rg_ckpt;
    auto* trg = app.add_subcommand("train-rg", "Train the relation-gating agent");
    add_common(trg, rg_opts);
    trg->add_option("--checkpoint", rg_ckpt, "trained classifier checkpoint")->required();

    CommonOpts alt_opts;
    std::string resume_from;
    auto* talt = app.add_subcommand("train-alternate", "Alternate classifier and agent stages");
    add_common(talt, alt_opts);
    talt->add_option("--resume-from", resume_from, "checkpoint to resume all stores from");

    CommonOpts eval_opts;
    std::string eval_ckpt;
    bool per_clip = false;
    auto* teval = app.add_subcommand("eval", "Evaluate a checkpoint on the eval split");
    add_common(teval, eval_opts);
    teval->add_option("--checkpoint", eval_ckpt, "checkpoint to evaluate")->required();
    teval->add_flag("--per-clip", per_clip, "print one JSON line per clip");
    bool eval_trace = false;
    teval->add_flag("--trace", eval_trace, "dump per-step gating episode records");

    CommonOpts gates_opts;
    std::string gates_ckpt;
    int gates_clip = -1;
    auto* tgates = app.add_subcommand("inspect-gates", "Print gates and person importance");
    add_common(tgates, gates_opts);
    tgates->add_option("--checkpoint", gates_ckpt, "checkpoint to inspect")->required();
    tgates->add_option("--clip", gates_clip, "restrict to one clip id");

    CommonOpts gc_opts;
    auto* tgc = app.add_subcommand("grad-check", "Verify analytic gradients numerically");
    add_common(tgc, gc_opts, false);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            if (gen_seed_opt->count() > 0)
                gen_opts.overrides.push_back("seed=" + std::to_string(gen_seed));
            return cmd_generate(gen_opts, gen_out);
        }
        if (tsrg->parsed()) return cmd_train_srg(srg_opts);
        if (tfd->parsed()) return cmd_train_agent(fd_opts, fd_ckpt, AgentKind::Distill);
        if (trg->parsed()) return cmd_train_agent(rg_opts, rg_ckpt, AgentKind::Gating);
        if (talt->parsed()) return cmd_train_alternate(alt_opts, resume_from);
        if (teval->parsed()) return cmd_eval(eval_opts, eval_ckpt, per_clip, eval_trace);
        if (tgates->parsed()) return cmd_inspect_gates(gates_opts, gates_ckpt, gates_clip);
        if (tgc->parsed()) return cmd_grad_check(gc_opts);
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 1;
    }
    return 0;
}
