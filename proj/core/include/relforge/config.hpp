#pragma once

#include "relforge/fd_agent.hpp"
#include "relforge/rg_agent.hpp"
#include "relforge/scene.hpp"
#include "relforge/srg.hpp"
#include "relforge/trainer.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>

namespace relforge {

// Every tunable of the system in one flat record. Values resolve in layers:
// built-in defaults, then the RELFORGE_OUT environment variable (out_root
// only), then a JSON config file, then command-line overrides.
struct RunConfig {
    // scene
    int n_classes = 4;
    int n_persons = 6;
    int n_frames = 10;
    int d_feature = 16;
    int train_clips = 400;
    int eval_clips = 100;
    int noise_frames = 3;
    int distractor_persons = 2;
    uint64_t seed = 1;

    // classifier
    int d_v = 32;
    int d_e = 16;
    int m_iters = 3;
    double srg_lr = 1e-5;
    double weight_decay = 1e-4;
    int srg_epochs = 15;
    int batch_size = 8;

    // agents
    int t_distill = 5;
    double agent_lr = 1e-4;
    int n_workers = 16;
    int rg_episodes = 2000;
    int fd_episodes = 2000;
    int rg_steps = 5;
    int fd_steps = 5;
    int tau_max = 5;
    double gamma = 0.99;
    double beta = 0.01;
    double omega_rg = 15.0;
    double omega_fd = 20.0;

    // schedule and io
    int cycles = 3;
    std::string out_root = "runs";
};

// Applies fn(name, ref) to every field; shared by the loader, the override
// parser, and the echo.
template <typename Cfg, typename Fn>
void for_each_config_field(Cfg& c, Fn&& fn) {
    fn("n_classes", c.n_classes);
    fn("n_persons", c.n_persons);
    fn("n_frames", c.n_frames);
    fn("d_feature", c.d_feature);
    fn("train_clips", c.train_clips);
    fn("eval_clips", c.eval_clips);
    fn("noise_frames", c.noise_frames);
    fn("distractor_persons", c.distractor_persons);
    fn("seed", c.seed);
    fn("d_v", c.d_v);
    fn("d_e", c.d_e);
    fn("m_iters", c.m_iters);
    fn("srg_lr", c.srg_lr);
    fn("weight_decay", c.weight_decay);
    fn("srg_epochs", c.srg_epochs);
    fn("batch_size", c.batch_size);
    fn("t_distill", c.t_distill);
    fn("agent_lr", c.agent_lr);
    fn("n_workers", c.n_workers);
    fn("rg_episodes", c.rg_episodes);
    fn("fd_episodes", c.fd_episodes);
    fn("rg_steps", c.rg_steps);
    fn("fd_steps", c.fd_steps);
    fn("tau_max", c.tau_max);
    fn("gamma", c.gamma);
    fn("beta", c.beta);
    fn("omega_rg", c.omega_rg);
    fn("omega_fd", c.omega_fd);
    fn("cycles", c.cycles);
    fn("out_root", c.out_root);
}

// Defaults + environment + optional JSON file. Unknown keys are rejected.
RunConfig load_run_config(const std::string& json_path);

// "key=value" command-line override.
void apply_override(RunConfig& cfg, const std::string& assignment);

// Throws std::invalid_argument on out-of-range settings.
void validate_run_config(const RunConfig& cfg);

// The fully resolved configuration, for echoing into logs.
nlohmann::json effective_config(const RunConfig& cfg);

// <out_root>/<utc timestamp>-seed<seed>; a suffix is added rather than ever
// reusing an existing directory.
std::string make_run_dir(const RunConfig& cfg);

SceneConfig scene_config(const RunConfig& cfg);
SrgConfig srg_config(const RunConfig& cfg);
RgConfig rg_config(const RunConfig& cfg);
FdConfig fd_config(const RunConfig& cfg);
OptimConfig srg_optim(const RunConfig& cfg);
OptimConfig agent_optim(const RunConfig& cfg);
SrgTrainConfig srg_train_config(const RunConfig& cfg);
AsyncTrainConfig fd_train_config(const RunConfig& cfg);
AsyncTrainConfig rg_train_config(const RunConfig& cfg);
AlternateConfig alternate_config(const RunConfig& cfg, const std::string& out_dir);

} // namespace relforge
