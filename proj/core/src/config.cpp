#include "relforge/config.hpp"

#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <type_traits>

namespace relforge {

namespace {

void assign_from_json(const char* name, int& ref, const nlohmann::json& v) {
    if (!v.is_number_integer())
        throw std::invalid_argument(std::string("config key '") + name +
                                    "' expects an integer, got " + v.dump());
    ref = v.get<int>();
}

void assign_from_json(const char* name, uint64_t& ref, const nlohmann::json& v) {
    if (!v.is_number_unsigned() && !v.is_number_integer())
        throw std::invalid_argument(std::string("config key '") + name +
                                    "' expects a non-negative integer, got " + v.dump());
    if (v.is_number_integer() && v.get<int64_t>() < 0)
        throw std::invalid_argument(std::string("config key '") + name +
                                    "' expects a non-negative integer, got " + v.dump());
    ref = v.get<uint64_t>();
}

void assign_from_json(const char* name, double& ref, const nlohmann::json& v) {
    if (!v.is_number())
        throw std::invalid_argument(std::string("config key '") + name +
                                    "' expects a number, got " + v.dump());
    ref = v.get<double>();
}

void assign_from_json(const char* name, std::string& ref, const nlohmann::json& v) {
    if (!v.is_string())
        throw std::invalid_argument(std::string("config key '") + name +
                                    "' expects a string, got " + v.dump());
    ref = v.get<std::string>();
}

void assign_from_text(const char* name, int& ref, const std::string& text) {
    size_t used = 0;
    const long long parsed = std::stoll(text, &used);
    if (used != text.size())
        throw std::invalid_argument(std::string("config key '") + name +
                                    "' expects an integer, got '" + text + "'");
    ref = static_cast<int>(parsed);
}

void assign_from_text(const char* name, uint64_t& ref, const std::string& text) {
    size_t used = 0;
    const unsigned long long parsed = std::stoull(text, &used);
    if (used != text.size() || text.find('-') != std::string::npos)
        throw std::invalid_argument(std::string("config key '") + name +
                                    "' expects a non-negative integer, got '" + text + "'");
    ref = parsed;
}

void assign_from_text(const char* name, double& ref, const std::string& text) {
    size_t used = 0;
    const double parsed = std::stod(text, &used);
    if (used != text.size())
        throw std::invalid_argument(std::string("config key '") + name +
                                    "' expects a number, got '" + text + "'");
    ref = parsed;
}

void assign_from_text(const char*, std::string& ref, const std::string& text) { ref = text; }

void require(bool ok, const std::string& message) {
    if (!ok) throw std::invalid_argument(message);
}

} // namespace

RunConfig load_run_config(const std::string& json_path) {
    RunConfig cfg;
    if (const char* env_out = std::getenv("RELFORGE_OUT"); env_out && *env_out)
        cfg.out_root = env_out;
    if (json_path.empty()) return cfg;

    std::ifstream in(json_path);
    if (!in) throw std::runtime_error("cannot open config file: " + json_path);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& ex) {
        throw std::runtime_error("config file " + json_path + " is not valid JSON: " + ex.what());
    }
    if (!doc.is_object())
        throw std::runtime_error("config file " + json_path + " must hold a JSON object");

    for (const auto& [key, value] : doc.items()) {
        bool known = false;
        for_each_config_field(cfg, [&](const char* name, auto& ref) {
            if (key == name) {
                assign_from_json(name, ref, value);
                known = true;
            }
        });
        if (!known) throw std::invalid_argument("unknown config key: " + key);
    }
    return cfg;
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
    const size_t eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw std::invalid_argument("override must look like key=value, got '" + assignment + "'");
    const std::string key = assignment.substr(0, eq);
    const std::string value = assignment.substr(eq + 1);
    bool known = false;
    for_each_config_field(cfg, [&](const char* name, auto& ref) {
        if (key == name) {
            assign_from_text(name, ref, value);
            known = true;
        }
    });
    if (!known) throw std::invalid_argument("unknown config key: " + key);
}

void validate_run_config(const RunConfig& cfg) {
    require(cfg.n_classes >= 2, "n_classes must be >= 2");
    require(cfg.n_persons >= 3, "n_persons must be >= 3");
    require(cfg.n_frames >= 1, "n_frames must be >= 1");
    require(cfg.d_feature >= 1, "d_feature must be >= 1");
    require(cfg.train_clips >= cfg.n_classes, "train_clips must cover every class");
    require(cfg.eval_clips >= 1, "eval_clips must be >= 1");
    require(cfg.noise_frames >= 0 && cfg.noise_frames < cfg.n_frames,
            "noise_frames must lie in [0, n_frames)");
    require(cfg.noise_frames <= cfg.n_frames - cfg.t_distill,
            "noise_frames must leave at least t_distill informative frames");
    require(cfg.distractor_persons >= 0 && cfg.distractor_persons < cfg.n_persons - 1,
            "distractor_persons must leave at least two key persons");
    require(cfg.d_v >= 1 && cfg.d_e >= 1, "attribute widths must be >= 1");
    require(cfg.m_iters >= 1, "m_iters must be >= 1");
    require(cfg.srg_lr > 0.0 && cfg.agent_lr > 0.0, "learning rates must be > 0");
    require(cfg.weight_decay >= 0.0, "weight_decay must be >= 0");
    require(cfg.srg_epochs >= 0, "srg_epochs must be >= 0");
    require(cfg.batch_size >= 1, "batch_size must be >= 1");
    require(cfg.t_distill >= 1 && cfg.t_distill <= cfg.n_frames,
            "t_distill must lie in [1, n_frames]");
    require(cfg.n_workers >= 1, "n_workers must be >= 1");
    require(cfg.rg_episodes >= 0 && cfg.fd_episodes >= 0, "episode budgets must be >= 0");
    require(cfg.rg_steps >= 1 && cfg.fd_steps >= 1, "episode lengths must be >= 1");
    require(cfg.tau_max >= 1, "tau_max must be >= 1");
    require(cfg.gamma >= 0.0 && cfg.gamma < 1.0, "gamma must lie in [0, 1)");
    require(cfg.beta >= 0.0, "beta must be >= 0");
    require(cfg.omega_rg >= 0.0 && cfg.omega_fd >= 0.0, "omega must be >= 0");
    require(cfg.cycles >= 1, "cycles must be >= 1");
    require(!cfg.out_root.empty(), "out_root must not be empty");
}

nlohmann::json effective_config(const RunConfig& cfg) {
    nlohmann::json j;
    for_each_config_field(const_cast<RunConfig&>(cfg),
                          [&](const char* name, auto& ref) { j[name] = ref; });
    return j;
}

std::string make_run_dir(const RunConfig& cfg) {
    const std::time_t now = std::time(nullptr);
    std::tm tm_utc{};
    gmtime_r(&now, &tm_utc);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm_utc);
    const std::string base =
        cfg.out_root + "/" + stamp + "-seed" + std::to_string(cfg.seed);
    std::string dir = base;
    for (int k = 1; std::filesystem::exists(dir); ++k) dir = base + "-" + std::to_string(k);
    std::filesystem::create_directories(dir);
    return dir;
}

SceneConfig scene_config(const RunConfig& cfg) {
    SceneConfig s;
    s.n_classes = cfg.n_classes;
    s.n_persons = cfg.n_persons;
    s.n_frames = cfg.n_frames;
    s.d_feature = cfg.d_feature;
    s.n_clips = cfg.train_clips + cfg.eval_clips;
    s.noise_frames = cfg.noise_frames;
    s.distractor_persons = cfg.distractor_persons;
    return s;
}

SrgConfig srg_config(const RunConfig& cfg) {
    SrgConfig s;
    s.n_classes = cfg.n_classes;
    s.d_v = cfg.d_v;
    s.d_e = cfg.d_e;
    s.d_feature = cfg.d_feature;
    s.m_iters = cfg.m_iters;
    return s;
}

RgConfig rg_config(const RunConfig& cfg) {
    RgConfig r;
    r.d_v = cfg.d_v;
    r.d_e = cfg.d_e;
    r.n_classes = cfg.n_classes;
    return r;
}

FdConfig fd_config(const RunConfig& cfg) {
    FdConfig f;
    f.n_frames = cfg.n_frames;
    f.t_distill = cfg.t_distill;
    f.d_feature = cfg.d_feature;
    return f;
}

OptimConfig srg_optim(const RunConfig& cfg) {
    OptimConfig o;
    o.kind = OptimConfig::Kind::RMSprop;
    o.lr = cfg.srg_lr;
    o.weight_decay = cfg.weight_decay;
    return o;
}

OptimConfig agent_optim(const RunConfig& cfg) {
    OptimConfig o;
    o.kind = OptimConfig::Kind::Adam;
    o.lr = cfg.agent_lr;
    o.weight_decay = cfg.weight_decay;
    return o;
}

SrgTrainConfig srg_train_config(const RunConfig& cfg) {
    SrgTrainConfig t;
    t.epochs = cfg.srg_epochs;
    t.batch_size = cfg.batch_size;
    t.opt = srg_optim(cfg);
    t.fd_steps = cfg.fd_steps;
    t.rg_steps = cfg.rg_steps;
    t.seed = cfg.seed;
    return t;
}

AsyncTrainConfig fd_train_config(const RunConfig& cfg) {
    AsyncTrainConfig a;
    a.n_workers = cfg.n_workers;
    a.episodes = cfg.fd_episodes;
    a.episode_steps = cfg.fd_steps;
    a.tau_max = cfg.tau_max;
    a.gamma = cfg.gamma;
    a.beta = cfg.beta;
    a.omega = cfg.omega_fd;
    a.opt = agent_optim(cfg);
    a.seed = cfg.seed;
    a.fd_steps = cfg.fd_steps;
    return a;
}

AsyncTrainConfig rg_train_config(const RunConfig& cfg) {
    AsyncTrainConfig a = fd_train_config(cfg);
    a.episodes = cfg.rg_episodes;
    a.episode_steps = cfg.rg_steps;
    a.omega = cfg.omega_rg;
    return a;
}

AlternateConfig alternate_config(const RunConfig& cfg, const std::string& out_dir) {
    AlternateConfig alt;
    alt.cycles = cfg.cycles;
    alt.srg = srg_train_config(cfg);
    alt.fd = fd_train_config(cfg);
    alt.rg = rg_train_config(cfg);
    alt.eval_fd_steps = cfg.fd_steps;
    alt.eval_rg_steps = cfg.rg_steps;
    alt.out_dir = out_dir;
    return alt;
}

} // namespace relforge
