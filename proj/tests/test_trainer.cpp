#include "relforge/config.hpp"
#include "relforge/trainer.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

using namespace relforge;
namespace fs = std::filesystem;

namespace {

std::string test_dir() {
    static const std::string dir = [] {
        const fs::path d = fs::temp_directory_path() / "relforge_trainer_tests";
        fs::remove_all(d);
        fs::create_directories(d);
        return d.string();
    }();
    return dir;
}

std::vector<double> flat_params(const ParamStore& s) {
    std::vector<double> out;
    s.for_each([&](const std::string&, const Tensor& t) {
        out.insert(out.end(), t.values().begin(), t.values().end());
    });
    return out;
}

std::vector<nlohmann::json> read_jsonl(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(bool(in));
    std::vector<nlohmann::json> records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        records.push_back(nlohmann::json::parse(line));
    }
    return records;
}

SceneConfig small_scene() {
    SceneConfig cfg;
    cfg.n_classes = 3;
    cfg.n_persons = 4;
    cfg.n_frames = 4;
    cfg.d_feature = 6;
    cfg.n_clips = 18;
    cfg.noise_frames = 1;
    cfg.distractor_persons = 1;
    return cfg;
}

SrgConfig small_srg() {
    SrgConfig cfg;
    cfg.n_classes = 3;
    cfg.d_v = 5;
    cfg.d_e = 4;
    cfg.d_feature = 6;
    cfg.m_iters = 1;
    return cfg;
}

RgConfig small_rg() {
    RgConfig cfg;
    cfg.d_v = 5;
    cfg.d_e = 4;
    cfg.n_classes = 3;
    cfg.width = 8;
    cfg.lstm_hidden = 8;
    return cfg;
}

FdConfig small_fd() {
    FdConfig cfg;
    cfg.n_frames = 4;
    cfg.t_distill = 2;
    cfg.d_feature = 6;
    cfg.c_squeeze = 4;
    cfg.c_extract = 4;
    cfg.mask_fc = 4;
    cfg.trunk = 8;
    cfg.lstm_hidden = 8;
    return cfg;
}

} // namespace

TEST_CASE("n_step_returns recursion") {
    const auto r = n_step_returns({1.0, -1.0}, 0.99, 2.0);
    REQUIRE(r.size() == 2);
    CHECK(r[1] == doctest::Approx(0.98).epsilon(1e-12));
    CHECK(r[0] == doctest::Approx(1.9702).epsilon(1e-12));

    CHECK(n_step_returns({3.5}, 0.9, 0.0) == std::vector<double>{3.5});
    CHECK(n_step_returns({1.0, 2.0, 3.0}, 0.0, 9.0) == std::vector<double>{1.0, 2.0, 3.0});
    CHECK(n_step_returns({}, 0.5, 4.0).empty());
    CHECK(n_step_returns({0.0, 0.0, 0.0}, 0.99, 0.0) == std::vector<double>{0.0, 0.0, 0.0});

    CHECK_THROWS_AS(n_step_returns({1.0}, 1.0, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(n_step_returns({1.0}, -0.1, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(n_step_returns({std::nan("")}, 0.9, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(n_step_returns({1.0}, 0.9, std::nan("")), std::invalid_argument);
}

TEST_CASE("mask_recall counts overlap against the smaller set") {
    CHECK(mask_recall({0, 2, 4}, {0, 1, 2, 3, 4}) == 1.0);
    CHECK(mask_recall({0, 2}, {1, 3}) == 0.0);
    CHECK(mask_recall({0, 1}, {1, 2, 3}) == 0.5);
    CHECK(mask_recall({}, {1, 2}) == 1.0);
    CHECK(mask_recall({1, 2}, {}) == 1.0);
}

TEST_CASE("all_frames") {
    CHECK(all_frames(4) == std::vector<int>{0, 1, 2, 3});
    CHECK(all_frames(1) == std::vector<int>{0});
    CHECK_THROWS_AS(all_frames(0), std::invalid_argument);
}

TEST_CASE("absent policies select everything") {
    const auto clips = generate_dataset(small_scene(), 301);
    ParamStore store;
    Rng rng(302);
    const SrgModel srg(small_srg(), store, &rng);
    const Selection sel = select_frames_and_gates(clips[0], srg, nullptr, nullptr, 3, 3);
    CHECK(sel.mask == all_frames(clips[0].n_frames));
    const int n = clips[0].n_persons;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) CHECK(sel.gates.at(i, j) == (i == j ? 0.0 : 1.0));
    CHECK_THROWS_AS(evaluate_accuracy({}, srg, nullptr, nullptr, 1, 1), std::invalid_argument);
}

TEST_CASE("train_srg") {
    const auto clips = generate_dataset(small_scene(), 303);
    const std::vector<SceneClip> train(clips.begin(), clips.begin() + 12);

    SUBCASE("zero epochs leave the classifier untouched") {
        ParamStore store;
        Rng rng(304);
        SrgModel srg(small_srg(), store, &rng);
        const std::vector<double> before = flat_params(store);
        SrgTrainConfig cfg;
        cfg.epochs = 0;
        const SrgTrainStats stats = train_srg(srg, train, nullptr, nullptr, cfg, nullptr, "s");
        CHECK(stats.epoch_loss.empty());
        CHECK(stats.epoch_acc.empty());
        CHECK(flat_params(store) == before);
    }
    SUBCASE("loss falls on a small dataset") {
        ParamStore store;
        Rng rng(305);
        SrgModel srg(small_srg(), store, &rng);
        SrgTrainConfig cfg;
        cfg.epochs = 12;
        cfg.batch_size = 4;
        cfg.opt.kind = OptimConfig::Kind::Adam;
        cfg.opt.lr = 2e-3;
        const SrgTrainStats stats = train_srg(srg, train, nullptr, nullptr, cfg, nullptr, "s");
        REQUIRE(stats.epoch_loss.size() == 12);
        const double head = (stats.epoch_loss[0] + stats.epoch_loss[1] + stats.epoch_loss[2]) / 3;
        const double tail =
            (stats.epoch_loss[9] + stats.epoch_loss[10] + stats.epoch_loss[11]) / 3;
        CHECK(tail < head);
        for (double l : stats.epoch_loss) CHECK(std::isfinite(l));
        for (double a : stats.epoch_acc) {
            CHECK(a >= 0.0);
            CHECK(a <= 1.0);
        }
    }
    SUBCASE("bad arguments") {
        ParamStore store;
        Rng rng(306);
        SrgModel srg(small_srg(), store, &rng);
        SrgTrainConfig cfg;
        CHECK_THROWS_AS(train_srg(srg, {}, nullptr, nullptr, cfg, nullptr, "s"),
                        std::invalid_argument);
        cfg.epochs = -1;
        CHECK_THROWS_AS(train_srg(srg, train, nullptr, nullptr, cfg, nullptr, "s"),
                        std::invalid_argument);
    }
}

TEST_CASE("train_agent_async") {
    const auto clips = generate_dataset(small_scene(), 307);
    const std::vector<SceneClip> train(clips.begin(), clips.begin() + 3);
    ParamStore srg_store;
    Rng srg_rng(308);
    const SrgModel srg(small_srg(), srg_store, &srg_rng);

    AsyncTrainConfig cfg;
    cfg.n_workers = 1;
    cfg.episodes = 4;
    cfg.episode_steps = 2;
    cfg.tau_max = 2;
    cfg.gamma = 0.9;
    cfg.omega = 15.0;
    cfg.opt.lr = 1e-3;
    cfg.seed = 7;
    cfg.fd_steps = 1;

    SUBCASE("a zero budget changes nothing") {
        ParamStore agent_store;
        Rng rng(309);
        const RgAgent agent(small_rg(), agent_store, &rng);
        (void)agent;
        const std::vector<double> before = flat_params(agent_store);
        AsyncTrainConfig zero = cfg;
        zero.episodes = 0;
        const AsyncTrainStats stats =
            train_agent_async(AgentKind::Gating, agent_store, srg, nullptr, train, small_rg(),
                              FdConfig{}, zero, nullptr, "s");
        CHECK(stats.episodes_run == 0);
        CHECK(flat_params(agent_store) == before);
    }
    SUBCASE("one worker is bit-reproducible") {
        auto run = [&](AgentKind kind, uint64_t init_seed) {
            ParamStore store;
            Rng rng(init_seed);
            if (kind == AgentKind::Gating) {
                const RgAgent agent(small_rg(), store, &rng);
                (void)agent;
            } else {
                const FdAgent agent(small_fd(), store, &rng);
                (void)agent;
            }
            const AsyncTrainStats stats = train_agent_async(
                kind, store, srg, nullptr, train, small_rg(), small_fd(), cfg, nullptr, "s");
            CHECK(stats.episodes_run == cfg.episodes);
            return flat_params(store);
        };
        const auto rg1 = run(AgentKind::Gating, 310);
        const auto rg2 = run(AgentKind::Gating, 310);
        CHECK(rg1 == rg2);
        const auto fd1 = run(AgentKind::Distill, 311);
        const auto fd2 = run(AgentKind::Distill, 311);
        CHECK(fd1 == fd2);
        CHECK(rg1 != flat_params([&] {
                  ParamStore s;
                  Rng r(310);
                  RgAgent a(small_rg(), s, &r);
                  return s;
              }()));
    }
    SUBCASE("a worker failure aborts with a partial checkpoint") {
        ParamStore agent_store;
        Rng rng(312);
        const RgAgent agent(small_rg(), agent_store, &rng);
        (void)agent;
        AsyncTrainConfig bad = cfg;
        bad.gamma = 1.5; // first update window trips the return recursion
        bad.failure_checkpoint = test_dir() + "/partial.ckpt";
        bool threw = false;
        try {
            train_agent_async(AgentKind::Gating, agent_store, srg, nullptr, train, small_rg(),
                              FdConfig{}, bad, nullptr, "s");
        } catch (const std::runtime_error& ex) {
            threw = true;
            CHECK(std::string(ex.what()).find("training worker failed") != std::string::npos);
        }
        CHECK(threw);
        REQUIRE(fs::exists(bad.failure_checkpoint));
        CHECK(Checkpoint::read(bad.failure_checkpoint).has_prefix("rg."));
    }
}

TEST_CASE("alternate_training runs the nine-stage schedule") {
    const auto clips = generate_dataset(small_scene(), 313);
    const std::vector<SceneClip> train(clips.begin(), clips.begin() + 12);
    const std::vector<SceneClip> eval(clips.begin() + 12, clips.end());

    ParamStore srg_store, fd_store, rg_store;
    Rng r1(314), r2(315), r3(316);
    SrgModel srg(small_srg(), srg_store, &r1);
    FdAgent fd(small_fd(), fd_store, &r2);
    RgAgent rg(small_rg(), rg_store, &r3);

    AlternateConfig cfg;
    cfg.cycles = 3;
    cfg.srg.epochs = 0; // classifier frozen: agent stages must not touch it
    cfg.fd.n_workers = 2;
    cfg.fd.episodes = 2;
    cfg.fd.episode_steps = 1;
    cfg.fd.tau_max = 1;
    cfg.fd.omega = 20.0;
    cfg.fd.opt.lr = 1e-3;
    cfg.rg = cfg.fd;
    cfg.rg.omega = 15.0;
    cfg.eval_fd_steps = 1;
    cfg.eval_rg_steps = 1;
    cfg.out_dir = test_dir() + "/alt";

    const std::vector<double> srg_before = flat_params(srg_store);
    const std::vector<double> fd_before = flat_params(fd_store);
    const std::vector<double> rg_before = flat_params(rg_store);

    const auto results = alternate_training(srg, fd, rg, train, eval, cfg, nullptr);
    REQUIRE(results.size() == 9);
    const char* suffixes[] = {".srg", ".fd", ".rg"};
    for (size_t k = 0; k < results.size(); ++k) {
        const std::string want = "cycle" + std::to_string(k / 3) + suffixes[k % 3];
        CHECK(results[k].stage == want);
        CHECK(results[k].eval_acc >= 0.0);
        CHECK(results[k].eval_acc <= 1.0);
        REQUIRE(fs::exists(results[k].checkpoint_path));
        const Checkpoint ck = Checkpoint::read(results[k].checkpoint_path);
        CHECK(ck.has_prefix("srg."));
        CHECK(ck.has_prefix("fd."));
        CHECK(ck.has_prefix("rg."));
    }

    CHECK(flat_params(srg_store) == srg_before); // agent stages leave the classifier alone
    CHECK(flat_params(fd_store) != fd_before);
    CHECK(flat_params(rg_store) != rg_before);

    CHECK_THROWS_AS(alternate_training(srg, fd, rg, train, eval,
                                       [&] {
                                           AlternateConfig c = cfg;
                                           c.cycles = 0;
                                           return c;
                                       }(),
                                       nullptr),
                    std::invalid_argument);
}

TEST_CASE("metrics writer") {
    SUBCASE("records round-trip as JSON lines") {
        const std::string path = test_dir() + "/metrics_basic.jsonl";
        {
            MetricsWriter w(path);
            w.write("alpha", {{"x", 1.5}, {"tag", "t"}});
            nlohmann::json obj;
            obj["mask"] = std::vector<int>{1, 3};
            w.write("beta", obj);
        }
        const auto records = read_jsonl(path);
        REQUIRE(records.size() == 2);
        CHECK(records[0]["event"] == "alpha");
        CHECK(records[0]["x"] == 1.5);
        CHECK(records[0]["tag"] == "t");
        CHECK(records[0].contains("wall_ms"));
        CHECK(records[1]["event"] == "beta");
        CHECK(records[1]["mask"] == nlohmann::json({1, 3}));
    }
    SUBCASE("non-finite values become null") {
        const std::string path = test_dir() + "/metrics_nan.jsonl";
        {
            MetricsWriter w(path);
            w.write("bad", {{"x", std::nan("")}, {"y", 2.0}, {"nested", {{"z", INFINITY}}}});
        }
        const auto records = read_jsonl(path);
        REQUIRE(records.size() == 1);
        CHECK(records[0]["x"].is_null());
        CHECK(records[0]["y"] == 2.0);
        CHECK(records[0]["nested"]["z"].is_null());
    }
    SUBCASE("concurrent writers never tear a line") {
        const std::string path = test_dir() + "/metrics_mt.jsonl";
        {
            MetricsWriter w(path);
            std::vector<std::thread> threads;
            for (int t = 0; t < 8; ++t)
                threads.emplace_back([&w, t] {
                    for (int i = 0; i < 200; ++i)
                        w.write("tick", {{"thread", t}, {"i", i}});
                });
            for (auto& t : threads) t.join();
        }
        const auto records = read_jsonl(path);
        CHECK(records.size() == 1600);
        for (const auto& r : records) CHECK(r["event"] == "tick");
    }
    SUBCASE("failures") {
        CHECK_THROWS_AS(MetricsWriter(test_dir() + "/no_such_dir/m.jsonl"), std::runtime_error);
        MetricsWriter w(test_dir() + "/metrics_badfields.jsonl");
        CHECK_THROWS_AS(w.write("e", nlohmann::json::array()), std::invalid_argument);
    }
}

TEST_CASE("checkpoints") {
    ParamStore a;
    Tensor& w = a.add("x.w", {2, 3});
    for (int64_t i = 0; i < w.numel(); ++i) w[i] = 1.0 / (3.0 + static_cast<double>(i));
    Tensor& b = a.add("y.b", {4});
    for (int64_t i = 0; i < b.numel(); ++i) b[i] = -0.25 * static_cast<double>(i);
    const std::string path = test_dir() + "/round.ckpt";

    SUBCASE("round trip is bit exact") {
        Checkpoint::from_stores({&a}).write(path);
        const Checkpoint ck = Checkpoint::read(path);
        REQUIRE(ck.entries.size() == 2);
        CHECK(ck.has_prefix("x."));
        CHECK(ck.has_prefix("y."));
        CHECK_FALSE(ck.has_prefix("z."));
        const Tensor* rw = ck.find("x.w");
        REQUIRE(rw != nullptr);
        CHECK(rw->shape() == std::vector<int64_t>{2, 3});
        CHECK(rw->values() == w.values());

        ParamStore fresh;
        fresh.add("x.w", {2, 3});
        fresh.add("y.b", {4});
        ck.load_into(fresh);
        CHECK(flat_params(fresh) == flat_params(a));
    }
    SUBCASE("load errors name the parameter") {
        Checkpoint::from_stores({&a}).write(path);
        const Checkpoint ck = Checkpoint::read(path);

        ParamStore missing;
        missing.add("x.w", {2, 3});
        missing.add("extra.p", {1});
        bool threw = false;
        try {
            ck.load_into(missing);
        } catch (const std::runtime_error& ex) {
            threw = true;
            CHECK(std::string(ex.what()).find("extra.p") != std::string::npos);
        }
        CHECK(threw);

        ParamStore shaped;
        shaped.add("x.w", {3, 2});
        shaped.add("y.b", {4});
        CHECK_THROWS_AS(ck.load_into(shaped), std::runtime_error);
    }
    SUBCASE("file errors") {
        CHECK_THROWS_AS(Checkpoint::read(test_dir() + "/nope.ckpt"), std::runtime_error);
        const std::string junk = test_dir() + "/junk.ckpt";
        std::ofstream(junk) << "this is not a checkpoint at all";
        bool threw = false;
        try {
            Checkpoint::read(junk);
        } catch (const std::runtime_error& ex) {
            threw = true;
            CHECK(std::string(ex.what()).find("not a relforge checkpoint") != std::string::npos);
        }
        CHECK(threw);
    }
}
