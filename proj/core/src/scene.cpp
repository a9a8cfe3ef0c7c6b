#include "relforge/scene.hpp"

#include "relforge/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace relforge {

namespace {

using nlohmann::json;

constexpr double kArena = 10.0;       // positions live in [0, kArena]^2
constexpr double kSignalAmp = 1.0;    // class signature strength, informative frames
constexpr double kConfuserAmp = 0.6;  // random-signature strength, noise frames
constexpr double kFeatureNoise = 0.25;
constexpr double kClutterNoise = 0.5; // distractor feature noise
constexpr double kMotifJitter = 0.08; // positional noise on the planted motif

double clamp_arena(double v) { return std::min(kArena, std::max(0.0, v)); }

// Class signatures are unit vectors scaled to a common amplitude, drawn from
// a stream derived from the dataset seed so train and test splits agree.
std::vector<std::vector<double>> make_signatures(int n_classes, int d_feature, Rng rng) {
    std::vector<std::vector<double>> sigs(static_cast<size_t>(n_classes));
    for (auto& s : sigs) {
        s.resize(static_cast<size_t>(d_feature));
        double norm2 = 0.0;
        for (double& v : s) {
            v = rng.normal();
            norm2 += v * v;
        }
        const double scale = 2.0 / std::sqrt(std::max(norm2, 1e-12));
        for (double& v : s) v *= scale;
    }
    return sigs;
}

std::vector<int> sample_subset(Rng& rng, int n, int k) {
    std::vector<int> pool(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) pool[static_cast<size_t>(i)] = i;
    for (int i = 0; i < k; ++i) {
        const int j = i + static_cast<int>(rng.uniform_int(n - i));
        std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
    }
    std::vector<int> out(pool.begin(), pool.begin() + k);
    std::sort(out.begin(), out.end());
    return out;
}

struct Motif {
    double cx, cy, radius, heading;
    std::vector<double> slot_angle; // one slot per key person
};

// Group layouts: a circle of key persons around a shared center. The class
// determines how the circle evolves across the informative frames.
std::pair<double, double> motif_position(const Motif& m, int label, int slot, double s) {
    double ang = m.slot_angle[static_cast<size_t>(slot)];
    double rad = m.radius;
    double dx = 0.0, dy = 0.0;
    switch (label % 8) {
        case 0: // rotation: half turn over the clip
            ang += s * M_PI;
            break;
        case 1: // convergence toward the center
            rad *= 1.0 - 0.65 * s;
            break;
        case 2: // dispersal away from the center
            rad *= 1.0 + 0.8 * s;
            break;
        case 3: // joint march along a shared heading
            dx = 4.0 * s * std::cos(m.heading);
            dy = 4.0 * s * std::sin(m.heading);
            break;
        case 4: // counter-rotation: alternating directions
            ang += (slot % 2 == 0 ? 1.0 : -1.0) * s * M_PI;
            break;
        case 5: // radial oscillation
            rad *= 1.0 + 0.45 * std::sin(2.0 * M_PI * s);
            break;
        case 6: // shear: alternating march
            dx = (slot % 2 == 0 ? 1.0 : -1.0) * 3.0 * s * std::cos(m.heading);
            dy = (slot % 2 == 0 ? 1.0 : -1.0) * 3.0 * s * std::sin(m.heading);
            break;
        default: // spiral: rotation plus convergence
            ang += s * M_PI;
            rad *= 1.0 - 0.5 * s;
            break;
    }
    return {m.cx + rad * std::cos(ang) + dx, m.cy + rad * std::sin(ang) + dy};
}

SceneClip generate_clip(const SceneConfig& cfg, const std::vector<std::vector<double>>& sigs,
                        int clip_id, Rng rng) {
    SceneClip clip;
    clip.clip_id = clip_id;
    clip.n_persons = cfg.n_persons;
    clip.n_frames = cfg.n_frames;
    clip.d_feature = cfg.d_feature;
    clip.activity_label = clip_id % cfg.n_classes;
    clip.positions = Tensor({cfg.n_persons, cfg.n_frames, 2});
    clip.person_features = Tensor({cfg.n_persons, cfg.n_frames, cfg.d_feature});

    const int n_key = cfg.n_persons - cfg.distractor_persons;
    clip.key_persons = sample_subset(rng, cfg.n_persons, n_key);
    for (int a = 0; a < n_key; ++a)
        for (int b = a + 1; b < n_key; ++b)
            clip.key_relations.emplace_back(clip.key_persons[static_cast<size_t>(a)],
                                            clip.key_persons[static_cast<size_t>(b)]);
    clip.informative_frames = sample_subset(rng, cfg.n_frames, cfg.n_frames - cfg.noise_frames);

    std::vector<bool> is_key(static_cast<size_t>(cfg.n_persons), false);
    std::vector<int> key_slot(static_cast<size_t>(cfg.n_persons), -1);
    for (int s = 0; s < n_key; ++s) {
        is_key[static_cast<size_t>(clip.key_persons[static_cast<size_t>(s)])] = true;
        key_slot[static_cast<size_t>(clip.key_persons[static_cast<size_t>(s)])] = s;
    }
    std::vector<bool> informative(static_cast<size_t>(cfg.n_frames), false);
    std::vector<int> inf_rank(static_cast<size_t>(cfg.n_frames), -1);
    for (size_t r = 0; r < clip.informative_frames.size(); ++r) {
        informative[static_cast<size_t>(clip.informative_frames[r])] = true;
        inf_rank[static_cast<size_t>(clip.informative_frames[r])] = static_cast<int>(r);
    }
    const int n_inf = static_cast<int>(clip.informative_frames.size());

    Motif motif;
    motif.cx = rng.uniform(3.0, kArena - 3.0);
    motif.cy = rng.uniform(3.0, kArena - 3.0);
    motif.radius = rng.uniform(1.5, 2.5);
    motif.heading = rng.uniform(0.0, 2.0 * M_PI);
    motif.slot_angle.resize(static_cast<size_t>(n_key));
    for (int s = 0; s < n_key; ++s)
        motif.slot_angle[static_cast<size_t>(s)] =
            2.0 * M_PI * s / n_key + rng.normal(0.0, 0.1);

    std::vector<std::pair<double, double>> walker(static_cast<size_t>(cfg.n_persons));
    for (auto& w : walker) w = {rng.uniform(0.0, kArena), rng.uniform(0.0, kArena)};

    // One confuser class per noise frame, uniform over all classes so the
    // noise frames carry no information about the true label.
    std::vector<int> confuser(static_cast<size_t>(cfg.n_frames), 0);
    for (int t = 0; t < cfg.n_frames; ++t)
        confuser[static_cast<size_t>(t)] = static_cast<int>(rng.uniform_int(cfg.n_classes));

    for (int t = 0; t < cfg.n_frames; ++t) {
        const bool inf = informative[static_cast<size_t>(t)];
        const double s = (inf && n_inf > 1)
                             ? static_cast<double>(inf_rank[static_cast<size_t>(t)]) / (n_inf - 1)
                             : 0.0;
        for (int p = 0; p < cfg.n_persons; ++p) {
            double px, py;
            if (inf && is_key[static_cast<size_t>(p)]) {
                auto [mx, my] = motif_position(motif, clip.activity_label,
                                               key_slot[static_cast<size_t>(p)], s);
                px = clamp_arena(mx + rng.normal(0.0, kMotifJitter));
                py = clamp_arena(my + rng.normal(0.0, kMotifJitter));
            } else if (inf) {
                auto& w = walker[static_cast<size_t>(p)];
                w.first = clamp_arena(w.first + rng.normal(0.0, 0.3));
                w.second = clamp_arena(w.second + rng.normal(0.0, 0.3));
                px = w.first;
                py = w.second;
            } else {
                // scene scramble: no temporal or class coherence
                px = rng.uniform(0.0, kArena);
                py = rng.uniform(0.0, kArena);
            }
            clip.positions.at(p, t, 0) = px;
            clip.positions.at(p, t, 1) = py;

            for (int d = 0; d < cfg.d_feature; ++d) {
                double v;
                if (inf && is_key[static_cast<size_t>(p)]) {
                    v = kSignalAmp * sigs[static_cast<size_t>(clip.activity_label)]
                                         [static_cast<size_t>(d)] +
                        rng.normal(0.0, kFeatureNoise);
                } else if (inf) {
                    v = rng.normal(0.0, kClutterNoise);
                } else {
                    v = kConfuserAmp * sigs[static_cast<size_t>(confuser[static_cast<size_t>(t)])]
                                           [static_cast<size_t>(d)] +
                        rng.normal(0.0, kFeatureNoise);
                }
                clip.person_features.at(p, t, d) = v;
            }
        }
    }
    return clip;
}

json clip_to_json(const SceneClip& c) {
    json j;
    j["clip_id"] = c.clip_id;
    j["n_persons"] = c.n_persons;
    j["n_frames"] = c.n_frames;
    j["d_feature"] = c.d_feature;
    j["activity_label"] = c.activity_label;
    j["key_persons"] = c.key_persons;
    json rel = json::array();
    for (const auto& [a, b] : c.key_relations) rel.push_back(json::array({a, b}));
    j["key_relations"] = rel;
    j["informative_frames"] = c.informative_frames;
    json pos = json::array();
    for (int p = 0; p < c.n_persons; ++p) {
        json row = json::array();
        for (int t = 0; t < c.n_frames; ++t)
            row.push_back(json::array({c.positions.at(p, t, 0), c.positions.at(p, t, 1)}));
        pos.push_back(std::move(row));
    }
    j["positions"] = std::move(pos);
    json feat = json::array();
    for (int p = 0; p < c.n_persons; ++p) {
        json row = json::array();
        for (int t = 0; t < c.n_frames; ++t) {
            json f = json::array();
            for (int d = 0; d < c.d_feature; ++d) f.push_back(c.person_features.at(p, t, d));
            row.push_back(std::move(f));
        }
        feat.push_back(std::move(row));
    }
    j["person_features"] = std::move(feat);
    return j;
}

SceneClip clip_from_json(const json& j) {
    SceneClip c;
    c.clip_id = j.at("clip_id").get<int>();
    c.n_persons = j.at("n_persons").get<int>();
    c.n_frames = j.at("n_frames").get<int>();
    c.d_feature = j.at("d_feature").get<int>();
    c.activity_label = j.at("activity_label").get<int>();
    c.key_persons = j.at("key_persons").get<std::vector<int>>();
    for (const auto& r : j.at("key_relations"))
        c.key_relations.emplace_back(r.at(0).get<int>(), r.at(1).get<int>());
    c.informative_frames = j.at("informative_frames").get<std::vector<int>>();
    c.positions = Tensor({c.n_persons, c.n_frames, 2});
    c.person_features = Tensor({c.n_persons, c.n_frames, c.d_feature});
    const auto& pos = j.at("positions");
    const auto& feat = j.at("person_features");
    for (int p = 0; p < c.n_persons; ++p)
        for (int t = 0; t < c.n_frames; ++t) {
            c.positions.at(p, t, 0) = pos.at(p).at(t).at(0).get<double>();
            c.positions.at(p, t, 1) = pos.at(p).at(t).at(1).get<double>();
            for (int d = 0; d < c.d_feature; ++d)
                c.person_features.at(p, t, d) = feat.at(p).at(t).at(d).get<double>();
        }
    return c;
}

} // namespace

void SceneConfig::validate() const {
    if (n_classes < 2)
        throw std::invalid_argument("scene config: n_classes must be >= 2, got " +
                                    std::to_string(n_classes));
    if (n_persons < 3)
        throw std::invalid_argument("scene config: n_persons must be >= 3, got " +
                                    std::to_string(n_persons));
    if (n_frames < 1) throw std::invalid_argument("scene config: n_frames must be >= 1");
    if (d_feature < 1) throw std::invalid_argument("scene config: d_feature must be >= 1");
    if (n_clips < 1) throw std::invalid_argument("scene config: n_clips must be >= 1");
    if (noise_frames < 0 || noise_frames >= n_frames)
        throw std::invalid_argument("scene config: noise_frames must lie in [0, n_frames), got " +
                                    std::to_string(noise_frames));
    if (distractor_persons < 0 || distractor_persons > n_persons - 2)
        throw std::invalid_argument(
            "scene config: distractor_persons must leave at least two key persons, got " +
            std::to_string(distractor_persons));
}

std::array<double, 6> interaction_features(double xi, double yi, double xj, double yj) {
    const double dx = xj - xi;
    const double dy = yj - yi;
    double slope_angle;
    if (dx == 0.0)
        slope_angle = (dy == 0.0) ? 0.0 : (dy > 0.0 ? M_PI / 2.0 : -M_PI / 2.0);
    else
        slope_angle = std::atan(dy / dx);
    const double full_angle = (dx == 0.0 && dy == 0.0) ? 0.0 : std::atan2(dy, dx);
    return {std::fabs(dx), std::fabs(dy), std::fabs(dx + dy), std::sqrt(dx * dx + dy * dy),
            slope_angle, full_angle};
}

std::vector<SceneClip> generate_dataset(const SceneConfig& cfg, uint64_t seed) {
    cfg.validate();
    const Rng root(seed);
    const auto sigs = make_signatures(cfg.n_classes, cfg.d_feature, root.fork(0x51675ULL));
    std::vector<SceneClip> clips;
    clips.reserve(static_cast<size_t>(cfg.n_clips));
    for (int i = 0; i < cfg.n_clips; ++i)
        clips.push_back(generate_clip(cfg, sigs, i, root.fork(static_cast<uint64_t>(i) + 1)));
    return clips;
}

SceneClip permute_persons(const SceneClip& clip, const std::vector<int>& perm) {
    if (static_cast<int>(perm.size()) != clip.n_persons)
        throw std::invalid_argument("permute_persons: permutation size mismatch");
    std::vector<int> inverse(perm.size(), -1);
    for (size_t k = 0; k < perm.size(); ++k) {
        if (perm[k] < 0 || perm[k] >= clip.n_persons || inverse[static_cast<size_t>(perm[k])] != -1)
            throw std::invalid_argument("permute_persons: not a permutation");
        inverse[static_cast<size_t>(perm[k])] = static_cast<int>(k);
    }
    SceneClip out = clip;
    for (int k = 0; k < clip.n_persons; ++k) {
        const int src = perm[static_cast<size_t>(k)];
        for (int t = 0; t < clip.n_frames; ++t) {
            out.positions.at(k, t, 0) = clip.positions.at(src, t, 0);
            out.positions.at(k, t, 1) = clip.positions.at(src, t, 1);
            for (int d = 0; d < clip.d_feature; ++d)
                out.person_features.at(k, t, d) = clip.person_features.at(src, t, d);
        }
    }
    out.key_persons.clear();
    for (int kp : clip.key_persons) out.key_persons.push_back(inverse[static_cast<size_t>(kp)]);
    std::sort(out.key_persons.begin(), out.key_persons.end());
    out.key_relations.clear();
    for (const auto& [a, b] : clip.key_relations) {
        int na = inverse[static_cast<size_t>(a)], nb = inverse[static_cast<size_t>(b)];
        if (na > nb) std::swap(na, nb);
        out.key_relations.emplace_back(na, nb);
    }
    std::sort(out.key_relations.begin(), out.key_relations.end());
    return out;
}

void write_dataset_jsonl(const std::string& path, const std::vector<SceneClip>& clips) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("dataset: cannot open '" + path + "' for writing");
    for (const auto& c : clips) os << clip_to_json(c).dump() << '\n';
    if (!os) throw std::runtime_error("dataset: write to '" + path + "' failed");
}

std::vector<SceneClip> read_dataset_jsonl(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("dataset: cannot open '" + path + "'");
    std::vector<SceneClip> clips;
    std::string line;
    size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            clips.push_back(clip_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw std::runtime_error("dataset '" + path + "' line " + std::to_string(line_no) +
                                     ": " + e.what());
        }
    }
    return clips;
}

} // namespace relforge
