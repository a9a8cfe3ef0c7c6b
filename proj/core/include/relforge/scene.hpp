#pragma once

#include "relforge/tensor.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace relforge {

struct SceneConfig {
    int n_classes = 4;
    int n_persons = 6;
    int n_frames = 10;
    int d_feature = 16;
    int n_clips = 500;
    int noise_frames = 0;        // frames carrying no class signal
    int distractor_persons = 0;  // persons outside the planted group
    void validate() const;       // throws std::invalid_argument on bad ranges
};

struct SceneClip {
    int clip_id = 0;
    int n_persons = 0;
    int n_frames = 0;
    int d_feature = 0;
    Tensor positions;       // [N, T, 2]
    Tensor person_features; // [N, T, D_F]
    int activity_label = 0;
    std::vector<int> key_persons;                 // ascending
    std::vector<std::pair<int, int>> key_relations; // i < j, pairs of key persons
    std::vector<int> informative_frames;          // ascending
};

// Pairwise geometry channels for the displacement (dx, dy) from i to j:
// |dx|, |dy|, |dx+dy|, euclidean distance, atan(dy/dx), atan2(dy, dx).
// atan(x/0) is +-pi/2 by the sign of dy; atan(0/0) and atan2(0,0) are 0.
std::array<double, 6> interaction_features(double xi, double yi, double xj, double yj);

// Pure function of (cfg, seed): same inputs, bit-identical clips.
// Labels are assigned round-robin, so any prefix split stays class-balanced
// within one clip per class.
std::vector<SceneClip> generate_dataset(const SceneConfig& cfg, uint64_t seed);

// Relabels persons: new index k holds old person perm[k].
SceneClip permute_persons(const SceneClip& clip, const std::vector<int>& perm);

void write_dataset_jsonl(const std::string& path, const std::vector<SceneClip>& clips);
std::vector<SceneClip> read_dataset_jsonl(const std::string& path);

} // namespace relforge
