#pragma once

#include <string>
#include <vector>

#include "s4v/tensor.hpp"

namespace s4v {

// Clips show a bright block visiting all four image quadrants, one segment
// of T/4 frames per quadrant, over a Gaussian-noise background. The class
// is the visit ORDER (a permutation of the quadrants), so every class has
// the same multiset of frames: a frame-permutation-invariant model cannot
// beat chance, and per-frame statistics carry no label signal.
struct SyntheticVideoSpec {
    int64_t num_classes = 4;      // <= 24 distinct quadrant orders
    int64_t clips_per_class = 8;
    int64_t frames = 8;
    int64_t image_size = 16;
    double noise = 0.25;
    int64_t pattern = 0;  // generator id; 0 = quadrant-order blocks
};

struct VideoDataset {
    Tensor clips;  // [M, T, 3, H, W]
    std::vector<int64_t> labels;
    int64_t num_classes = 0;
};

VideoDataset generate_synthetic_videos(const SyntheticVideoSpec& spec, uint64_t seed, DType dt);

// Retrieval pairs: clip color (red/green/blue block) plus quadrant order,
// every pair distinct. Token vocabulary, documented:
//   0 = PAD, 1 = EOS, 2..5 = quadrant 0..3, 6..8 = color red/green/blue.
// A caption reads [color, q0, q1, q2, q3, EOS].
struct PairedDataset {
    Tensor clips;  // [M, T, 3, H, W]
    std::vector<std::vector<int64_t>> captions;
    int64_t vocab = 16;
};
inline constexpr int64_t kTokPad = 0;
inline constexpr int64_t kTokEos = 1;
inline constexpr int64_t kTokQuad0 = 2;
inline constexpr int64_t kTokColor0 = 6;

PairedDataset generate_synthetic_pairs(const SyntheticVideoSpec& spec, int64_t num_pairs,
                                       uint64_t seed, DType dt);

// the order each clip visits the quadrants, recovered from pixel argmax;
// used to show frame shuffling destroys the class-defining statistic
std::vector<int64_t> quadrant_visit_order(const Tensor& clip);

// leave-one-out k-NN on per-frame mean brightness vectors; stays near chance
// on this data by construction
double knn_frame_mean_accuracy(const VideoDataset& data, int k);

// raw-tensor directory format: one S4V1 archive per clip holding "frames"
// [T,3,H,W] and "label" [1] (and "tokens" [L] for paired data)
void save_video_dataset(const VideoDataset& data, const std::string& dir);
VideoDataset load_video_dataset(const std::string& dir, DType dt);
void save_paired_dataset(const PairedDataset& data, const std::string& dir);
PairedDataset load_paired_dataset(const std::string& dir, DType dt);

}  // namespace s4v
