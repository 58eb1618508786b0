#pragma once

#include <string>
#include <vector>

#include "s4v/config.hpp"
#include "s4v/heads.hpp"
#include "s4v/text.hpp"

namespace s4v {

// everything one configuration instantiates; tensors are shared between the
// registry and the typed views
struct VideoModel {
    nn::ParamStore store;
    ViTConfig vit_cfg;
    SideConfig side_cfg;
    ViTParams vit;
    SideParams side;
    FusionPlan plan;
    nn::Linear classifier;  // recognition head
    nn::Linear up;          // retrieval lift d -> D
    Tensor logit_scale;     // retrieval temperature (learnable)
    TextParams text;        // retrieval text tower
    TrainConfig::Task task = TrainConfig::Task::kRecognition;
};

VideoModel build_model(const TrainConfig& cfg, int64_t num_classes);

struct EpochRecord {
    int64_t epoch = 0;
    double loss = 0;
    double metric = 0;  // train accuracy (%) or text-to-video R@1 (%)
    double lr = 0;
    size_t step1_saved_activation_bytes = 0;
};

struct TrainResult {
    std::vector<EpochRecord> epochs;
    std::vector<std::string> metric_lines;  // the exact JSONL written to disk
    std::string checkpoint_path;
    double best_metric = 0;
    uint64_t backbone_checksum_before = 0;
    uint64_t backbone_checksum_after = 0;
};

// runs the recipe, writes <out>/metrics.jsonl, <out>/summary.csv and the best
// checkpoint; aborts with NumericError naming the first non-finite tensor if
// the loss stops being finite
TrainResult train(const TrainConfig& cfg);

struct EvalResult {
    double top1 = 0, top5 = 0;  // percent, recognition
    RetrievalMetrics retrieval; // text-to-video, retrieval
};

EvalResult evaluate(const TrainConfig& cfg, const std::string& checkpoint_path);

}  // namespace s4v
