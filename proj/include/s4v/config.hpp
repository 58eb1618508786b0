#pragma once

#include <map>
#include <string>
#include <vector>

#include "s4v/data.hpp"
#include "s4v/side.hpp"
#include "s4v/text.hpp"
#include "s4v/vit.hpp"

namespace s4v {

struct OptimRecipe {
    double lr = 1e-3;
    double weight_decay = 0.15;
    double beta1 = 0.9;
    double beta2 = 0.999;
    int64_t warmup_epochs = 1;
    int64_t epochs = 10;
    int64_t batch = 8;
};

struct TrainConfig {
    enum class Task { kRecognition, kRetrieval };
    enum class Matching { kTokenwise, kGlobal };
    Task task = Task::kRecognition;
    DType dtype = DType::F32;
    uint64_t seed = 0;
    ViTConfig vit;
    SideConfig side;
    TextConfig text;
    OptimRecipe opt;
    double label_smoothing = 0.1;
    Matching matching = Matching::kTokenwise;
    SyntheticVideoSpec data;
    int64_t num_pairs = 32;   // retrieval dataset size
    std::string data_dir;     // optional raw-tensor directory
    std::string out_dir = ".";

    void validate() const;
};

// flat "key = value" text, '#' comments, dotted keys; every key also works
// as a --set override
std::map<std::string, std::string> parse_config_file(const std::string& path);
void apply_override(std::map<std::string, std::string>& kv, const std::string& assignment);

// unknown keys are rejected
TrainConfig train_config_from(const std::map<std::string, std::string>& kv);

// canonical key=value form (round-trips through train_config_from)
std::string dump_config(const TrainConfig& cfg);

}  // namespace s4v
