#include "s4v/train.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "s4v/checkpoint.hpp"
#include "s4v/data.hpp"
#include "s4v/optim.hpp"

namespace s4v {

namespace O = s4v::ops;

VideoModel build_model(const TrainConfig& cfg, int64_t num_classes) {
    VideoModel m;
    m.task = cfg.task;
    m.vit_cfg = cfg.vit;
    m.side_cfg = cfg.side;
    Rng rng(cfg.seed ^ 0x5eedfacefeedULL);
    m.vit = make_vit(m.store, "vit", cfg.vit, rng, cfg.dtype, false);
    m.side = make_side(m.store, "side", cfg.side, cfg.vit, rng, cfg.dtype);
    m.plan = make_fusion_plan(cfg.vit.layers, cfg.side.layers, cfg.side.fusion);
    if (cfg.task == TrainConfig::Task::kRecognition) {
        m.classifier = nn::make_linear(m.store, "head.classifier", cfg.side.dim, num_classes, rng,
                                       cfg.dtype, true);
    } else {
        m.up = nn::make_linear(m.store, "head.up", cfg.side.dim, cfg.vit.dim, rng, cfg.dtype,
                               true, /*zero_init=*/true);
        m.logit_scale = m.store.add(
            "head.logit_scale", Tensor::scalar(initial_logit_scale(), cfg.dtype), true);
        TextConfig tc = cfg.text;
        tc.proj_dim = cfg.vit.effective_proj_dim();
        m.text = make_text(m.store, "text", tc, rng, cfg.dtype);
    }
    return m;
}

namespace {

Tensor batch_clips(const Tensor& clips, const std::vector<int64_t>& idx) {
    std::vector<int64_t> shape = clips.shape();
    shape[0] = static_cast<int64_t>(idx.size());
    Tensor out = Tensor::empty(shape, clips.dtype());
    const size_t per = static_cast<size_t>(clips.numel() / clips.dim(0)) *
                       dtype_size(clips.dtype());
    for (size_t i = 0; i < idx.size(); ++i)
        std::memcpy(static_cast<std::byte*>(out.raw()) + i * per,
                    static_cast<const std::byte*>(clips.raw()) +
                        static_cast<size_t>(idx[i]) * per,
                    per);
    return out;
}

void check_finite_or_die(const Tensor& loss, const Tape& tape, int64_t step) {
    if (all_finite(loss)) return;
    for (size_t i = 0; i < tape.nodes().size(); ++i) {
        auto out = tape.nodes()[i].output.lock();
        if (!out) continue;
        if (!all_finite(Tensor(out)))
            throw NumericError("non-finite loss at step " + std::to_string(step) +
                               "; first non-finite tensor produced by op '" +
                               tape.nodes()[i].op + "' (node " + std::to_string(i) + ")");
    }
    throw NumericError("non-finite loss at step " + std::to_string(step) +
                       " (inputs already non-finite)");
}

// forward for one recognition batch; returns (loss, #correct)
std::pair<Tensor, int64_t> recognition_step(VideoModel& m, const Tensor& frames,
                                            const std::vector<int64_t>& labels,
                                            double label_smoothing, bool training) {
    BackboneOutput bo = vit_forward(frames, m.vit, m.plan);
    Tensor s_out = side_forward(frames, bo, m.side, m.plan, m.vit_cfg, training);
    RecognitionOutput head = recognition_head(s_out, m.classifier);
    Tensor loss = label_smoothing_ce(head.logits, labels, label_smoothing);
    int64_t correct = 0;
    const int64_t k = head.logits.dim(1);
    for (int64_t b = 0; b < head.logits.dim(0); ++b) {
        int64_t arg = 0;
        for (int64_t j = 1; j < k; ++j)
            if (head.logits.read(b * k + j) > head.logits.read(b * k + arg)) arg = j;
        if (arg == labels[static_cast<size_t>(b)]) ++correct;
    }
    return {loss, correct};
}

// similarity matrix between video clips and captions under the configured
// matching arm
Tensor retrieval_similarity(VideoModel& m, const TrainConfig& cfg, const Tensor& frames,
                            const std::vector<std::vector<int64_t>>& captions, bool training) {
    BackboneOutput bo = vit_forward(frames, m.vit, m.plan);
    Tensor s_out = side_forward(frames, bo, m.side, m.plan, m.vit_cfg, training);
    Tensor video = retrieval_video_head(s_out, bo.z_out, m.up, m.vit.proj);  // [B,T,Dj]
    TextOutput text = text_forward(captions, m.text, frames.dtype());
    if (cfg.matching == TrainConfig::Matching::kTokenwise) {
        return O::pairwise_token_sim(video, O::l2norm_lastdim(text.tokens), text.lengths);
    }
    Tensor vg = O::l2norm_lastdim(O::mean_axis(video, 1));  // [B,Dj]
    Tensor tg = O::l2norm_lastdim(text.eos);                // [B2,Dj]
    return O::matmul(vg, O::permute(tg, {1, 0}));
}

std::string json_epoch(const EpochRecord& r, const char* metric_name) {
    nlohmann::json j;
    j["epoch"] = r.epoch;
    j["loss"] = r.loss;
    j[metric_name] = r.metric;
    j["lr"] = r.lr;
    j["saved_activation_bytes"] = r.step1_saved_activation_bytes;
    return j.dump();
}

}  // namespace

TrainResult train(const TrainConfig& cfg) {
    cfg.validate();
    std::filesystem::create_directories(cfg.out_dir);

    VideoDataset videos;
    PairedDataset pairs;
    int64_t num_items = 0;
    int64_t num_classes = cfg.data.num_classes;
    if (cfg.task == TrainConfig::Task::kRecognition) {
        videos = cfg.data_dir.empty() ? generate_synthetic_videos(cfg.data, cfg.seed, cfg.dtype)
                                      : load_video_dataset(cfg.data_dir, cfg.dtype);
        num_items = videos.clips.dim(0);
        num_classes = videos.num_classes;
    } else {
        pairs = cfg.data_dir.empty()
                    ? generate_synthetic_pairs(cfg.data, cfg.num_pairs, cfg.seed, cfg.dtype)
                    : load_paired_dataset(cfg.data_dir, cfg.dtype);
        num_items = pairs.clips.dim(0);
    }

    VideoModel model = build_model(cfg, num_classes);
    TrainResult result;
    result.backbone_checksum_before = model.store.checksum("vit.");

    AdamWConfig acfg;
    acfg.lr = cfg.opt.lr;
    acfg.beta1 = cfg.opt.beta1;
    acfg.beta2 = cfg.opt.beta2;
    acfg.weight_decay = cfg.opt.weight_decay;
    AdamW opt(model.store.trainable(), acfg);

    const int64_t batch = std::min<int64_t>(cfg.opt.batch, num_items);
    const int64_t steps_per_epoch = (num_items + batch - 1) / batch;
    const int64_t total_steps = steps_per_epoch * cfg.opt.epochs;
    const int64_t warmup_steps = steps_per_epoch * cfg.opt.warmup_epochs;
    if (warmup_steps >= total_steps)
        throw ConfigError("config: warmup covers the whole schedule (" +
                          std::to_string(warmup_steps) + " of " + std::to_string(total_steps) +
                          " steps)");

    const std::string metrics_path = cfg.out_dir + "/metrics.jsonl";
    std::ofstream metrics(metrics_path, std::ios::trunc);
    if (!metrics) throw IoError("cannot open for writing: " + metrics_path);
    const char* metric_name =
        cfg.task == TrainConfig::Task::kRecognition ? "train_accuracy" : "train_r1";
    result.checkpoint_path = cfg.out_dir + "/checkpoint_best.s4v";

    Rng shuffle_rng(cfg.seed ^ 0x0badc0ffeeULL);
    std::vector<int64_t> order(static_cast<size_t>(num_items));
    for (int64_t i = 0; i < num_items; ++i) order[static_cast<size_t>(i)] = i;

    int64_t global_step = 0;
    size_t step1_bytes = 0;
    double best = -1.0;
    for (int64_t epoch = 1; epoch <= cfg.opt.epochs; ++epoch) {
        // deterministic shuffle
        for (int64_t i = num_items - 1; i > 0; --i)
            std::swap(order[static_cast<size_t>(i)],
                      order[static_cast<size_t>(shuffle_rng.randint(i + 1))]);
        double loss_sum = 0;
        int64_t correct = 0, seen = 0;
        double last_lr = 0;
        for (int64_t s = 0; s < steps_per_epoch; ++s) {
            std::vector<int64_t> idx;
            for (int64_t b = 0; b < batch; ++b)
                idx.push_back(order[static_cast<size_t>((s * batch + b) % num_items)]);
            const double lr = cosine_schedule(global_step, total_steps, warmup_steps, cfg.opt.lr);
            last_lr = lr;

            Tape tape;
            TapeScope scope(tape);
            Tensor loss;
            if (cfg.task == TrainConfig::Task::kRecognition) {
                std::vector<int64_t> labels;
                for (int64_t i : idx) labels.push_back(videos.labels[static_cast<size_t>(i)]);
                auto [l, c] = recognition_step(model, batch_clips(videos.clips, idx), labels,
                                               cfg.label_smoothing, true);
                loss = l;
                correct += c;
                seen += batch;
            } else {
                std::vector<std::vector<int64_t>> captions;
                for (int64_t i : idx) captions.push_back(pairs.captions[static_cast<size_t>(i)]);
                Tensor sim = retrieval_similarity(model, cfg, batch_clips(pairs.clips, idx),
                                                  captions, true);
                loss = contrastive_loss(sim, logit_scale_value(model.logit_scale));
            }
            check_finite_or_die(loss, tape, global_step + 1);
            if (global_step == 0) step1_bytes = tape.saved_activation_bytes();
            loss_sum += loss.item();
            tape.backward(loss);
            opt.step(lr);
            ++global_step;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.loss = loss_sum / static_cast<double>(steps_per_epoch);
        rec.lr = last_lr;
        rec.step1_saved_activation_bytes = step1_bytes;
        if (cfg.task == TrainConfig::Task::kRecognition) {
            rec.metric = 100.0 * static_cast<double>(correct) / static_cast<double>(seen);
        } else {
            // full-set text-to-video R@1 in eval mode
            Tensor sim = retrieval_similarity(model, cfg, pairs.clips, pairs.captions, false);
            rec.metric = retrieval_metrics(sim).r1;
        }
        const std::string line = json_epoch(rec, metric_name);
        metrics << line << "\n";
        metrics.flush();
        result.metric_lines.push_back(line);
        result.epochs.push_back(rec);
        if (rec.metric >= best) {
            best = rec.metric;
            save_store(model.store, result.checkpoint_path);
        }
    }
    result.best_metric = best;
    result.backbone_checksum_after = model.store.checksum("vit.");

    std::ofstream summary(cfg.out_dir + "/summary.csv", std::ios::trunc);
    summary << "epoch,loss," << metric_name << ",lr,saved_activation_bytes\n";
    char buf[64];
    for (const auto& r : result.epochs) {
        std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g,%.17g,%zu",
                      static_cast<long long>(r.epoch), r.loss, r.metric, r.lr,
                      r.step1_saved_activation_bytes);
        summary << buf << "\n";
    }
    return result;
}

EvalResult evaluate(const TrainConfig& cfg, const std::string& checkpoint_path) {
    cfg.validate();
    EvalResult result;
    if (cfg.task == TrainConfig::Task::kRecognition) {
        VideoDataset videos = cfg.data_dir.empty()
                                  ? generate_synthetic_videos(cfg.data, cfg.seed, cfg.dtype)
                                  : load_video_dataset(cfg.data_dir, cfg.dtype);
        VideoModel model = build_model(cfg, videos.num_classes);
        if (!checkpoint_path.empty()) load_into_store(model.store, checkpoint_path);
        const int64_t M = videos.clips.dim(0);
        const int64_t k = videos.num_classes;
        int64_t top1 = 0, top5 = 0;
        const int64_t batch = std::min<int64_t>(cfg.opt.batch, M);
        for (int64_t start = 0; start < M; start += batch) {
            std::vector<int64_t> idx;
            for (int64_t i = start; i < std::min(M, start + batch); ++i) idx.push_back(i);
            BackboneOutput bo = vit_forward(batch_clips(videos.clips, idx), model.vit, model.plan);
            Tensor s_out = side_forward(batch_clips(videos.clips, idx), bo, model.side, model.plan,
                                        model.vit_cfg, false);
            Tensor logits = recognition_head(s_out, model.classifier).logits;
            for (size_t b = 0; b < idx.size(); ++b) {
                const int64_t label = videos.labels[static_cast<size_t>(idx[b])];
                const double target = logits.read(static_cast<int64_t>(b) * k + label);
                int64_t above = 0;
                for (int64_t j = 0; j < k; ++j)
                    if (logits.read(static_cast<int64_t>(b) * k + j) > target) ++above;
                top1 += above == 0;
                top5 += above < 5;
            }
        }
        result.top1 = 100.0 * static_cast<double>(top1) / static_cast<double>(M);
        result.top5 = 100.0 * static_cast<double>(top5) / static_cast<double>(M);
    } else {
        PairedDataset pairs = cfg.data_dir.empty()
                                  ? generate_synthetic_pairs(cfg.data, cfg.num_pairs, cfg.seed,
                                                             cfg.dtype)
                                  : load_paired_dataset(cfg.data_dir, cfg.dtype);
        VideoModel model = build_model(cfg, cfg.data.num_classes);
        if (!checkpoint_path.empty()) load_into_store(model.store, checkpoint_path);
        TrainConfig eval_cfg = cfg;
        Tensor sim = retrieval_similarity(model, eval_cfg, pairs.clips, pairs.captions, false);
        result.retrieval = retrieval_metrics(sim);
    }
    return result;
}

}  // namespace s4v
