#include "s4v/data.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <cstring>
#include <filesystem>

#include "s4v/checkpoint.hpp"

namespace s4v {

namespace {

// quadrant orders: the four rotations first (maximally confusable), then the
// remaining permutations in lexicographic order
std::vector<std::array<int, 4>> quadrant_orders() {
    std::vector<std::array<int, 4>> rot = {
        {0, 1, 2, 3}, {1, 2, 3, 0}, {2, 3, 0, 1}, {3, 0, 1, 2}};
    std::vector<std::array<int, 4>> all;
    std::array<int, 4> p = {0, 1, 2, 3};
    do {
        all.push_back(p);
    } while (std::next_permutation(p.begin(), p.end()));
    std::vector<std::array<int, 4>> out = rot;
    for (const auto& q : all)
        if (std::find(out.begin(), out.end(), q) == out.end()) out.push_back(q);
    return out;
}

void validate_spec(const SyntheticVideoSpec& spec) {
    if (spec.pattern != 0)
        throw ConfigError("synthetic data: unknown generator id " + std::to_string(spec.pattern));
    if (spec.num_classes < 2 || spec.num_classes > 24)
        throw ConfigError("synthetic data: num_classes must be in 2..24");
    if (spec.frames < 4) throw ConfigError("synthetic data: need at least 4 frames");
    if (spec.image_size < 8) throw ConfigError("synthetic data: image_size must be >= 8");
}

// block placement for quadrant q in frame t of one clip; the block geometry
// is identical for every clip so the noise field is the only per-clip
// signature and the visit order the only label signal
void draw_clip(Tensor& clips, int64_t clip, const SyntheticVideoSpec& spec,
               const std::array<int, 4>& order, int color, Rng& rng) {
    const int64_t T = spec.frames, H = spec.image_size;
    const int64_t half = H / 2;
    const int64_t block = std::max<int64_t>(2, H / 4);
    const int64_t center = (half - block) / 2;
    for (int64_t t = 0; t < T; ++t) {
        const int seg = static_cast<int>(t * 4 / T);
        const int q = order[static_cast<size_t>(seg)];
        const int64_t oy = (q / 2) * half + center;
        const int64_t ox = (q % 2) * half + center;
        for (int64_t c = 0; c < 3; ++c)
            for (int64_t y = 0; y < H; ++y)
                for (int64_t x = 0; x < H; ++x) {
                    double v = rng.normal(0.0, spec.noise);
                    const bool inside =
                        y >= oy && y < oy + block && x >= ox && x < ox + block;
                    if (inside && (color < 0 || color == c)) v += 1.0;
                    clips.write((((clip * T + t) * 3 + c) * H + y) * H + x, v);
                }
    }
}

}  // namespace

VideoDataset generate_synthetic_videos(const SyntheticVideoSpec& spec, uint64_t seed, DType dt) {
    validate_spec(spec);
    const auto orders = quadrant_orders();
    const int64_t M = spec.num_classes * spec.clips_per_class;
    VideoDataset data;
    data.num_classes = spec.num_classes;
    data.clips = Tensor::empty({M, spec.frames, 3, spec.image_size, spec.image_size}, dt);
    Rng rng(seed);
    for (int64_t i = 0; i < M; ++i) {
        const int64_t label = i % spec.num_classes;
        draw_clip(data.clips, i, spec, orders[static_cast<size_t>(label)], -1, rng);
        data.labels.push_back(label);
    }
    return data;
}

PairedDataset generate_synthetic_pairs(const SyntheticVideoSpec& spec, int64_t num_pairs,
                                       uint64_t seed, DType dt) {
    validate_spec(spec);
    const auto orders = quadrant_orders();
    if (num_pairs < 2 || num_pairs > 72)
        throw ConfigError("synthetic pairs: need 2..72 distinct (order, color) combinations");
    PairedDataset data;
    data.clips = Tensor::empty({num_pairs, spec.frames, 3, spec.image_size, spec.image_size}, dt);
    Rng rng(seed);
    for (int64_t i = 0; i < num_pairs; ++i) {
        const int color = static_cast<int>(i % 3);
        const auto& order = orders[static_cast<size_t>(i / 3) % orders.size()];
        draw_clip(data.clips, i, spec, order, color, rng);
        std::vector<int64_t> caption;
        caption.push_back(kTokColor0 + color);
        for (int q : order) caption.push_back(kTokQuad0 + q);
        caption.push_back(kTokEos);
        data.captions.push_back(std::move(caption));
    }
    return data;
}

std::vector<int64_t> quadrant_visit_order(const Tensor& clip) {
    if (clip.rank() != 4) throw ShapeError("quadrant_visit_order: expected one clip [T,3,H,W]");
    const int64_t T = clip.dim(0), H = clip.dim(2);
    const int64_t half = H / 2;
    std::vector<int64_t> visits;
    for (int64_t t = 0; t < T; ++t) {
        double best = -1e300;
        int64_t best_q = 0;
        for (int64_t q = 0; q < 4; ++q) {
            const int64_t oy = (q / 2) * half, ox = (q % 2) * half;
            double acc = 0;
            for (int64_t c = 0; c < 3; ++c)
                for (int64_t y = oy; y < oy + half; ++y)
                    for (int64_t x = ox; x < ox + half; ++x)
                        acc += clip.read(((t * 3 + c) * H + y) * H + x);
            if (acc > best) {
                best = acc;
                best_q = q;
            }
        }
        if (visits.empty() || visits.back() != best_q) visits.push_back(best_q);
    }
    return visits;
}

double knn_frame_mean_accuracy(const VideoDataset& data, int k) {
    const int64_t M = data.clips.dim(0), T = data.clips.dim(1);
    const int64_t frame_elems = data.clips.numel() / (M * T);
    std::vector<std::vector<double>> feats(static_cast<size_t>(M),
                                           std::vector<double>(static_cast<size_t>(T)));
    for (int64_t i = 0; i < M; ++i)
        for (int64_t t = 0; t < T; ++t) {
            double acc = 0;
            const int64_t base = (i * T + t) * frame_elems;
            for (int64_t e = 0; e < frame_elems; ++e) acc += data.clips.read(base + e);
            feats[static_cast<size_t>(i)][static_cast<size_t>(t)] =
                acc / static_cast<double>(frame_elems);
        }
    int64_t correct = 0;
    for (int64_t i = 0; i < M; ++i) {
        std::vector<std::pair<double, int64_t>> dist;
        for (int64_t j = 0; j < M; ++j) {
            if (j == i) continue;
            double d2 = 0;
            for (int64_t t = 0; t < T; ++t) {
                const double diff = feats[static_cast<size_t>(i)][static_cast<size_t>(t)] -
                                    feats[static_cast<size_t>(j)][static_cast<size_t>(t)];
                d2 += diff * diff;
            }
            dist.emplace_back(d2, data.labels[static_cast<size_t>(j)]);
        }
        std::sort(dist.begin(), dist.end());
        std::vector<int64_t> votes(static_cast<size_t>(data.num_classes), 0);
        for (int n = 0; n < k && n < static_cast<int>(dist.size()); ++n)
            ++votes[static_cast<size_t>(dist[static_cast<size_t>(n)].second)];
        const int64_t pred = static_cast<int64_t>(
            std::max_element(votes.begin(), votes.end()) - votes.begin());
        if (pred == data.labels[static_cast<size_t>(i)]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(M);
}

namespace {
std::string clip_path(const std::string& dir, int64_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "clip_%05lld.s4v", static_cast<long long>(i));
    return dir + "/" + buf;
}

Tensor one_clip(const Tensor& clips, int64_t i) {
    const int64_t per = clips.numel() / clips.dim(0);
    std::vector<int64_t> shape(clips.shape().begin() + 1, clips.shape().end());
    Tensor t = Tensor::empty(shape, clips.dtype());
    std::memcpy(t.raw(), static_cast<const std::byte*>(clips.raw()) +
                             static_cast<size_t>(i * per) * dtype_size(clips.dtype()),
                t.nbytes());
    return t;
}
}  // namespace

void save_video_dataset(const VideoDataset& data, const std::string& dir) {
    std::filesystem::create_directories(dir);
    for (int64_t i = 0; i < data.clips.dim(0); ++i) {
        TensorArchive arch;
        arch.emplace("frames", one_clip(data.clips, i));
        arch.emplace("label",
                     Tensor::full({1}, static_cast<double>(data.labels[static_cast<size_t>(i)]),
                                  data.clips.dtype()));
        save_archive(arch, clip_path(dir, i));
    }
}

VideoDataset load_video_dataset(const std::string& dir, DType dt) {
    std::vector<std::string> files;
    if (!std::filesystem::is_directory(dir)) throw IoError("not a dataset directory: " + dir);
    for (const auto& entry : std::filesystem::directory_iterator(dir))
        if (entry.path().extension() == ".s4v") files.push_back(entry.path().string());
    if (files.empty()) throw IoError("no .s4v clips under " + dir);
    std::sort(files.begin(), files.end());
    VideoDataset data;
    int64_t max_label = 0;
    for (size_t i = 0; i < files.size(); ++i) {
        TensorArchive arch = load_archive(files[i]);
        auto it = arch.find("frames");
        if (it == arch.end()) throw ConfigError("clip archive missing 'frames': " + files[i]);
        Tensor frames = it->second.dtype() == dt ? it->second : it->second.to(dt);
        if (!data.clips.defined()) {
            std::vector<int64_t> shape = frames.shape();
            shape.insert(shape.begin(), static_cast<int64_t>(files.size()));
            data.clips = Tensor::empty(shape, dt);
        }
        if (frames.numel() != data.clips.numel() / data.clips.dim(0))
            throw ConfigError("clip shape mismatch in " + files[i] + ": " +
                              shape_str(frames.shape()));
        std::memcpy(static_cast<std::byte*>(data.clips.raw()) +
                        static_cast<size_t>(i) * frames.nbytes(),
                    frames.raw(), frames.nbytes());
        auto lt = arch.find("label");
        const int64_t label =
            lt == arch.end() ? 0 : static_cast<int64_t>(lt->second.read(0));
        data.labels.push_back(label);
        max_label = std::max(max_label, label);
    }
    data.num_classes = max_label + 1;
    return data;
}

void save_paired_dataset(const PairedDataset& data, const std::string& dir) {
    std::filesystem::create_directories(dir);
    for (int64_t i = 0; i < data.clips.dim(0); ++i) {
        TensorArchive arch;
        arch.emplace("frames", one_clip(data.clips, i));
        const auto& cap = data.captions[static_cast<size_t>(i)];
        Tensor toks = Tensor::empty({static_cast<int64_t>(cap.size())}, data.clips.dtype());
        for (size_t j = 0; j < cap.size(); ++j)
            toks.write(static_cast<int64_t>(j), static_cast<double>(cap[j]));
        arch.emplace("tokens", std::move(toks));
        save_archive(arch, clip_path(dir, i));
    }
}

PairedDataset load_paired_dataset(const std::string& dir, DType dt) {
    std::vector<std::string> files;
    if (!std::filesystem::is_directory(dir)) throw IoError("not a dataset directory: " + dir);
    for (const auto& entry : std::filesystem::directory_iterator(dir))
        if (entry.path().extension() == ".s4v") files.push_back(entry.path().string());
    if (files.empty()) throw IoError("no .s4v clips under " + dir);
    std::sort(files.begin(), files.end());
    PairedDataset data;
    for (size_t i = 0; i < files.size(); ++i) {
        TensorArchive arch = load_archive(files[i]);
        auto it = arch.find("frames");
        auto ct = arch.find("tokens");
        if (it == arch.end() || ct == arch.end())
            throw ConfigError("paired clip archive must hold 'frames' and 'tokens': " + files[i]);
        Tensor frames = it->second.dtype() == dt ? it->second : it->second.to(dt);
        if (!data.clips.defined()) {
            std::vector<int64_t> shape = frames.shape();
            shape.insert(shape.begin(), static_cast<int64_t>(files.size()));
            data.clips = Tensor::empty(shape, dt);
        }
        std::memcpy(static_cast<std::byte*>(data.clips.raw()) +
                        static_cast<size_t>(i) * frames.nbytes(),
                    frames.raw(), frames.nbytes());
        std::vector<int64_t> cap;
        for (int64_t j = 0; j < ct->second.numel(); ++j)
            cap.push_back(static_cast<int64_t>(ct->second.read(j)));
        data.captions.push_back(std::move(cap));
    }
    return data;
}

}  // namespace s4v
