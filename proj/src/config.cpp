#include "s4v/config.hpp"

#include <fstream>
#include <sstream>

namespace s4v {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

int64_t to_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const int64_t n = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return n;
    } catch (const std::exception&) {
        throw ConfigError("config: '" + key + "' expects an integer, got '" + v + "'");
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "off" || v == "no") return false;
    throw ConfigError("config: '" + key + "' expects a boolean, got '" + v + "'");
}

}  // namespace

void TrainConfig::validate() const {
    vit.validate();
    side.validate(vit);
    if (task == Task::kRetrieval) text.validate();
    if (opt.lr <= 0 || opt.epochs < 1 || opt.batch < 1 || opt.warmup_epochs < 0)
        throw ConfigError("config: optimizer fields must be positive");
    if (opt.weight_decay < 0 || opt.beta1 <= 0 || opt.beta1 >= 1 || opt.beta2 <= 0 ||
        opt.beta2 >= 1)
        throw ConfigError("config: invalid AdamW hyperparameters");
    if (label_smoothing < 0 || label_smoothing >= 1)
        throw ConfigError("config: label_smoothing must be in [0,1)");
    if (data.image_size != vit.image_size)
        throw ConfigError("config: data.image_size must match vit.image (got " +
                          std::to_string(data.image_size) + " vs " +
                          std::to_string(vit.image_size) + ")");
}

std::map<std::string, std::string> parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: expected key = value at " + path + ":" +
                              std::to_string(lineno));
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

void apply_override(std::map<std::string, std::string>& kv, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos)
        throw ConfigError("--set expects key=value, got '" + assignment + "'");
    kv[trim(assignment.substr(0, eq))] = trim(assignment.substr(eq + 1));
}

TrainConfig train_config_from(const std::map<std::string, std::string>& kv) {
    TrainConfig cfg;
    for (const auto& [key, v] : kv) {
        if (key == "task") {
            if (v == "recognition")
                cfg.task = TrainConfig::Task::kRecognition;
            else if (v == "retrieval")
                cfg.task = TrainConfig::Task::kRetrieval;
            else
                throw ConfigError("config: task must be recognition|retrieval, got '" + v + "'");
        } else if (key == "dtype") {
            if (v == "f32")
                cfg.dtype = DType::F32;
            else if (v == "f64")
                cfg.dtype = DType::F64;
            else
                throw ConfigError("config: dtype must be f32|f64, got '" + v + "'");
        } else if (key == "seed") {
            cfg.seed = static_cast<uint64_t>(to_int(key, v));
        } else if (key == "vit.image") {
            cfg.vit.image_size = to_int(key, v);
            cfg.data.image_size = cfg.vit.image_size;
        } else if (key == "vit.patch") {
            cfg.vit.patch_size = to_int(key, v);
        } else if (key == "vit.layers") {
            cfg.vit.layers = to_int(key, v);
        } else if (key == "vit.dim") {
            cfg.vit.dim = to_int(key, v);
        } else if (key == "vit.heads") {
            cfg.vit.heads = to_int(key, v);
        } else if (key == "vit.mlp_ratio") {
            cfg.vit.mlp_ratio = to_int(key, v);
        } else if (key == "vit.proj_dim") {
            cfg.vit.proj_dim = to_int(key, v);
        } else if (key == "vit.norm") {
            if (v == "pre")
                cfg.vit.norm_style = ViTConfig::Norm::kPre;
            else if (v == "post")
                cfg.vit.norm_style = ViTConfig::Norm::kPost;
            else
                throw ConfigError("config: vit.norm must be pre|post, got '" + v + "'");
        } else if (key == "side.layers") {
            cfg.side.layers = to_int(key, v);
        } else if (key == "side.dim") {
            cfg.side.dim = to_int(key, v);
        } else if (key == "side.heads") {
            cfg.side.heads = to_int(key, v);
        } else if (key == "side.fusion") {
            if (v == "top")
                cfg.side.fusion = SideConfig::Fusion::kTop;
            else if (v == "interval")
                cfg.side.fusion = SideConfig::Fusion::kInterval;
            else
                throw ConfigError("config: side.fusion must be top|interval, got '" + v + "'");
        } else if (key == "side.temporal") {
            if (v == "conv3d")
                cfg.side.temporal = SideConfig::Temporal::kConv3d;
            else if (v == "attention")
                cfg.side.temporal = SideConfig::Temporal::kAttention;
            else if (v == "none")
                cfg.side.temporal = SideConfig::Temporal::kNone;
            else
                throw ConfigError("config: side.temporal must be conv3d|attention|none, got '" +
                                  v + "'");
        } else if (key == "side.cls_shift") {
            cfg.side.cls_shift = to_bool(key, v);
        } else if (key == "side.patch_kernel_t") {
            cfg.side.patch_kernel_t = to_int(key, v);
        } else if (key == "side.mlp_ratio") {
            cfg.side.mlp_ratio = to_int(key, v);
        } else if (key == "text.vocab") {
            cfg.text.vocab = to_int(key, v);
        } else if (key == "text.max_len") {
            cfg.text.max_len = to_int(key, v);
        } else if (key == "text.layers") {
            cfg.text.layers = to_int(key, v);
        } else if (key == "text.dim") {
            cfg.text.dim = to_int(key, v);
        } else if (key == "text.heads") {
            cfg.text.heads = to_int(key, v);
        } else if (key == "opt.lr") {
            cfg.opt.lr = to_double(key, v);
        } else if (key == "opt.weight_decay") {
            cfg.opt.weight_decay = to_double(key, v);
        } else if (key == "opt.beta1") {
            cfg.opt.beta1 = to_double(key, v);
        } else if (key == "opt.beta2") {
            cfg.opt.beta2 = to_double(key, v);
        } else if (key == "opt.warmup_epochs") {
            cfg.opt.warmup_epochs = to_int(key, v);
        } else if (key == "opt.epochs") {
            cfg.opt.epochs = to_int(key, v);
        } else if (key == "opt.batch") {
            cfg.opt.batch = to_int(key, v);
        } else if (key == "label_smoothing") {
            cfg.label_smoothing = to_double(key, v);
        } else if (key == "retrieval.matching") {
            if (v == "tokenwise")
                cfg.matching = TrainConfig::Matching::kTokenwise;
            else if (v == "global")
                cfg.matching = TrainConfig::Matching::kGlobal;
            else
                throw ConfigError("config: retrieval.matching must be tokenwise|global");
        } else if (key == "data.classes") {
            cfg.data.num_classes = to_int(key, v);
        } else if (key == "data.clips_per_class") {
            cfg.data.clips_per_class = to_int(key, v);
        } else if (key == "data.frames") {
            cfg.data.frames = to_int(key, v);
        } else if (key == "data.noise") {
            cfg.data.noise = to_double(key, v);
        } else if (key == "data.pattern") {
            cfg.data.pattern = to_int(key, v);
        } else if (key == "data.pairs") {
            cfg.num_pairs = to_int(key, v);
        } else if (key == "data.dir") {
            cfg.data_dir = v;
        } else if (key == "out.dir") {
            cfg.out_dir = v;
        } else {
            throw ConfigError("config: unknown key '" + key + "'");
        }
    }
    cfg.text.proj_dim = cfg.vit.effective_proj_dim();
    cfg.validate();
    return cfg;
}

std::string dump_config(const TrainConfig& cfg) {
    std::ostringstream os;
    os << "task = " << (cfg.task == TrainConfig::Task::kRecognition ? "recognition" : "retrieval")
       << "\n";
    os << "dtype = " << dtype_name(cfg.dtype) << "\n";
    os << "seed = " << cfg.seed << "\n";
    os << "vit.image = " << cfg.vit.image_size << "\n";
    os << "vit.patch = " << cfg.vit.patch_size << "\n";
    os << "vit.layers = " << cfg.vit.layers << "\n";
    os << "vit.dim = " << cfg.vit.dim << "\n";
    os << "vit.heads = " << cfg.vit.heads << "\n";
    os << "vit.mlp_ratio = " << cfg.vit.mlp_ratio << "\n";
    os << "vit.proj_dim = " << cfg.vit.proj_dim << "\n";
    os << "vit.norm = " << (cfg.vit.norm_style == ViTConfig::Norm::kPre ? "pre" : "post") << "\n";
    os << "side.layers = " << cfg.side.layers << "\n";
    os << "side.dim = " << cfg.side.dim << "\n";
    os << "side.heads = " << cfg.side.heads << "\n";
    os << "side.fusion = " << (cfg.side.fusion == SideConfig::Fusion::kTop ? "top" : "interval")
       << "\n";
    os << "side.temporal = "
       << (cfg.side.temporal == SideConfig::Temporal::kConv3d
               ? "conv3d"
               : cfg.side.temporal == SideConfig::Temporal::kAttention ? "attention" : "none")
       << "\n";
    os << "side.cls_shift = " << (cfg.side.cls_shift ? "true" : "false") << "\n";
    os << "side.patch_kernel_t = " << cfg.side.patch_kernel_t << "\n";
    os << "side.mlp_ratio = " << cfg.side.mlp_ratio << "\n";
    os << "text.vocab = " << cfg.text.vocab << "\n";
    os << "text.max_len = " << cfg.text.max_len << "\n";
    os << "text.layers = " << cfg.text.layers << "\n";
    os << "text.dim = " << cfg.text.dim << "\n";
    os << "text.heads = " << cfg.text.heads << "\n";
    os << "opt.lr = " << cfg.opt.lr << "\n";
    os << "opt.weight_decay = " << cfg.opt.weight_decay << "\n";
    os << "opt.beta1 = " << cfg.opt.beta1 << "\n";
    os << "opt.beta2 = " << cfg.opt.beta2 << "\n";
    os << "opt.warmup_epochs = " << cfg.opt.warmup_epochs << "\n";
    os << "opt.epochs = " << cfg.opt.epochs << "\n";
    os << "opt.batch = " << cfg.opt.batch << "\n";
    os << "label_smoothing = " << cfg.label_smoothing << "\n";
    os << "retrieval.matching = "
       << (cfg.matching == TrainConfig::Matching::kTokenwise ? "tokenwise" : "global") << "\n";
    os << "data.classes = " << cfg.data.num_classes << "\n";
    os << "data.clips_per_class = " << cfg.data.clips_per_class << "\n";
    os << "data.frames = " << cfg.data.frames << "\n";
    os << "data.noise = " << cfg.data.noise << "\n";
    os << "data.pattern = " << cfg.data.pattern << "\n";
    os << "data.pairs = " << cfg.num_pairs << "\n";
    if (!cfg.data_dir.empty()) os << "data.dir = " << cfg.data_dir << "\n";
    os << "out.dir = " << cfg.out_dir << "\n";
    return os.str();
}

}  // namespace s4v
