#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include "uqc/config.hpp"

namespace uqc::config {

namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return "";
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

bool parse_bool(const std::string& key, const std::string& value) {
    const std::string v = lower(value);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("not a boolean for " + key + ": " + value);
}

long long parse_int(const std::string& key, const std::string& value) {
    try {
        size_t pos = 0;
        const long long v = std::stoll(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("not an integer for " + key + ": " + value);
    }
}

uint64_t parse_u64(const std::string& key, const std::string& value) {
    try {
        size_t pos = 0;
        const uint64_t v = std::stoull(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("not a non-negative integer for " + key + ": " + value);
    }
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        size_t pos = 0;
        const double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("not a number for " + key + ": " + value);
    }
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
    std::vector<int> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) throw ConfigError("empty entry in list for " + key);
        out.push_back(static_cast<int>(parse_int(key, item)));
    }
    if (out.empty()) throw ConfigError("empty list for " + key);
    return out;
}

std::string fmt(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string fmt(const std::vector<int>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i]);
    }
    return out;
}

std::string fmt(bool v) { return v ? "true" : "false"; }

void set_value(RunConfig& cfg, const std::string& section, const std::string& key,
               const std::string& value) {
    const std::string where = section + "." + key;
    if (section == "data") {
        if (key == "kind") cfg.data.kind = lower(value);
        else if (key == "path") cfg.data.path = value;
        else if (key == "manifest") cfg.data.manifest = value;
        else if (key == "subsample") cfg.data.subsample = static_cast<size_t>(parse_u64(where, value));
        else if (key == "train_fraction") cfg.data.train_fraction = parse_double(where, value);
        else throw ConfigError("unknown key " + where);
    } else if (section == "preprocess") {
        if (key == "fuzzy") cfg.preprocess.fuzzy = parse_bool(where, value);
        else if (key == "sharpen") cfg.preprocess.sharpen = parse_bool(where, value);
        else if (key == "hflip") cfg.preprocess.hflip = parse_bool(where, value);
        else if (key == "side") cfg.preprocess.side = static_cast<int>(parse_int(where, value));
        else throw ConfigError("unknown key " + where);
    } else if (section == "vae") {
        if (key == "latent") cfg.vae.latent = static_cast<int>(parse_int(where, value));
        else if (key == "widths") cfg.vae.widths = parse_int_list(where, value);
        else if (key == "prior") cfg.vae.prior = lower(value);
        else if (key == "prior_components") cfg.vae.prior_components = static_cast<int>(parse_int(where, value));
        else if (key == "epochs") cfg.vae.epochs = static_cast<int>(parse_int(where, value));
        else if (key == "batch") cfg.vae.batch = static_cast<int>(parse_int(where, value));
        else if (key == "lr") cfg.vae.lr = parse_double(where, value);
        else if (key == "optimizer") cfg.vae.optimizer = lower(value);
        else if (key == "patience") cfg.vae.patience = static_cast<int>(parse_int(where, value));
        else if (key == "min_rel_improvement") cfg.vae.min_rel_improvement = parse_double(where, value);
        else throw ConfigError("unknown key " + where);
    } else if (section == "cluster") {
        if (key == "k") cfg.cluster.k = static_cast<int>(parse_int(where, value));
        else if (key == "gamma") cfg.cluster.gamma = parse_double(where, value);
        else if (key == "epochs") cfg.cluster.epochs = static_cast<int>(parse_int(where, value));
        else if (key == "batch") cfg.cluster.batch = static_cast<int>(parse_int(where, value));
        else if (key == "lr") cfg.cluster.lr = parse_double(where, value);
        else if (key == "optimizer") cfg.cluster.optimizer = lower(value);
        else if (key == "patience") cfg.cluster.patience = static_cast<int>(parse_int(where, value));
        else if (key == "min_rel_improvement") cfg.cluster.min_rel_improvement = parse_double(where, value);
        else throw ConfigError("unknown key " + where);
    } else if (section == "embed") {
        if (key == "n_neighbors") cfg.embed.n_neighbors = static_cast<int>(parse_int(where, value));
        else if (key == "min_dist") cfg.embed.min_dist = parse_double(where, value);
        else if (key == "n_epochs") cfg.embed.n_epochs = static_cast<int>(parse_int(where, value));
        else if (key == "min_cluster_size") cfg.embed.min_cluster_size = static_cast<int>(parse_int(where, value));
        else throw ConfigError("unknown key " + where);
    } else if (section == "run") {
        if (key == "seed") cfg.run.seed = parse_u64(where, value);
        else if (key == "out_dir") cfg.run.out_dir = value;
        else if (key == "pretrain") cfg.run.pretrain = parse_bool(where, value);
        else throw ConfigError("unknown key " + where);
    } else {
        throw ConfigError("unknown section [" + section + "]");
    }
}

}  // namespace

nn::OptimizerConfig::Kind parse_optimizer(const std::string& name) {
    if (name == "adam") return nn::OptimizerConfig::Kind::adam;
    if (name == "sgd_momentum" || name == "sgd") return nn::OptimizerConfig::Kind::sgd_momentum;
    throw ConfigError("unknown optimizer: " + name);
}

void RunConfig::validate() const {
    if (data.kind != "directory" && data.kind != "mnist")
        throw ConfigError("data.kind must be directory or mnist");
    if (data.path.empty()) throw ConfigError("data.path is required");
    if (data.train_fraction <= 0.0 || data.train_fraction > 1.0)
        throw ConfigError("data.train_fraction must be in (0,1]");
    if (preprocess.side < 8) throw ConfigError("preprocess.side must be at least 8");
    if (vae.latent < 1) throw ConfigError("vae.latent must be positive");
    if (vae.widths.empty()) throw ConfigError("vae.widths must not be empty");
    for (const int w : vae.widths)
        if (w < 1) throw ConfigError("vae.widths entries must be positive");
    const int factor = 1 << static_cast<int>(vae.widths.size());
    if (preprocess.side % factor != 0)
        throw ConfigError("preprocess.side must be divisible by 2^len(vae.widths)");
    if (vae.prior != "standard" && vae.prior != "mixture")
        throw ConfigError("vae.prior must be standard or mixture");
    if (vae.prior_components < 0) throw ConfigError("vae.prior_components must be >= 0");
    if (cluster.k < 1) throw ConfigError("cluster.k must be positive");
    if (cluster.gamma < 0.0) throw ConfigError("cluster.gamma must be non-negative");
    if (embed.n_neighbors < 2) throw ConfigError("embed.n_neighbors must be at least 2");
    if (embed.min_dist <= 0.0) throw ConfigError("embed.min_dist must be positive");
    if (embed.n_epochs < 0) throw ConfigError("embed.n_epochs must be non-negative");
    if (embed.min_cluster_size < 0) throw ConfigError("embed.min_cluster_size must be non-negative");
    if (run.out_dir.empty()) throw ConfigError("run.out_dir is required");
    parse_optimizer(vae.optimizer);
    parse_optimizer(cluster.optimizer);
    try {
        vae_train_config().validate();
        cluster_train_config().validate();
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
}

TrainConfig RunConfig::vae_train_config() const {
    TrainConfig t;
    t.epochs_max = vae.epochs;
    t.patience = vae.patience;
    t.min_rel_improvement = vae.min_rel_improvement;
    t.batch = vae.batch;
    t.lr = vae.lr;
    t.gamma = cluster.gamma;
    t.K = cluster.k;
    t.seed = run.seed;
    t.optimizer = parse_optimizer(vae.optimizer);
    return t;
}

TrainConfig RunConfig::cluster_train_config() const {
    TrainConfig t;
    t.epochs_max = cluster.epochs;
    t.patience = cluster.patience;
    t.min_rel_improvement = cluster.min_rel_improvement;
    t.batch = cluster.batch;
    t.lr = cluster.lr;
    t.gamma = cluster.gamma;
    t.K = cluster.k;
    t.seed = run.seed;
    t.optimizer = parse_optimizer(cluster.optimizer);
    return t;
}

RunConfig parse_ini(const std::string& text) {
    RunConfig cfg;
    std::stringstream ss(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("malformed section header at line " + std::to_string(lineno));
            section = lower(trim(line.substr(1, line.size() - 2)));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("expected key = value at line " + std::to_string(lineno));
        const std::string key = lower(trim(line.substr(0, eq)));
        const std::string value = trim(line.substr(eq + 1));
        if (section.empty())
            throw ConfigError("key outside any section at line " + std::to_string(lineno));
        if (key.empty()) throw ConfigError("empty key at line " + std::to_string(lineno));
        set_value(cfg, section, key, value);
    }
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_ini(buf.str());
}

void apply_override(RunConfig& cfg, const std::string& dotted_key, const std::string& value) {
    const auto dot = dotted_key.find('.');
    if (dot == std::string::npos || dot == 0 || dot + 1 == dotted_key.size())
        throw ConfigError("override key must look like section.key: " + dotted_key);
    set_value(cfg, lower(trim(dotted_key.substr(0, dot))), lower(trim(dotted_key.substr(dot + 1))),
              trim(value));
}

std::string canonical_ini(const RunConfig& cfg) {
    std::map<std::string, std::string> sec;
    std::string out;
    const auto flush = [&](const char* name) {
        out += std::string("[") + name + "]\n";
        for (const auto& [k, v] : sec) out += k + " = " + v + "\n";
        out += "\n";
        sec.clear();
    };
    sec = {{"kind", cfg.data.kind},
           {"path", cfg.data.path},
           {"manifest", cfg.data.manifest},
           {"subsample", std::to_string(cfg.data.subsample)},
           {"train_fraction", fmt(cfg.data.train_fraction)}};
    flush("data");
    sec = {{"fuzzy", fmt(cfg.preprocess.fuzzy)},
           {"sharpen", fmt(cfg.preprocess.sharpen)},
           {"hflip", fmt(cfg.preprocess.hflip)},
           {"side", std::to_string(cfg.preprocess.side)}};
    flush("preprocess");
    sec = {{"latent", std::to_string(cfg.vae.latent)},
           {"widths", fmt(cfg.vae.widths)},
           {"prior", cfg.vae.prior},
           {"prior_components", std::to_string(cfg.vae.prior_components)},
           {"epochs", std::to_string(cfg.vae.epochs)},
           {"batch", std::to_string(cfg.vae.batch)},
           {"lr", fmt(cfg.vae.lr)},
           {"optimizer", cfg.vae.optimizer},
           {"patience", std::to_string(cfg.vae.patience)},
           {"min_rel_improvement", fmt(cfg.vae.min_rel_improvement)}};
    flush("vae");
    sec = {{"k", std::to_string(cfg.cluster.k)},
           {"gamma", fmt(cfg.cluster.gamma)},
           {"epochs", std::to_string(cfg.cluster.epochs)},
           {"batch", std::to_string(cfg.cluster.batch)},
           {"lr", fmt(cfg.cluster.lr)},
           {"optimizer", cfg.cluster.optimizer},
           {"patience", std::to_string(cfg.cluster.patience)},
           {"min_rel_improvement", fmt(cfg.cluster.min_rel_improvement)}};
    flush("cluster");
    sec = {{"n_neighbors", std::to_string(cfg.embed.n_neighbors)},
           {"min_dist", fmt(cfg.embed.min_dist)},
           {"n_epochs", std::to_string(cfg.embed.n_epochs)},
           {"min_cluster_size", std::to_string(cfg.embed.min_cluster_size)}};
    flush("embed");
    sec = {{"seed", std::to_string(cfg.run.seed)},
           {"out_dir", cfg.run.out_dir},
           {"pretrain", fmt(cfg.run.pretrain)}};
    flush("run");
    return out;
}

uint64_t fnv1a64(const std::string& text) {
    uint64_t h = 1469598103934665603ull;
    for (const unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

namespace {
std::string hex64(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[i] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}
}  // namespace

std::string config_hash(const RunConfig& cfg) { return hex64(fnv1a64(canonical_ini(cfg))); }

std::string run_id(const RunConfig& cfg) {
    const std::string canon = canonical_ini(cfg);
    std::string id;
    for (int i = 0; i < 3; ++i)
        id += hex64(fnv1a64(canon + "#" + std::to_string(i)));
    return id.substr(0, 40);
}

}  // namespace uqc::config
