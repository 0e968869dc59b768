#pragma once

#include "json.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "moregan/gan.hpp"
#include "moregan/losses.hpp"

namespace moregan::train {

/// Everything a training run depends on. Defaults follow the reference
/// hyper-parameters; network widths default to the full-size model.
struct TrainConfig {
    double lr_gen = 5e-4;
    double lr_disc = 1e-5;
    double momentum1 = 0.9;
    double momentum2 = 0.999;
    double weight_decay = 0.0;
    int batch = 4;
    int patch_h = 64;
    int patch_w = 128;
    losses::LossWeights weights;
    int branch_supervised = 1;
    int branch_unsupervised = 1;
    int max_steps = 2000;
    std::uint64_t seed = 0;
    int checkpoint_every = 500;

    std::string variant = "Ours";
    std::string loss_mask = "V7";
    pdnl::DepthRelation depth_relation = pdnl::DepthRelation::Symmetric;
    bool scaled_attention = false;

    std::array<int, 4> adpn_channels{32, 64, 128, 256};
    int cfpn_width = 64;
    int cfab_count = 4;
    std::array<int, 4> disc_channels{64, 128, 256, 512};
    int extractor_width = 64;
    double init_std = 0.02;
    bool identity_head = true;
    int dark_channel_patch = 15;

    void validate() const {
        auto fail = [](const std::string& m) { throw ConfigError(m); };
        if (!(lr_gen > 0.0) || !(lr_disc > 0.0)) fail("learning rates must be positive");
        if (!(momentum1 >= 0.0 && momentum1 < 1.0) || !(momentum2 >= 0.0 && momentum2 < 1.0)) {
            fail("momentum values must lie in [0,1)");
        }
        if (weight_decay < 0.0) fail("weight_decay must be non-negative");
        if (batch < 1) fail("batch must be at least 1");
        if (patch_h <= 0 || patch_w <= 0 || patch_h % 16 != 0 || patch_w % 16 != 0) {
            fail("patch_h and patch_w must be positive multiples of 16");
        }
        if (branch_supervised < 0 || branch_unsupervised < 0 || branch_supervised + branch_unsupervised == 0) {
            fail("branch_ratio needs non-negative parts with a positive sum");
        }
        if (max_steps < 0) fail("max_steps must be non-negative");
        if (checkpoint_every <= 0) fail("checkpoint_every must be positive");
        if (cfpn_width <= 0 || cfab_count < 0 || extractor_width <= 0) fail("network widths must be positive");
        for (int c : adpn_channels) {
            if (c <= 0) fail("adpn_channels must be positive");
        }
        for (int c : disc_channels) {
            if (c <= 0) fail("disc_channels must be positive");
        }
        if (!(init_std > 0.0)) fail("init_std must be positive");
        if (dark_channel_patch <= 0 || dark_channel_patch % 2 == 0) fail("dark_channel_patch must be odd");
        try {
            weights.validate();
            (void)losses::LossMask::variant(loss_mask);
            const auto gen = gan::apply_variant(gan::GeneratorConfig{}, variant);
            if (gen.fusion == gan::Fusion::Pyramid) {
                int need = 0;
                for (int b : gen.pdnl.pool.bin_sizes) need = std::max(need, b * gen.pdnl.downsample);
                if (patch_h < need || patch_w < need) {
                    fail("patches must be at least " + std::to_string(need) + " pixels on each side for the pyramid bins");
                }
            }
        } catch (const InvalidArgument& e) {
            throw ConfigError(e.what());
        }
    }

    losses::LossMask mask() const { return losses::LossMask::variant(loss_mask); }
    losses::LossWeights effective_weights() const { return mask().apply(weights); }

    gan::TopologyConfig topology() const {
        gan::GeneratorConfig g;
        g.adpn.channels = adpn_channels;
        g.adpn.scaled_attention = scaled_attention;
        g.cfpn.width = cfpn_width;
        g.cfpn.cfab_count = cfab_count;
        g.pdnl.relation = depth_relation;
        g.init.stddev = init_std;
        g.identity_head = identity_head;
        gan::TopologyConfig t;
        t.generator = gan::apply_variant(g, variant);
        t.discriminator.channels = disc_channels;
        t.seed = seed;
        return t;
    }
};

namespace detail {

inline double parse_double(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    double out = 0.0;
    try {
        out = std::stod(v, &pos);
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
    }
    if (pos != v.size()) throw ConfigError("config key '" + key + "': trailing characters in '" + v + "'");
    return out;
}

inline long long parse_int(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    long long out = 0;
    try {
        out = std::stoll(v, &pos);
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
    }
    if (pos != v.size()) throw ConfigError("config key '" + key + "': trailing characters in '" + v + "'");
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

/// "a,b,c,d" -> four integers.
inline std::array<int, 4> parse_int4(const std::string& key, const std::string& v) {
    std::array<int, 4> out{};
    std::stringstream ss(v);
    std::string item;
    int i = 0;
    while (std::getline(ss, item, ',')) {
        if (i >= 4) throw ConfigError("config key '" + key + "': expected 4 comma-separated integers");
        out[i++] = static_cast<int>(parse_int(key, item));
    }
    if (i != 4) throw ConfigError("config key '" + key + "': expected 4 comma-separated integers");
    return out;
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::string join4(const std::array<int, 4>& a) {
    return std::to_string(a[0]) + "," + std::to_string(a[1]) + "," + std::to_string(a[2]) + "," + std::to_string(a[3]);
}

using Setter = std::function<void(TrainConfig&, const std::string&, const std::string&)>;
using Getter = std::function<std::string(const TrainConfig&)>;

struct Field {
    Setter set;
    Getter get;
};

inline std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

inline const std::map<std::string, Field>& fields() {
    static const std::map<std::string, Field> table = [] {
        std::map<std::string, Field> t;
        auto real = [&t](const std::string& name, double TrainConfig::*m) {
            t[name] = {[m](TrainConfig& c, const std::string& k, const std::string& v) { c.*m = parse_double(k, v); },
                       [m](const TrainConfig& c) { return fmt_double(c.*m); }};
        };
        auto integer = [&t](const std::string& name, int TrainConfig::*m) {
            t[name] = {[m](TrainConfig& c, const std::string& k, const std::string& v) {
                           c.*m = static_cast<int>(parse_int(k, v));
                       },
                       [m](const TrainConfig& c) { return std::to_string(c.*m); }};
        };
        auto boolean = [&t](const std::string& name, bool TrainConfig::*m) {
            t[name] = {[m](TrainConfig& c, const std::string& k, const std::string& v) { c.*m = parse_bool(k, v); },
                       [m](const TrainConfig& c) { return std::string(c.*m ? "true" : "false"); }};
        };
        auto text = [&t](const std::string& name, std::string TrainConfig::*m) {
            t[name] = {[m](TrainConfig& c, const std::string&, const std::string& v) { c.*m = v; },
                       [m](const TrainConfig& c) { return c.*m; }};
        };
        auto quad = [&t](const std::string& name, std::array<int, 4> TrainConfig::*m) {
            t[name] = {[m](TrainConfig& c, const std::string& k, const std::string& v) { c.*m = parse_int4(k, v); },
                       [m](const TrainConfig& c) { return join4(c.*m); }};
        };
        real("lr_gen", &TrainConfig::lr_gen);
        real("lr_disc", &TrainConfig::lr_disc);
        real("momentum1", &TrainConfig::momentum1);
        real("momentum2", &TrainConfig::momentum2);
        real("weight_decay", &TrainConfig::weight_decay);
        integer("batch", &TrainConfig::batch);
        integer("patch_h", &TrainConfig::patch_h);
        integer("patch_w", &TrainConfig::patch_w);
        integer("max_steps", &TrainConfig::max_steps);
        integer("checkpoint_every", &TrainConfig::checkpoint_every);
        text("variant", &TrainConfig::variant);
        text("loss_mask", &TrainConfig::loss_mask);
        boolean("scaled_attention", &TrainConfig::scaled_attention);
        quad("adpn_channels", &TrainConfig::adpn_channels);
        integer("cfpn_width", &TrainConfig::cfpn_width);
        integer("cfab_count", &TrainConfig::cfab_count);
        quad("disc_channels", &TrainConfig::disc_channels);
        integer("extractor_width", &TrainConfig::extractor_width);
        real("init_std", &TrainConfig::init_std);
        boolean("identity_head", &TrainConfig::identity_head);
        integer("dark_channel_patch", &TrainConfig::dark_channel_patch);
        t["seed"] = {[](TrainConfig& c, const std::string& k, const std::string& v) {
                         const long long s = parse_int(k, v);
                         if (s < 0) throw ConfigError("config key 'seed' must be non-negative");
                         c.seed = static_cast<std::uint64_t>(s);
                     },
                     [](const TrainConfig& c) { return std::to_string(c.seed); }};
        t["branch_ratio"] = {[](TrainConfig& c, const std::string& k, const std::string& v) {
                                 const auto colon = v.find(':');
                                 if (colon == std::string::npos) throw ConfigError("config key 'branch_ratio': expected a:b");
                                 c.branch_supervised = static_cast<int>(parse_int(k, v.substr(0, colon)));
                                 c.branch_unsupervised = static_cast<int>(parse_int(k, v.substr(colon + 1)));
                             },
                             [](const TrainConfig& c) {
                                 return std::to_string(c.branch_supervised) + ":" + std::to_string(c.branch_unsupervised);
                             }};
        t["depth_relation"] = {[](TrainConfig& c, const std::string&, const std::string& v) {
                                   if (v == "symmetric") {
                                       c.depth_relation = pdnl::DepthRelation::Symmetric;
                                   } else if (v == "literal") {
                                       c.depth_relation = pdnl::DepthRelation::Literal;
                                   } else {
                                       throw ConfigError("config key 'depth_relation': expected symmetric or literal");
                                   }
                               },
                               [](const TrainConfig& c) {
                                   return std::string(c.depth_relation == pdnl::DepthRelation::Symmetric ? "symmetric"
                                                                                                          : "literal");
                               }};
        for (int i = 0; i < losses::kTermCount; ++i) {
            t["weight." + losses::term_names()[i]] = {
                [i](TrainConfig& c, const std::string& k, const std::string& v) { c.weights.lambda[i] = parse_double(k, v); },
                [i](const TrainConfig& c) { return fmt_double(c.weights.lambda[i]); }};
        }
        return t;
    }();
    return table;
}

}  // namespace detail

/// Sets one documented key; unknown keys are configuration errors.
inline void set_key(TrainConfig& cfg, const std::string& key, const std::string& value) {
    const auto& f = detail::fields();
    auto it = f.find(key);
    if (it == f.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second.set(cfg, key, detail::trim(value));
}

/// Applies "key=value" text, one pair per line; '#' starts a comment.
inline void apply_text(TrainConfig& cfg, const std::string& text) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        set_key(cfg, detail::trim(line.substr(0, eq)), line.substr(eq + 1));
    }
}

inline TrainConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read config file", path);
    std::stringstream ss;
    ss << f.rdbuf();
    TrainConfig cfg;
    apply_text(cfg, ss.str());
    return cfg;
}

/// Flat key/value echo of every field, as strings.
inline nlohmann::json to_json(const TrainConfig& cfg) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, f] : detail::fields()) j[k] = f.get(cfg);
    return j;
}

inline TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig cfg;
    for (const auto& [k, v] : j.items()) set_key(cfg, k, v.is_string() ? v.get<std::string>() : v.dump());
    return cfg;
}

inline std::string to_text(const TrainConfig& cfg) {
    std::string out;
    for (const auto& [k, f] : detail::fields()) out += k + " = " + f.get(cfg) + "\n";
    return out;
}

}  // namespace moregan::train
