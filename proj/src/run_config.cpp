#include "zidian/run_config.hpp"

#include <cstdlib>
#include <fstream>

namespace zidian {

using nlohmann::json;

namespace {

enum class Kind { string_t, int_t, u64_t, double_t, bool_t };

struct KeySpec {
    const char* name;
    Kind kind;
    void* (*slot)(RunConfig&);
};

template <typename T, T RunConfig::* M>
void* slot_of(RunConfig& c) {
    return &(c.*M);
}

const KeySpec kKeys[] = {
    {"dict", Kind::string_t, slot_of<std::string, &RunConfig::dict>},
    {"radicals", Kind::string_t, slot_of<std::string, &RunConfig::radicals>},
    {"atlas", Kind::string_t, slot_of<std::string, &RunConfig::atlas>},
    {"out", Kind::string_t, slot_of<std::string, &RunConfig::out>},
    {"d", Kind::int_t, slot_of<int, &RunConfig::d>},
    {"layers", Kind::int_t, slot_of<int, &RunConfig::layers>},
    {"heads", Kind::int_t, slot_of<int, &RunConfig::heads>},
    {"ffn_mult", Kind::int_t, slot_of<int, &RunConfig::ffn_mult>},
    {"max_len", Kind::int_t, slot_of<int, &RunConfig::max_len>},
    {"lr", Kind::double_t, slot_of<double, &RunConfig::lr>},
    {"warmup", Kind::double_t, slot_of<double, &RunConfig::warmup>},
    {"batch", Kind::int_t, slot_of<int, &RunConfig::batch>},
    {"cl4sa_batch", Kind::int_t, slot_of<int, &RunConfig::cl4sa_batch>},
    {"el_batch", Kind::int_t, slot_of<int, &RunConfig::el_batch>},
    {"epochs", Kind::int_t, slot_of<int, &RunConfig::epochs>},
    {"steps", Kind::int_t, slot_of<int, &RunConfig::steps>},
    {"weight_decay", Kind::double_t, slot_of<double, &RunConfig::weight_decay>},
    {"lambda_mem", Kind::double_t, slot_of<double, &RunConfig::lambda_mem>},
    {"lambda_cl4sa", Kind::double_t, slot_of<double, &RunConfig::lambda_cl4sa>},
    {"lambda_el", Kind::double_t, slot_of<double, &RunConfig::lambda_el>},
    {"w_anto", Kind::double_t, slot_of<double, &RunConfig::w_anto>},
    {"w_rand", Kind::double_t, slot_of<double, &RunConfig::w_rand>},
    {"seed", Kind::u64_t, slot_of<uint64_t, &RunConfig::seed>},
    {"checkpoint_every", Kind::int_t, slot_of<int, &RunConfig::checkpoint_every>},
    {"max_entries", Kind::u64_t, slot_of<uint64_t, &RunConfig::max_entries>},
    {"strict", Kind::bool_t, slot_of<bool, &RunConfig::strict>},
    {"oracle", Kind::bool_t, slot_of<bool, &RunConfig::oracle>},
    {"no_fusion", Kind::bool_t, slot_of<bool, &RunConfig::no_fusion>},
};

const KeySpec* find_key(const std::string& name) {
    for (const KeySpec& k : kKeys)
        if (name == k.name) return &k;
    return nullptr;
}

void apply_json(RunConfig& cfg, const std::string& key, const json& value) {
    const KeySpec* spec = find_key(key);
    if (!spec) throw ConfigError("unknown config key '" + key + "'");
    void* slot = spec->slot(cfg);
    try {
        switch (spec->kind) {
            case Kind::string_t: *static_cast<std::string*>(slot) = value.get<std::string>(); break;
            case Kind::int_t: *static_cast<int*>(slot) = value.get<int>(); break;
            case Kind::u64_t: *static_cast<uint64_t*>(slot) = value.get<uint64_t>(); break;
            case Kind::double_t: *static_cast<double*>(slot) = value.get<double>(); break;
            case Kind::bool_t: *static_cast<bool*>(slot) = value.get<bool>(); break;
        }
    } catch (const json::exception&) {
        throw ConfigError("config key '" + key + "' has the wrong type");
    }
}

void apply_string(RunConfig& cfg, const std::string& key, const std::string& value) {
    const KeySpec* spec = find_key(key);
    if (!spec) throw ConfigError("unknown config key '" + key + "'");
    try {
        switch (spec->kind) {
            case Kind::string_t: apply_json(cfg, key, json(value)); break;
            case Kind::int_t: apply_json(cfg, key, json(std::stoi(value))); break;
            case Kind::u64_t: apply_json(cfg, key, json(std::stoull(value))); break;
            case Kind::double_t: apply_json(cfg, key, json(std::stod(value))); break;
            case Kind::bool_t:
                if (value == "true" || value == "1") apply_json(cfg, key, json(true));
                else if (value == "false" || value == "0") apply_json(cfg, key, json(false));
                else throw ConfigError("config key '" + key + "' expects true/false, got '" + value + "'");
                break;
        }
    } catch (const std::invalid_argument&) {
        throw ConfigError("config key '" + key + "' cannot parse value '" + value + "'");
    } catch (const std::out_of_range&) {
        throw ConfigError("config key '" + key + "' value '" + value + "' out of range");
    }
}

}  // namespace

RunConfig RunConfig::resolve(const std::string& config_path,
                             const std::map<std::string, std::string>& cli) {
    RunConfig cfg;
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw ConfigError("cannot open config file: " + config_path);
        json doc;
        try {
            doc = json::parse(in);
        } catch (const json::exception& e) {
            throw ConfigError("config file is not valid JSON: " + std::string(e.what()));
        }
        if (!doc.is_object()) throw ConfigError("config file must hold a flat JSON object");
        for (auto it = doc.begin(); it != doc.end(); ++it) apply_json(cfg, it.key(), it.value());
    }
    for (const KeySpec& k : kKeys) {
        std::string env_name = "ZIDIAN_";
        for (const char* p = k.name; *p; ++p) env_name += static_cast<char>(std::toupper(*p));
        if (const char* v = std::getenv(env_name.c_str())) apply_string(cfg, k.name, v);
    }
    for (const auto& [key, value] : cli) apply_string(cfg, key, value);
    return cfg;
}

json RunConfig::to_json() const {
    RunConfig& self = const_cast<RunConfig&>(*this);
    json out;
    for (const KeySpec& k : kKeys) {
        void* slot = k.slot(self);
        switch (k.kind) {
            case Kind::string_t: out[k.name] = *static_cast<std::string*>(slot); break;
            case Kind::int_t: out[k.name] = *static_cast<int*>(slot); break;
            case Kind::u64_t: out[k.name] = *static_cast<uint64_t*>(slot); break;
            case Kind::double_t: out[k.name] = *static_cast<double*>(slot); break;
            case Kind::bool_t: out[k.name] = *static_cast<bool*>(slot); break;
        }
    }
    return out;
}

void RunConfig::write(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("cannot write resolved config: " + path);
    out << to_json().dump(2) << "\n";
}

}  // namespace zidian
