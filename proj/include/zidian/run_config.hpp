#pragma once
// Run configuration: a flat, typed key-value document.
//
// Precedence, lowest to highest: built-in defaults, config file (--config),
// environment variables (ZIDIAN_<KEY>), command-line flags. Unknown keys
// are fatal; a silently ignored typo would poison reproducibility. Every
// run writes its resolved configuration next to its outputs.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "zidian/encoder.hpp"
#include "zidian/objectives.hpp"

namespace zidian {

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct RunConfig {
    // paths
    std::string dict;
    std::string radicals;
    std::string atlas;
    std::string out = "out";

    // encoder
    int d = 64;
    int layers = 2;
    int heads = 2;
    int ffn_mult = 4;
    int max_len = 256;

    // optimization
    double lr = 5e-5;
    double warmup = 0.05;
    int batch = 64;  // MEM items per step
    int cl4sa_batch = 16;
    int el_batch = 16;
    int epochs = 10;
    int steps = 0;  // 0 = derive from epochs
    double weight_decay = 0.01;

    // objective weights
    double lambda_mem = 0.6;
    double lambda_cl4sa = 0.2;
    double lambda_el = 0.2;
    double w_anto = 1.0;
    double w_rand = 0.5;

    uint64_t seed = 42;
    int checkpoint_every = 0;  // 0 = final checkpoint only
    uint64_t max_entries = 0;
    bool strict = false;
    bool oracle = false;
    bool no_fusion = false;

    // Applies file -> env -> cli on top of the defaults. cli values are
    // strings parsed by key type; empty config_path skips the file layer.
    static RunConfig resolve(const std::string& config_path,
                             const std::map<std::string, std::string>& cli = {});

    nlohmann::json to_json() const;
    void write(const std::string& path) const;

    EncoderConfig encoder_config(int vocab_size, int radical_vocab_size) const {
        EncoderConfig cfg;
        cfg.d = d;
        cfg.layers = layers;
        cfg.heads = heads;
        cfg.ffn_mult = ffn_mult;
        cfg.max_len = max_len;
        cfg.vocab_size = vocab_size;
        cfg.radical_vocab_size = radical_vocab_size;
        return cfg;
    }

    LossWeights loss_weights() const { return {lambda_mem, lambda_cl4sa, lambda_el}; }

    BatchConfig batch_config() const {
        BatchConfig b;
        b.mem_batch = batch;
        b.cl4sa_batch = cl4sa_batch;
        b.el_batch = el_batch;
        b.w_anto = w_anto;
        b.w_rand = w_rand;
        return b;
    }
};

}  // namespace zidian
