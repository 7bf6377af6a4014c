// zidian: dictionary-grounded pre-training lab for Chinese.
//
// Subcommands wire the library modules end to end:
//   ingest | pretrain | gradcheck | build-polymrc | eval-polymrc |
//   few-shot | retrieve | fuse-train
//
// Every run resolves one flat configuration (defaults < --config file <
// ZIDIAN_* environment < flags) and writes it next to its outputs. All
// randomness flows from the single config seed.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "zidian/checkpoint.hpp"
#include "zidian/dict.hpp"
#include "zidian/glyph.hpp"
#include "zidian/gradcheck_suite.hpp"
#include "zidian/polymrc.hpp"
#include "zidian/pretrain.hpp"
#include "zidian/retrieval.hpp"
#include "zidian/run_config.hpp"
#include "zidian/utf8.hpp"

namespace fs = std::filesystem;
using namespace zidian;
using nlohmann::json;

namespace {

struct CommonArgs {
    std::string config_path;
    std::map<std::string, std::string> overrides;
    std::vector<std::string> set_kvs;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "flat JSON config file");
    auto track = [&args](const std::string& key) {
        return [&args, key](const std::string& v) { args.overrides[key] = v; };
    };
    cmd->add_option_function<std::string>("--seed", track("seed"), "run seed (u64)");
    cmd->add_option_function<std::string>("--out", track("out"), "output directory");
    cmd->add_option_function<std::string>("--dict", track("dict"), "dictionary JSONL");
    cmd->add_option_function<std::string>("--radicals", track("radicals"), "radical table TSV");
    cmd->add_option_function<std::string>("--atlas", track("atlas"), "glyph atlas file");
    cmd->add_option("--set", args.set_kvs, "override any config key (key=value, repeatable)");
}

RunConfig resolve(const CommonArgs& args) {
    std::map<std::string, std::string> overrides = args.overrides;
    for (const std::string& kv : args.set_kvs) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        overrides[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
    return RunConfig::resolve(args.config_path, overrides);
}

void ensure_out(const RunConfig& cfg) {
    fs::create_directories(cfg.out);
    cfg.write(cfg.out + "/config.json");
}

Lexicon load_dict(const RunConfig& cfg) {
    if (cfg.dict.empty()) throw ConfigError("no dictionary configured (key 'dict')");
    IngestConfig icfg;
    icfg.strict = cfg.strict;
    icfg.max_entries = cfg.max_entries;
    auto [lex, report] = ingest(cfg.dict, icfg);
    if (report.rejected > 0)
        std::cerr << "note: " << report.rejected << " record(s) rejected during ingest\n";
    return lex;
}

// Formats one training-log record; field order is part of the format.
std::string log_line(const LossReport& r) {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "{\"step\": %lld, \"L\": %.9g, \"L_mem\": %.9g, \"L_cl4sa\": %.9g, "
                  "\"L_el\": %.9g}",
                  static_cast<long long>(r.step), r.total, r.mem, r.cl4sa, r.el);
    return buf;
}

struct LoadedModel {
    Vocab vocab;
    RadicalTable radicals;
    bool has_radicals = false;
    EncoderModel<float> model;

    SequenceEncoder<float> encoder() const {
        return {&model, &vocab, has_radicals ? &radicals : nullptr};
    }
};

LoadedModel load_model(const std::string& checkpoint_path, const std::string& vocab_path,
                       const std::string& radicals_path) {
    LoadedModel lm;
    lm.vocab = Vocab::load(vocab_path);
    if (!radicals_path.empty()) {
        lm.radicals = RadicalTable::load_tsv(radicals_path);
        lm.has_radicals = true;
    }
    auto ck = load_checkpoint<float>(checkpoint_path);
    lm.model = EncoderModel<float>::from_checkpoint(ck);
    return lm;
}

int cmd_ingest(const CommonArgs& args) {
    RunConfig cfg = resolve(args);
    ensure_out(cfg);
    IngestConfig icfg;
    icfg.strict = cfg.strict;
    icfg.max_entries = cfg.max_entries;
    auto [lex, report] = ingest(cfg.dict, icfg);

    std::ofstream rep(cfg.out + "/rejection_report.txt", std::ios::trunc);
    rep << report.to_text();
    save_jsonl(lex, cfg.out + "/lexicon.jsonl");

    auto hist = sense_count_histogram(lex);
    json summary;
    summary["entries"] = lex.size();
    summary["accepted"] = report.accepted;
    summary["rejected"] = report.rejected;
    summary["warnings"] = report.warnings;
    json hist_json = json::object();
    for (auto [k, c] : hist) hist_json[std::to_string(k)] = c;
    summary["sense_histogram"] = hist_json;
    std::ofstream(cfg.out + "/ingest_summary.json") << summary.dump(2) << "\n";
    std::cout << summary.dump(2) << "\n";
    return 0;
}

int cmd_pretrain(const CommonArgs& args) {
    RunConfig cfg = resolve(args);
    ensure_out(cfg);
    Lexicon lex = load_dict(cfg);
    Vocab vocab = Vocab::from_lexicon(lex);
    vocab.save(cfg.out + "/vocab.txt");
    RadicalTable radicals;
    bool has_radicals = false;
    if (!cfg.radicals.empty()) {
        radicals = RadicalTable::load_tsv(cfg.radicals);
        has_radicals = true;
    }

    EncoderConfig ecfg = cfg.encoder_config(vocab.size(), radicals.radical_vocab_size());
    EncoderModel<float> model = EncoderModel<float>::init(ecfg, Rng(cfg.seed));

    PretrainSetup<float> setup;
    setup.lex = &lex;
    setup.enc = {&model, &vocab, has_radicals ? &radicals : nullptr};
    setup.weights = cfg.loss_weights();
    setup.batch = cfg.batch_config();
    setup.opt.lr = cfg.lr;
    setup.opt.weight_decay = cfg.weight_decay;
    setup.warmup_ratio = cfg.warmup;
    setup.seed = cfg.seed;
    {
        BatchStream probe(lex, setup.batch, cfg.seed);
        setup.steps = cfg.steps > 0 ? cfg.steps : cfg.epochs * probe.steps_per_epoch();
    }

    json meta;
    meta["encoder"] = model.meta_json();
    meta["seed"] = cfg.seed;

    std::ofstream log(cfg.out + "/log.jsonl", std::ios::trunc);
    const auto t0 = std::chrono::steady_clock::now();
    run_pretraining<float>(setup, [&](const LossReport& r) {
        log << log_line(r) << "\n";
        if (cfg.checkpoint_every > 0 && r.step % cfg.checkpoint_every == 0) {
            save_checkpoint(cfg.out + "/model_step" + std::to_string(r.step) + ".ckpt",
                            model.named_params(), meta);
        }
        if (r.step % 50 == 0 || r.step == 1)
            std::cerr << "step " << r.step << "/" << setup.steps << "  L=" << r.total << "\n";
    });
    log.close();
    save_checkpoint(cfg.out + "/model_final.ckpt", model.named_params(), meta);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    SequenceEncoder<float> enc = setup.enc;
    BatchStream probe(lex, setup.batch, cfg.seed + 1);
    json result;
    result["steps"] = setup.steps;
    result["seconds"] = secs;
    result["mem_recovery"] = mem_recovery_rate(lex, enc);
    result["el_accuracy"] = el_retrieval_accuracy(lex, enc, probe.el_items());
    auto pairs = enumerate_contrast_pairs(lex, setup.batch, cfg.seed + 2);
    SimilarityGap gap = similarity_gap(lex, enc, pairs);
    result["sim_positive"] = gap.mean_positive;
    result["sim_negative"] = gap.mean_negative;
    std::ofstream(cfg.out + "/pretrain_metrics.json") << result.dump(2) << "\n";
    std::cout << result.dump(2) << "\n";
    return 0;
}

int cmd_gradcheck() {
    const auto t0 = std::chrono::steady_clock::now();
    bool ok = true;
    auto show = [&](const std::string& name, double err) {
        ok = ok && err < 1e-4;
        std::printf("%-28s max rel err %.3e  %s\n", name.c_str(), err,
                    err < 1e-4 ? "ok" : "FAIL");
    };
    for (const GradcheckResult& r : op_gradchecks(20240601)) show(r.name, r.max_rel_err);
    for (const GradcheckResult& r : loss_gradchecks()) show(r.name, r.max_rel_err);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("total gradcheck time: %.1f s\n", secs);
    return ok ? 0 : 1;
}

int cmd_build_polymrc(const CommonArgs& args) {
    RunConfig cfg = resolve(args);
    ensure_out(cfg);
    Lexicon lex = load_dict(cfg);
    SplitSpec spec;
    spec.seed = cfg.seed;
    PolyMRCDataset ds = build_polymrc(lex, spec, cfg.max_len);
    save_instances_jsonl(cfg.out + "/train.jsonl", ds.train);
    save_instances_jsonl(cfg.out + "/val.jsonl", ds.val);
    save_instances_jsonl(cfg.out + "/test.jsonl", ds.test);
    json stats;
    auto fill = [](const SplitStats& s) {
        json j;
        j["count"] = s.count;
        j["avg_len"] = s.avg_len;
        return j;
    };
    stats["train"] = fill(ds.train_stats);
    stats["val"] = fill(ds.val_stats);
    stats["test"] = fill(ds.test_stats);
    const size_t total = ds.train.size() + ds.val.size() + ds.test.size();
    if (total >= 10000) {
        // Full-scale shape note: 8:1:1 split and reference average length.
        ShapeCheck check = polymrc_shape_check(ds);
        json shape;
        shape["val_share"] = check.val_share;
        shape["test_share"] = check.test_share;
        shape["avg_len"] = check.avg_len;
        shape["ratio_ok"] = check.ratio_ok;
        shape["avg_len_ok"] = check.avg_len_ok;
        stats["shape_check"] = shape;
    }
    std::ofstream(cfg.out + "/stats.json") << stats.dump(2) << "\n";
    std::cout << stats.dump(2) << "\n";
    return 0;
}

int cmd_eval_polymrc(const CommonArgs& args, const std::string& data_path,
                     const std::string& checkpoint, const std::string& vocab_path,
                     bool random_scorer) {
    RunConfig cfg = resolve(args);
    auto instances = load_instances_jsonl(data_path);
    ChoiceScorer scorer;
    if (cfg.oracle) {
        scorer = [](const PolyMRCInstance& inst) {
            std::vector<double> s(inst.choices.size(), 0.0);
            s[static_cast<size_t>(inst.gold)] = 1.0;
            return s;
        };
    } else if (random_scorer) {
        auto rng = std::make_shared<Rng>(cfg.seed);
        scorer = [rng](const PolyMRCInstance& inst) {
            std::vector<double> s(inst.choices.size());
            for (double& v : s) v = rng->uniform();
            return s;
        };
    } else {
        if (checkpoint.empty() || vocab_path.empty())
            throw ConfigError("eval-polymrc needs --checkpoint and --vocab (or --oracle/--random)");
        auto lm = std::make_shared<LoadedModel>(load_model(checkpoint, vocab_path, cfg.radicals));
        scorer = [lm](const PolyMRCInstance& inst) {
            return score_choices(inst.context, inst.entry, inst.choices, lm->encoder());
        };
    }
    PolyMRCEvalResult r = evaluate_polymrc(scorer, instances);
    json out;
    out["accuracy"] = r.accuracy;
    out["total"] = r.total;
    out["correct"] = r.correct;
    json per_k = json::object();
    for (auto& [k, bucket] : r.per_choice_count) {
        json b;
        b["correct"] = bucket.first;
        b["total"] = bucket.second;
        b["accuracy"] = static_cast<double>(bucket.first) / static_cast<double>(bucket.second);
        per_k[std::to_string(k)] = b;
    }
    out["per_choice_count"] = per_k;
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_few_shot(const CommonArgs& args, const std::string& data_path, int n_per_task,
                 int n_seeds) {
    RunConfig cfg = resolve(args);
    ensure_out(cfg);
    auto train = load_instances_jsonl(data_path);
    auto sets = sample_few_shot(train, n_per_task, n_seeds, cfg.seed);
    for (size_t i = 0; i < sets.size(); ++i)
        save_instances_jsonl(cfg.out + "/shots_seed" + std::to_string(i) + ".jsonl", sets[i]);
    json out;
    out["sets"] = sets.size();
    out["per_set"] = n_per_task;
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_retrieve(const CommonArgs& args, const std::string& checkpoint,
                 const std::string& vocab_path, const std::string& text) {
    RunConfig cfg = resolve(args);
    Lexicon lex = load_dict(cfg);
    LoadedModel lm = load_model(checkpoint, vocab_path, cfg.radicals);
    std::string input = text;
    if (input.empty()) std::getline(std::cin, input);
    auto scores = retrieve(input, lex, lm.encoder());
    for (const auto& s : scores) {
        std::cout << "{\"surface\": " << json(s.match.surface).dump() << ", \"start\": "
                  << s.match.start << ", \"end\": " << s.match.end
                  << ", \"weights\": " << json(s.weights).dump() << "}\n";
    }
    return 0;
}

int cmd_fuse_train(const CommonArgs& args, const std::string& checkpoint,
                   const std::string& vocab_path, const std::string& data_path, int steps,
                   double lr) {
    RunConfig cfg = resolve(args);
    ensure_out(cfg);
    Lexicon lex = load_dict(cfg);
    LoadedModel lm = load_model(checkpoint, vocab_path, cfg.radicals);

    std::ifstream in(data_path);
    if (!in) throw ConfigError("cannot open classification data: " + data_path);
    std::vector<FuseExample> data;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json rec = json::parse(line);
        data.push_back({rec.at("text").get<std::string>(), rec.at("label").get<int>()});
    }

    SequenceEncoder<float> enc = lm.encoder();
    FuseTrainResult r =
        train_fused_classifier(data, lex, enc, !cfg.no_fusion, cfg.seed, steps, lr);
    json out;
    out["fusion"] = !cfg.no_fusion;
    out["examples"] = data.size();
    out["feature_dim"] = r.feature_dim;
    out["first_loss"] = r.first_loss;
    out["final_loss"] = r.final_loss;
    std::ofstream(cfg.out + "/fuse_train.json") << out.dump(2) << "\n";
    std::cout << out.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dictionary-grounded pre-training lab for Chinese"};
    app.require_subcommand(1);

    CommonArgs ingest_args;
    auto* c_ingest = app.add_subcommand("ingest", "parse and validate a dictionary");
    add_common(c_ingest, ingest_args);
    bool strict_flag = false;
    c_ingest->add_flag("--strict", strict_flag, "malformed records are fatal");

    CommonArgs pretrain_args;
    auto* c_pretrain = app.add_subcommand("pretrain", "run the combined pre-training loop");
    add_common(c_pretrain, pretrain_args);

    auto* c_gradcheck =
        app.add_subcommand("gradcheck", "finite-difference checks for ops and losses");

    CommonArgs build_args;
    auto* c_build = app.add_subcommand("build-polymrc", "build instances and splits");
    add_common(c_build, build_args);

    CommonArgs eval_args;
    std::string eval_data, eval_ck, eval_vocab;
    bool eval_oracle = false, eval_random = false;
    auto* c_eval = app.add_subcommand("eval-polymrc", "evaluate accuracy on instances");
    add_common(c_eval, eval_args);
    c_eval->add_option("--data", eval_data, "instance JSONL")->required();
    c_eval->add_option("--checkpoint", eval_ck, "model checkpoint");
    c_eval->add_option("--vocab", eval_vocab, "vocab file");
    c_eval->add_flag("--oracle", eval_oracle, "gold-peeking scorer");
    c_eval->add_flag("--random", eval_random, "seeded uniform-random scorer");

    CommonArgs shot_args;
    std::string shot_data;
    int shot_n = 10, shot_sets = 3;
    auto* c_shot = app.add_subcommand("few-shot", "sample few-shot training sets");
    add_common(c_shot, shot_args);
    c_shot->add_option("--data", shot_data, "instance JSONL")->required();
    c_shot->add_option("--n", shot_n, "instances per set");
    c_shot->add_option("--sets", shot_sets, "number of seeded sets");

    CommonArgs retr_args;
    std::string retr_ck, retr_vocab, retr_text;
    auto* c_retr = app.add_subcommand("retrieve", "sense weights for entries in a text");
    add_common(c_retr, retr_args);
    c_retr->add_option("--checkpoint", retr_ck, "model checkpoint")->required();
    c_retr->add_option("--vocab", retr_vocab, "vocab file")->required();
    c_retr->add_option("--text", retr_text, "input text (stdin when omitted)");

    CommonArgs fuse_args;
    std::string fuse_ck, fuse_vocab, fuse_data;
    int fuse_steps = 300;
    double fuse_lr = 0.05;
    auto* c_fuse = app.add_subcommand("fuse-train", "train a linear head on fused features");
    add_common(c_fuse, fuse_args);
    c_fuse->add_option("--checkpoint", fuse_ck, "model checkpoint")->required();
    c_fuse->add_option("--vocab", fuse_vocab, "vocab file")->required();
    c_fuse->add_option("--data", fuse_data, "labeled JSONL {text, label}")->required();
    c_fuse->add_option("--steps", fuse_steps, "head training steps");
    c_fuse->add_option("--lr", fuse_lr, "head learning rate");
    bool no_fusion_flag = false;
    c_fuse->add_flag("--no-fusion", no_fusion_flag, "train on the lm vector alone");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*c_ingest) {
            if (strict_flag) ingest_args.overrides["strict"] = "true";
            return cmd_ingest(ingest_args);
        }
        if (*c_pretrain) return cmd_pretrain(pretrain_args);
        if (*c_gradcheck) return cmd_gradcheck();
        if (*c_build) return cmd_build_polymrc(build_args);
        if (*c_eval) {
            if (eval_oracle) eval_args.overrides["oracle"] = "true";
            return cmd_eval_polymrc(eval_args, eval_data, eval_ck, eval_vocab, eval_random);
        }
        if (*c_shot) return cmd_few_shot(shot_args, shot_data, shot_n, shot_sets);
        if (*c_retr) return cmd_retrieve(retr_args, retr_ck, retr_vocab, retr_text);
        if (*c_fuse) {
            if (no_fusion_flag) fuse_args.overrides["no_fusion"] = "true";
            return cmd_fuse_train(fuse_args, fuse_ck, fuse_vocab, fuse_data, fuse_steps, fuse_lr);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DictError& e) {
        std::cerr << "dictionary error: " << e.what() << "\n";
        return 3;
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return 4;
    } catch (const PolyMRCError& e) {
        std::cerr << "polymrc error: " << e.what() << "\n";
        return 5;
    } catch (const VocabError& e) {
        std::cerr << "vocab error: " << e.what() << "\n";
        return 6;
    } catch (const GlyphError& e) {
        std::cerr << "glyph error: " << e.what() << "\n";
        return 7;
    } catch (const EncodeError& e) {
        std::cerr << "encoding error: " << e.what() << "\n";
        return 8;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 9;
    }
    return 0;
}
