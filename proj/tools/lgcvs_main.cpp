// Command-line surface: dataset synthesis, two-stage training, evaluation,
// reconstruction dumps, and ablation sweeps. Exit codes: 0 success, 2 config
// error, 3 runtime error.

#include "lgcvs/experiment.hpp"

#include <cstdlib>
#include <iostream>

namespace lgcvs {

struct CliConfig {
    ExperimentConfig experiment;
    std::string dataset_dir;  // read splits from <dir>/{train,val,test}; synthesize when empty
    std::string run_dir = "run";
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(CliConfig, experiment, dataset_dir, run_dir)

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Every key present in `given` must exist in `schema` (recursively).
void reject_unknown_keys(const nlohmann::json& given, const nlohmann::json& schema,
                         const std::string& path) {
    if (!given.is_object()) return;
    if (!schema.is_object()) throw ConfigError("config key is not a section: " + path);
    for (const auto& [key, value] : given.items()) {
        const std::string here = path.empty() ? key : path + "." + key;
        if (!schema.contains(key)) throw ConfigError("unknown config key: " + here);
        reject_unknown_keys(value, schema.at(key), here);
    }
}

nlohmann::json parse_override_value(const std::string& raw) {
    auto parsed = nlohmann::json::parse(raw, nullptr, false);
    if (!parsed.is_discarded()) return parsed;
    return nlohmann::json(raw);  // bare string
}

void apply_override(nlohmann::json& cfg, const std::string& expr) {
    const auto eq = expr.find('=');
    if (eq == std::string::npos) throw ConfigError("override must be key=value: " + expr);
    const std::string path = expr.substr(0, eq);
    nlohmann::json* cur = &cfg;
    size_t start = 0;
    while (true) {
        const size_t dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
        if (!cur->contains(key)) throw ConfigError("unknown config key: " + path);
        cur = &(*cur)[key];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    *cur = parse_override_value(expr.substr(eq + 1));
}

struct Args {
    std::string command;
    std::map<std::string, std::string> opts;
    std::vector<std::string> overrides;
    bool flag(const std::string& name) const { return opts.count(name) != 0; }
    std::string get(const std::string& name, const std::string& fallback = "") const {
        auto it = opts.find(name);
        return it == opts.end() ? fallback : it->second;
    }
};

Args parse_args(int argc, char** argv) {
    Args a;
    if (argc < 2) throw ConfigError("usage: lgcvs <dataset|train|eval|reconstruct|sweep> ...");
    a.command = argv[1];
    for (int i = 2; i < argc; ++i) {
        std::string tok = argv[i];
        if (tok.rfind("--", 0) != 0) throw ConfigError("unexpected argument: " + tok);
        tok = tok.substr(2);
        if (tok == "set") {
            if (i + 1 >= argc) throw ConfigError("--set needs key=value");
            a.overrides.push_back(argv[++i]);
        } else if (tok == "force" || tok == "resume") {
            a.opts[tok] = "1";
        } else {
            if (i + 1 >= argc) throw ConfigError("--" + tok + " needs a value");
            a.opts[tok] = argv[++i];
        }
    }
    return a;
}

CliConfig load_config(const Args& args) {
    nlohmann::json cfg_json = CliConfig{};  // defaults double as the schema
    const std::string path = args.get("config");
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config: " + path);
        nlohmann::json given;
        try {
            in >> given;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("config parse error: ") + e.what());
        }
        reject_unknown_keys(given, cfg_json, "");
        cfg_json.merge_patch(given);
    }
    for (const auto& o : args.overrides) apply_override(cfg_json, o);
    try {
        return cfg_json.get<CliConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config type error: ") + e.what());
    }
}

std::string output_root() {
    const char* env = std::getenv("LGCVS_OUTPUT_ROOT");
    return env && *env ? env : "runs";
}

Splits load_or_make_splits(const CliConfig& cfg) {
    if (cfg.dataset_dir.empty()) return make_splits(cfg.experiment);
    Splits s;
    s.train = read_dataset(cfg.dataset_dir + "/train");
    s.val = read_dataset(cfg.dataset_dir + "/val");
    s.test = read_dataset(cfg.dataset_dir + "/test");
    return s;
}

int cmd_dataset(const Args& args, const CliConfig& cfg) {
    const std::string out = args.get("out-dir", output_root() + "/dataset");
    if (std::filesystem::exists(out) && !args.flag("force"))
        throw std::runtime_error("output directory exists (use --force): " + out);
    auto splits = make_splits(cfg.experiment);
    for (const auto& [name, recs] :
         {std::pair<std::string, const std::vector<SceneRecord>*>{"train", &splits.train},
          {"val", &splits.val},
          {"test", &splits.test}}) {
        write_dataset(*recs, out + "/" + name);
        const auto rates = positive_rates(*recs);
        std::cout << name << " scenes=" << recs->size() << " positive_rates=[" << rates[0] << ", "
                  << rates[1] << ", " << rates[2] << "]\n";
    }
    return 0;
}

int cmd_train(const Args& args, const CliConfig& cfg) {
    const int stage = std::stoi(args.get("stage", "0"));
    if (stage != 1 && stage != 2) throw ConfigError("train requires --stage 1 or --stage 2");
    const std::string run = output_root() + "/" + cfg.run_dir;
    auto splits = load_or_make_splits(cfg);

    if (stage == 1) {
        int offset = 0;
        std::string init;
        if (args.flag("resume") && std::filesystem::exists(run + "/stage1_log.jsonl")) {
            std::ifstream log(run + "/stage1_log.jsonl");
            std::string line;
            while (std::getline(log, line))
                if (!line.empty()) ++offset;
            init = run + "/stage1_best.ckpt";
        }
        auto res = fit_stage1<float>(cfg.experiment.stage1, splits.train, splits.val, run,
                                     &std::cout, offset, init);
        std::cout << "stage1 best recall@10 " << res.best_metric << " at epoch "
                  << res.best_epoch + offset << "\n"
                  << "checkpoint: " << res.checkpoint_path << "\n";
        return 0;
    }

    const std::string s1 = args.get("stage1-checkpoint", run + "/stage1_best.ckpt");
    if (!std::filesystem::exists(s1))
        throw std::runtime_error(
            "stage 2 requires a stage-1 checkpoint; none found at: " + s1 +
            " (run `train --stage 1` first or pass --stage1-checkpoint)");
    auto enc = load_stage1<float>(s1);
    int offset = 0;
    std::string init;
    if (args.flag("resume") && std::filesystem::exists(run + "/stage2_log.jsonl")) {
        std::ifstream log(run + "/stage2_log.jsonl");
        std::string line;
        while (std::getline(log, line))
            if (!line.empty()) ++offset;
        init = run + "/stage2_best.ckpt";
    }
    auto res = fit_stage2<float>(cfg.experiment.stage2, enc, splits.train, splits.val, run,
                                 &std::cout, nullptr, offset, init);
    std::cout << "stage2 best val mAP " << res.best_metric << " at epoch "
              << res.best_epoch + offset << "\n"
              << "checkpoint: " << res.checkpoint_path << "\n";
    return 0;
}

int cmd_eval(const Args& args, const CliConfig& cfg) {
    const std::string ckpt =
        args.get("checkpoint", output_root() + "/" + cfg.run_dir + "/stage2_best.ckpt");
    if (!std::filesystem::exists(ckpt)) throw std::runtime_error("checkpoint not found: " + ckpt);
    const std::string split = args.get("split", "test");
    auto splits = load_or_make_splits(cfg);
    const std::vector<SceneRecord>* recs = split == "train" ? &splits.train
                                           : split == "val" ? &splits.val
                                           : split == "test" ? &splits.test
                                                             : nullptr;
    if (!recs) throw ConfigError("unknown split: " + split);
    auto model = load_stage2<float>(ckpt);
    auto report = eval_report_to_json(evaluate_stage2(model, *recs, split));
    report["split"] = split;
    report["checkpoint"] = ckpt;
    std::cout << report.dump(2) << "\n";
    const std::string out = args.get("report-out");
    if (!out.empty()) {
        std::ofstream f(out);
        f << report.dump(2) << "\n";
    }
    return 0;
}

int cmd_reconstruct(const Args& args, const CliConfig& cfg) {
    const std::string ckpt =
        args.get("checkpoint", output_root() + "/" + cfg.run_dir + "/stage2_best.ckpt");
    if (!std::filesystem::exists(ckpt)) throw std::runtime_error("checkpoint not found: " + ckpt);
    const std::string split = args.get("split", "test");
    const int count = std::stoi(args.get("count", "8"));
    const std::string out = args.get("out-dir", output_root() + "/" + cfg.run_dir + "/recon");
    std::filesystem::create_directories(out);

    auto model = load_stage2<float>(ckpt);
    if (!model.cfg.use_recon)
        throw std::runtime_error("checkpoint was trained without reconstruction");
    auto splits = load_or_make_splits(cfg);
    const auto& recs = split == "val" ? splits.val : split == "train" ? splits.train : splits.test;
    int written = 0;
    for (size_t i = 0; i < recs.size() && written < count; ++i) {
        auto cache = model.build_cache(recs[i], detector_seed(split, i));
        auto fm = model.backbone.feature_map(image_to_tensor<float>(recs[i].image), 0);
        auto fwd = model.forward(recs[i], cache, fm, false, 0);
        if (!fwd.recon_image.defined()) continue;
        const int h = fwd.recon_image.dim(2), w = fwd.recon_image.dim(3);
        Image target(w, h), pred(w, h);
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    const size_t idx = (static_cast<size_t>(c) * h + y) * w + x;
                    target.at(x, y, c) = fwd.recon_target.val()[idx];
                    pred.at(x, y, c) = fwd.recon_image.val()[idx];
                }
        char name[64];
        std::snprintf(name, sizeof(name), "%s/%04zu_target.png", out.c_str(), i);
        write_png(name, target);
        std::snprintf(name, sizeof(name), "%s/%04zu_recon.png", out.c_str(), i);
        write_png(name, pred);
        ++written;
    }
    std::cout << "wrote " << written << " reconstruction pairs to " << out << "\n";
    return 0;
}

int cmd_sweep(const Args& args, const CliConfig& cfg) {
    const std::string name = args.get("name");
    const auto& names = sweep_names();
    if (std::find(names.begin(), names.end(), name) == names.end()) {
        std::string all;
        for (const auto& n : names) all += (all.empty() ? "" : ", ") + n;
        throw ConfigError("sweep requires --name, one of: " + all);
    }
    const std::string out = args.get("out-dir", output_root() + "/" + cfg.run_dir + "/sweeps");
    auto rows = run_sweep<float>(name, cfg.experiment, out, &std::cout);
    for (const auto& row : rows)
        std::cout << name << "\t" << row.label << "\tmAP=" << row.test_map << "\n";
    return 0;
}

int run(int argc, char** argv) {
    const Args args = parse_args(argc, argv);
    const CliConfig cfg = load_config(args);
    if (args.command == "dataset") return cmd_dataset(args, cfg);
    if (args.command == "train") return cmd_train(args, cfg);
    if (args.command == "eval") return cmd_eval(args, cfg);
    if (args.command == "reconstruct") return cmd_reconstruct(args, cfg);
    if (args.command == "sweep") return cmd_sweep(args, cfg);
    throw ConfigError("unknown command: " + args.command);
}

}  // namespace lgcvs

int main(int argc, char** argv) {
    try {
        return lgcvs::run(argc, argv);
    } catch (const lgcvs::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
