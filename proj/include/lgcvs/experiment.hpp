#pragma once

// Experiment orchestration shared by the command-line tool and the end-to-end
// tests: dataset synthesis into splits, full two-stage runs, evaluation
// reports, and ablation sweeps.

#include "lgcvs/training.hpp"

namespace lgcvs {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(GeneratorConfig, width, height, edges_per_node,
                                   min_component_area, tau2, tau3, nominal_triangle_frac,
                                   p_gallbladder, p_duct, p_artery, p_attach, p_triangle,
                                   p_cleared, p_plate, p_plate_occluded, p_tool, p_second_tool,
                                   noise_std)

struct ExperimentConfig {
    GeneratorConfig generator;
    int train_scenes = 2000, val_scenes = 500, test_scenes = 500;
    uint64_t data_seed = 1234;
    Stage1Config stage1;
    Stage2Config stage2;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ExperimentConfig, generator, train_scenes, val_scenes,
                                   test_scenes, data_seed, stage1, stage2)

inline long scene_seed(uint64_t data_seed, const std::string& split, int index) {
    return static_cast<long>(
        derive_seed(derive_seed(data_seed, split), std::to_string(index)) & 0x7fffffffffffLL);
}

inline std::vector<SceneRecord> make_split(const GeneratorConfig& gen, int count,
                                           uint64_t data_seed, const std::string& split) {
    std::vector<SceneRecord> out;
    out.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) out.push_back(synth_scene(scene_seed(data_seed, split, i), gen));
    return out;
}

struct Splits {
    std::vector<SceneRecord> train, val, test;
};

inline Splits make_splits(const ExperimentConfig& cfg) {
    return {make_split(cfg.generator, cfg.train_scenes, cfg.data_seed, "train"),
            make_split(cfg.generator, cfg.val_scenes, cfg.data_seed, "val"),
            make_split(cfg.generator, cfg.test_scenes, cfg.data_seed, "test")};
}

// ---------------- evaluation report ----------------

struct EvalReport {
    std::array<double, 3> per_criterion_ap{};
    double map = 0;
    std::array<double, 3> bacc{};  // NaN where the split is single-class
    double mean_bacc = 0;
    double recall_at_10 = 0;
};

inline nlohmann::json eval_report_to_json(const EvalReport& r) {
    auto num_or_null = [](double v) {
        return std::isnan(v) ? nlohmann::json() : nlohmann::json(v);
    };
    return {{"per_criterion_ap", r.per_criterion_ap},
            {"map", r.map},
            {"bacc", {num_or_null(r.bacc[0]), num_or_null(r.bacc[1]), num_or_null(r.bacc[2])}},
            {"mean_bacc", num_or_null(r.mean_bacc)},
            {"recall_at_10", r.recall_at_10}};
}

template <class T>
EvalReport evaluate_stage2(const Stage2Model<T>& model, const std::vector<SceneRecord>& recs,
                           const std::string& split) {
    std::vector<FrozenGraphCache> caches;
    for (size_t i = 0; i < recs.size(); ++i)
        caches.push_back(model.build_cache(recs[i], detector_seed(split, i)));
    const auto scores = stage2_predict(model, recs, caches);
    const auto labels = cvs_labels(recs);

    EvalReport rep;
    // per-criterion AP, null when the split lacks positives for a criterion;
    // the mean is over the defined criteria
    double ap_sum = 0;
    int ap_count = 0;
    for (int c = 0; c < 3; ++c) {
        std::vector<double> s;
        std::vector<int> l;
        for (size_t i = 0; i < recs.size(); ++i) {
            s.push_back(scores[i][static_cast<size_t>(c)]);
            l.push_back(labels[i][static_cast<size_t>(c)]);
        }
        try {
            rep.per_criterion_ap[static_cast<size_t>(c)] = average_precision(s, l);
            ap_sum += rep.per_criterion_ap[static_cast<size_t>(c)];
            ++ap_count;
        } catch (const std::invalid_argument&) {
            rep.per_criterion_ap[static_cast<size_t>(c)] = std::numeric_limits<double>::quiet_NaN();
        }
    }
    rep.map = ap_count ? ap_sum / ap_count : std::numeric_limits<double>::quiet_NaN();
    try {
        const auto b = balanced_accuracy(scores, labels);
        rep.bacc = b.bacc;
        rep.mean_bacc = b.mean;
    } catch (const std::invalid_argument&) {
        rep.bacc = {std::numeric_limits<double>::quiet_NaN(),
                    std::numeric_limits<double>::quiet_NaN(),
                    std::numeric_limits<double>::quiet_NaN()};
        rep.mean_bacc = std::numeric_limits<double>::quiet_NaN();
    }
    rep.recall_at_10 = eval_recall_at_k(model.frozen, recs, model.cfg.corruption, split, 10);
    return rep;
}

// ---------------- full two-stage run ----------------

struct PipelineResult {
    FitResult stage1, stage2;
    EvalReport test_report;
    std::string stage1_ckpt, stage2_ckpt;
    std::vector<double> recon_curve;
};

template <class T>
PipelineResult run_pipeline(const ExperimentConfig& cfg, const Splits& splits,
                            const std::string& out_dir, std::ostream* progress = nullptr,
                            const std::string& reuse_stage1_ckpt = "") {
    PipelineResult res;
    if (reuse_stage1_ckpt.empty()) {
        res.stage1 = fit_stage1<T>(cfg.stage1, splits.train, splits.val, out_dir, progress);
        res.stage1_ckpt = res.stage1.checkpoint_path;
    } else {
        res.stage1_ckpt = reuse_stage1_ckpt;
    }
    auto enc = load_stage1<T>(res.stage1_ckpt);
    res.stage2 = fit_stage2<T>(cfg.stage2, enc, splits.train, splits.val, out_dir, progress,
                               &res.recon_curve);
    res.stage2_ckpt = res.stage2.checkpoint_path;
    auto model = load_stage2<T>(res.stage2_ckpt);
    res.test_report = evaluate_stage2(model, splits.test, "test");
    return res;
}

// ---------------- ablation sweeps ----------------

struct SweepRow {
    std::string label;
    nlohmann::json params;
    double test_map = 0;
    std::array<double, 3> per_criterion_ap{};
};

inline const std::vector<std::string>& sweep_names() {
    static const std::vector<std::string> names = {"lambda_perturb", "recon_bottleneck",
                                                   "gnn_layers", "components", "edge_building"};
    return names;
}

// Rows of the component-ablation table: which node/edge input slices feed the
// criteria head.
inline std::vector<std::pair<std::string, CvsComponentToggles>> component_rows() {
    return {{"classes_only", {false, false, true}},
            {"boxes_only", {false, true, false}},
            {"boxes+classes", {false, true, true}},
            {"visual_only", {true, false, false}},
            {"visual+boxes+classes", {true, true, true}}};
}

template <class T>
std::vector<SweepRow> run_sweep(const std::string& name, const ExperimentConfig& base,
                                const std::string& out_dir, std::ostream* progress = nullptr) {
    std::filesystem::create_directories(out_dir);
    const Splits splits = make_splits(base);

    // a stage-1 checkpoint can be shared between rows that leave the graph
    // encoder and its training untouched
    std::string shared_ckpt;
    auto shared_stage1 = [&]() {
        if (shared_ckpt.empty()) {
            auto r = fit_stage1<T>(base.stage1, splits.train, splits.val, out_dir + "/stage1",
                                   progress);
            shared_ckpt = r.checkpoint_path;
        }
        return shared_ckpt;
    };

    std::vector<SweepRow> rows;
    auto run_row = [&](const std::string& label, const ExperimentConfig& cfg,
                       const std::string& reuse_ckpt, nlohmann::json params) {
        if (progress) *progress << "sweep " << name << " row " << label << "\n";
        auto res = run_pipeline<T>(cfg, splits, out_dir + "/" + label, progress, reuse_ckpt);
        SweepRow row;
        row.label = label;
        row.params = std::move(params);
        row.test_map = res.test_report.map;
        row.per_criterion_ap = res.test_report.per_criterion_ap;
        rows.push_back(std::move(row));
    };

    if (name == "lambda_perturb") {
        for (double lam : {0.0, 0.0625, 0.125, 0.25}) {
            auto cfg = base;
            cfg.stage2.lambda_perturb = lam;
            run_row("lambda_" + std::to_string(lam), cfg, shared_stage1(),
                    {{"lambda_perturb", lam}});
        }
    } else if (name == "recon_bottleneck") {
        for (int fr : {16, 32, 64, 128}) {
            auto cfg = base;
            cfg.stage2.use_recon = true;
            cfg.stage2.f_r = fr;
            run_row("f_r_" + std::to_string(fr), cfg, shared_stage1(), {{"f_r", fr}});
        }
    } else if (name == "gnn_layers") {
        for (int layers : {1, 2, 3}) {
            auto cfg = base;
            cfg.stage1.encoder.gnn_layers = layers;
            run_row("gnn_layers_" + std::to_string(layers), cfg, "", {{"gnn_layers", layers}});
        }
    } else if (name == "components") {
        for (const auto& [label, toggles] : component_rows()) {
            auto cfg = base;
            cfg.stage2.toggles = toggles;
            run_row(label, cfg, shared_stage1(),
                    {{"visual", toggles.visual},
                     {"boxes", toggles.boxes},
                     {"classes", toggles.classes}});
        }
    } else if (name == "edge_building") {
        {
            auto cfg = base;
            run_row("relpn+edge_loss", cfg, shared_stage1(), {{"edges", "relpn"},
                                                              {"edge_loss", true}});
        }
        {
            auto cfg = base;
            cfg.stage1.edge_loss = false;
            run_row("relpn_no_edge_loss", cfg, "", {{"edges", "relpn"}, {"edge_loss", false}});
        }
        {
            auto cfg = base;
            cfg.stage1.encoder.edges_per_node = 0;
            run_row("no_edges", cfg, "", {{"edges", "none"}, {"edge_loss", false}});
        }
    } else {
        throw std::invalid_argument("unknown sweep: " + name);
    }

    // one table per sweep: JSON lines plus an aligned text rendering
    std::ofstream jout(out_dir + "/sweep_" + name + ".jsonl");
    std::ofstream tout(out_dir + "/sweep_" + name + ".txt");
    tout << name << "\n" << std::string(name.size(), '-') << "\n";
    for (const auto& row : rows) {
        nlohmann::json j = {{"sweep", name},
                            {"row", row.label},
                            {"params", row.params},
                            {"test_map", row.test_map},
                            {"per_criterion_ap", row.per_criterion_ap}};
        jout << j.dump() << "\n";
        tout << row.label << "\t" << row.test_map << "\t" << row.per_criterion_ap[0] << "\t"
             << row.per_criterion_ap[1] << "\t" << row.per_criterion_ap[2] << "\n";
    }
    return rows;
}

}  // namespace lgcvs
