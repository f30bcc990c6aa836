// Acceptance suite: nine release criteria, each reported as a single
// [CRITERION n] PASS/FAIL line. Criteria 6-9 share one set of end-to-end
// training artifacts built lazily on first use; everything is seeded, so
// repeated runs reproduce the same numbers bit for bit.

#include "lgcvs/experiment.hpp"

#include <gtest/gtest.h>

#include <chrono>
#include <cstring>
#include <filesystem>
#include <map>
#include <numeric>

#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace lgcvs;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

void report(int criterion, const std::string& what) {
    std::cout << "[CRITERION " << criterion << "] "
              << (::testing::Test::HasFailure() ? "FAIL" : "PASS") << ": " << what << std::endl;
}

// Random box with corners on a 0.25 grid. Edges then fall exactly on the
// 100x-upsampled raster, so pixel counting is an exact oracle rather than an
// approximate one.
Box random_quantized_box(std::mt19937_64& rng, double extent, double min_side) {
    auto snap = [](double v) { return std::round(v * 4.0) / 4.0; };
    for (;;) {
        Box b = oracle::random_box(rng, extent);
        b = Box(snap(b.x1), snap(b.y1), snap(b.x2), snap(b.y2));
        if (b.width() >= min_side && b.height() >= min_side) return b;
    }
}

// ---------------- shared end-to-end artifacts (criteria 6-9) ----------------

struct ArmResult {
    double test_map = 0;
    std::array<double, 3> ap{};
};

struct E2EArtifacts {
    ExperimentConfig base;  // reconstruction off; the criterion-7 arm flips it on
    Splits splits;
    std::array<std::string, 3> stage1_ckpts;
    std::array<std::string, 3> off_ckpts;
    std::array<ArmResult, 3> off;
    double baseline_map = 0;
    double build_seconds = 0;
    std::string root = "acceptance_runs";
};

ExperimentConfig e2e_config() {
    ExperimentConfig base;
    base.generator.width = 64;
    base.generator.height = 64;
    base.train_scenes = 2000;
    base.val_scenes = 500;
    base.test_scenes = 500;
    base.data_seed = 1234;
    const CorruptionConfig corr{0.15, 0.1, 0.1, 0.0};
    base.stage1.corruption = corr;
    base.stage2.corruption = corr;
    base.stage1.encoder.feat_dim = 32;
    base.stage1.encoder.pool_grid = 3;
    base.stage1.encoder.gnn_hidden = 64;
    base.stage1.encoder.relpn_hidden = 32;
    base.stage1.epochs = 10;
    base.stage1.batch_size = 8;
    base.stage1.lr = 1e-3;
    base.stage2.epochs = 35;
    base.stage2.batch_size = 16;
    base.stage2.lr = 1e-3;
    base.stage2.f_n = 32;
    base.stage2.f_e = 32;
    base.stage2.f_r = 16;
    base.stage2.cvs_hidden = 32;
    base.stage2.recon_half_levels = 2;
    base.stage2.use_recon = false;
    return base;
}

const E2EArtifacts& e2e() {
    static const E2EArtifacts art = [] {
        E2EArtifacts a;
        a.base = e2e_config();
        const auto t0 = Clock::now();
        a.splits = make_splits(a.base);
        for (int s = 0; s < 3; ++s) {
            auto cfg = a.base;
            cfg.stage1.seed = 101 + s;
            cfg.stage2.seed = 201 + s;
            const std::string dir = a.root + "/seed" + std::to_string(s);
            auto r1 = fit_stage1<float>(cfg.stage1, a.splits.train, a.splits.val, dir + "/stage1");
            a.stage1_ckpts[static_cast<size_t>(s)] = r1.checkpoint_path;
            auto enc = load_stage1<float>(r1.checkpoint_path);
            auto r2 = fit_stage2<float>(cfg.stage2, enc, a.splits.train, a.splits.val, dir + "/off");
            a.off_ckpts[static_cast<size_t>(s)] = r2.checkpoint_path;
            auto model = load_stage2<float>(r2.checkpoint_path);
            auto rep = evaluate_stage2(model, a.splits.test, "test");
            a.off[static_cast<size_t>(s)] = {rep.map, rep.per_criterion_ap};
            std::cout << "  [e2e] seed " << s << " test mAP " << rep.map << std::endl;
        }
        LayoutBaselineConfig bl;
        bl.corruption = a.base.stage2.corruption;
        bl.epochs = 15;
        bl.layout_size = 32;
        auto [blm, blr] = fit_layoutcvs<float>(bl, a.splits.train, a.splits.val);
        std::vector<std::array<double, 3>> scores;
        for (size_t i = 0; i < a.splits.test.size(); ++i) {
            auto det = oracle_detect(a.splits.test[i], bl.corruption, detector_seed("test", i), 16,
                                     bl.num_classes);
            auto x = class_layout_batch<float>({&a.splits.test[i]}, {&det}, bl.num_classes,
                                               bl.layout_size, bl.layout_size);
            auto lg = blm.forward(x);
            scores.push_back({static_cast<double>(lg.val()[0]), static_cast<double>(lg.val()[1]),
                              static_cast<double>(lg.val()[2])});
        }
        a.baseline_map = cvs_map(scores, cvs_labels(a.splits.test)).map;
        std::cout << "  [e2e] layout baseline test mAP " << a.baseline_map << std::endl;
        a.build_seconds = seconds_since(t0);
        return a;
    }();
    return art;
}

struct OnArms {
    std::array<ArmResult, 3> on;
    std::array<std::vector<double>, 3> recon_curves;
    double build_seconds = 0;
};

const OnArms& on_arms() {
    static const OnArms arms = [] {
        const auto& a = e2e();
        OnArms o;
        const auto t0 = Clock::now();
        for (int s = 0; s < 3; ++s) {
            auto cfg = a.base;
            cfg.stage2.seed = 201 + s;  // paired with the reconstruction-off run
            cfg.stage2.use_recon = true;
            auto enc = load_stage1<float>(a.stage1_ckpts[static_cast<size_t>(s)]);
            auto r2 = fit_stage2<float>(cfg.stage2, enc, a.splits.train, a.splits.val,
                                        a.root + "/seed" + std::to_string(s) + "/on", nullptr,
                                        &o.recon_curves[static_cast<size_t>(s)]);
            auto model = load_stage2<float>(r2.checkpoint_path);
            auto rep = evaluate_stage2(model, a.splits.test, "test");
            o.on[static_cast<size_t>(s)] = {rep.map, rep.per_criterion_ap};
            std::cout << "  [e2e] seed " << s << " (with reconstruction) test mAP " << rep.map
                      << std::endl;
        }
        o.build_seconds = seconds_since(t0);
        return o;
    }();
    return arms;
}

double mean3(const std::array<ArmResult, 3>& a) {
    return (a[0].test_map + a[1].test_map + a[2].test_map) / 3.0;
}

double std3(const std::array<ArmResult, 3>& a) {
    const double m = mean3(a);
    double v = 0;
    for (const auto& r : a) v += (r.test_map - m) * (r.test_map - m);
    return std::sqrt(v / 3.0);
}

// independent AP reimplementation: different sort, different accumulation
double ap_reference(const std::vector<double>& scores, const std::vector<int>& labels) {
    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t x, size_t y) {
        if (scores[x] != scores[y]) return scores[x] > scores[y];
        return x < y;
    });
    int total_pos = 0;
    for (int l : labels) total_pos += l != 0;
    double ap = 0, prev_recall = 0;
    int tp = 0;
    for (size_t r = 0; r < order.size(); ++r) {
        if (labels[order[r]] != 0) ++tp;
        const double recall = static_cast<double>(tp) / total_pos;
        ap += (recall - prev_recall) * (static_cast<double>(tp) / static_cast<double>(r + 1));
        prev_recall = recall;
    }
    return ap;
}

// per-pixel membership oracle for box layouts
Layout reference_layout(const std::vector<Box>& boxes, int h, int w) {
    Layout l;
    l.h = h;
    l.w = w;
    l.n = static_cast<int>(boxes.size());
    l.grid.assign(static_cast<size_t>(l.n) * h * w, 0);
    for (int i = 0; i < l.n; ++i)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (x >= boxes[static_cast<size_t>(i)].x1 && x < boxes[static_cast<size_t>(i)].x2 &&
                    y >= boxes[static_cast<size_t>(i)].y1 && y < boxes[static_cast<size_t>(i)].y2)
                    l.at(i, y, x) = 1;
    return l;
}

std::vector<SceneRecord> quick_scenes(int count, int size, long seed0) {
    GeneratorConfig cfg;
    cfg.width = size;
    cfg.height = size;
    std::vector<SceneRecord> out;
    for (long s = seed0; static_cast<int>(out.size()) < count; ++s) {
        auto rec = synth_scene(s, cfg);
        if (rec.objects.size() >= 2 && !rec.relations.empty()) out.push_back(std::move(rec));
    }
    return out;
}

}  // namespace

// ---------------- criterion 1: geometry oracles ----------------

TEST(Criterion1, GeometryMatchesBruteForceOracles) {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> shift_q(-12, 12);  // multiples of 0.25
    for (int t = 0; t < 500; ++t) {
        Box a = random_quantized_box(rng, 10.0, 1.0);
        // half the cases are overlap-rich translations of the first box
        const double dx = shift_q(rng) * 0.25, dy = shift_q(rng) * 0.25;
        Box b = (t % 2 == 0) ? random_quantized_box(rng, 10.0, 1.0)
                             : Box(a.x1 + dx, a.y1 + dy, a.x2 + dx, a.y2 + dy);
        EXPECT_NEAR(iou(a, b), oracle::pixel_count_iou(a, b, 100), 1e-3) << "case " << t;
        EXPECT_NEAR(giou(a, b), oracle::closed_form_giou(a, b), 1e-9) << "case " << t;
        const Box u = union_box(a, b);
        EXPECT_DOUBLE_EQ(u.x1, std::min(a.x1, b.x1));
        EXPECT_DOUBLE_EQ(u.y1, std::min(a.y1, b.y1));
        EXPECT_DOUBLE_EQ(u.x2, std::max(a.x2, b.x2));
        EXPECT_DOUBLE_EQ(u.y2, std::max(a.y2, b.y2));
    }
    std::bernoulli_distribution coin(0.3);
    int mask_cases = 0;
    while (mask_cases < 500) {
        BinaryMask m(12, 12);
        for (auto& v : m.grid) v = coin(rng);
        if (std::none_of(m.grid.begin(), m.grid.end(), [](auto v) { return v != 0; })) continue;
        const Box got = tight_box(m), want = oracle::scan_tight_box(m);
        EXPECT_DOUBLE_EQ(got.x1, want.x1);
        EXPECT_DOUBLE_EQ(got.y1, want.y1);
        EXPECT_DOUBLE_EQ(got.x2, want.x2);
        EXPECT_DOUBLE_EQ(got.y2, want.y2);
        ++mask_cases;
    }
    const double secs = seconds_since(t0);
    EXPECT_LT(secs, 60.0);
    report(1, "geometry vs pixel-count/closed-form/scan oracles, 500 cases, " +
                  std::to_string(secs) + "s");
}

// ---------------- criterion 2: layout equivalence ----------------

TEST(Criterion2, LayoutMatchesPerPixelOracleExactly) {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(4096);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 100; ++t) {
        const int n = 1 + static_cast<int>(rng() % 5);
        std::vector<Box> boxes;
        for (int i = 0; i < n; ++i) {
            // overlap-rich: boxes concentrated in a small canvas, may stick out
            const double x = u(rng) * 18 - 2, y = u(rng) * 18 - 2;
            boxes.push_back(Box(x, y, x + u(rng) * 14, y + u(rng) * 14));
        }
        const auto got = build_layout(boxes, 16, 16);
        const auto want = reference_layout(boxes, 16, 16);
        ASSERT_EQ(got.grid, want.grid) << "box case " << t;

        // mask variant at native resolution equals mask membership
        std::bernoulli_distribution coin(0.4);
        std::vector<BinaryMask> masks(static_cast<size_t>(1 + t % 3), BinaryMask(16, 16));
        for (auto& m : masks)
            for (auto& v : m.grid) v = coin(rng);
        const auto ml = build_layout(masks, 16, 16);
        for (size_t i = 0; i < masks.size(); ++i)
            for (int y = 0; y < 16; ++y)
                for (int x = 0; x < 16; ++x)
                    ASSERT_EQ(ml.at(static_cast<int>(i), y, x), masks[i].at(x, y))
                        << "mask case " << t;
    }
    const double secs = seconds_since(t0);
    EXPECT_LT(secs, 60.0);
    report(2, "box and mask layouts equal per-pixel oracle on 100 instances, " +
                  std::to_string(secs) + "s");
}

// ---------------- criterion 3: scene-graph synthesis invariants ----------------

TEST(Criterion3, SceneGraphInvariantsHold) {
    const auto t0 = Clock::now();
    GeneratorConfig cfg;
    cfg.width = 64;
    cfg.height = 64;
    ASSERT_EQ(cfg.edges_per_node, 4);
    for (int t = 0; t < 200; ++t) {
        const auto rec = synth_scene(5000 + t, cfg);
        const int n = static_cast<int>(rec.objects.size());
        std::vector<Box> boxes;
        for (const auto& o : rec.objects) boxes.push_back(o.box);

        std::vector<std::pair<int, int>> pairs;
        std::vector<int> incident(static_cast<size_t>(n), 0);
        for (const auto& r : rec.relations) {
            ASSERT_LT(r.i, r.j) << "scene " << t;  // undirected, canonical order
            ASSERT_GE(r.i, 0);
            ASSERT_LT(r.j, n);
            pairs.push_back({r.i, r.j});
            ++incident[static_cast<size_t>(r.i)];
            ++incident[static_cast<size_t>(r.j)];
            // stored relation equals rule recomputation
            ASSERT_EQ(r.cls, relation_rule(boxes[static_cast<size_t>(r.i)],
                                           boxes[static_cast<size_t>(r.j)]))
                << "scene " << t;
        }
        auto sorted = pairs;
        std::sort(sorted.begin(), sorted.end());
        ASSERT_EQ(std::adjacent_find(sorted.begin(), sorted.end()), sorted.end())
            << "duplicate edge in scene " << t;
        for (int i = 0; i < n; ++i)
            ASSERT_GE(incident[static_cast<size_t>(i)], std::min(4, n - 1)) << "scene " << t;
        // edge selection equals the brute-force gIoU-ranking oracle
        ASSERT_EQ(sorted, oracle::brute_force_edge_selection(boxes, 4)) << "scene " << t;
    }
    const double secs = seconds_since(t0);
    EXPECT_LT(secs, 60.0);
    report(3, "200 scenes: undirected, duplicate-free, rule-consistent, oracle edge set, " +
                  std::to_string(secs) + "s");
}

// ---------------- criterion 4: differentiability ----------------

TEST(Criterion4, FiniteDifferenceGradients) {
    const auto t0 = Clock::now();

    {  // region pooling w.r.t. the feature grid
        std::mt19937_64 rng(31);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        std::vector<double> gv(static_cast<size_t>(3) * 4 * 4);
        for (auto& v : gv) v = u(rng);
        auto grid = Tensor<double>::from_data({1, 3, 4, 4}, std::move(gv), true);
        FeatureMap<double> fm{grid, 8, 32, 32};
        const Box box(3.0, 5.0, 21.0, 27.0);
        EXPECT_LT(gradcheck::max_rel_err(
                      {grid}, [&] { return mean_all(square(pool_region(fm, box, 3))); }),
                  1e-3)
            << "pool_region";
    }

    {  // graph network w.r.t. inputs and every parameter
        LgGnn<double> gnn(10, 3, 2, 2, 6);
        std::mt19937_64 rng(11);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        std::vector<double> nf(12), ef(6);
        for (auto& v : nf) v = u(rng);
        for (auto& v : ef) v = u(rng);
        auto nodes = Tensor<double>::from_data({4, 3}, nf, true);
        auto edges = Tensor<double>::from_data({3, 2}, ef, true);
        std::vector<std::pair<int, int>> idx = {{0, 1}, {1, 2}, {0, 3}};
        ParamList<double> plist;
        gnn.collect("gnn", plist);
        std::vector<Tensor<double>> params = {nodes, edges};
        for (auto& [name, p] : plist) params.push_back(p);
        EXPECT_LT(gradcheck::max_rel_err(params,
                                         [&] {
                                             auto [no, eo] = gnn.forward(nodes, edges, idx);
                                             return add(mean_all(square(no)),
                                                        mean_all(square(eo)));
                                         }),
                  1e-3)
            << "lg_gnn";
    }

    {  // criteria decoder on a small graph
        CvsDecoder<double> dec(12, 4, 7, 5, 5, 6);
        LatentGraph<double> g;
        std::mt19937_64 rng(6);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const int n = 3, f = 4;
        std::vector<double> nf(static_cast<size_t>(n) * f);
        for (auto& v : nf) v = u(rng) - 0.5;
        g.nodes.feats = Tensor<double>::from_data({n, f}, nf, true);
        g.node_feats = g.nodes.feats;
        for (int i = 0; i < n; ++i) {
            const double x = u(rng) * 60, y = u(rng) * 60;
            g.nodes.boxes.push_back(Box(x, y, x + 10 + u(rng) * 20, y + 10 + u(rng) * 20));
            std::vector<double> probs(7, 0.0);
            probs[1 + static_cast<size_t>(u(rng) * 5)] = 1.0;
            g.nodes.class_probs.push_back(probs);
        }
        for (int i = 0; i + 1 < n; ++i) {
            g.edges.indices.push_back({i, i + 1});
            g.edges.boxes.push_back(union_box(g.nodes.boxes[static_cast<size_t>(i)],
                                              g.nodes.boxes[static_cast<size_t>(i) + 1]));
        }
        std::vector<double> ef(static_cast<size_t>(2) * f), lg(2 * 4);
        for (auto& v : ef) v = u(rng) - 0.5;
        for (auto& v : lg) v = u(rng) - 0.5;
        g.edges.feats = Tensor<double>::from_data({2, f}, ef, true);
        g.edge_feats = g.edges.feats;
        g.edge_logits = Tensor<double>::from_data({2, 4}, lg);
        ParamList<double> plist;
        dec.collect("cvs", plist);
        std::vector<Tensor<double>> params = {g.node_feats, g.edge_feats};
        for (auto& [name, p] : plist) params.push_back(p);
        EXPECT_LT(gradcheck::max_rel_err(
                      params, [&] { return mean_all(square(dec.forward(g, 128, 128))); }),
                  1e-3)
            << "cvs_decode";
    }

    {  // reconstruction loss w.r.t. the predicted image
        std::mt19937_64 rng(41);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        std::vector<double> tv(static_cast<size_t>(3) * 16 * 16), pv(tv.size());
        for (auto& v : tv) v = u(rng);
        for (auto& v : pv) v = u(rng);
        auto target = Tensor<double>::from_data({1, 3, 16, 16}, std::move(tv));
        auto pred = Tensor<double>::from_data({1, 3, 16, 16}, std::move(pv), true);
        Backbone<double> frozen(5, 8);
        EXPECT_LT(gradcheck::max_rel_err({pred},
                                         [&] { return recon_loss(target, pred, frozen).total; }),
                  1e-3)
            << "recon_loss";
    }

    {  // full stage-2 loss on a 2-node micro-model
        auto recs = quick_scenes(1, 32, 400);
        EncoderConfig ecfg;
        ecfg.feat_dim = 4;
        ecfg.pool_grid = 2;
        ecfg.gnn_layers = 1;
        ecfg.gnn_hidden = 8;
        ecfg.relpn_hidden = 8;
        GraphEncoder<double> stage1(9, ecfg);
        Stage2Config cfg;
        cfg.seed = 21;
        cfg.lambda_perturb = 0.125;
        cfg.f_n = 4;
        cfg.f_e = 4;
        cfg.f_r = 4;
        cfg.cvs_hidden = 8;
        cfg.recon_half_levels = 0;
        Stage2Model<double> model(stage1, cfg);
        auto cache = model.build_cache(recs[0], 77);
        ASSERT_GE(cache.det.count(), 2);
        auto loss_fn = [&] {
            return stage2_loss(model, {&recs[0]}, {&cache}, {1.3, 2.0, 1.7}, true, 5).total;
        };
        ParamList<double> trainable;
        model.collect_trainable(trainable);
        std::vector<Tensor<double>> probes;
        auto pick = [&](const std::string& suffix) {
            for (auto& [name, p] : trainable)
                if (name.size() >= suffix.size() &&
                    name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
                    probes.push_back(p);
                    return;
                }
            FAIL() << "no parameter matching " << suffix;
        };
        pick(".backbone.c4.b");
        pick(".gnn.norm0.beta");
        pick(".cvs.head.b");
        pick(".recon_bottleneck.b");
        pick(".recon.out.b");
        EXPECT_LT(gradcheck::max_rel_err(probes, loss_fn, 1e-5), 1e-3) << "stage-2 loss";
    }

    const double secs = seconds_since(t0);
    EXPECT_LT(secs, 300.0);
    report(4, "pool_region / lg_gnn / cvs_decode / recon_loss / full stage-2 loss, " +
                  std::to_string(secs) + "s");
}

// ---------------- criterion 5: metric correctness ----------------

TEST(Criterion5, MetricsMatchFixturesAndIndependentAp) {
    // hand-computed fixtures
    EXPECT_NEAR(average_precision({0.9, 0.8, 0.7}, {1, 0, 1}), (1.0 + 2.0 / 3.0) / 2.0, 1e-12);
    EXPECT_DOUBLE_EQ(average_precision({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}), 1.0);
    EXPECT_DOUBLE_EQ(average_precision({0.1, 0.5, 0.3}, {1, 1, 1}), 1.0);
    EXPECT_THROW(average_precision({0.5, 0.4}, {0, 0}), std::invalid_argument);

    EXPECT_DOUBLE_EQ(balanced_accuracy({{5, 5, 5}, {-5, -5, -5}}, {{1, 1, 1}, {0, 0, 0}}).mean,
                     1.0);
    EXPECT_DOUBLE_EQ(balanced_accuracy({{1, 1, 1}, {1, 1, 1}}, {{1, 1, 1}, {0, 0, 0}}).mean, 0.5);

    SceneGraphGt gt;
    gt.boxes = {Box(0, 0, 10, 10), Box(20, 0, 30, 10), Box(0, 20, 10, 30)};
    gt.classes = {1, 2, 3};
    Relation r01, r02, r12;
    r01.i = 0;
    r01.j = 1;
    r01.cls = RelationClass::LeftRight;
    r02.i = 0;
    r02.j = 2;
    r02.cls = RelationClass::UpDown;
    r12.i = 1;
    r12.j = 2;
    r12.cls = RelationClass::LeftRight;
    gt.relations = {r01, r02, r12};
    auto triplet = [&](const Relation& r, double score) {
        TripletPrediction t;
        t.subj_cls = gt.classes[static_cast<size_t>(r.i)];
        t.obj_cls = gt.classes[static_cast<size_t>(r.j)];
        t.rel = r.cls;
        t.subj_box = gt.boxes[static_cast<size_t>(r.i)];
        t.obj_box = gt.boxes[static_cast<size_t>(r.j)];
        t.score = score;
        return t;
    };
    std::vector<TripletPrediction> exact = {triplet(r01, 0.9), triplet(r02, 0.8),
                                            triplet(r12, 0.7)};
    EXPECT_DOUBLE_EQ(recall_at_k({exact}, {gt}, 10), 1.0);
    EXPECT_DOUBLE_EQ(recall_at_k({exact}, {gt}, 0), 0.0);
    EXPECT_DOUBLE_EQ(recall_at_k({{triplet(r01, 0.9), triplet(r02, 0.8)}}, {gt}, 10), 2.0 / 3.0);

    // 1000 random cases against an independent reimplementation
    std::mt19937_64 rng(777);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 1000; ++t) {
        const int n = 1 + static_cast<int>(rng() % 50);
        std::vector<double> s;
        std::vector<int> l(static_cast<size_t>(n), 0);
        for (int i = 0; i < n; ++i) {
            // quantized scores force frequent ties
            s.push_back(std::round(u(rng) * 8) / 8.0);
            l[static_cast<size_t>(i)] = u(rng) < 0.4;
        }
        l[static_cast<size_t>(rng() % static_cast<uint64_t>(n))] = 1;  // at least one positive
        EXPECT_NEAR(average_precision(s, l), ap_reference(s, l), 1e-9) << "case " << t;
    }
    report(5, "AP/balanced-accuracy/recall fixtures exact; 1000-case AP cross-check within 1e-9");
}

// ---------------- criterion 6: end-to-end learning ----------------

TEST(Criterion6, TwoStageTrainingBeatsLayoutBaseline) {
    const auto& a = e2e();
    const double mean_map = mean3(a.off);
    std::cout << "  3-seed test mAP:";
    for (const auto& r : a.off) std::cout << " " << r.test_map;
    std::cout << "  mean " << mean_map << "  layout baseline " << a.baseline_map << std::endl;
    EXPECT_GE(mean_map, 0.75);
    EXPECT_GE(mean_map - a.baseline_map, 0.05);
    EXPECT_LT(a.build_seconds, 45.0 * 60.0);
    report(6, "3-seed mean test mAP " + std::to_string(mean_map) + " vs baseline " +
                  std::to_string(a.baseline_map) + ", " + std::to_string(a.build_seconds) + "s");
}

// ---------------- criterion 7: reconstruction objective effect ----------------

TEST(Criterion7, ReconstructionDoesNotHurtAndLossHalves) {
    const auto& a = e2e();
    const auto& o = on_arms();
    const double mean_off = mean3(a.off), mean_on = mean3(o.on);
    const double std_off = std3(a.off), std_on = std3(o.on);
    int improved = 0;
    for (int s = 0; s < 3; ++s)
        improved += o.on[static_cast<size_t>(s)].test_map > a.off[static_cast<size_t>(s)].test_map;
    std::cout << "  mean mAP off " << mean_off << " on " << mean_on << "  std off " << std_off
              << " on " << std_on << "  improved seeds " << improved << "/3" << std::endl;
    EXPECT_GE(mean_on - mean_off, -0.01);
    EXPECT_TRUE(std_on <= std_off || improved >= 2);
    for (int s = 0; s < 3; ++s) {
        const auto& rc = o.recon_curves[static_cast<size_t>(s)];
        ASSERT_FALSE(rc.empty());
        EXPECT_LE(rc.back(), 0.5 * rc.front())
            << "seed " << s << ": " << rc.front() << " -> " << rc.back();
    }
    EXPECT_LT(o.build_seconds, 45.0 * 60.0);
    report(7, "paired mAP delta " + std::to_string(mean_on - mean_off) +
                  ", reconstruction loss at least halved on all seeds");
}

// ---------------- criterion 8: freeze contract ----------------

TEST(Criterion8, FrozenPathBitIdenticalAndEvalDeterministic) {
    const auto& a = e2e();
    auto enc = load_stage1<float>(a.stage1_ckpts[0]);
    auto model = load_stage2<float>(a.off_ckpts[0]);

    ParamList<float> want, got;
    enc.collect("stage1", want);
    model.frozen.collect("stage1", got);
    ASSERT_EQ(want.size(), got.size());
    for (size_t i = 0; i < want.size(); ++i) {
        const auto& va = want[i].second.val();
        const auto& vb = got[i].second.val();
        ASSERT_EQ(va.size(), vb.size()) << want[i].first;
        ASSERT_EQ(std::memcmp(va.data(), vb.data(), va.size() * sizeof(float)), 0)
            << want[i].first;
    }

    // repeated evaluation is bit-identical, and the perturbation setting is
    // provably inactive outside training
    std::vector<SceneRecord> subset(a.splits.test.begin(), a.splits.test.begin() + 50);
    auto run_eval = [&](const Stage2Model<float>& m) {
        std::vector<FrozenGraphCache> caches;
        for (size_t i = 0; i < subset.size(); ++i)
            caches.push_back(m.build_cache(subset[i], detector_seed("test", i)));
        return stage2_predict(m, subset, caches);
    };
    const auto first = run_eval(model);
    const auto second = run_eval(model);
    auto perturbed = model;  // shares weights; only the config knob differs
    perturbed.cfg.lambda_perturb = 10.0;
    const auto third = run_eval(perturbed);
    ASSERT_EQ(first.size(), second.size());
    for (size_t i = 0; i < first.size(); ++i)
        for (int c = 0; c < 3; ++c) {
            ASSERT_EQ(std::memcmp(&first[i][static_cast<size_t>(c)],
                                  &second[i][static_cast<size_t>(c)], sizeof(double)), 0);
            ASSERT_EQ(std::memcmp(&first[i][static_cast<size_t>(c)],
                                  &third[i][static_cast<size_t>(c)], sizeof(double)), 0);
        }
    report(8, "frozen stage-1 weights bit-identical to checkpoint; eval repeat- and "
              "perturbation-invariant");
}

// ---------------- criterion 9: ablation harness ----------------

TEST(Criterion9, SweepStructureAndSemanticsOnlyAboveChance) {
    // structural checks on a miniature configuration
    ExperimentConfig micro;
    micro.generator.width = 32;
    micro.generator.height = 32;
    micro.train_scenes = 48;
    micro.val_scenes = 32;
    micro.test_scenes = 32;
    micro.data_seed = 77;
    micro.stage1.encoder.feat_dim = 8;
    micro.stage1.encoder.pool_grid = 2;
    micro.stage1.encoder.gnn_layers = 1;
    micro.stage1.encoder.gnn_hidden = 16;
    micro.stage1.encoder.relpn_hidden = 8;
    micro.stage1.epochs = 1;
    micro.stage1.batch_size = 8;
    micro.stage1.seed = 11;
    micro.stage2.epochs = 1;
    micro.stage2.batch_size = 8;
    micro.stage2.lr = 1e-3;
    micro.stage2.seed = 12;
    micro.stage2.f_n = 8;
    micro.stage2.f_e = 8;
    micro.stage2.f_r = 8;
    micro.stage2.cvs_hidden = 8;
    micro.stage2.recon_half_levels = 1;
    micro.stage2.use_recon = false;

    const std::map<std::string, size_t> expected_rows = {{"lambda_perturb", 4},
                                                         {"recon_bottleneck", 4},
                                                         {"gnn_layers", 3},
                                                         {"components", 5},
                                                         {"edge_building", 3}};
    const std::string root = "acceptance_runs/sweeps";
    std::map<std::string, std::vector<SweepRow>> all_rows;
    for (const auto& name : sweep_names()) {
        const std::string dir = root + "/" + name;
        const auto& rows = all_rows[name] = run_sweep<float>(name, micro, dir);
        ASSERT_EQ(rows.size(), expected_rows.at(name)) << name;
        // one table per sweep: machine-readable lines plus a text rendering
        std::ifstream jin(dir + "/sweep_" + name + ".jsonl");
        ASSERT_TRUE(jin.good()) << name;
        size_t lines = 0;
        std::string line;
        while (std::getline(jin, line)) {
            auto j = nlohmann::json::parse(line);
            EXPECT_EQ(j.at("sweep"), name);
            EXPECT_EQ(j.at("row"), rows[lines].label);
            EXPECT_TRUE(j.contains("params") && j.contains("test_map") &&
                        j.contains("per_criterion_ap"));
            ++lines;
        }
        EXPECT_EQ(lines, rows.size()) << name;
        EXPECT_GT(std::filesystem::file_size(dir + "/sweep_" + name + ".txt"), 0u) << name;
    }
    // component table carries the expected five rows in order
    std::vector<std::string> comp_labels;
    for (const auto& [label, toggles] : component_rows()) comp_labels.push_back(label);
    EXPECT_EQ(comp_labels,
              (std::vector<std::string>{"classes_only", "boxes_only", "boxes+classes",
                                        "visual_only", "visual+boxes+classes"}));
    // hyperparameter grids carried by the curve sweeps
    {
        std::vector<double> lams;
        for (const auto& r : all_rows.at("lambda_perturb"))
            lams.push_back(r.params.at("lambda_perturb").get<double>());
        EXPECT_EQ(lams, (std::vector<double>{0.0, 0.0625, 0.125, 0.25}));
        std::vector<int> frs;
        for (const auto& r : all_rows.at("recon_bottleneck"))
            frs.push_back(r.params.at("f_r").get<int>());
        EXPECT_EQ(frs, (std::vector<int>{16, 32, 64, 128}));
        std::vector<int> depths;
        for (const auto& r : all_rows.at("gnn_layers"))
            depths.push_back(r.params.at("gnn_layers").get<int>());
        EXPECT_EQ(depths, (std::vector<int>{1, 2, 3}));
    }

    // the semantics-only configuration trains and scores above chance
    const auto& a = e2e();
    auto cfg = a.base;
    cfg.stage2.seed = 301;
    cfg.stage2.epochs = 15;
    cfg.stage2.toggles = {false, false, true};
    auto enc = load_stage1<float>(a.stage1_ckpts[0]);
    auto r2 = fit_stage2<float>(cfg.stage2, enc, a.splits.train, a.splits.val,
                                a.root + "/semantics_only");
    auto model = load_stage2<float>(r2.checkpoint_path);
    auto rep = evaluate_stage2(model, a.splits.test, "test");
    double chance = 0;  // mean positive rate = expected AP of a random ranking
    for (int c = 0; c < 3; ++c) {
        double f = 0;
        for (const auto& r : a.splits.test) f += r.cvs[static_cast<size_t>(c)] != 0;
        chance += f / static_cast<double>(a.splits.test.size()) / 3.0;
    }
    std::cout << "  semantics-only test mAP " << rep.map << " vs chance " << chance << std::endl;
    EXPECT_GE(rep.map, chance + 0.1);
    report(9, "five sweeps emit expected rows and tables; semantics-only mAP " +
                  std::to_string(rep.map) + " above chance " + std::to_string(chance));
}
