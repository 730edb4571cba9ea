// Acceptance runner: one pass/fail line per criterion, nonzero exit if any
// fail. Each criterion is self-contained and reports its measured numbers so
// a failure is diagnosable from the output alone.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "bccseg/checkpoint.hpp"
#include "bccseg/dataset.hpp"
#include "bccseg/evaluate.hpp"
#include "bccseg/metrics.hpp"
#include "bccseg/model.hpp"
#include "bccseg/opcount.hpp"
#include "bccseg/rng.hpp"
#include "bccseg/synth.hpp"
#include "bccseg/train.hpp"

#include "support/gradcheck.hpp"
#include "support/gradsuite.hpp"
#include "support/oracles.hpp"

namespace fs = std::filesystem;
using namespace bccseg;

namespace {

std::string strf(const char* fmt, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, fmt);
    std::vsnprintf(buf, sizeof(buf), fmt, ap);
    va_end(ap);
    return buf;
}

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string read_bytes(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + p.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

bool datasets_byte_identical(const fs::path& a, const fs::path& b, std::string& why) {
    if (read_bytes(a / "manifest.csv") != read_bytes(b / "manifest.csv")) {
        why = "manifest.csv differs";
        return false;
    }
    for (const char* sub : {"images", "masks"}) {
        std::vector<std::string> names;
        for (const auto& e : fs::directory_iterator(a / sub)) names.push_back(e.path().filename().string());
        std::sort(names.begin(), names.end());
        for (const auto& n : names) {
            if (read_bytes(a / sub / n) != read_bytes(b / sub / n)) {
                why = std::string(sub) + "/" + n + " differs";
                return false;
            }
        }
    }
    return true;
}

fs::path work_dir() {
    static const fs::path p = [] {
        const fs::path d = fs::temp_directory_path() / "bccseg_acceptance";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return p;
}

// ---- criterion bodies; each returns {pass, detail} ---------------------------

std::pair<bool, std::string> criterion_gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto results = gradsuite::run(20);
    const double elapsed = seconds_since(t0);
    double worst = 0.0;
    std::string worst_op = "-";
    std::int64_t entries = 0;
    for (const auto& r : results) {
        entries += r.checked;
        if (r.max_err > worst) {
            worst = r.max_err;
            worst_op = r.op;
        }
    }
    const bool pass = worst <= 1e-4 && elapsed < 120.0;
    return {pass, strf("max rel err %.3g (%s) over %lld gradient entries in %zu ops, 20 cases each, %.1fs",
                       worst, worst_op.c_str(), static_cast<long long>(entries), results.size(), elapsed)};
}

std::pair<bool, std::string> criterion_atrous() {
    Xoshiro256StarStar rng(5150);
    int exact_failures = 0;
    double worst_float = 0.0;
    for (int i = 0; i < 50; ++i) {
        const std::int64_t cin = rng.uniform_int(1, 3);
        const std::int64_t cout = rng.uniform_int(1, 3);
        const int k = static_cast<int>(rng.uniform_int(2, 3));
        const int dil = static_cast<int>(rng.uniform_int(2, 4));
        const int pad = static_cast<int>(rng.uniform_int(0, 2));
        const int keff = dil * (k - 1) + 1;
        const std::int64_t h = std::max<std::int64_t>(1, keff - 2 * pad) + rng.uniform_int(0, 4);
        const std::int64_t w = std::max<std::int64_t>(1, keff - 2 * pad) + rng.uniform_int(0, 4);

        auto x = make_tensor<double>({rng.uniform_int(1, 2), cin, h, w});
        auto wt = make_tensor<double>({cout, cin, k, k});
        for (auto& v : x->data) v = rng.uniform(-1.0, 1.0);
        for (auto& v : wt->data) v = rng.uniform(-1.0, 1.0);

        auto dilated = conv2d(x, wt, TensorPtr<double>{}, Conv2dSpec{1, pad, dil, 1});
        auto inflated = conv2d(x, oracles::inflate_kernel(wt, dil), TensorPtr<double>{}, Conv2dSpec{1, pad, 1, 1});
        if (dilated->shape != inflated->shape) return {false, "shape mismatch in atrous equivalence"};
        for (std::size_t j = 0; j < dilated->data.size(); ++j)
            if (dilated->data[j] != inflated->data[j]) ++exact_failures;

        auto xf = make_tensor<float>(x->shape);
        auto wf = make_tensor<float>(wt->shape);
        for (std::size_t j = 0; j < x->data.size(); ++j) xf->data[j] = static_cast<float>(x->data[j]);
        for (std::size_t j = 0; j < wt->data.size(); ++j) wf->data[j] = static_cast<float>(wt->data[j]);
        auto df = conv2d(xf, wf, TensorPtr<float>{}, Conv2dSpec{1, pad, dil, 1});
        auto inf = conv2d(xf, oracles::inflate_kernel(wf, dil), TensorPtr<float>{}, Conv2dSpec{1, pad, 1, 1});
        for (std::size_t j = 0; j < df->data.size(); ++j) {
            const double a = df->data[j], b = inf->data[j];
            const double rel = std::abs(a - b) / (std::abs(a) + std::abs(b) + 1e-30);
            worst_float = std::max(worst_float, rel);
        }
    }
    const bool pass = exact_failures == 0 && worst_float <= 1e-6;
    return {pass, strf("50 cases: %d 64-bit mismatches (exact required), worst 32-bit rel err %.3g (<= 1e-6)",
                       exact_failures, worst_float)};
}

std::pair<bool, std::string> criterion_metric_oracles() {
    Xoshiro256StarStar rng(90210);
    double worst_auc = 0.0, worst_ap = 0.0;
    for (int i = 0; i < 100; ++i) {
        std::vector<double> scores;
        std::vector<std::uint8_t> labels;
        oracles::random_scored_instance(rng, static_cast<std::size_t>(rng.uniform_int(5, 300)),
                                        static_cast<int>(rng.uniform_int(2, 12)), scores, labels);
        std::vector<float> fs(scores.begin(), scores.end());
        const std::vector<double> ds(fs.begin(), fs.end());
        worst_auc = std::max(worst_auc, std::abs(roc_curve(fs, labels).auc - oracles::pairwise_auc(ds, labels)));
        worst_ap = std::max(worst_ap, std::abs(pr_curve(fs, labels).auc - oracles::enumeration_ap(ds, labels)));
    }

    int confusion_mismatches = 0;
    for (int i = 0; i < 100; ++i) {
        const std::int64_t h = rng.uniform_int(1, 48), w = rng.uniform_int(1, 48);
        LabelMap pred{1, h, w, {}}, gt{1, h, w, {}};
        pred.v.resize(static_cast<std::size_t>(h * w));
        gt.v.resize(pred.v.size());
        for (std::size_t j = 0; j < pred.v.size(); ++j) {
            pred.v[j] = rng.next_double() < 0.5 ? 1 : 0;
            gt.v[j] = rng.next_double() < 0.5 ? 1 : 0;
        }
        const ConfusionCounts c = confusion_counts(pred, gt);
        const oracles::Confusion o = oracles::confusion_oracle(pred.v, gt.v, h, w);
        if (c.tp != static_cast<std::uint64_t>(o.tp) || c.fp != static_cast<std::uint64_t>(o.fp) ||
            c.fn != static_cast<std::uint64_t>(o.fn) || c.tn != static_cast<std::uint64_t>(o.tn))
            ++confusion_mismatches;
    }

    const std::vector<float> ws{0.1f, 0.4f, 0.35f, 0.8f};
    const std::vector<std::uint8_t> wl{0, 0, 1, 1};
    const double worked_auc = roc_curve(ws, wl).auc;
    const double worked_ap = pr_curve(ws, wl).auc;
    ConfusionCounts cc;
    cc.tp = 2;
    cc.fp = 2;
    cc.fn = 2;
    cc.tn = 10;
    const double worked_iou = iou_per_class(cc).second;

    const bool pass = worst_auc <= 1e-9 && worst_ap <= 1e-9 && confusion_mismatches == 0 &&
                      std::abs(worked_auc - 0.75) <= 1e-12 && std::abs(worked_ap - 5.0 / 6.0) <= 1e-9 &&
                      std::abs(worked_iou - 1.0 / 3.0) <= 1e-12;
    return {pass,
            strf("100x AUC |diff| %.2g, 100x AP |diff| %.2g, 100x confusion mismatches %d; worked AUC %.4f, "
                 "AP %.4f, tumor IOU %.4f",
                 worst_auc, worst_ap, confusion_mismatches, worked_auc, worked_ap, worked_iou)};
}

std::pair<bool, std::string> criterion_slide_rule() {
    LabelMap m;
    m.n = 1;
    m.h = 432;
    m.w = 576;
    m.v.assign(248832, 0);
    for (int i = 0; i < 1244; ++i) m.v[static_cast<std::size_t>(i)] = 1;
    const bool below = slide_classify(m).predicted;
    m.v[1244] = 1;
    const bool above = slide_classify(m).predicted;

    Xoshiro256StarStar rng(1717);
    int property_failures = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const std::int64_t h = rng.uniform_int(1, 200), w = rng.uniform_int(1, 200);
        const std::uint64_t total = static_cast<std::uint64_t>(h * w);
        const auto at_floor = static_cast<std::uint64_t>(std::floor(0.005 * static_cast<double>(total)));
        for (std::uint64_t k : {at_floor, std::min(at_floor + 1, total)}) {
            LabelMap t;
            t.n = 1;
            t.h = h;
            t.w = w;
            t.v.assign(static_cast<std::size_t>(total), 0);
            for (std::uint64_t i = 0; i < k; ++i) t.v[static_cast<std::size_t>(i)] = 1;
            const bool expected = static_cast<double>(k) > 0.005 * static_cast<double>(total);
            if (slide_classify(t).predicted != expected) ++property_failures;
        }
    }
    const bool pass = !below && above && property_failures == 0;
    return {pass, strf("1244 px -> %s, 1245 px -> %s at 576x432; %d boundary violations over 50 random sizes",
                       below ? "positive" : "negative", above ? "positive" : "negative", property_failures)};
}

std::pair<bool, std::string> criterion_overfit() {
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path dir = work_dir() / "overfit";
    Dataset ds = synth_generate(dir.string(), 8, 1.0, 192, 144, 42, 1.0);

    ModelConfig mc;  // default micro model
    Model<float> model(mc);
    TrainConfig tc;
    tc.epochs = 300;  // full-batch: 1 step per epoch -> 300 steps
    tc.batch_size = 8;
    tc.lr = 0.02f;                                // hot start, poly decay anneals it
    tc.class_weights = std::make_pair(1.0f, 1.6f);  // offsets upsampling's erosion of small blobs
    tc.seed = 42;
    const TrainReport report = fit(model, ds, tc);

    model.set_training(false);
    ConfusionCounts pooled;
    for (const auto& rec : ds.records) {
        const auto pred = predict_mask(model, normalize(rec.image));
        pooled += confusion_counts(pred.mask, mask_to_labels(rec.mask));
    }
    const double acc =
        static_cast<double>(pooled.tp + pooled.tn) / static_cast<double>(pooled.total());
    const double miou = mean_iou(pooled);
    const double elapsed = seconds_since(t0);
    const bool pass = report.steps == 300 && acc >= 0.99 && miou >= 0.95 && elapsed < 600.0;
    return {pass, strf("%d steps: train pixel acc %.4f (>= 0.99), train mean IOU %.4f (>= 0.95), %.0fs (< 600)",
                       report.steps, acc, miou, elapsed)};
}

std::pair<bool, std::string> criterion_heldout() {
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path dir = work_dir() / "heldout";
    Dataset full = synth_generate(dir.string(), 80, 0.48, 192, 144, 42, 0.8);
    Dataset train = full.subset(Split::Train);
    Dataset test = full.subset(Split::Test);
    if (train.records.size() != 64 || test.records.size() != 16)
        return {false, strf("split came out %zu/%zu, expected 64/16", train.records.size(), test.records.size())};

    ModelConfig mc;
    Model<float> model(mc);
    TrainConfig tc;
    tc.epochs = 50;
    tc.batch_size = 4;
    tc.lr = 5e-3f;
    tc.class_weights = std::make_pair(1.0f, 1.3f);
    tc.seed = 42;
    fit(model, train, tc);

    const EvalResult r = evaluate_model(model, test);
    const double auc = r.roc ? r.roc->auc : 0.0;
    const double elapsed = seconds_since(t0);
    const bool pass = r.miou >= 0.80 && auc >= 0.95 && r.slide.accuracy >= 0.90 && elapsed < 2700.0;
    return {pass,
            strf("64 train / 16 test, 50 epochs: test mean IOU %.4f (>= 0.80), pixel ROC AUC %.4f (>= 0.95), "
                 "slide accuracy %.4f (>= 0.90), %.0fs (< 2700)",
                 r.miou, auc, r.slide.accuracy, elapsed)};
}

std::pair<bool, std::string> criterion_determinism() {
    const fs::path root = work_dir() / "determinism";
    const fs::path da = root / "data_a";
    const fs::path db = root / "data_b";
    Dataset a = synth_generate(da.string(), 12, 0.5, 96, 80, 42, 0.75);
    Dataset b = synth_generate(db.string(), 12, 0.5, 96, 80, 42, 0.75);
    std::string why;
    if (!datasets_byte_identical(da, db, why)) return {false, "datasets differ: " + why};

    auto train_once = [&](const Dataset& ds, const std::string& ckpt) {
        ModelConfig mc;
        mc.seed = 42;
        Model<float> model(mc);
        TrainConfig tc;
        tc.epochs = 1;
        tc.batch_size = 4;
        tc.seed = 42;
        tc.checkpoint_path = ckpt;
        return fit(model, ds, tc);
    };
    const fs::path ca = root / "a.bccm";
    const fs::path cb = root / "b.bccm";
    const TrainReport ra = train_once(a, ca.string());
    const TrainReport rb = train_once(b, cb.string());
    const double loss_a = ra.epochs[0].loss, loss_b = rb.epochs[0].loss;
    if (std::abs(loss_a - loss_b) >= 5e-7)
        return {false, strf("epoch-1 losses differ: %.8f vs %.8f", loss_a, loss_b)};
    if (read_bytes(ca) != read_bytes(cb)) return {false, "checkpoints from identical runs differ"};

    // save -> load -> save byte identity plus forward equivalence
    auto [model2, adam2] = load_checkpoint(ca.string());
    const fs::path cc = root / "resaved.bccm";
    save_checkpoint(*model2, &adam2, cc.string());
    if (read_bytes(ca) != read_bytes(cc)) return {false, "save->load->save is not byte-identical"};

    ModelConfig mc;
    mc.seed = 42;
    Model<float> fresh(mc);
    {
        TrainConfig tc;
        tc.epochs = 1;
        tc.batch_size = 4;
        tc.seed = 42;
        fit(fresh, a, tc);
    }
    fresh.set_training(false);
    model2->set_training(false);
    auto x = normalize(a.records[0].image);
    auto y1 = fresh.forward(x);
    auto y2 = model2->forward(x);
    for (std::size_t i = 0; i < y1->data.size(); ++i)
        if (y1->data[i] != y2->data[i]) return {false, "loaded checkpoint is not forward-equivalent"};

    return {true, strf("datasets byte-identical; epoch-1 loss %.6f == %.6f; checkpoint save/load/save "
                       "byte-identical and forward-equivalent",
                       loss_a, loss_b)};
}

std::pair<bool, std::string> criterion_opcount() {
    ModelConfig cfg;
    const OpCountReport rep = count_ops(cfg, 64, 64);

    Model<float> model(cfg);
    model.set_training(false);
    auto x = make_tensor<float>({1, 3, 64, 64});
    for (std::size_t i = 0; i < x->data.size(); ++i) x->data[i] = 0.01f * static_cast<float>(i % 89) - 0.4f;
    macs::enable(true);
    macs::reset();
    model.forward(x);
    const std::uint64_t measured = macs::count();
    macs::enable(false);
    const bool instrumented_ok = measured == static_cast<std::uint64_t>(rep.total_macs);

    const OpCountReport big = count_ops(cfg, 256, 256);
    const SeparableComparisonRow* worked = nullptr;
    for (const auto& row : big.separable_vs_regular)
        if (row.name == "block3.sep1") worked = &row;
    const bool worked_ok = worked && worked->separable_macs == 8'978'432 && worked->regular_macs == 75'497'472 &&
                           std::abs(worked->ratio - (1.0 / 128.0 + 1.0 / 9.0)) <= 1e-12;

    ModelConfig alt = cfg;
    alt.aspp_rates = {2, 3, 5};
    const OpCountReport altrep = count_ops(alt, 64, 64);
    const bool rates_ok = altrep.total_macs == rep.total_macs;

    const bool pass = instrumented_ok && worked_ok && rates_ok;
    return {pass, strf("instrumented %llu vs static %lld MACs at 64x64 (%s); worked ratio %s (8978432 / "
                       "75497472); rate-invariance %s",
                       static_cast<unsigned long long>(measured), static_cast<long long>(rep.total_macs),
                       instrumented_ok ? "equal" : "MISMATCH", worked_ok ? "ok" : "WRONG",
                       rates_ok ? "ok" : "VIOLATED")};
}

std::pair<bool, std::string> criterion_shapes() {
    ModelConfig cfg;
    Model<float> model(cfg);
    model.set_training(false);
    auto x = make_tensor<float>({1, 3, 432, 576});
    for (std::size_t i = 0; i < x->data.size(); ++i) x->data[i] = 0.001f * static_cast<float>(i % 251) - 0.1f;
    const auto features = model.encoder_forward(x);
    const auto logits = model.forward(x);
    const bool pass = logits->shape == Shape{1, 2, 432, 576} && features->shape.h == 27 &&
                      features->shape.w == 36;
    return {pass, strf("forward (1,3,432,576) -> %s; encoder features %lldx%lld (want 27x36)",
                       logits->shape.str().c_str(), static_cast<long long>(features->shape.h),
                       static_cast<long long>(features->shape.w))};
}

std::pair<bool, std::string> criterion_slide_metrics() {
    std::vector<SlideVerdict> verdicts;
    auto add = [&](int count, bool truth, bool predicted) {
        for (int i = 0; i < count; ++i) {
            SlideVerdict v;
            v.truth = truth;
            v.predicted = predicted;
            verdicts.push_back(v);
        }
    };
    add(65, true, true);
    add(55, false, false);
    add(5, false, true);
    const SlideMetrics m = slide_metrics(verdicts);
    const bool pass = std::abs(m.accuracy - 0.960) <= 5e-4 && m.sensitivity &&
                      std::abs(*m.sensitivity - 1.000) <= 5e-4 && m.specificity &&
                      std::abs(*m.specificity - 0.917) <= 5e-4;
    return {pass, strf("65/65 and 55/60 -> accuracy %.4f, sensitivity %.4f, specificity %.4f "
                       "(want 0.960 / 1.000 / 0.917)",
                       m.accuracy, m.sensitivity ? *m.sensitivity : -1.0, m.specificity ? *m.specificity : -1.0)};
}

}  // namespace

int main() {
    struct Entry {
        int id;
        const char* name;
        std::function<std::pair<bool, std::string>()> run;
    };
    const std::vector<Entry> entries = {
        {1, "gradient correctness (central differences, 20 shapes/op)", criterion_gradients},
        {2, "atrous equivalence (dilated == zero-inflated kernel)", criterion_atrous},
        {3, "metric oracles (AUC pairwise, AP enumeration, confusion recount)", criterion_metric_oracles},
        {4, "slide-rule boundary (0.5% strict threshold)", criterion_slide_rule},
        {5, "overfit sanity (8 images, 300 steps)", criterion_overfit},
        {6, "held-out synthetic analogue (64 train / 16 test, 50 epochs)", criterion_heldout},
        {7, "determinism and persistence", criterion_determinism},
        {8, "op-count formulas and instrumentation", criterion_opcount},
        {9, "shape contract (432x576 round trip, 27x36 features)", criterion_shapes},
        {10, "slide metrics worked cohort", criterion_slide_metrics},
    };

    int failures = 0;
    for (const auto& e : entries) {
        bool pass = false;
        std::string detail;
        try {
            auto [p, d] = e.run();
            pass = p;
            detail = d;
        } catch (const std::exception& ex) {
            pass = false;
            detail = std::string("exception: ") + ex.what();
        }
        std::printf("[%s] criterion %d: %s — %s\n", pass ? "PASS" : "FAIL", e.id, e.name, detail.c_str());
        std::fflush(stdout);
        if (!pass) ++failures;
    }
    if (failures == 0) {
        std::printf("all 10 acceptance criteria passed\n");
        return 0;
    }
    std::printf("%d acceptance criteria FAILED\n", failures);
    return 1;
}
