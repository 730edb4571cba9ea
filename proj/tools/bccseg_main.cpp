#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "bccseg/checkpoint.hpp"
#include "bccseg/dataset.hpp"
#include "bccseg/evaluate.hpp"
#include "bccseg/metrics.hpp"
#include "bccseg/model.hpp"
#include "bccseg/opcount.hpp"
#include "bccseg/synth.hpp"
#include "bccseg/train.hpp"

namespace {

namespace fs = std::filesystem;
using namespace bccseg;

struct ModelFlags {
    int stem_channels = 16;
    std::vector<int> block_channels{32, 64, 128};
    int middle_blocks = 2;
    int aspp_channels = 64;
    std::vector<int> aspp_rates{6, 12, 18};
};

void add_model_flags(CLI::App* cmd, ModelFlags& mf) {
    cmd->add_option("--stem-channels", mf.stem_channels, "Stem output channels")->capture_default_str();
    cmd->add_option("--block-channels", mf.block_channels, "Encoder stage widths, 1-3 comma-separated values")
        ->delimiter(',')
        ->capture_default_str();
    cmd->add_option("--middle-blocks", mf.middle_blocks, "Stride-1 residual blocks after the down stack")
        ->capture_default_str();
    cmd->add_option("--aspp-channels", mf.aspp_channels, "Channels per ASPP branch")->capture_default_str();
    cmd->add_option("--aspp-rates", mf.aspp_rates, "Three increasing atrous rates")
        ->delimiter(',')
        ->capture_default_str();
}

ModelConfig to_model_config(const ModelFlags& mf, std::uint64_t seed) {
    ModelConfig cfg;
    cfg.stem_channels = mf.stem_channels;
    cfg.block_channels = mf.block_channels;
    cfg.middle_blocks = mf.middle_blocks;
    cfg.aspp_channels = mf.aspp_channels;
    if (mf.aspp_rates.size() != 3) throw std::invalid_argument("--aspp-rates needs exactly three values");
    std::copy(mf.aspp_rates.begin(), mf.aspp_rates.end(), cfg.aspp_rates.begin());
    cfg.seed = seed;
    cfg.validate();
    return cfg;
}

void require_input_path(const std::string& path, const char* what) {
    if (!fs::exists(path)) throw std::invalid_argument(std::string(what) + " not found: " + path);
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write: " + path);
    out << text;
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::optional<std::pair<float, float>> parse_class_weights(const std::vector<double>& raw) {
    if (raw.empty()) return std::nullopt;
    if (raw.size() != 2) throw std::invalid_argument("--class-weights needs exactly two values: w0,w1");
    if (!(raw[0] > 0.0 && raw[1] > 0.0)) throw std::invalid_argument("--class-weights must be positive");
    return std::make_pair(static_cast<float>(raw[0]), static_cast<float>(raw[1]));
}

int round_up_to_16(int v) { return std::max(16, ((v + 8) / 16) * 16); }

// ---- synth ----------------------------------------------------------------

struct SynthArgs {
    std::string out;
    int count = 0;
    double positive_fraction = 0.48;
    int width = 192;
    int height = 144;
    std::uint64_t seed = 42;
    double train_fraction = 0.8;
};

int cmd_synth(const SynthArgs& a) {
    Dataset ds = synth_generate(a.out, a.count, a.positive_fraction, a.width, a.height, a.seed,
                                a.train_fraction);
    std::size_t n_pos = 0;
    std::size_t n_train = 0;
    for (const auto& r : ds.records) {
        n_pos += r.label ? 1 : 0;
        n_train += r.split == Split::Train ? 1 : 0;
    }
    std::printf("wrote %zu records to %s (%zu positive, %zu train / %zu test)\n", ds.records.size(),
                a.out.c_str(), n_pos, n_train, ds.records.size() - n_train);
    return 0;
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
    std::string data;
    std::string checkpoint;
    int epochs = 30;
    int batch = 4;
    double lr = 1e-3;
    std::vector<double> class_weights;
    std::uint64_t seed = 42;
    std::string log;
    int log_every = 1;
    ModelFlags model;
};

int cmd_train(const TrainArgs& a) {
    require_input_path(a.data, "--data directory");
    if (a.epochs < 1) throw std::invalid_argument("--epochs must be >= 1");
    if (a.batch < 1) throw std::invalid_argument("--batch must be >= 1");
    if (!(a.lr > 0.0)) throw std::invalid_argument("--lr must be > 0");
    auto weights = parse_class_weights(a.class_weights);
    ModelConfig mc = to_model_config(a.model, a.seed);

    Dataset full = load_dataset(a.data);
    Dataset train = full.subset(Split::Train);
    if (train.records.empty()) throw std::invalid_argument("no records with split=train in " + a.data);

    Model<float> model(mc);
    TrainConfig tc;
    tc.epochs = a.epochs;
    tc.batch_size = a.batch;
    tc.lr = static_cast<float>(a.lr);
    tc.class_weights = weights;
    tc.seed = a.seed;
    tc.checkpoint_path = a.checkpoint;
    tc.log_path = a.log.empty() ? a.checkpoint + ".log.csv" : a.log;
    tc.log_every = a.log_every;

    std::printf("training on %zu records (%lld parameters)\n", train.records.size(),
                static_cast<long long>(model.parameter_count()));
    TrainReport report = fit(model, train, tc);
    for (std::size_t e = 0; e < report.epochs.size(); ++e) {
        const auto& st = report.epochs[e];
        std::printf("epoch %zu/%d  loss=%.6f  pixel_acc=%.4f  (%.1fs)\n", e + 1, a.epochs, st.loss,
                    st.pixel_accuracy, st.seconds);
        std::fflush(stdout);
    }
    std::printf("checkpoint: %s\n", a.checkpoint.c_str());
    return 0;
}

// ---- predict ---------------------------------------------------------------

struct PredictArgs {
    std::string checkpoint;
    std::string input;
    std::string mask_out;
    std::string overlay_out;
};

int cmd_predict(const PredictArgs& a) {
    require_input_path(a.checkpoint, "--checkpoint file");
    require_input_path(a.input, "--input image");

    auto [model, adam] = load_checkpoint(a.checkpoint);
    (void)adam;
    Image input = read_png(a.input);
    if (input.channels != 3) throw std::invalid_argument("--input must be an RGB image: " + a.input);

    // The network needs dims divisible by 16; odd sizes are resized for
    // inference and the mask is mapped back to the input geometry.
    Image net_input = input;
    const int net_h = round_up_to_16(input.h);
    const int net_w = round_up_to_16(input.w);
    if (net_h != input.h || net_w != input.w) {
        ImageRecord tmp;
        tmp.image = input;
        tmp.mask = Image(input.h, input.w, 1);
        net_input = resize_record(tmp, net_h, net_w).image;
    }

    model->set_training(false);
    auto pred = predict_mask(*model, normalize(net_input));

    LabelMap mask = pred.mask;
    if (net_h != input.h || net_w != input.w) {
        const auto ys = detail::nearest_index(net_h, input.h);
        const auto xs = detail::nearest_index(net_w, input.w);
        LabelMap back;
        back.n = 1;
        back.h = input.h;
        back.w = input.w;
        back.v.resize(static_cast<std::size_t>(input.h) * input.w);
        for (int y = 0; y < input.h; ++y)
            for (int x = 0; x < input.w; ++x)
                back.v[static_cast<std::size_t>(y) * input.w + x] =
                    mask.v[static_cast<std::size_t>(ys[y]) * net_w + xs[x]];
        mask = std::move(back);
    }

    write_png(a.mask_out, labels_to_mask(mask));
    if (!a.overlay_out.empty()) {
        Image overlay = input;
        for (int y = 0; y < input.h; ++y)
            for (int x = 0; x < input.w; ++x)
                if (mask.v[static_cast<std::size_t>(y) * input.w + x]) {
                    // Pure red at 50% alpha over the original pixel.
                    overlay.at(y, x, 0) = static_cast<std::uint8_t>((overlay.at(y, x, 0) + 255 + 1) / 2);
                    overlay.at(y, x, 1) = static_cast<std::uint8_t>(overlay.at(y, x, 1) / 2);
                    overlay.at(y, x, 2) = static_cast<std::uint8_t>(overlay.at(y, x, 2) / 2);
                }
        write_png(a.overlay_out, overlay);
    }

    const SlideVerdict verdict = slide_classify(mask);
    std::printf("%s: %llu/%llu predicted tumor pixels -> %s\n", a.input.c_str(),
                static_cast<unsigned long long>(verdict.positive_pixel_count),
                static_cast<unsigned long long>(verdict.total_pixels),
                verdict.predicted ? "positive" : "negative");
    return 0;
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
    std::string checkpoint;
    std::string data;
    std::string report;
    std::string roc;
    std::string pr;
    std::string iso_f1;
    double threshold_fraction = 0.005;
    int threads = 1;
    double prob_threshold = -1.0;  // <0: argmax
};

void write_iso_f1_csv(const std::string& path) {
    std::vector<double> grid;
    for (int i = 1; i <= 100; ++i) grid.push_back(i / 100.0);
    std::string text = "f1,recall,precision\n";
    for (double level : {0.2, 0.4, 0.6, 0.8})
        for (auto [r, p] : iso_f1_points(level, grid)) {
            char buf[96];
            std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g\n", level, r, p);
            text += buf;
        }
    write_text_file(path, text);
}

int cmd_eval(const EvalArgs& a) {
    require_input_path(a.checkpoint, "--checkpoint file");
    require_input_path(a.data, "--data directory");
    if (!(a.threshold_fraction >= 0.0 && a.threshold_fraction <= 1.0))
        throw std::invalid_argument("--threshold-fraction must be in [0, 1]");
    if (a.threads < 1) throw std::invalid_argument("--threads must be >= 1");

    auto [model, adam] = load_checkpoint(a.checkpoint);
    (void)adam;
    Dataset test = load_dataset(a.data).subset(Split::Test);
    if (test.records.empty()) throw std::invalid_argument("no records with split=test in " + a.data);

    EvalConfig cfg;
    cfg.threshold_fraction = a.threshold_fraction;
    cfg.threads = a.threads;
    if (a.prob_threshold >= 0.0) cfg.prob_threshold = a.prob_threshold;

    EvalResult result = evaluate_model(*model, test, cfg);
    write_text_file(a.report, report_json(result).dump(2) + "\n");
    if (result.roc)
        write_curve_csv(a.roc, *result.roc);
    else
        write_text_file(a.roc, "threshold,fpr,tpr\n");
    if (result.pr)
        write_curve_csv(a.pr, *result.pr);
    else
        write_text_file(a.pr, "threshold,recall,precision\n");
    if (!a.iso_f1.empty()) write_iso_f1_csv(a.iso_f1);

    std::printf("evaluated %llu images / %llu pixels\n", static_cast<unsigned long long>(result.n_images),
                static_cast<unsigned long long>(result.n_pixels));
    std::printf("mean_iou=%.4f", result.miou);
    if (result.roc) std::printf("  roc_auc=%.4f", result.roc->auc);
    if (result.pr) std::printf("  pr_auc=%.4f", result.pr->auc);
    std::printf("  slide_accuracy=%.4f\n", result.slide.accuracy);
    return 0;
}

// ---- metrics ----------------------------------------------------------------

struct MetricsArgs {
    std::string pred_dir;
    std::string gt_dir;
    std::string report;
    std::string roc;
    std::string pr;
    double threshold_fraction = 0.005;
};

int cmd_metrics(const MetricsArgs& a) {
    require_input_path(a.pred_dir, "--pred-dir");
    require_input_path(a.gt_dir, "--gt-dir");

    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(a.gt_dir))
        if (entry.is_regular_file() && entry.path().extension() == ".png")
            names.push_back(entry.path().filename().string());
    std::sort(names.begin(), names.end());
    if (names.empty()) throw std::invalid_argument("no .png masks in " + a.gt_dir);

    std::vector<MaskPair> pairs;
    for (const auto& name : names) {
        const std::string gt_path = (fs::path(a.gt_dir) / name).string();
        const std::string pred_path = (fs::path(a.pred_dir) / name).string();
        require_input_path(pred_path, "prediction mask");
        Image gt = read_png(gt_path);
        Image pred = read_png(pred_path);
        if (gt.channels != 1 || pred.channels != 1)
            throw std::invalid_argument("masks must be grayscale: " + name);
        if (gt.h != pred.h || gt.w != pred.w)
            throw std::invalid_argument("mask dims differ for " + name);
        validate_mask_binary(gt, gt_path);
        validate_mask_binary(pred, pred_path);
        MaskPair p;
        p.id = fs::path(name).stem().string();
        p.pred = mask_to_labels(pred);
        p.gt = mask_to_labels(gt);
        p.truth = mask_has_positive(gt);
        pairs.push_back(std::move(p));
    }

    EvalResult result = evaluate_masks(pairs, a.threshold_fraction);
    write_text_file(a.report, report_json(result).dump(2) + "\n");
    if (!a.roc.empty() && result.roc) write_curve_csv(a.roc, *result.roc);
    if (!a.pr.empty() && result.pr) write_curve_csv(a.pr, *result.pr);
    std::printf("compared %zu mask pairs: mean_iou=%.4f slide_accuracy=%.4f\n", pairs.size(), result.miou,
                result.slide.accuracy);
    return 0;
}

// ---- ops ---------------------------------------------------------------------

struct OpsArgs {
    int width = 0;
    int height = 0;
    std::string json;
    ModelFlags model;
};

int cmd_ops(const OpsArgs& a) {
    ModelConfig mc = to_model_config(a.model, 42);
    OpCountReport report = count_ops(mc, a.height, a.width);
    std::fputs(report.table().c_str(), stdout);
    if (!a.json.empty()) write_text_file(a.json, report.to_json().dump(2) + "\n");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Frozen-section tumor segmentation pipeline: synthetic data, training, inference, evaluation"};
    app.require_subcommand(1);

    SynthArgs synth_args;
    auto* synth = app.add_subcommand("synth", "Generate a deterministic synthetic dataset");
    synth->add_option("--out", synth_args.out, "Output dataset directory")->required();
    synth->add_option("--count", synth_args.count, "Number of records")->required();
    synth->add_option("--positive-fraction", synth_args.positive_fraction, "Fraction of tumor-positive records")
        ->capture_default_str();
    synth->add_option("--width", synth_args.width, "Image width (multiple of 16)")->capture_default_str();
    synth->add_option("--height", synth_args.height, "Image height (multiple of 16)")->capture_default_str();
    synth->add_option("--seed", synth_args.seed, "RNG seed")->capture_default_str();
    synth->add_option("--train-fraction", synth_args.train_fraction, "Stratified train split fraction")
        ->capture_default_str();

    TrainArgs train_args;
    auto* train = app.add_subcommand("train", "Train on the train split of a dataset");
    train->add_option("--data", train_args.data, "Dataset directory")->required();
    train->add_option("--checkpoint", train_args.checkpoint, "Checkpoint output path")->required();
    train->add_option("--epochs", train_args.epochs, "Training epochs")->capture_default_str();
    train->add_option("--batch", train_args.batch, "Batch size")->capture_default_str();
    train->add_option("--lr", train_args.lr, "Initial Adam learning rate (poly decay)")->capture_default_str();
    train->add_option("--class-weights", train_args.class_weights, "Loss weights w0,w1")->delimiter(',');
    train->add_option("--seed", train_args.seed, "RNG seed (init + shuffling)")->capture_default_str();
    train->add_option("--log", train_args.log, "Step log CSV path (default: <checkpoint>.log.csv)");
    train->add_option("--log-every", train_args.log_every, "Log every N steps")->capture_default_str();
    add_model_flags(train, train_args.model);

    PredictArgs predict_args;
    auto* predict = app.add_subcommand("predict", "Segment one image with a trained checkpoint");
    predict->add_option("--checkpoint", predict_args.checkpoint, "Checkpoint path")->required();
    predict->add_option("--input", predict_args.input, "Input RGB PNG")->required();
    predict->add_option("--mask-out", predict_args.mask_out, "Binary mask PNG output (white tumor on black)")
        ->required();
    predict->add_option("--overlay-out", predict_args.overlay_out, "Optional red-tinted overlay PNG");

    EvalArgs eval_args;
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
    eval->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint path")->required();
    eval->add_option("--data", eval_args.data, "Dataset directory")->required();
    eval->add_option("--report", eval_args.report, "Summary JSON output")->required();
    eval->add_option("--roc", eval_args.roc, "ROC curve CSV output")->required();
    eval->add_option("--pr", eval_args.pr, "PR curve CSV output")->required();
    eval->add_option("--iso-f1", eval_args.iso_f1, "Optional iso-F1 reference CSV output");
    eval->add_option("--threshold-fraction", eval_args.threshold_fraction, "Slide-positive pixel fraction")
        ->capture_default_str();
    eval->add_option("--threads", eval_args.threads, "Per-image evaluation threads")->capture_default_str();
    eval->add_option("--prob-threshold", eval_args.prob_threshold,
                     "Mask = p_tumor > this instead of argmax (argmax when unset)");

    MetricsArgs metrics_args;
    auto* metrics = app.add_subcommand("metrics", "Evaluate externally produced masks against ground truth");
    metrics->add_option("--pred-dir", metrics_args.pred_dir, "Directory of predicted masks")->required();
    metrics->add_option("--gt-dir", metrics_args.gt_dir, "Directory of ground-truth masks")->required();
    metrics->add_option("--report", metrics_args.report, "Summary JSON output")->required();
    metrics->add_option("--roc", metrics_args.roc, "Optional ROC CSV output");
    metrics->add_option("--pr", metrics_args.pr, "Optional PR CSV output");
    metrics->add_option("--threshold-fraction", metrics_args.threshold_fraction, "Slide-positive pixel fraction")
        ->capture_default_str();

    OpsArgs ops_args;
    auto* ops = app.add_subcommand("ops", "Per-layer parameter and MAC report");
    ops->add_option("--width", ops_args.width, "Input width (multiple of 16)")->required();
    ops->add_option("--height", ops_args.height, "Input height (multiple of 16)")->required();
    ops->add_option("--json", ops_args.json, "Optional JSON output path");
    add_model_flags(ops, ops_args.model);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (synth->parsed()) return cmd_synth(synth_args);
        if (train->parsed()) return cmd_train(train_args);
        if (predict->parsed()) return cmd_predict(predict_args);
        if (eval->parsed()) return cmd_eval(eval_args);
        if (metrics->parsed()) return cmd_metrics(metrics_args);
        if (ops->parsed()) return cmd_ops(ops_args);
    } catch (const DatasetError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.kind() == DatasetError::Kind::Io ? 2 : 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
