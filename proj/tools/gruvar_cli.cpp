#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gruvar/cells.hpp"
#include "gruvar/data.hpp"
#include "gruvar/gradcheck.hpp"
#include "gruvar/parallel.hpp"
#include "gruvar/serialize.hpp"
#include "gruvar/train.hpp"

namespace fs = std::filesystem;
using namespace gruvar;

namespace {

constexpr int kExitGradcheckFail = 1;
constexpr int kExitBadConfig = 2;
constexpr int kExitMissingData = 3;
constexpr int kExitModelMismatch = 4;

const std::map<std::string, GateVariant> kVariantByName = {
    {"gru0", GateVariant::Full},
    {"gru1", GateVariant::StateBias},
    {"gru2", GateVariant::StateOnly},
    {"gru3", GateVariant::BiasOnly},
};

struct VariantChoice {
    CellKind kind = CellKind::Gru;
    GateVariant variant = GateVariant::Full;
};

VariantChoice parse_variant(const std::string& name) {
    if (name == "rnn") return {CellKind::Rnn, GateVariant::Full};
    if (name == "lstm") return {CellKind::Lstm, GateVariant::Full};
    const auto it = kVariantByName.find(name);
    if (it == kVariantByName.end()) {
        throw CLI::ValidationError("--variant", "unknown variant '" + name + "'");
    }
    return {CellKind::Gru, it->second};
}

std::string variant_cli_name(CellKind kind, GateVariant v) {
    if (kind == CellKind::Rnn) return "rnn";
    if (kind == CellKind::Lstm) return "lstm";
    return variant_name(v);
}

Task parse_task(const std::string& name) {
    if (name == "mnist-pixel") return Task::MnistPixel;
    if (name == "mnist-row") return Task::MnistRow;
    if (name == "reviews") return Task::Reviews;
    throw CLI::ValidationError("--task", "unknown task '" + name + "'");
}

// Resolves a conventional file name inside --data-dir, accepting either the
// plain or the .gz spelling.
std::string find_data_file(const std::string& dir, const std::string& stem) {
    for (const char* suffix : {"", ".gz"}) {
        const fs::path p = fs::path(dir) / (stem + suffix);
        if (fs::exists(p)) return p.string();
    }
    throw DataError("cannot find " + stem + "[.gz] under " + dir);
}

struct DataOptions {
    std::string data_dir;
    std::string train_images, train_labels, test_images, test_labels;
    std::string train_file, test_file;  // reviews
    std::size_t vocab = 20000;
    std::size_t maxlen = 80;
    std::size_t train_limit = 0;
    std::size_t test_limit = 0;
};

void add_data_options(CLI::App* cmd, DataOptions& opt, bool with_train) {
    cmd->add_option("--data-dir", opt.data_dir,
                    "Directory with MNIST idx files under conventional names");
    if (with_train) {
        cmd->add_option("--train-images", opt.train_images, "MNIST train image idx file");
        cmd->add_option("--train-labels", opt.train_labels, "MNIST train label idx file");
        cmd->add_option("--train-file", opt.train_file, "Token review training file");
        cmd->add_option("--train-limit", opt.train_limit,
                        "Use only the first N training samples");
    }
    cmd->add_option("--test-images", opt.test_images, "MNIST test image idx file");
    cmd->add_option("--test-labels", opt.test_labels, "MNIST test label idx file");
    cmd->add_option("--test-file", opt.test_file, "Token review test file");
    cmd->add_option("--test-limit", opt.test_limit, "Use only the first N test samples");
    cmd->add_option("--vocab", opt.vocab, "Review vocabulary size");
    cmd->add_option("--maxlen", opt.maxlen, "Review sequence length");
}

Dataset load_split(Task task, const DataOptions& opt, bool train_split) {
    Dataset d;
    d.task = task;
    if (task == Task::Reviews) {
        const std::string path = train_split ? opt.train_file : opt.test_file;
        if (path.empty()) {
            throw DataError(std::string("no ") + (train_split ? "--train-file" : "--test-file") +
                            " given for the reviews task");
        }
        d.reviews = load_token_reviews(path, opt.vocab, opt.maxlen);
    } else {
        std::string images = train_split ? opt.train_images : opt.test_images;
        std::string labels = train_split ? opt.train_labels : opt.test_labels;
        if (images.empty() || labels.empty()) {
            if (opt.data_dir.empty()) {
                throw DataError("no MNIST files given: use --data-dir or explicit paths");
            }
            images = find_data_file(opt.data_dir, train_split ? "train-images-idx3-ubyte"
                                                              : "t10k-images-idx3-ubyte");
            labels = find_data_file(opt.data_dir, train_split ? "train-labels-idx1-ubyte"
                                                              : "t10k-labels-idx1-ubyte");
        }
        d.images = load_mnist_idx(images, labels);
    }
    d.truncate(train_split ? opt.train_limit : opt.test_limit);
    return d;
}

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&now, &tm_utc);
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

// ---- params ----

int cmd_params(std::size_t hidden, std::size_t input) {
    const CellDims dims{hidden, input};
    std::printf("n=%zu m=%zu\n", hidden, input);
    std::printf("%-6s %10s\n", "cell", "params");
    std::printf("%-6s %10zu\n", "rnn", param_count(CellKind::Rnn, std::nullopt, dims));
    std::printf("%-6s %10zu\n", "lstm", param_count(CellKind::Lstm, std::nullopt, dims));
    for (const auto& [name, variant] : kVariantByName) {
        std::printf("%-6s %10zu\n", name.c_str(), param_count(CellKind::Gru, variant, dims));
    }
    return 0;
}

// ---- train ----

struct TrainCliOptions {
    std::string task_name = "mnist-row";
    std::string variant_name = "gru0";
    std::string activation = "relu";
    std::string out_dir = "run";
    TrainConfig cfg;
    DataOptions data;
    double clip_norm = 5.0;
    bool no_clip = false;
    std::size_t embed_dim = 128;
    int threads = 0;
};

int run_train(const TrainCliOptions& opt, const CLI::App* cmd) {
    const Task task = parse_task(opt.task_name);
    const VariantChoice choice = parse_variant(opt.variant_name);

    TrainConfig cfg = opt.cfg;
    cfg.cell_kind = choice.kind;
    cfg.variant = choice.variant;
    cfg.activation = opt.activation == "tanh" ? Activation::Tanh : Activation::Relu;
    cfg.loss_kind = task == Task::Reviews ? LossKind::BinaryCe : LossKind::CategoricalCe;
    cfg.clip_norm = opt.no_clip ? std::nullopt : std::optional<double>(opt.clip_norm);

    // Table-driven defaults: hidden 100 / epochs 100 (pixel), 50 (row);
    // hidden 128 / epochs 100 (reviews). Explicit flags win.
    if (cmd->count("--hidden") == 0) {
        cfg.hidden = task == Task::Reviews ? 128 : 100;
    }
    if (cmd->count("--epochs") == 0) {
        cfg.epochs = task == Task::MnistRow ? 50 : 100;
    }

    if (opt.threads > 0) set_max_threads(opt.threads);

    const Dataset train = load_split(task, opt.data, true);
    const Dataset test = load_split(task, opt.data, false);

    std::size_t input_dim = 0;
    std::size_t classes = 10;
    std::optional<std::pair<std::size_t, std::size_t>> embedding;
    switch (task) {
        case Task::MnistPixel: input_dim = 1; break;
        case Task::MnistRow: input_dim = 28; break;
        case Task::Reviews:
            input_dim = opt.embed_dim;
            classes = 1;
            embedding = std::make_pair(opt.data.vocab, opt.embed_dim);
            break;
    }

    Model model = make_model(cfg, input_dim, classes, embedding);

    fs::create_directories(opt.out_dir);
    const fs::path csv_path = fs::path(opt.out_dir) / "metrics.csv";
    const fs::path model_path = fs::path(opt.out_dir) / "model.bin";
    const fs::path manifest_path = fs::path(opt.out_dir) / "manifest";

    const std::string started = utc_timestamp();

    std::ofstream csv(csv_path);
    if (!csv) throw DataError("cannot write " + csv_path.string());
    csv << metrics_csv_header() << '\n';
    run_training(cfg, model, train, test, [&](const MetricsRecord& rec) {
        csv << metrics_csv_row(rec) << '\n';
        csv.flush();
        std::printf("epoch %3zu %-5s loss %.6f acc %.4f lr %.3e (%.2fs)\n", rec.epoch,
                    split_name(rec.split).c_str(), rec.loss, rec.accuracy, rec.lr,
                    rec.wall_seconds);
        std::fflush(stdout);
    });

    save_model(model, model_path.string());

    const CellDims dims = cell_dims(model.cell);
    std::vector<std::pair<std::string, std::string>> manifest;
    manifest.emplace_back("library_version", kLibraryVersion);
    manifest.emplace_back("started_utc", started);
    manifest.emplace_back("task", task_name(task));
    manifest.emplace_back("variant", variant_cli_name(cfg.cell_kind, cfg.variant));
    manifest.emplace_back("hidden", std::to_string(cfg.hidden));
    manifest.emplace_back("input_dim", std::to_string(dims.input));
    manifest.emplace_back("classes", std::to_string(classes));
    manifest.emplace_back("activation", activation_name(cfg.activation));
    manifest.emplace_back("loss", loss_kind_name(cfg.loss_kind));
    manifest.emplace_back("base_lr", format_double(cfg.base_lr));
    manifest.emplace_back("epochs", std::to_string(cfg.epochs));
    manifest.emplace_back("batch_size", std::to_string(cfg.batch_size));
    manifest.emplace_back("dropout_rate", format_double(cfg.dropout_rate));
    manifest.emplace_back("seed", std::to_string(cfg.seed));
    manifest.emplace_back("clip_norm", cfg.clip_norm ? format_double(*cfg.clip_norm) : "none");
    manifest.emplace_back("optimizer", "rmsprop");
    manifest.emplace_back("rmsprop_rho", "0.9");
    manifest.emplace_back("rmsprop_epsilon", "1e-08");
    manifest.emplace_back("lr_decay", "eta0*exp(-prev_epoch_mean_train_loss)");
    manifest.emplace_back("init_input_weights", "glorot-uniform");
    manifest.emplace_back("init_recurrent_weights", "orthogonal");
    manifest.emplace_back("init_biases", "zeros");
    manifest.emplace_back("h0", "zeros");
    manifest.emplace_back("relu_subgradient_at_zero", "0");
    manifest.emplace_back("dropout_placement", "final-hidden-state-before-head");
    if (task == Task::Reviews) {
        manifest.emplace_back("embedding", "trainable");
        manifest.emplace_back("init_embedding", "uniform(-0.05,0.05)");
        manifest.emplace_back("vocab", std::to_string(opt.data.vocab));
        manifest.emplace_back("maxlen", std::to_string(opt.data.maxlen));
        manifest.emplace_back("pad_id", std::to_string(kReviewPadId));
        manifest.emplace_back("oov_id", std::to_string(kReviewOovId));
        manifest.emplace_back("train_file", opt.data.train_file);
        manifest.emplace_back("test_file", opt.data.test_file);
    } else {
        manifest.emplace_back("pixel_scale", "1/255");
        manifest.emplace_back("data_dir", opt.data.data_dir);
        manifest.emplace_back("train_images", opt.data.train_images);
        manifest.emplace_back("train_labels", opt.data.train_labels);
        manifest.emplace_back("test_images", opt.data.test_images);
        manifest.emplace_back("test_labels", opt.data.test_labels);
    }
    manifest.emplace_back("train_limit", std::to_string(opt.data.train_limit));
    manifest.emplace_back("test_limit", std::to_string(opt.data.test_limit));
    manifest.emplace_back("train_samples", std::to_string(train.size()));
    manifest.emplace_back("test_samples", std::to_string(test.size()));
    manifest.emplace_back(
        "cell_params",
        std::to_string(param_count(cfg.cell_kind,
                                   cfg.cell_kind == CellKind::Gru
                                       ? std::optional<GateVariant>(cfg.variant)
                                       : std::nullopt,
                                   dims)));
    manifest.emplace_back("head_params", std::to_string(model.head.w_out.data.size() +
                                                        model.head.b_out.size()));
    if (model.embedding) {
        manifest.emplace_back("embedding_params",
                              std::to_string(model.embedding->rows.data.size()));
    }
    manifest.emplace_back("total_params", std::to_string(model_param_total(model)));

    std::ofstream mf(manifest_path);
    if (!mf) throw DataError("cannot write " + manifest_path.string());
    mf << format_manifest(manifest);

    std::printf("wrote %s, %s, %s\n", csv_path.string().c_str(), model_path.string().c_str(),
                manifest_path.string().c_str());
    return 0;
}

// ---- eval ----

int run_eval(const std::string& model_path, const std::string& task_str, const DataOptions& data,
             int threads) {
    if (threads > 0) set_max_threads(threads);
    const Task task = parse_task(task_str);
    Model model;
    try {
        model = load_model(model_path);
    } catch (const ModelIoError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitModelMismatch;
    }

    const CellDims dims = cell_dims(model.cell);
    std::size_t want_input = 0;
    switch (task) {
        case Task::MnistPixel: want_input = 1; break;
        case Task::MnistRow: want_input = 28; break;
        case Task::Reviews: want_input = model.embedding ? model.embedding->dim : 0; break;
    }
    const bool loss_matches = (task == Task::Reviews) == (model.loss_kind == LossKind::BinaryCe);
    const bool embedding_matches = (task == Task::Reviews) == model.embedding.has_value();
    if (dims.input != want_input || !loss_matches || !embedding_matches) {
        std::fprintf(stderr,
                     "error: model (input dim %zu, %s%s) does not fit task %s (input dim %zu)\n",
                     dims.input, loss_kind_name(model.loss_kind).c_str(),
                     model.embedding ? ", embedding" : "", task_name(task).c_str(), want_input);
        return kExitModelMismatch;
    }

    const Dataset test = load_split(task, data, false);
    const MetricsRecord rec = evaluate(model, test);
    std::printf("loss=%s accuracy=%s samples=%zu\n", format_double(rec.loss).c_str(),
                format_double(rec.accuracy).c_str(), test.size());
    return 0;
}

// ---- gradcheck ----

struct GradcheckOptions {
    std::string variant;  // empty = all
    bool only = false;
    std::size_t seeds = 20;
    double tol = 1e-5;
    bool corrupt = false;  // testing aid: injects an error into one gradient
    int threads = 0;
};

int run_gradcheck(const GradcheckOptions& opt) {
    if (opt.threads > 0) set_max_threads(opt.threads);

    std::vector<VariantChoice> cells;
    if (!opt.variant.empty()) {
        cells.push_back(parse_variant(opt.variant));
    } else {
        cells = {{CellKind::Rnn, GateVariant::Full}, {CellKind::Lstm, GateVariant::Full},
                 {CellKind::Gru, GateVariant::Full}, {CellKind::Gru, GateVariant::StateBias},
                 {CellKind::Gru, GateVariant::StateOnly}, {CellKind::Gru, GateVariant::BiasOnly}};
    }

    std::vector<CellCheckSpec> specs;
    for (const VariantChoice& cell : cells) {
        for (const Activation g : {Activation::Tanh, Activation::Relu}) {
            for (std::size_t s = 0; s < opt.seeds; ++s) {
                CellCheckSpec spec;
                spec.kind = cell.kind;
                spec.variant = cell.variant;
                spec.activation = g;
                spec.seed = s;
                spec.tolerance = opt.tol;
                spec.dims = CellDims{2 + s % 7, 1 + s % 5};  // n <= 8, m <= 5
                spec.timesteps = 2 + s % 5;                  // T <= 6
                specs.push_back(spec);
                if (s < 3) {
                    CellCheckSpec emb = spec;
                    emb.embedding_vocab = 9;
                    specs.push_back(emb);
                }
            }
        }
    }
    if (opt.corrupt && !specs.empty()) {
        specs.front().inject_error = 1e-2;
    }

    std::vector<GradCheckReport> reports(specs.size());
    parallel_for(specs.size(), [&](std::size_t i) { reports[i] = check_cell_gradients(specs[i]); });

    int failures = 0;
    for (const GradCheckReport& report : reports) {
        double worst = 0.0;
        for (const auto& t : report.tensors) worst = std::max(worst, t.max_rel_err);
        if (report.pass) {
            std::printf("ok   %-24s max_rel %.3e\n", report.label.c_str(), worst);
        } else {
            ++failures;
            std::printf("FAIL %-24s max_rel %.3e\n", report.label.c_str(), worst);
            for (const auto& t : report.tensors) {
                if (t.max_rel_err > report.tolerance) {
                    std::printf("     tensor %-10s rel %.3e abs %.3e at %zu\n", t.name.c_str(),
                                t.max_rel_err, t.max_abs_err, t.worst_index);
                }
            }
        }
    }
    std::printf("%zu checks, %d failures (tolerance %g)\n", specs.size(), failures, opt.tol);
    return failures == 0 ? 0 : kExitGradcheckFail;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Gate-variant GRU/LSTM/RNN training toolkit"};
    app.require_subcommand(1);
    // ini config with a [train] section; command-line flags override file keys
    app.set_config("--config", "", "Config file (ini, [train] section)");
    app.allow_config_extras(false);

    // params
    auto* params = app.add_subcommand("params", "Print per-cell trainable parameter counts");
    std::size_t p_hidden = 100, p_input = 28;
    params->add_option("--hidden", p_hidden, "Hidden units (n)");
    params->add_option("--input", p_input, "Input dimension (m)");

    // train
    auto* train = app.add_subcommand("train", "Train a model and write metrics/model/manifest");
    TrainCliOptions topt;
    train->add_option("--task", topt.task_name, "mnist-pixel | mnist-row | reviews");
    train->add_option("--variant", topt.variant_name, "gru0|gru1|gru2|gru3|lstm|rnn");
    train->add_option("--hidden", topt.cfg.hidden, "Hidden units");
    train->add_option("--lr", topt.cfg.base_lr, "Base learning rate eta0");
    train->add_option("--epochs", topt.cfg.epochs, "Training epochs");
    train->add_option("--batch", topt.cfg.batch_size, "Mini-batch size");
    train->add_option("--dropout", topt.cfg.dropout_rate, "Dropout rate on the final state");
    train->add_option("--seed", topt.cfg.seed, "Master seed");
    train->add_option("--activation", topt.activation, "relu | tanh")
        ->check(CLI::IsMember({"relu", "tanh"}));
    train->add_option("--clip-norm", topt.clip_norm, "Global gradient-norm clip");
    train->add_flag("--no-clip", topt.no_clip, "Disable gradient clipping");
    train->add_option("--embed-dim", topt.embed_dim, "Embedding dimension (reviews)");
    train->add_option("--out", topt.out_dir, "Output directory");
    train->add_option("--threads", topt.threads, "Worker threads (0 = auto)");
    add_data_options(train, topt.data, true);

    // eval
    auto* eval = app.add_subcommand("eval", "Evaluate a saved model");
    std::string e_model, e_task = "mnist-row";
    DataOptions e_data;
    int e_threads = 0;
    eval->add_option("--model", e_model, "Model file")->required();
    eval->add_option("--task", e_task, "mnist-pixel | mnist-row | reviews");
    eval->add_option("--threads", e_threads, "Worker threads (0 = auto)");
    add_data_options(eval, e_data, false);

    // gradcheck
    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference certification of BPTT");
    GradcheckOptions gopt;
    gradcheck->add_option("--variant", gopt.variant, "Check only this cell/variant");
    gradcheck->add_flag("--only", gopt.only, "With --variant: restrict the run to it");
    gradcheck->add_option("--seeds", gopt.seeds, "Random seeds per configuration");
    gradcheck->add_option("--tol", gopt.tol, "Relative-error tolerance");
    gradcheck->add_flag("--corrupt-gradient", gopt.corrupt,
                        "Testing aid: corrupt one analytic gradient entry");
    gradcheck->add_option("--threads", gopt.threads, "Worker threads (0 = auto)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitBadConfig;
    }

    try {
        if (params->parsed()) return cmd_params(p_hidden, p_input);
        if (train->parsed()) return run_train(topt, train);
        if (eval->parsed()) return run_eval(e_model, e_task, e_data, e_threads);
        if (gradcheck->parsed()) return run_gradcheck(gopt);
    } catch (const DataError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitMissingData;
    } catch (const CLI::ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitBadConfig;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
