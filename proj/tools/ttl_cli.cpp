#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ttl/adapt.hpp"
#include "ttl/container.hpp"
#include "ttl/dataset.hpp"
#include "ttl/pretrain.hpp"

using namespace ttl;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep))
        if (!item.empty()) out.push_back(item);
    return out;
}

std::set<std::size_t> parse_layers(const std::string& s, char sep = ',') {
    std::set<std::size_t> layers;
    for (const auto& tok : split(s, sep)) layers.insert(std::stoul(tok));
    if (layers.empty()) throw config_error("empty layer list '" + s + "'");
    return layers;
}

std::set<Projection> parse_projections(const std::string& s, char sep = ',') {
    std::set<Projection> projs;
    for (const auto& tok : split(s, sep)) {
        if (tok == "q" || tok == "Q") projs.insert(Projection::Q);
        else if (tok == "k" || tok == "K") projs.insert(Projection::K);
        else if (tok == "v" || tok == "V") projs.insert(Projection::V);
        else throw config_error("unknown projection '" + tok + "'");
    }
    if (projs.empty()) throw config_error("empty projection list '" + s + "'");
    return projs;
}

LoraInit parse_init(const std::string& s) {
    if (s == "xavier_both") return LoraInit::xavier_both;
    if (s == "xavier_A_zero_B") return LoraInit::xavier_A_zero_B;
    if (s == "kaiming_both") return LoraInit::kaiming_both;
    if (s == "gaussian_both") return LoraInit::gaussian_both;
    throw config_error("unknown init policy '" + s + "'");
}

const char* init_name(LoraInit p) {
    switch (p) {
        case LoraInit::xavier_both: return "xavier_both";
        case LoraInit::xavier_A_zero_B: return "xavier_A_zero_B";
        case LoraInit::kaiming_both: return "kaiming_both";
        case LoraInit::gaussian_both: return "gaussian_both";
    }
    return "?";
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

// everything that determines the evaluation output, hashed into the CSV
struct EvalSetup {
    std::string checkpoint_path;
    std::string prototypes_path;
    std::string dataset_path;
    Method method = Method::ttl_weighted;
    LoraSpec lora;
    AugmentConfig aug;
    WeightedLossConfig loss;
    AdaptConfig adapt;
    std::size_t limit = 0;  // 0 = all
    std::size_t threads = 1;

    std::string config_string() const {
        std::ostringstream os;
        os << "method=" << method_name(method) << ";rank=" << lora.rank
           << ";alpha=" << fmt(lora.alpha) << ";layers=";
        for (std::size_t l : lora.target_layers) os << l << "+";
        os << ";proj=";
        for (Projection p : lora.target_projections) os << projection_name(p);
        os << ";init=" << init_name(lora.init_policy) << ";lora_seed=" << lora.seed
           << ";views=" << aug.num_views << ";aug_seed=" << aug.seed
           << ";crop=" << fmt(aug.crop_scale_lo) << "-" << fmt(aug.crop_scale_hi)
           << ";flip=" << fmt(aug.flip_probability) << ";steps=" << adapt.steps
           << ";lr=" << fmt(adapt.optimizer.lr) << ";wd=" << fmt(adapt.optimizer.weight_decay)
           << ";tau=" << fmt(adapt.tau) << ";epsilon=" << fmt(loss.epsilon)
           << ";rho=" << fmt(loss.cutoff_rho)
           << ";stopgrad=" << (loss.beta_stop_gradient ? 1 : 0) << ";dir="
           << (loss.weight_direction == WeightDirection::confident_up ? "confident_up"
                                                                      : "literal")
           << ";protocol="
           << (adapt.prediction_protocol == PredictionProtocol::original_view
                   ? "original_view"
                   : "mean_probs")
           << ";limit=" << limit;
        return os.str();
    }

    std::string config_hash() const {
        Fnv1a h;
        const std::string s = config_string();
        h.update(s.data(), s.size());
        return h.hex();
    }
};

struct EvalOutput {
    StreamMetrics metrics;
    std::string hash;
};

EvalOutput run_eval(const EvalSetup& setup) {
    EncoderCheckpoint ckpt = load_checkpoint(setup.checkpoint_path);
    ClassPrototypes protos = load_prototypes(setup.prototypes_path);
    DatasetContainer ds = load_dataset(setup.dataset_path);
    std::optional<std::size_t> limit;
    if (setup.limit > 0) limit = setup.limit;
    EvalOutput out;
    out.metrics = evaluate_stream(ds, ckpt, protos, setup.lora, setup.aug, setup.loss,
                                  setup.adapt, limit, setup.threads);
    out.hash = setup.config_hash();
    return out;
}

const char* summary_header =
    "method,config_hash,top1,mean_pre_entropy,mean_post_entropy,episodes,fallbacks";

std::string summary_row(const EvalSetup& setup, const EvalOutput& out) {
    std::ostringstream os;
    os << method_name(setup.method) << "," << out.hash << "," << fmt(out.metrics.top1)
       << "," << fmt(out.metrics.mean_pre_entropy) << ","
       << fmt(out.metrics.mean_post_entropy) << "," << out.metrics.episodes << ","
       << out.metrics.fallbacks;
    return os.str();
}

void write_per_sample_csv(const fs::path& path, const EvalOutput& out) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw io_error("cannot write " + path.string());
    f << "sample_id,label,pre_argmax,pre_entropy,post_argmax,post_entropy,correct,"
         "fallback,loss_first_step,config_hash\n";
    for (std::size_t i = 0; i < out.metrics.reports.size(); ++i) {
        const AdaptReport& r = out.metrics.reports[i];
        const std::int64_t label = out.metrics.labels[i];
        f << r.sample_id << "," << label << "," << r.pre.argmax() << ","
          << fmt(r.pre.entropy) << "," << r.post.argmax() << "," << fmt(r.post.entropy)
          << "," << (static_cast<std::int64_t>(r.post.argmax()) == label ? 1 : 0) << ","
          << (r.nonfinite_fallback ? 1 : 0) << ","
          << (r.loss_per_step.empty() ? "" : fmt(r.loss_per_step.front())) << ","
          << out.hash << "\n";
    }
}

void write_octile_csv(const fs::path& path, const EvalOutput& out) {
    std::vector<EntropyRecord> records;
    for (std::size_t i = 0; i < out.metrics.reports.size(); ++i) {
        const AdaptReport& r = out.metrics.reports[i];
        records.push_back(
            {r.post.entropy,
             static_cast<std::int64_t>(r.post.argmax()) == out.metrics.labels[i]});
    }
    auto bins = octile_report(records);
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw io_error("cannot write " + path.string());
    f << "octile,count,mean_entropy,accuracy,config_hash\n";
    for (std::size_t b = 0; b < bins.size(); ++b)
        f << (b + 1) << "," << bins[b].count << "," << fmt(bins[b].mean_entropy) << ","
          << fmt(bins[b].accuracy) << "," << out.hash << "\n";
}

struct EvalFlags {
    std::string checkpoint, prototypes, dataset, out;
    std::string method = "ttl_weighted";
    std::size_t rank = 16;
    double alpha = 32.0;
    std::string layers = "4,5,6";
    std::string proj = "q,v";
    std::string init = "xavier_A_zero_B";
    std::size_t views = 64;
    std::size_t steps = 1;
    double lr = 5e-3;
    double epsilon = 0.4;
    double rho = 1.0;
    double tau = 100.0;
    std::uint64_t seed = 0;
    std::string protocol = "original_view";
    std::size_t limit = 0;
    std::size_t threads = 1;
    std::string per_sample_out, octiles_out;
};

void add_eval_flags(CLI::App* cmd, EvalFlags& f) {
    cmd->add_option("--checkpoint", f.checkpoint, "encoder checkpoint manifest")
        ->required();
    cmd->add_option("--prototypes", f.prototypes, "class prototype manifest")->required();
    cmd->add_option("--dataset", f.dataset, "dataset manifest")->required();
    cmd->add_option("--out", f.out, "summary CSV path")->required();
    cmd->add_option("--method", f.method,
                    "ttl_weighted | ttl_unweighted | entropy_select | zeroshot");
    cmd->add_option("--rank", f.rank, "LoRA rank r");
    cmd->add_option("--alpha", f.alpha, "LoRA alpha");
    cmd->add_option("--layers", f.layers, "adapted layers, e.g. 4,5,6");
    cmd->add_option("--proj", f.proj, "adapted projections, e.g. q,v");
    cmd->add_option("--init", f.init,
                    "xavier_A_zero_B | xavier_both | kaiming_both | gaussian_both");
    cmd->add_option("--views", f.views, "augmented views per sample (incl. original)");
    cmd->add_option("--steps", f.steps, "optimizer steps per sample");
    cmd->add_option("--lr", f.lr, "adaptation learning rate");
    cmd->add_option("--epsilon", f.epsilon, "entropy weight margin");
    cmd->add_option("--rho", f.rho, "confidence cutoff for entropy_select");
    cmd->add_option("--tau", f.tau, "softmax temperature");
    cmd->add_option("--seed", f.seed, "augmentation and adapter seed");
    cmd->add_option("--protocol", f.protocol, "original_view | mean_probs");
    cmd->add_option("--limit", f.limit, "evaluate only the first N samples (0 = all)");
    cmd->add_option("--threads", f.threads, "worker threads");
    cmd->add_option("--per-sample", f.per_sample_out, "optional per-sample CSV path");
    cmd->add_option("--octiles", f.octiles_out, "optional octile CSV path");
}

EvalSetup setup_from_flags(const EvalFlags& f) {
    EvalSetup s;
    s.checkpoint_path = f.checkpoint;
    s.prototypes_path = f.prototypes;
    s.dataset_path = f.dataset;
    s.method = method_from_string(f.method);
    s.lora.rank = f.rank;
    s.lora.alpha = f.alpha;
    s.lora.target_layers = parse_layers(f.layers);
    s.lora.target_projections = parse_projections(f.proj);
    s.lora.init_policy = parse_init(f.init);
    s.lora.seed = f.seed;
    s.aug.num_views = f.views;
    s.aug.seed = f.seed;
    s.loss.epsilon = f.epsilon;
    s.loss.cutoff_rho = f.rho;
    s.adapt.steps = f.steps;
    s.adapt.optimizer.lr = f.lr;
    s.adapt.method = s.method;
    s.adapt.tau = f.tau;
    if (f.protocol == "original_view")
        s.adapt.prediction_protocol = PredictionProtocol::original_view;
    else if (f.protocol == "mean_probs")
        s.adapt.prediction_protocol = PredictionProtocol::mean_probs;
    else
        throw config_error("unknown protocol '" + f.protocol + "'");
    s.limit = f.limit;
    s.threads = f.threads;
    return s;
}

int cmd_make_dataset(const std::string& out, std::size_t count, std::uint64_t seed,
                     std::uint64_t stream, const std::string& shift, int severity,
                     std::uint64_t shift_seed) {
    DatasetContainer ds = make_shapes_dataset(count, seed, stream);
    if (shift != "none") {
        ShiftSpec spec;
        spec.kind = shift_kind_from_string(shift);
        spec.severity = severity;
        spec.seed = shift_seed;
        apply_shift(ds, spec);
    }
    save_dataset(ds, out);
    std::printf("wrote %zu images (%s) to %s\n", ds.count(), ds.shift_descriptor.c_str(),
                out.c_str());
    return 0;
}

int cmd_pretrain(const std::string& train_path, const std::string& val_path,
                 const std::string& out_ckpt, const std::string& out_protos,
                 std::size_t epochs, std::size_t batch, double lr, double tau,
                 std::uint64_t seed, std::size_t threads, bool verbose) {
    DatasetContainer train = load_dataset(train_path);
    DatasetContainer val = load_dataset(val_path);
    EncoderConfig cfg;
    PretrainConfig pc;
    pc.epochs = epochs;
    pc.batch_size = batch;
    pc.optimizer.lr = lr;
    pc.tau = tau;
    pc.seed = seed;
    pc.num_threads = threads;
    pc.verbose = verbose;
    PretrainResult r = pretrain(train, val, cfg, pc);
    save_checkpoint(r.checkpoint, out_ckpt);
    save_prototypes(r.prototypes, out_protos);
    std::printf("train-acc %s  val-acc %s  checkpoint %s  prototypes %s\n",
                fmt(r.final_train_accuracy).c_str(), fmt(r.val_accuracy).c_str(),
                out_ckpt.c_str(), out_protos.c_str());
    return 0;
}

int cmd_eval(const EvalFlags& flags) {
    EvalSetup setup = setup_from_flags(flags);
    EvalOutput out = run_eval(setup);
    std::ofstream f(flags.out, std::ios::trunc);
    if (!f) throw io_error("cannot write " + flags.out);
    f << summary_header << "\n" << summary_row(setup, out) << "\n";
    if (!flags.per_sample_out.empty()) write_per_sample_csv(flags.per_sample_out, out);
    if (!flags.octiles_out.empty()) write_octile_csv(flags.octiles_out, out);
    std::printf("%s\n%s\n", summary_header, summary_row(setup, out).c_str());
    return 0;
}

void apply_axis_value(EvalSetup& s, const std::string& axis, const std::string& value) {
    if (axis == "rank") s.lora.rank = std::stoul(value);
    else if (axis == "alpha") s.lora.alpha = std::stod(value);
    else if (axis == "layers") s.lora.target_layers = parse_layers(value, '+');
    else if (axis == "attention_groups")
        s.lora.target_projections = parse_projections(value, '+');
    else if (axis == "cutoff_rho") s.loss.cutoff_rho = std::stod(value);
    else if (axis == "num_views") s.aug.num_views = std::stoul(value);
    else if (axis == "steps") s.adapt.steps = std::stoul(value);
    else if (axis == "epsilon") s.loss.epsilon = std::stod(value);
    else if (axis == "init_policy") s.lora.init_policy = parse_init(value);
    else throw config_error("unknown sweep axis '" + axis + "'");
}

int cmd_sweep(const EvalFlags& flags, const std::string& axis,
              const std::string& values) {
    const auto value_list = split(values, ',');
    if (value_list.empty()) throw config_error("sweep: empty value list");
    std::ofstream f(flags.out, std::ios::trunc);
    if (!f) throw io_error("cannot write " + flags.out);
    f << "axis,value," << summary_header << "\n";
    for (const auto& value : value_list) {
        EvalSetup setup = setup_from_flags(flags);
        apply_axis_value(setup, axis, value);
        EvalOutput out = run_eval(setup);
        f << axis << "," << value << "," << summary_row(setup, out) << "\n";
        std::printf("%s=%s  top1 %s\n", axis.c_str(), value.c_str(),
                    fmt(out.metrics.top1).c_str());
    }
    return 0;
}

int cmd_octiles(const EvalFlags& flags) {
    EvalSetup setup = setup_from_flags(flags);
    EvalOutput out = run_eval(setup);
    write_octile_csv(flags.out, out);
    std::printf("wrote octile report to %s\n", flags.out.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"test-time low-rank adaptation harness"};
    app.require_subcommand(1);

    // make-dataset
    auto* mk = app.add_subcommand("make-dataset", "generate a synthetic shapes dataset");
    std::string mk_out, mk_shift = "none";
    std::size_t mk_count = 256;
    std::uint64_t mk_seed = 0, mk_stream = 0, mk_shift_seed = 0;
    int mk_severity = 1;
    mk->add_option("--out", mk_out, "output manifest path")->required();
    mk->add_option("--count", mk_count, "number of images");
    mk->add_option("--seed", mk_seed, "generator seed");
    mk->add_option("--stream", mk_stream, "split stream id (train/val/test)");
    mk->add_option("--shift", mk_shift,
                   "none | gaussian_noise | rotation | channel_shift | blur");
    mk->add_option("--severity", mk_severity, "shift severity 1-5");
    mk->add_option("--shift-seed", mk_shift_seed, "shift noise seed");

    // pretrain
    auto* pt = app.add_subcommand("pretrain", "train the frozen encoder");
    std::string pt_train, pt_val, pt_ckpt, pt_protos;
    std::size_t pt_epochs = 20, pt_batch = 32, pt_threads = 1;
    double pt_lr = 1e-3, pt_tau = 100.0;
    std::uint64_t pt_seed = 0;
    bool pt_verbose = false;
    pt->add_option("--train", pt_train, "training dataset manifest")->required();
    pt->add_option("--val", pt_val, "validation dataset manifest")->required();
    pt->add_option("--out-checkpoint", pt_ckpt, "checkpoint output path")->required();
    pt->add_option("--out-prototypes", pt_protos, "prototype output path")->required();
    pt->add_option("--epochs", pt_epochs, "training epochs");
    pt->add_option("--batch-size", pt_batch, "batch size");
    pt->add_option("--lr", pt_lr, "learning rate");
    pt->add_option("--tau", pt_tau, "softmax temperature");
    pt->add_option("--seed", pt_seed, "init and shuffle seed");
    pt->add_option("--threads", pt_threads, "validation worker threads");
    pt->add_flag("--verbose", pt_verbose, "per-epoch progress on stderr");

    // eval / sweep / octiles share the eval flag set
    EvalFlags ev, sw, oc;
    auto* evc = app.add_subcommand("eval", "evaluate one method on a dataset");
    add_eval_flags(evc, ev);
    auto* swc = app.add_subcommand("sweep", "evaluate along one ablation axis");
    add_eval_flags(swc, sw);
    std::string sweep_axis, sweep_values;
    swc->add_option("--axis", sweep_axis,
                    "rank | alpha | layers | attention_groups | cutoff_rho | num_views | "
                    "steps | epsilon | init_policy")
        ->required();
    swc->add_option("--values", sweep_values, "comma-separated axis values")->required();
    auto* occ = app.add_subcommand("octiles", "entropy-octile accuracy report");
    add_eval_flags(occ, oc);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (mk->parsed())
            return cmd_make_dataset(mk_out, mk_count, mk_seed, mk_stream, mk_shift,
                                    mk_severity, mk_shift_seed);
        if (pt->parsed())
            return cmd_pretrain(pt_train, pt_val, pt_ckpt, pt_protos, pt_epochs, pt_batch,
                                pt_lr, pt_tau, pt_seed, pt_threads, pt_verbose);
        if (evc->parsed()) return cmd_eval(ev);
        if (swc->parsed()) return cmd_sweep(sw, sweep_axis, sweep_values);
        if (occ->parsed()) return cmd_octiles(oc);
    } catch (const config_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const io_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const shape_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const numeric_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 1;
}
