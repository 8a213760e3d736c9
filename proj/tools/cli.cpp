// Copyright (c) 2026 The modref authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "modref/archive.hpp"
#include "modref/classifiers.hpp"
#include "modref/dataset.hpp"
#include "modref/encoders.hpp"
#include "modref/errors.hpp"
#include "modref/fusion.hpp"
#include "modref/kernels.hpp"
#include "modref/ops.hpp"
#include "modref/training.hpp"

namespace modref::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kReportVersion = 1;

struct FixtureArgs {
    dataio::FixtureOptions options;
    std::string out = "fixture";
};

struct SplitArgs {
    std::string which = "all";
    double base_fraction = 0.5;
};

struct TrainArgs {
    std::string data;
    std::size_t epochs = 30;
    std::size_t steps = 0;
    std::size_t k = 8;
    std::size_t class_batch = 16;
    double lr = 2e-4;
    std::uint64_t seed = 0;
    std::string out;
    std::string log;
    std::size_t checkpoint_every = 0;
    std::size_t tokens = 2;
    double tau_t = kDefaultTauT;
    double path_dropout = 0.1;
    double channel_dropout = 0.1;
    bool strict = false;
    SplitArgs split;
};

struct EvalArgs {
    std::string data;
    std::string generator;
    std::string bank;
    double tau_p = kDefaultTauP;
    std::string metric = "f1";
    std::size_t shots_exemplar = 16;
    std::string report;
    double tau_t = kDefaultTauT;
    bool text_only = false;
    SplitArgs split;
};

struct ExportArgs {
    std::string data;
    std::string generator;
    std::string out;
    std::size_t shots_exemplar = 16;
    double tau_t = kDefaultTauT;
    SplitArgs split;
};

void add_split_flags(CLI::App* cmd, SplitArgs& s) {
    cmd->add_option("--split", s.which, "Classes to use: all | base | novel")
        ->check(CLI::IsMember({"all", "base", "novel"}));
    cmd->add_option("--base-fraction", s.base_fraction, "Fraction of classes (sorted by id) that form the base split")
        ->check(CLI::Range(0.0, 1.0));
}

dataio::Dataset load_split(const std::string& path, const SplitArgs& split) {
    auto ds = dataio::load_dataset(path);
    if (split.which != "all") {
        auto [base, novel] = dataio::split_base_novel(ds.manifest, split.base_fraction);
        ds.manifest = split.which == "base" ? base : novel;
    }
    return ds;
}

/// Expands "--config file.json" into flags placed right after the subcommand,
/// so explicit flags (which come later) win under the take-last policy.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
    std::vector<std::string> rest;
    std::string config_path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config") {
            if (i + 1 >= args.size()) throw ValidationError("--config needs a file path");
            config_path = args[++i];
        } else if (args[i].rfind("--config=", 0) == 0) {
            config_path = args[i].substr(9);
        } else {
            rest.push_back(args[i]);
        }
    }
    if (config_path.empty()) return rest;
    std::ifstream in(config_path);
    if (!in) throw IoError("cannot open config file " + config_path);
    json cfg;
    try {
        cfg = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ValidationError("config file " + config_path + ": " + e.what());
    }
    if (!cfg.is_object()) throw ValidationError("config file must hold a JSON object");
    std::vector<std::string> injected;
    for (const auto& [key, value] : cfg.items()) {
        const std::string flag = "--" + key;
        if (value.is_boolean()) {
            if (value.get<bool>()) injected.push_back(flag);
        } else if (value.is_string()) {
            injected.push_back(flag);
            injected.push_back(value.get<std::string>());
        } else if (value.is_number()) {
            injected.push_back(flag);
            injected.push_back(value.dump());
        } else {
            throw ValidationError("config key '" + key + "' must be a string, number or boolean");
        }
    }
    std::vector<std::string> out;
    if (!rest.empty()) out.push_back(rest.front());
    out.insert(out.end(), injected.begin(), injected.end());
    if (rest.size() > 1) out.insert(out.end(), rest.begin() + 1, rest.end());
    return out;
}

std::string fmt_pct(double x) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << 100.0 * x;
    return os.str();
}

int cmd_fixtures(const FixtureArgs& a, std::ostream& out) {
    auto options = a.options;
    const fs::path prefix = a.out;
    const fs::path manifest_path = fs::path(prefix.string() + ".json");
    const fs::path archive_path = fs::path(prefix.string() + ".ovma");
    options.archive_name = archive_path.filename().string();
    const auto ds = dataio::generate_fixture(options);
    if (manifest_path.has_parent_path()) fs::create_directories(manifest_path.parent_path());
    dataio::write_archive(archive_path, ds.archive);
    dataio::save_manifest(manifest_path, ds.manifest);
    std::size_t ambiguous = 0;
    for (const auto& c : ds.manifest.classes) ambiguous += c.ambiguous_text;
    out << "fixture: " << ds.manifest.classes.size() << " classes, d=" << ds.manifest.dim << ", shots=" << options.shots
        << ", ambiguous text=" << ambiguous << ", sigma=" << options.noise_sigma << " -> " << manifest_path.string()
        << ", " << archive_path.string() << "\n";
    return kExitOk;
}

dataio::TensorArchive checkpoint_archive(const GeneratorParams<float>& gen, std::uint64_t seed, std::size_t step) {
    dataio::TensorArchive archive;
    gen.save(archive);
    archive.set_metadata("creator", "modref train");
    archive.set_metadata("seed", std::to_string(seed));
    archive.set_metadata("step", std::to_string(step));
    return archive;
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
    const auto ds = load_split(a.data, a.split);
    const auto refs = dataio::materialize(ds);
    const auto encoder = dataio::language_encoder_for(ds);

    EpisodeSpec spec{a.k, a.class_batch, a.strict};
    TrainConfig config;
    config.epochs = a.epochs;
    if (a.steps > 0) config.steps = a.steps;
    config.base_lr = a.lr;
    config.seed = a.seed;
    config.tau_t = a.tau_t;
    config.generator.tokens = a.tokens;
    config.generator.path_dropout = a.path_dropout;
    config.generator.channel_dropout = a.channel_dropout;
    config.checkpoint_every = a.checkpoint_every;

    const fs::path out_path = a.out;
    if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
    const fs::path log_path = a.log.empty() ? fs::path(a.out + ".csv") : fs::path(a.log);
    std::ofstream log(log_path, std::ios::trunc);
    if (!log) throw IoError("cannot open training log " + log_path.string());
    log << "step,epoch,lr,loss,m_min,m_max\n" << std::setprecision(9);
    config.on_step = [&](const TrainLogRow& r) {
        log << r.step << ',' << r.epoch << ',' << r.lr << ',' << r.loss << ',' << r.min_exemplars << ','
            << r.max_exemplars << '\n';
        log.flush();
    };
    config.on_checkpoint = [&](std::size_t step, const GeneratorParams<float>& gen) {
        dataio::write_archive(out_path, checkpoint_archive(gen, a.seed, step));
    };

    const auto result = train(refs, encoder, spec, config);
    for (const auto& w : result.warnings) err << "warning: " << w << "\n";
    out << "trained " << result.log.size() << " episodes on " << refs.size() << " classes: loss "
        << result.log.front().loss << " -> " << result.log.back().loss << "; checkpoint " << out_path.string()
        << ", log " << log_path.string() << "\n";
    return kExitOk;
}

struct EvalData {
    std::vector<ClassReferenceSet<float>> refs;
    Tensor<float> targets;
    std::vector<std::size_t> target_labels;
    Tensor<float> exemplars;
    std::vector<std::size_t> exemplar_labels;
};

EvalData gather(std::vector<ClassReferenceSet<float>> refs) {
    EvalData d;
    std::vector<Tensor<float>> targets, exemplars;
    for (const auto& r : refs) {
        if (r.has_targets()) {
            targets.push_back(r.targets);
            d.target_labels.insert(d.target_labels.end(), r.targets.rows(), r.label);
        }
        if (r.has_exemplars()) {
            exemplars.push_back(r.exemplars);
            d.exemplar_labels.insert(d.exemplar_labels.end(), r.exemplars.rows(), r.label);
        }
    }
    if (targets.empty()) throw ValidationError("dataset has no target features to evaluate on");
    d.targets = concat_rows(targets);
    if (!exemplars.empty()) d.exemplars = concat_rows(exemplars);
    d.refs = std::move(refs);
    return d;
}

/// Relabels so labels are positions within the (possibly split) class list.
std::vector<ClassReferenceSet<float>> relabel(std::vector<ClassReferenceSet<float>> refs) {
    for (std::size_t i = 0; i < refs.size(); ++i) refs[i].label = i;
    return refs;
}

ClassifierBank<float> bank_for(const dataio::Dataset& ds, const std::vector<ClassReferenceSet<float>>& refs,
                               const std::string& generator_path, const std::string& bank_path, bool text_only,
                               float tau_t) {
    if (!bank_path.empty()) {
        auto bank = ClassifierBank<float>::load(dataio::read_archive(bank_path));
        if (bank.num_classes() != refs.size())
            throw ValidationError("bank has " + std::to_string(bank.num_classes()) + " classes, dataset has " +
                                  std::to_string(refs.size()));
        if (bank.dim() != ds.manifest.dim) throw ValidationError("bank width differs from the dataset's d");
        return bank;
    }
    const auto encoder = dataio::language_encoder_for(ds);
    if (generator_path.empty()) {
        if (!text_only)
            throw ValidationError("--generator is required for the vision and multi-modal classifiers "
                                  "(pass --text-only to evaluate the text classifier alone)");
        return build_classifier_weights<float>(nullptr, encoder, refs, {true, false, false}, tau_t);
    }
    const auto generator = GeneratorParams<float>::load(dataio::read_archive(generator_path), false);
    return build_classifier_weights<float>(&generator, encoder, refs, {}, tau_t);
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
    const auto metric = parse_metric(a.metric);
    const auto ds = load_split(a.data, a.split);
    auto data = gather(relabel(dataio::materialize(ds, {a.shots_exemplar})));
    const auto bank = bank_for(ds, data.refs, a.generator, a.bank, a.text_only, static_cast<float>(a.tau_t));

    json report = {{"schema", "modref.eval"},
                   {"version", kReportVersion},
                   {"metric", std::string(to_string(metric))},
                   {"tau_p", a.tau_p},
                   {"tau_t", static_cast<double>(bank.tau_t)},
                   {"shots_exemplar", a.shots_exemplar},
                   {"num_classes", bank.num_classes()},
                   {"num_targets", data.target_labels.size()}};
    json acc = json::object();
    out << "classifier  accuracy(%)\n";
    for (auto kind : {ClassifierKind::Text, ClassifierKind::Vision, ClassifierKind::MultiModal}) {
        if (!bank.has(kind)) continue;
        const double value = accuracy(predict(bank, data.targets, kind).labels, data.target_labels);
        acc[std::string(to_string(kind))] = value;
        out << std::left << std::setw(12) << to_string(kind) << fmt_pct(value) << "\n";
    }

    if (bank.has(ClassifierKind::Vision) && bank.has(ClassifierKind::MultiModal) && bank.has(ClassifierKind::Text)) {
        if (data.exemplar_labels.empty()) throw ReferenceError("fusion needs exemplar features");
        const auto fused = build_fused_classifier(bank, data.exemplars, data.exemplar_labels, a.tau_p, metric);
        const auto mean = build_fused_classifier(bank, data.exemplars, data.exemplar_labels, a.tau_p,
                                                 PreferenceMetric::Mean);
        const auto fused_pred = fused.predict(data.targets);
        const auto mean_pred = mean.predict(data.targets);
        if (metric == PreferenceMetric::Mean) {
            const auto fs = fused_pred.scores.data();
            const auto ms = mean_pred.scores.data();
            if (!std::equal(fs.begin(), fs.end(), ms.begin(), ms.end()))
                throw NumericError("metric=mean fusion disagrees with arithmetic-mean fusion");
        }
        acc["fused"] = accuracy(fused_pred.labels, data.target_labels);
        acc["mean_fused"] = accuracy(mean_pred.labels, data.target_labels);
        out << std::left << std::setw(12) << "fused" << fmt_pct(acc["fused"].get<double>()) << "  (metric "
            << to_string(metric) << ", tau_p " << a.tau_p << ")\n";
        out << std::left << std::setw(12) << "mean" << fmt_pct(acc["mean_fused"].get<double>()) << "\n\n";

        const auto& pw = fused.preferences();
        out << "class        a_V     a_VT    a_T   |  w_V     w_VT    w_T\n";
        json prefs = json::array();
        for (std::size_t k = 0; k < pw.num_classes(); ++k) {
            const auto al = pw.alpha.data().subspan(k * 3, 3);
            const auto ah = pw.alpha_hat.data().subspan(k * 3, 3);
            out << std::left << std::setw(12) << bank.class_ids[k] << std::fixed << std::setprecision(3) << std::right
                << std::setw(6) << al[0] << "  " << std::setw(6) << al[1] << "  " << std::setw(6) << al[2] << " | "
                << std::setw(6) << ah[0] << "  " << std::setw(6) << ah[1] << "  " << std::setw(6) << ah[2] << "\n";
            prefs.push_back({{"class", bank.class_ids[k]},
                             {"alpha", {{"V", al[0]}, {"VT", al[1]}, {"T", al[2]}}},
                             {"alpha_hat", {{"V", ah[0]}, {"VT", ah[1]}, {"T", ah[2]}}}});
        }
        out << std::defaultfloat;
        report["preferences"] = prefs;
    }
    report["accuracy"] = acc;
    if (!a.report.empty()) dataio::write_text_atomic(a.report, report.dump(2) + "\n");
    return kExitOk;
}

int cmd_export_bank(const ExportArgs& a, std::ostream& out) {
    if (a.generator.empty()) throw ValidationError("--generator is required to build the vision and multi-modal weights");
    const auto ds = load_split(a.data, a.split);
    const auto refs = relabel(dataio::materialize(ds, {a.shots_exemplar}));
    const auto bank = bank_for(ds, refs, a.generator, "", false, static_cast<float>(a.tau_t));
    dataio::TensorArchive archive;
    bank.save(archive);
    archive.set_metadata("creator", "modref export-bank");
    dataio::write_archive(a.out, archive);
    out << "bank: " << bank.num_classes() << " classes x d=" << bank.dim() << " (T, V, VT) -> " << a.out << "\n";
    return kExitOk;
}

void apply_thread_cap() {
    if (const char* env = std::getenv("MODREF_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) kernels::set_max_threads(n);
    }
}

}  // namespace

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
    apply_thread_cap();
    std::vector<std::string> args;
    try {
        args = expand_config(raw_args);
    } catch (const IoError& e) {
        err << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kExitValidation;
    }

    CLI::App app{"modref: open-vocabulary classifiers from multi-modal references", "modref"};
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

    FixtureArgs fx;
    auto* fixtures = app.add_subcommand("fixtures", "Generate a synthetic dataset (manifest + archive)");
    fixtures->add_option("--seed", fx.options.seed, "Random seed");
    fixtures->add_option("--classes", fx.options.classes, "Number of classes")->check(CLI::Range(2, 1 << 20));
    fixtures->add_option("--dim", fx.options.dim, "Feature width d")->check(CLI::PositiveNumber);
    fixtures->add_option("--shots", fx.options.shots, "Exemplar and target samples per class")->check(CLI::Range(2, 1 << 20));
    fixtures->add_option("--ambiguity", fx.options.text_ambiguity_fraction, "Fraction of classes with swapped text")
        ->check(CLI::Range(0.0, 1.0));
    fixtures->add_option("--sigma", fx.options.noise_sigma, "Per-coordinate feature noise")->check(CLI::NonNegativeNumber);
    fixtures->add_option("--text-length", fx.options.text_length, "Text tokens per class")->check(CLI::PositiveNumber);
    fixtures->add_option("--out", fx.out, "Output prefix (writes <out>.json and <out>.ovma)");

    TrainArgs tr;
    auto* trainc = app.add_subcommand("train", "Pre-train the visual token generator");
    trainc->add_option("--data", tr.data, "Dataset manifest")->required()->check(CLI::ExistingFile);
    trainc->add_option("--epochs", tr.epochs, "Epochs (ceil(classes / class-batch) episodes each)")->check(CLI::PositiveNumber);
    trainc->add_option("--steps", tr.steps, "Total episodes; overrides --epochs");
    trainc->add_option("--k", tr.k, "Samples per class per episode")->check(CLI::Range(2, 1 << 20));
    trainc->add_option("--class-batch", tr.class_batch, "Classes per episode")->check(CLI::PositiveNumber);
    trainc->add_option("--lr", tr.lr, "Base learning rate")->check(CLI::PositiveNumber);
    trainc->add_option("--seed", tr.seed, "Random seed");
    trainc->add_option("--out", tr.out, "Generator checkpoint archive")->required();
    trainc->add_option("--log", tr.log, "Training log CSV (default <out>.csv)");
    trainc->add_option("--checkpoint-every", tr.checkpoint_every, "Write the checkpoint every N episodes");
    trainc->add_option("--tokens", tr.tokens, "Visual tokens P")->check(CLI::PositiveNumber);
    trainc->add_option("--tau-t", tr.tau_t, "Classifier temperature")->check(CLI::PositiveNumber);
    trainc->add_option("--path-dropout", tr.path_dropout, "Attention path dropout")->check(CLI::Range(0.0, 0.99));
    trainc->add_option("--channel-dropout", tr.channel_dropout, "MLP channel dropout")->check(CLI::Range(0.0, 0.99));
    trainc->add_flag("--strict", tr.strict, "Fail on classes with fewer than K samples");
    add_split_flags(trainc, tr.split);

    EvalArgs ev;
    auto* evalc = app.add_subcommand("eval", "Evaluate T/V/VT classifiers and preference fusion");
    evalc->add_option("--data", ev.data, "Dataset manifest")->required()->check(CLI::ExistingFile);
    evalc->add_option("--generator", ev.generator, "Generator checkpoint")->check(CLI::ExistingFile);
    evalc->add_option("--bank", ev.bank, "Pre-built classifier bank archive")->check(CLI::ExistingFile);
    evalc->add_option("--tau-p", ev.tau_p, "Preference temperature")->check(CLI::NonNegativeNumber);
    evalc->add_option("--metric", ev.metric, "Preference metric")->check(CLI::IsMember({"f1", "precision", "recall", "mean"}));
    evalc->add_option("--shots-exemplar", ev.shots_exemplar, "Exemplars per class (0 = all)");
    evalc->add_option("--report", ev.report, "JSON report path");
    evalc->add_option("--tau-t", ev.tau_t, "Classifier temperature")->check(CLI::PositiveNumber);
    evalc->add_flag("--text-only", ev.text_only, "Evaluate only the text classifier");
    add_split_flags(evalc, ev.split);

    ExportArgs ex;
    auto* exportc = app.add_subcommand("export-bank", "Write the T/V/VT classifier bank archive");
    exportc->add_option("--data", ex.data, "Dataset manifest")->required()->check(CLI::ExistingFile);
    exportc->add_option("--generator", ex.generator, "Generator checkpoint")->check(CLI::ExistingFile);
    exportc->add_option("--out", ex.out, "Bank archive path")->required();
    exportc->add_option("--shots-exemplar", ex.shots_exemplar, "Exemplars per class (0 = all)");
    exportc->add_option("--tau-t", ex.tau_t, "Classifier temperature")->check(CLI::PositiveNumber);
    add_split_flags(exportc, ex.split);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            out << app.help();
            return kExitOk;
        }
        err << "error: " << e.what() << "\n";
        return kExitValidation;
    }

    try {
        if (*fixtures) return cmd_fixtures(fx, out);
        if (*trainc) return cmd_train(tr, out, err);
        if (*evalc) return cmd_eval(ev, out);
        if (*exportc) return cmd_export_bank(ex, out);
    } catch (const IoError& e) {
        err << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const FormatError& e) {
        err << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const NumericError& e) {
        err << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const Error& e) {
        err << "error (" << e.kind() << "): " << e.what() << "\n";
        return kExitValidation;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return kExitIo;
    }
    return kExitValidation;
}

}  // namespace modref::cli
