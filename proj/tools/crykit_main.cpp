// crykit: infant-cry analysis toolkit.
//
// Subcommands: synth, features, scatter, train, pairs, diagnose, report.
// All stochastic behavior is pinned by --seed (or the config seed), so
// repeated invocations produce byte-identical outputs.

#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "crykit/audio_io.hpp"
#include "crykit/config.hpp"
#include "crykit/dataset.hpp"
#include "crykit/dsp.hpp"
#include "crykit/errors.hpp"
#include "crykit/experiments.hpp"
#include "crykit/rng.hpp"
#include "crykit/synth.hpp"

namespace fs = std::filesystem;
using namespace crykit;

namespace {

std::vector<int> parse_months(const std::string& arg) {
    std::vector<int> months;
    const std::size_t dash = arg.find('-');
    if (dash != std::string::npos) {
        const int lo = std::stoi(arg.substr(0, dash));
        const int hi = std::stoi(arg.substr(dash + 1));
        for (int m = lo; m <= hi; ++m) months.push_back(m);
    } else {
        std::size_t pos = 0;
        while (pos < arg.size()) {
            std::size_t comma = arg.find(',', pos);
            if (comma == std::string::npos) comma = arg.size();
            months.push_back(std::stoi(arg.substr(pos, comma - pos)));
            pos = comma + 1;
        }
    }
    if (months.empty())
        throw InvalidArgument("no months in '" + arg + "'");
    return months;
}

std::string sanitize(const std::string& name) {
    std::string out;
    for (char c : name)
        out.push_back(std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
    return out;
}

struct CommonOpts {
    std::optional<std::string> config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> jobs;

    CliConfig resolve() const {
        CliConfig config;
        if (config_path) config = CliConfig::load(*config_path);
        if (seed) config.seed = *seed;
        if (jobs) config.jobs = *jobs;
        if (config.jobs < 1)
            throw InvalidArgument("--jobs must be >= 1");
        return config;
    }
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path,
                    "key = value config file (all keys optional)");
    cmd->add_option("--seed", opts.seed, "override the config seed");
    cmd->add_option("--jobs", opts.jobs, "worker threads (default 1)");
}

int cmd_synth(const CliConfig& config, const std::string& months_arg,
              int per_month, const fs::path& out_dir,
              const std::string& pathology, const std::string& subject_prefix,
              std::optional<int> acoustic_month) {
    CorpusSpec spec;
    spec.months = parse_months(months_arg);
    spec.per_month = per_month;
    spec.male_fraction = config.male_fraction;
    spec.seed = config.seed;
    spec.sample_rate = config.sample_rate;
    spec.clips_per_subject = config.clips_per_subject;
    spec.subject_prefix = subject_prefix;
    spec.pathology = pathology;
    spec.acoustic_month_override = acoustic_month;
    spec.table = AgeParameterTable::from_anchors(config.synth);

    const DatasetManifest manifest = synth_corpus(spec, out_dir);
    std::printf("wrote %zu clips (%zu months x %d) under %s\n",
                manifest.rows.size(), spec.months.size(), per_month,
                out_dir.string().c_str());
    std::printf("manifest: %s\n", (out_dir / "manifest.csv").string().c_str());
    return 0;
}

int cmd_features(const CliConfig& config, const fs::path& manifest_path,
                 const fs::path& out_dir) {
    const DatasetManifest manifest = load_manifest(manifest_path);
    fs::create_directories(out_dir);
    const fs::path cache = out_dir / "image_cache";
    std::size_t recomputed = 0;
    const PreparedDataset prepared = prepare_images(
        manifest, cache, config.features(), config.jobs, &recomputed);

    for (std::size_t i = 0; i < manifest.rows.size(); ++i) {
        const auto& row = manifest.rows[i];
        const AudioClip raw = load_wav(manifest.resolve(row));
        const AudioClip clip = raw.sample_rate == config.sample_rate
                                   ? raw
                                   : resample(raw, config.sample_rate);
        const std::string stem = sanitize(fs::path(row.path).stem().string());
        write_pitch_csv(estimate_f0(clip), out_dir / (stem + "_f0.csv"));
        write_formant_csv(estimate_formants(clip),
                          out_dir / (stem + "_formants.csv"));
        write_pgm(prepared.images[i], out_dir / (stem + ".pgm"));
    }
    std::printf("features for %zu clips under %s (%zu images computed, "
                "%zu from cache)\n",
                manifest.rows.size(), out_dir.string().c_str(), recomputed,
                manifest.rows.size() - recomputed);
    return 0;
}

int cmd_scatter(const CliConfig& config, const fs::path& manifest_path,
                const fs::path& out_dir) {
    const DatasetManifest manifest = load_manifest(manifest_path);
    fs::create_directories(out_dir);

    std::vector<std::pair<std::string, FormantTrack>> tracks;
    for (const auto& row : manifest.rows) {
        const AudioClip raw = load_wav(manifest.resolve(row));
        const AudioClip clip = raw.sample_rate == config.sample_rate
                                   ? raw
                                   : resample(raw, config.sample_rate);
        tracks.emplace_back("month" + std::to_string(row.month),
                            estimate_formants(clip));
    }
    const ScatterStats stats = scatter_stats(tracks);
    write_scatter_csv(stats, out_dir / "scatter_stats.csv",
                      out_dir / "scatter_points.csv");
    std::printf("scatter stats for %zu groups -> %s\n", stats.size(),
                (out_dir / "scatter_stats.csv").string().c_str());
    return 0;
}

int cmd_train(const CliConfig& config, const fs::path& manifest_path,
              int low_month, int high_month, const fs::path& out_dir) {
    const DatasetManifest manifest = load_manifest(manifest_path);
    fs::create_directories(out_dir);
    const PreparedDataset prepared =
        prepare_images(manifest, out_dir / "image_cache", config.features(),
                       config.jobs);

    std::vector<LabeledImage> data;
    for (std::size_t i = 0; i < prepared.rows.size(); ++i) {
        const int m = prepared.rows[i].month;
        if (m == low_month || m == high_month)
            data.push_back({prepared.images[i], m == high_month ? 1 : 0});
    }
    Model model =
        Model::build(paper_architecture(2), {kImageSize, kImageSize, 1},
                     hash_mix(config.seed, 0x636c69, 0x696e69));
    TrainConfig tc = config.train;
    tc.seed = hash_mix(config.seed, 0x636c69, 0x736866);
    const auto history = train(model, data, tc);

    const fs::path model_path = out_dir / "model.bin";
    save_model(model, model_path);
    write_history_csv(history, out_dir / "history.csv");
    std::printf("trained pair %d%d on %zu clips for %zu epochs; final "
                "train acc %.4f\n",
                low_month, high_month, data.size(), history.size(),
                history.empty() ? 0.0 : history.back().accuracy);
    std::printf("model: %s\n", model_path.string().c_str());
    return 0;
}

int cmd_pairs(const CliConfig& config, const fs::path& manifest_path,
              const fs::path& out_dir, bool gender_split) {
    const DatasetManifest manifest = load_manifest(manifest_path);
    fs::create_directories(out_dir);
    const PreparedDataset prepared =
        prepare_images(manifest, out_dir / "image_cache", config.features(),
                       config.jobs);

    std::set<int> month_set;
    for (const auto& row : prepared.rows) month_set.insert(row.month);
    const std::vector<int> months(month_set.begin(), month_set.end());
    const auto pairs = make_pairs(months, config.full_pairs);

    const auto table = run_pair_table(pairs, prepared, config.experiment());
    write_pair_table_csv(table, out_dir / "pairs.csv");
    write_line_chart_csv(table, out_dir / "line_chart.csv");
    std::string summary = format_summary(&table, nullptr);

    if (gender_split) {
        const auto [male, female] =
            run_gender_split(pairs, prepared, config.experiment());
        write_pair_table_csv(male, out_dir / "pairs_male.csv");
        write_pair_table_csv(female, out_dir / "pairs_female.csv");
        summary += "Male subset\n" + format_summary(&male, nullptr);
        summary += "Female subset\n" + format_summary(&female, nullptr);
    }

    std::ofstream(out_dir / "summary.txt") << summary;
    std::fputs(summary.c_str(), stdout);
    std::printf("reports under %s\n", out_dir.string().c_str());
    return 0;
}

int cmd_diagnose(const CliConfig& config, const fs::path& train_manifest,
                 const std::vector<std::string>& cohort_args,
                 const fs::path& out_dir) {
    const DatasetManifest manifest = load_manifest(train_manifest);
    fs::create_directories(out_dir);
    const fs::path cache = out_dir / "image_cache";
    const PreparedDataset prepared =
        prepare_images(manifest, cache, config.features(), config.jobs);

    const DiagnosisModel model =
        train_diagnosis_model(prepared, config.experiment());

    std::vector<std::pair<std::string, PreparedDataset>> cohorts;
    for (const auto& arg : cohort_args) {
        const std::size_t eq = arg.find('=');
        if (eq == std::string::npos)
            throw InvalidArgument("--test expects name=manifest.csv, got '" +
                                  arg + "'");
        const std::string name = arg.substr(0, eq);
        const DatasetManifest cm = load_manifest(arg.substr(eq + 1));
        cohorts.emplace_back(
            name, prepare_images(cm, cache, config.features(), config.jobs));
    }

    const DiagnosisResult result = run_diagnosis(model, cohorts);
    write_diagnosis_csv(result, out_dir / "diagnosis.csv");
    save_model(model.model, out_dir / "diagnosis_model.bin");
    const std::string summary = format_summary(nullptr, &result);
    std::ofstream(out_dir / "summary.txt") << summary;
    std::fputs(summary.c_str(), stdout);
    std::printf("reports under %s\n", out_dir.string().c_str());
    return 0;
}

int cmd_report(const std::optional<std::string>& pairs_csv,
               const std::optional<std::string>& diagnosis_csv,
               const std::optional<std::string>& out_file) {
    if (!pairs_csv && !diagnosis_csv)
        throw InvalidArgument("report needs --pairs and/or --diagnosis");
    std::optional<PairResultTable> pairs;
    std::optional<DiagnosisResult> diagnosis;
    if (pairs_csv) pairs = read_pair_table_csv(*pairs_csv);
    if (diagnosis_csv) diagnosis = read_diagnosis_csv(*diagnosis_csv);
    const std::string summary =
        format_summary(pairs ? &*pairs : nullptr,
                       diagnosis ? &*diagnosis : nullptr);
    if (out_file)
        std::ofstream(*out_file) << summary;
    else
        std::fputs(summary.c_str(), stdout);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"crykit: infant-cry acoustics, synthesis, and age "
                 "classification toolkit"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
    CommonOpts synth_common;
    add_common(synth, synth_common);
    std::string synth_months = "0-6";
    int per_month = 100;
    std::string synth_out = "corpus";
    std::string pathology = "healthy";
    std::string subject_prefix = "subj";
    std::optional<int> acoustic_month;
    synth->add_option("--months", synth_months, "e.g. 0-6 or 0,3,4");
    synth->add_option("--per-month", per_month, "clips per month");
    synth->add_option("--out", synth_out, "output directory");
    synth->add_option("--pathology", pathology,
                      "pathology label for the manifest");
    synth->add_option("--subject-prefix", subject_prefix,
                      "prefix for synthetic subject ids");
    synth->add_option("--acoustic-month", acoustic_month,
                      "synthesize with this month's acoustics regardless of "
                      "the label months");

    // features
    auto* features =
        app.add_subcommand("features", "extract F0/formant tracks and images");
    CommonOpts features_common;
    add_common(features, features_common);
    std::string features_manifest;
    std::string features_out = "features";
    features->add_option("--manifest", features_manifest, "dataset manifest")
        ->required();
    features->add_option("--out", features_out, "output directory");

    // scatter
    auto* scatter =
        app.add_subcommand("scatter", "per-month formant scatter statistics");
    CommonOpts scatter_common;
    add_common(scatter, scatter_common);
    std::string scatter_manifest;
    std::string scatter_out = "scatter";
    scatter->add_option("--manifest", scatter_manifest, "dataset manifest")
        ->required();
    scatter->add_option("--out", scatter_out, "output directory");

    // train
    auto* train_cmd =
        app.add_subcommand("train", "train one binary age-pair model");
    CommonOpts train_common;
    add_common(train_cmd, train_common);
    std::string train_manifest;
    std::string train_pair = "04";
    std::string train_out = "model";
    train_cmd->add_option("--manifest", train_manifest, "dataset manifest")
        ->required();
    train_cmd->add_option("--pair", train_pair,
                          "two digits, e.g. 04 for months 0 vs 4");
    train_cmd->add_option("--out", train_out, "output directory");

    // pairs
    auto* pairs_cmd = app.add_subcommand(
        "pairs", "binary age-pair table with k-fold cross-validation");
    CommonOpts pairs_common;
    add_common(pairs_cmd, pairs_common);
    std::string pairs_manifest;
    std::string pairs_out = "reports";
    bool gender_split = false;
    pairs_cmd->add_option("--manifest", pairs_manifest, "dataset manifest")
        ->required();
    pairs_cmd->add_option("--out", pairs_out, "output directory");
    pairs_cmd->add_flag("--gender-split", gender_split,
                        "also run per-gender tables");

    // diagnose
    auto* diagnose =
        app.add_subcommand("diagnose", "0-3 vs 4 month screening model");
    CommonOpts diagnose_common;
    add_common(diagnose, diagnose_common);
    std::string diagnose_train;
    std::vector<std::string> diagnose_tests;
    std::string diagnose_out = "reports";
    diagnose
        ->add_option("--train-manifest", diagnose_train,
                     "manifest with months 0-4")
        ->required();
    diagnose->add_option("--test", diagnose_tests,
                         "cohort as name=manifest.csv (repeatable)");
    diagnose->add_option("--out", diagnose_out, "output directory");

    // report
    auto* report =
        app.add_subcommand("report", "re-render a summary from result CSVs");
    std::optional<std::string> report_pairs, report_diagnosis, report_out;
    report->add_option("--pairs", report_pairs, "pairs.csv from `pairs`");
    report->add_option("--diagnosis", report_diagnosis,
                       "diagnosis.csv from `diagnose`");
    report->add_option("--out", report_out, "write summary here instead of "
                                            "stdout");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed())
            return cmd_synth(synth_common.resolve(), synth_months, per_month,
                             synth_out, pathology, subject_prefix,
                             acoustic_month);
        if (features->parsed())
            return cmd_features(features_common.resolve(), features_manifest,
                                features_out);
        if (scatter->parsed())
            return cmd_scatter(scatter_common.resolve(), scatter_manifest,
                               scatter_out);
        if (train_cmd->parsed()) {
            if (train_pair.size() != 2 ||
                !std::isdigit(static_cast<unsigned char>(train_pair[0])) ||
                !std::isdigit(static_cast<unsigned char>(train_pair[1])))
                throw InvalidArgument("--pair expects two digits, e.g. 04");
            return cmd_train(train_common.resolve(), train_manifest,
                             train_pair[0] - '0', train_pair[1] - '0',
                             train_out);
        }
        if (pairs_cmd->parsed())
            return cmd_pairs(pairs_common.resolve(), pairs_manifest,
                             pairs_out, gender_split);
        if (diagnose->parsed())
            return cmd_diagnose(diagnose_common.resolve(), diagnose_train,
                                diagnose_tests, diagnose_out);
        if (report->parsed())
            return cmd_report(report_pairs, report_diagnosis, report_out);
    } catch (const CrykitError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: Unhandled: %s\n", e.what());
        return 2;
    }
    return 0;
}
