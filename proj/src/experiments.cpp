#include "crykit/experiments.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "crykit/audio_io.hpp"
#include "crykit/errors.hpp"
#include "crykit/rng.hpp"

namespace crykit {

namespace {

std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Runs fn(0..n-1) across up to `jobs` threads. Work items are claimed
// from an atomic counter; each item writes only its own slot, so the
// result is identical for any job count.
void parallel_for(std::size_t n, int jobs,
                  const std::function<void(std::size_t)>& fn) {
    if (n == 0) return;
    const int workers =
        std::max(1, std::min<int>(jobs, static_cast<int>(n)));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> threads;
    for (int t = 0; t < workers; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    if (error) std::rethrow_exception(error);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(v));
    return buf;
}

LabeledImage labeled(const PreparedDataset& data, std::size_t idx,
                     int label) {
    return LabeledImage{data.images[idx], label};
}

// Train/test split for one (run, fold) job, then one accuracy number.
double train_and_test(const PreparedDataset& data,
                      const std::vector<std::size_t>& indices,
                      const std::vector<int>& labels,
                      const FoldAssignment& folds, int fold,
                      const ExperimentConfig& config, std::uint64_t job_tag) {
    std::vector<LabeledImage> train_set, test_set;
    for (std::size_t i = 0; i < indices.size(); ++i) {
        LabeledImage li = labeled(data, indices[i], labels[i]);
        if (folds.fold_of[i] == fold)
            test_set.push_back(std::move(li));
        else
            train_set.push_back(std::move(li));
    }
    Model model = Model::build(paper_architecture(2), {kImageSize, kImageSize, 1},
                               hash_mix(config.base_seed, job_tag, 0x696e69));
    TrainConfig tc = config.train;
    tc.seed = hash_mix(config.base_seed, job_tag, 0x736866);
    train(model, train_set, tc);
    return evaluate(model, test_set);
}

}  // namespace

PreparedDataset prepare_images(const DatasetManifest& manifest,
                               const std::filesystem::path& cache_dir,
                               const FeatureConfig& config, int jobs,
                               std::size_t* recompute_count) {
    std::error_code ec;
    std::filesystem::create_directories(cache_dir, ec);
    if (ec || !std::filesystem::is_directory(cache_dir))
        throw IoError("cannot create cache dir " + cache_dir.string());

    char params[160];
    std::snprintf(params, sizeof(params), "sr=%d;win=%d;hop=%d;fft=%d;db=%g",
                  config.sample_rate, config.stft.window_len, config.stft.hop,
                  config.stft.fft_len, config.db_floor);
    const std::uint64_t params_hash = fnv1a(params);

    PreparedDataset out;
    out.rows = manifest.rows;
    out.images.resize(manifest.rows.size());
    std::atomic<std::size_t> recomputed{0};

    parallel_for(manifest.rows.size(), jobs, [&](std::size_t i) {
        const auto wav_path = manifest.resolve(manifest.rows[i]);
        std::ifstream in(wav_path, std::ios::binary);
        if (!in) throw IoError("cannot open " + wav_path.string());
        std::string bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
        const std::uint64_t key = fnv1a(bytes, params_hash);
        const auto cached = cache_dir / (hex64(key) + ".bin");
        if (std::filesystem::exists(cached)) {
            out.images[i] = read_image_bin(cached);
            return;
        }
        AudioClip clip = load_wav(wav_path);
        if (clip.sample_rate != config.sample_rate)
            clip = resample(clip, config.sample_rate);
        Spectrogram spec;
        try {
            spec = stft(clip, config.stft);
        } catch (const ClipTooShort&) {
            throw ClipTooShort(wav_path.string() +
                               ": clip shorter than one analysis window");
        }
        out.images[i] = render_image(spec, config.db_floor);
        write_image_bin(out.images[i], cached);
        recomputed.fetch_add(1);
    });

    if (recompute_count) *recompute_count = recomputed.load();
    return out;
}

std::vector<AgePairSpec> make_pairs(const std::vector<int>& months,
                                    bool full_pairs) {
    for (std::size_t i = 1; i < months.size(); ++i)
        if (months[i] <= months[i - 1])
            throw InvalidArgument("make_pairs: months must be sorted, distinct");
    std::vector<AgePairSpec> pairs;
    for (std::size_t i = 0; i < months.size(); ++i) {
        if (!full_pairs && months[i] > 2) continue;
        for (std::size_t j = i + 1; j < months.size(); ++j)
            pairs.push_back({months[i], months[j]});
    }
    return pairs;
}

FoldAssignment kfold_split(const std::vector<int>& labels, int k,
                           std::uint64_t seed) {
    if (k < 2) throw InvalidArgument("kfold_split: k must be >= 2");
    if (labels.empty()) throw InvalidArgument("kfold_split: no samples");

    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i)
        by_class[labels[i]].push_back(i);
    for (const auto& [label, idxs] : by_class)
        if (idxs.size() < static_cast<std::size_t>(k))
            throw ClassTooSmall("class " + std::to_string(label) + " has " +
                                std::to_string(idxs.size()) +
                                " samples, need >= " + std::to_string(k));

    FoldAssignment fa;
    fa.k = k;
    fa.fold_of.assign(labels.size(), -1);

    // Remainders rotate across classes so total fold sizes also differ
    // by at most one.
    int offset = 0;
    int class_rank = 0;
    for (auto& [label, idxs] : by_class) {
        Rng rng(hash_mix(seed, 0x666f6c64, class_rank++));
        rng.shuffle(idxs);
        const int base = static_cast<int>(idxs.size()) / k;
        const int rem = static_cast<int>(idxs.size()) % k;
        std::size_t cursor = 0;
        for (int f = 0; f < k; ++f) {
            int quota = base;
            if (((f - offset) % k + k) % k < rem) ++quota;
            for (int q = 0; q < quota; ++q)
                fa.fold_of[idxs[cursor++]] = f;
        }
        offset = (offset + rem) % k;
    }
    return fa;
}

double RunResult::mean() const {
    if (accuracies.empty()) return 0.0;
    double s = 0.0;
    for (double a : accuracies) s += a;
    return s / static_cast<double>(accuracies.size());
}

RunResult run_binary_pair(const AgePairSpec& pair, const PreparedDataset& data,
                          const ExperimentConfig& config) {
    if (pair.low_month >= pair.high_month)
        throw InvalidArgument("pair months must satisfy low < high");
    if (config.n_runs < 1 || config.k < 2)
        throw InvalidArgument("run_binary_pair: need n_runs >= 1, k >= 2");

    std::vector<std::size_t> indices;
    std::vector<int> labels;
    for (std::size_t i = 0; i < data.rows.size(); ++i) {
        const int m = data.rows[i].month;
        if (m == pair.low_month || m == pair.high_month) {
            indices.push_back(i);
            labels.push_back(m == pair.high_month ? 1 : 0);
        }
    }
    for (int side : {0, 1})
        if (std::count(labels.begin(), labels.end(), side) == 0)
            throw MissingMonth(
                "month " +
                std::to_string(side ? pair.high_month : pair.low_month) +
                " absent from the dataset");

    RunResult result;
    result.experiment_id = "pair_" + std::to_string(pair.low_month) +
                           std::to_string(pair.high_month);
    result.n_runs = config.n_runs;
    result.k = config.k;
    result.accuracies.assign(
        static_cast<std::size_t>(config.n_runs) * config.k, 0.0);

    // Fold assignments are drawn up front (cheap and sequential); the
    // train/test jobs then fill disjoint slots in parallel.
    std::vector<FoldAssignment> folds(config.n_runs);
    for (int r = 0; r < config.n_runs; ++r)
        folds[r] = kfold_split(labels, config.k,
                               hash_mix(config.base_seed, 0x72756e, r));

    const std::uint64_t pair_tag =
        hash_mix(static_cast<std::uint64_t>(pair.low_month),
                 static_cast<std::uint64_t>(pair.high_month));
    parallel_for(result.accuracies.size(), config.jobs, [&](std::size_t slot) {
        const int r = static_cast<int>(slot) / config.k;
        const int f = static_cast<int>(slot) % config.k;
        result.accuracies[slot] =
            train_and_test(data, indices, labels, folds[r], f, config,
                           hash_mix(pair_tag, slot));
    });
    return result;
}

PairResultTable run_pair_table(const std::vector<AgePairSpec>& pairs,
                               const PreparedDataset& data,
                               const ExperimentConfig& config) {
    PairResultTable table;
    for (const auto& pair : pairs)
        table.entries.emplace_back(pair, run_binary_pair(pair, data, config));
    return table;
}

std::pair<PairResultTable, PairResultTable> run_gender_split(
    const std::vector<AgePairSpec>& pairs, const PreparedDataset& data,
    const ExperimentConfig& config) {
    std::set<int> months;
    for (const auto& p : pairs) {
        months.insert(p.low_month);
        months.insert(p.high_month);
    }
    for (int m : months) {
        bool has_male = false, has_female = false;
        for (const auto& row : data.rows) {
            if (row.month != m) continue;
            if (row.gender == Gender::male) has_male = true;
            if (row.gender == Gender::female) has_female = true;
        }
        if (!has_male || !has_female)
            throw MissingGender("month " + std::to_string(m) + " lacks " +
                                (has_male ? "female" : "male") + " rows");
    }

    auto subset = [&](Gender g) {
        PreparedDataset sub;
        for (std::size_t i = 0; i < data.rows.size(); ++i) {
            if (data.rows[i].gender != g) continue;
            sub.rows.push_back(data.rows[i]);
            sub.images.push_back(data.images[i]);
        }
        return sub;
    };

    const PreparedDataset male = subset(Gender::male);
    const PreparedDataset female = subset(Gender::female);
    return {run_pair_table(pairs, male, config),
            run_pair_table(pairs, female, config)};
}

DiagnosisModel train_diagnosis_model(const PreparedDataset& data,
                                     const ExperimentConfig& config) {
    std::array<std::vector<std::size_t>, 5> by_month;
    for (std::size_t i = 0; i < data.rows.size(); ++i) {
        const int m = data.rows[i].month;
        if (m >= 0 && m <= 4) by_month[m].push_back(i);
    }
    for (int m = 0; m <= 4; ++m)
        if (by_month[m].empty())
            throw MissingMonth("diagnosis training requires month " +
                               std::to_string(m));

    // Class 0 draws equally from months 0-3; class 1 is month 4,
    // subsampled to match.
    std::size_t per_month = by_month[4].size() / 4;
    for (int m = 0; m <= 3; ++m)
        per_month = std::min(per_month, by_month[m].size());
    if (per_month == 0)
        throw ClassTooSmall("diagnosis training needs >= 4 month-4 samples "
                            "and >= 1 sample per month 0-3");

    std::vector<LabeledImage> training;
    DiagnosisModel out;
    for (int m = 0; m <= 4; ++m) {
        auto idxs = by_month[m];
        Rng rng(hash_mix(config.base_seed, 0x64696167, m));
        rng.shuffle(idxs);
        const std::size_t take = m == 4 ? per_month * 4 : per_month;
        for (std::size_t i = 0; i < take; ++i) {
            training.push_back(labeled(data, idxs[i], m == 4 ? 1 : 0));
            out.train_subjects.insert(data.rows[idxs[i]].subject_id);
        }
    }

    out.model =
        Model::build(paper_architecture(2), {kImageSize, kImageSize, 1},
                     hash_mix(config.base_seed, 0x64696167, 0x696e69));
    TrainConfig tc = config.train;
    tc.seed = hash_mix(config.base_seed, 0x64696167, 0x736866);
    train(out.model, training, tc);
    return out;
}

DiagnosisResult run_diagnosis(
    const DiagnosisModel& model,
    const std::vector<std::pair<std::string, PreparedDataset>>& cohorts) {
    DiagnosisResult result;
    for (const auto& [name, cohort] : cohorts) {
        for (const auto& row : cohort.rows)
            if (model.train_subjects.count(row.subject_id))
                throw SubjectLeakage("cohort '" + name + "' subject " +
                                     row.subject_id +
                                     " appears in the training set");

        CohortResult cr;
        cr.name = name;
        cr.n = static_cast<int>(cohort.rows.size());
        if (cr.n == 0) {
            cr.fraction_younger = std::nan("");
            cr.accuracy = std::nan("");
            result.cohorts.push_back(std::move(cr));
            continue;
        }
        int younger = 0, correct = 0;
        for (std::size_t i = 0; i < cohort.rows.size(); ++i) {
            const int verdict = predict(model.model, cohort.images[i]);
            cr.verdicts.push_back(verdict);
            if (verdict == 0) ++younger;
            const int truth = cohort.rows[i].month == 4 ? 1 : 0;
            if (verdict == truth) ++correct;
        }
        cr.fraction_younger = static_cast<double>(younger) / cr.n;
        cr.accuracy = static_cast<double>(correct) / cr.n;
        result.cohorts.push_back(std::move(cr));
    }
    return result;
}

void write_pair_table_csv(const PairResultTable& table,
                          const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "low_month,high_month,mean_accuracy,n_runs,k\n";
    for (const auto& [pair, result] : table.entries)
        out << pair.low_month << ',' << pair.high_month << ','
            << fmt_g17(result.mean()) << ',' << result.n_runs << ','
            << result.k << '\n';
    if (!out) throw IoError("write failed for " + path.string());
}

PairResultTable read_pair_table_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line))
        throw MalformedManifest(path.string() + ": empty file");
    PairResultTable table;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 5)
            throw MalformedManifest(path.string() + ": expected 5 fields");
        AgePairSpec pair{std::stoi(f[0]), std::stoi(f[1])};
        RunResult r;
        r.experiment_id = "pair_" + f[0] + f[1];
        r.n_runs = std::stoi(f[3]);
        r.k = std::stoi(f[4]);
        // The flat file stores only the mean; keep it as a single record.
        r.accuracies = {std::stod(f[2])};
        table.entries.emplace_back(pair, std::move(r));
    }
    return table;
}

void write_line_chart_csv(const PairResultTable& table,
                          const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "anchor_month,comparison_month,accuracy\n";
    for (int anchor : {0, 1, 2})
        for (const auto& [pair, result] : table.entries)
            if (pair.low_month == anchor)
                out << anchor << ',' << pair.high_month << ','
                    << fmt_g17(result.mean()) << '\n';
    if (!out) throw IoError("write failed for " + path.string());
}

void write_diagnosis_csv(const DiagnosisResult& result,
                         const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "cohort,n,fraction_younger,accuracy\n";
    for (const auto& c : result.cohorts) {
        out << c.name << ',' << c.n << ',';
        if (c.n > 0)
            out << fmt_g17(c.fraction_younger) << ','
                << fmt_g17(c.accuracy);
        else
            out << ',';
        out << '\n';
    }
    if (!out) throw IoError("write failed for " + path.string());
}

DiagnosisResult read_diagnosis_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line))
        throw MalformedManifest(path.string() + ": empty file");
    DiagnosisResult result;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 4)
            throw MalformedManifest(path.string() + ": expected 4 fields");
        CohortResult c;
        c.name = f[0];
        c.n = std::stoi(f[1]);
        c.fraction_younger = f[2].empty() ? std::nan("") : std::stod(f[2]);
        c.accuracy = f[3].empty() ? std::nan("") : std::stod(f[3]);
        result.cohorts.push_back(std::move(c));
    }
    return result;
}

std::string format_summary(const PairResultTable* pairs,
                           const DiagnosisResult* diagnosis) {
    std::ostringstream out;
    char buf[160];
    if (pairs) {
        out << "Binary age-pair classification (mean test accuracy over "
               "runs x folds)\n";
        for (const auto& [pair, result] : pairs->entries) {
            std::snprintf(buf, sizeof(buf),
                          "  pair %d%d: %6.2f%%  (%d runs x %d folds)\n",
                          pair.low_month, pair.high_month,
                          100.0 * result.mean(), result.n_runs, result.k);
            out << buf;
        }
    }
    if (diagnosis) {
        out << "Vocal-tract development screening (class 0 = months 0-3, "
               "class 1 = month 4)\n";
        for (const auto& c : diagnosis->cohorts) {
            if (c.n == 0) {
                std::snprintf(buf, sizeof(buf), "  %s: no samples\n",
                              c.name.c_str());
            } else {
                std::snprintf(
                    buf, sizeof(buf),
                    "  %s (n=%d): %6.2f%% classified younger, %6.2f%% "
                    "matching labeled month\n",
                    c.name.c_str(), c.n, 100.0 * c.fraction_younger,
                    100.0 * c.accuracy);
            }
            out << buf;
        }
    }
    return out.str();
}

}  // namespace crykit
