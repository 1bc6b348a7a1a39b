#include "crykit/config.hpp"

#include <fstream>

#include "crykit/errors.hpp"

namespace crykit {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t consumed = 0;
        const double v = std::stod(value, &consumed);
        if (consumed != value.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw InvalidArgument("config key '" + key + "': bad number '" +
                              value + "'");
    }
}

long long parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t consumed = 0;
        const long long v = std::stoll(value, &consumed);
        if (consumed != value.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw InvalidArgument("config key '" + key + "': bad integer '" +
                              value + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw InvalidArgument("config key '" + key + "': bad boolean '" + value +
                          "'");
}

}  // namespace

void CliConfig::set(const std::string& key, const std::string& value) {
    if (key == "seed")
        seed = static_cast<std::uint64_t>(parse_int(key, value));
    else if (key == "sample_rate")
        sample_rate = static_cast<int>(parse_int(key, value));
    else if (key == "jobs")
        jobs = static_cast<int>(parse_int(key, value));
    else if (key == "stft.window_len")
        stft.window_len = static_cast<int>(parse_int(key, value));
    else if (key == "stft.hop")
        stft.hop = static_cast<int>(parse_int(key, value));
    else if (key == "stft.fft_len")
        stft.fft_len = static_cast<int>(parse_int(key, value));
    else if (key == "image.db_floor")
        db_floor = parse_double(key, value);
    else if (key == "synth.f0_low")
        synth.f0_low = parse_double(key, value);
    else if (key == "synth.f0_high")
        synth.f0_high = parse_double(key, value);
    else if (key == "synth.f1_low")
        synth.f1_low = parse_double(key, value);
    else if (key == "synth.f1_high")
        synth.f1_high = parse_double(key, value);
    else if (key == "synth.f2_low")
        synth.f2_low = parse_double(key, value);
    else if (key == "synth.f2_high")
        synth.f2_high = parse_double(key, value);
    else if (key == "synth.f0_sd_low")
        synth.f0_sd_low = parse_double(key, value);
    else if (key == "synth.f0_sd_high")
        synth.f0_sd_high = parse_double(key, value);
    else if (key == "synth.f1_sd_low")
        synth.f1_sd_low = parse_double(key, value);
    else if (key == "synth.f1_sd_high")
        synth.f1_sd_high = parse_double(key, value);
    else if (key == "synth.f2_sd_low")
        synth.f2_sd_low = parse_double(key, value);
    else if (key == "synth.f2_sd_high")
        synth.f2_sd_high = parse_double(key, value);
    else if (key == "synth.gap_prob_month3")
        synth.gap_prob_month3 = parse_double(key, value);
    else if (key == "synth.gap_prob_month4")
        synth.gap_prob_month4 = parse_double(key, value);
    else if (key == "synth.creak_prob")
        synth.creak_prob = parse_double(key, value);
    else if (key == "corpus.male_fraction")
        male_fraction = parse_double(key, value);
    else if (key == "corpus.clips_per_subject")
        clips_per_subject = static_cast<int>(parse_int(key, value));
    else if (key == "train.epochs")
        train.epochs = static_cast<int>(parse_int(key, value));
    else if (key == "train.batch_size")
        train.batch_size = static_cast<int>(parse_int(key, value));
    else if (key == "train.lr")
        train.adam.lr = parse_double(key, value);
    else if (key == "train.beta1")
        train.adam.beta1 = parse_double(key, value);
    else if (key == "train.beta2")
        train.adam.beta2 = parse_double(key, value);
    else if (key == "train.eps")
        train.adam.eps = parse_double(key, value);
    else if (key == "train.early_stop_patience")
        train.early_stop_patience = static_cast<int>(parse_int(key, value));
    else if (key == "train.early_stop_accuracy")
        train.early_stop_accuracy = parse_double(key, value);
    else if (key == "runs.n_runs")
        n_runs = static_cast<int>(parse_int(key, value));
    else if (key == "runs.k")
        k = static_cast<int>(parse_int(key, value));
    else if (key == "runs.full_pairs")
        full_pairs = parse_bool(key, value);
    else if (key == "paths.corpus_dir")
        corpus_dir = value;
    else if (key == "paths.cache_dir")
        cache_dir = value;
    else if (key == "paths.report_dir")
        report_dir = value;
    else
        throw InvalidArgument("unknown config key '" + key + "'");
}

CliConfig CliConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    CliConfig config;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        const std::string stripped = trim(line);
        if (stripped.empty()) continue;
        const std::size_t eq = stripped.find('=');
        if (eq == std::string::npos)
            throw InvalidArgument(path.string() + ":" +
                                  std::to_string(line_no) +
                                  ": expected 'key = value'");
        config.set(trim(stripped.substr(0, eq)),
                   trim(stripped.substr(eq + 1)));
    }
    return config;
}

}  // namespace crykit
