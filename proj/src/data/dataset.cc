#include "bdlab/data/dataset.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "bdlab/dsp/wav.h"
#include "bdlab/util/digest.h"
#include "bdlab/util/random.h"

namespace bdlab {

namespace fs = std::filesystem;
using nlohmann::json;

LabeledDataset::LabeledDataset(std::vector<std::string> vocabulary,
                               std::size_t nominal_length, int sample_rate)
    : vocabulary_(std::move(vocabulary)),
      nominal_length_(nominal_length),
      sample_rate_(sample_rate) {
  if (sample_rate_ <= 0) throw std::invalid_argument("LabeledDataset: bad rate");
}

void LabeledDataset::add(std::string id, const Waveform& wave, int label) {
  if (label < 0 || label >= num_classes()) {
    throw std::out_of_range("LabeledDataset: label " + std::to_string(label) +
                            " outside vocabulary of size " +
                            std::to_string(num_classes()));
  }
  if (wave.sample_rate() != sample_rate_) {
    throw std::invalid_argument("LabeledDataset: sample rate mismatch for " + id);
  }
  samples_.push_back(Sample{std::move(id),
                            wave.size() == nominal_length_ ? wave
                                                           : wave.resized(nominal_length_),
                            label});
}

int LabeledDataset::label_index(const std::string& name) const {
  auto it = std::find(vocabulary_.begin(), vocabulary_.end(), name);
  return it == vocabulary_.end() ? -1 : static_cast<int>(it - vocabulary_.begin());
}

std::vector<std::size_t> LabeledDataset::indices_of(int label) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    if (samples_[i].label == label) out.push_back(i);
  }
  return out;
}

LabeledDataset LabeledDataset::subset(const std::vector<std::size_t>& positions) const {
  LabeledDataset out(vocabulary_, nominal_length_, sample_rate_);
  out.samples_.reserve(positions.size());
  for (std::size_t p : positions) out.samples_.push_back(samples_.at(p));
  return out;
}

LabeledDataset LabeledDataset::select_classes(
    const std::vector<std::string>& classes) const {
  std::vector<int> remap(vocabulary_.size(), -1);
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const int k = label_index(classes[i]);
    if (k < 0) throw std::invalid_argument("select_classes: unknown class " + classes[i]);
    remap[static_cast<std::size_t>(k)] = static_cast<int>(i);
  }
  LabeledDataset out(classes, nominal_length_, sample_rate_);
  for (const Sample& s : samples_) {
    const int nl = remap[static_cast<std::size_t>(s.label)];
    if (nl >= 0) out.samples_.push_back(Sample{s.id, s.wave, nl});
  }
  return out;
}

void LabeledDataset::replace_wave(std::size_t pos, const Waveform& wave) {
  Sample& s = samples_.at(pos);
  if (wave.size() != nominal_length_ || wave.sample_rate() != sample_rate_) {
    throw std::invalid_argument("replace_wave: shape mismatch for " + s.id);
  }
  s.wave = wave;
}

std::string LabeledDataset::digest() const {
  Digest d;
  for (const auto& v : vocabulary_) d.update(v);
  d.update(static_cast<std::int64_t>(nominal_length_));
  d.update(static_cast<std::int64_t>(sample_rate_));
  for (const Sample& s : samples_) {
    d.update(s.id);
    d.update(static_cast<std::int64_t>(s.label));
    d.update(s.wave.samples());
  }
  return d.hex();
}

// ---- synthetic corpus ------------------------------------------------------

void SynthConfig::validate() const {
  if (num_classes < 2) throw std::invalid_argument("SynthConfig: num_classes must be >= 2");
  if (samples_per_class < 1) {
    throw std::invalid_argument("SynthConfig: samples_per_class must be >= 1");
  }
  if (!(duration_s > 0.0)) throw std::invalid_argument("SynthConfig: duration_s must be > 0");
  if (sample_rate <= 0) throw std::invalid_argument("SynthConfig: bad sample_rate");
  if (pitch_jitter < 0 || amplitude_jitter < 0 || amplitude_jitter >= 1 ||
      onset_jitter_s < 0 || background_level < 0) {
    throw std::invalid_argument("SynthConfig: jitter ranges must be non-negative");
  }
}

std::string SynthConfig::describe() const {
  std::ostringstream os;
  os.precision(17);
  os << "synth{K=" << num_classes << ",m=" << samples_per_class
     << ",dur=" << duration_s << ",sr=" << sample_rate
     << ",pitch=" << pitch_jitter << ",amp=" << amplitude_jitter
     << ",onset=" << onset_jitter_s << ",bg=" << background_level
     << ",seed=" << seed << "}";
  return os.str();
}

std::string synth_class_name(int k) { return "w" + std::to_string(k); }

namespace {

// Envelope value at normalised time u in [0, 1] for class style `style`.
double envelope(int style, double u) {
  const double pi = std::numbers::pi;
  switch (style % 4) {
    case 0:  // single smooth syllable
      return std::sin(pi * u) * std::sin(pi * u);
    case 1:  // sharp attack, exponential decay
      return (1.0 - std::exp(-u * 40.0)) * std::exp(-3.5 * u);
    case 2:  // two syllables
      return u < 0.45 ? std::pow(std::sin(pi * u / 0.45), 2)
                      : (u > 0.55 ? 0.8 * std::pow(std::sin(pi * (u - 0.55) / 0.45), 2)
                                  : 0.0);
    default:  // rising ramp, quick release
      return u < 0.8 ? std::pow(u / 0.8, 1.5) : std::pow((1.0 - u) / 0.2, 2);
  }
}

}  // namespace

LabeledDataset synth_corpus(const SynthConfig& cfg) {
  cfg.validate();
  const double pi = std::numbers::pi;
  const std::size_t n = static_cast<std::size_t>(std::llround(cfg.duration_s * cfg.sample_rate));
  std::vector<std::string> vocab;
  for (int k = 0; k < cfg.num_classes; ++k) vocab.push_back(synth_class_name(k));
  LabeledDataset out(vocab, n, cfg.sample_rate);

  for (int k = 0; k < cfg.num_classes; ++k) {
    const double f0 = 170.0 * std::pow(1.24, k);
    const double h2 = 0.25 + 0.5 * ((k * 37) % 7) / 6.0;
    const double h3 = 0.15 + 0.4 * ((k * 53) % 5) / 4.0;
    const double glide = (k % 2 == 0 ? 1.0 : -1.0) * (0.05 + 0.03 * (k % 3));
    const double word_s = std::min(0.6 * cfg.duration_s, 0.38 + 0.05 * (k % 3));
    const int style = k;
    for (int i = 0; i < cfg.samples_per_class; ++i) {
      Rng rng = make_rng(cfg.seed, {static_cast<std::uint64_t>(k),
                                    static_cast<std::uint64_t>(i)});
      const double pitch = f0 * (1.0 + uniform_real(rng, -cfg.pitch_jitter, cfg.pitch_jitter));
      const double level = 0.5 * (1.0 + uniform_real(rng, -cfg.amplitude_jitter, cfg.amplitude_jitter));
      const double nominal_onset = 0.5 * (cfg.duration_s - word_s);
      double onset = nominal_onset + uniform_real(rng, -cfg.onset_jitter_s, cfg.onset_jitter_s);
      onset = std::clamp(onset, 0.0, cfg.duration_s - word_s);
      const double phase = uniform_real(rng, 0.0, 2.0 * pi);
      const double norm = 1.0 + h2 + h3;

      std::vector<double> x(n);
      double ph = phase;
      for (std::size_t t = 0; t < n; ++t) {
        const double sec = static_cast<double>(t) / cfg.sample_rate;
        const double u = (sec - onset) / word_s;
        double v = 0.0;
        if (u >= 0.0 && u <= 1.0) {
          const double f = pitch * (1.0 + glide * (u - 0.5));
          ph += 2.0 * pi * f / cfg.sample_rate;
          v = level * envelope(style, u) *
              (std::sin(ph) + h2 * std::sin(2.0 * ph) + h3 * std::sin(3.0 * ph)) / norm;
        }
        v += cfg.background_level * normal(rng);
        x[t] = std::clamp(v, -1.0, 1.0);
      }
      char stem[32];
      std::snprintf(stem, sizeof stem, "%04d", i);
      out.add(vocab[k] + "/" + stem, Waveform(std::move(x), cfg.sample_rate), k);
    }
  }
  return out;
}

// ---- disk layout -----------------------------------------------------------

LabeledDataset load_dataset(const fs::path& root, int sample_rate,
                            std::size_t nominal_length) {
  if (!fs::is_directory(root)) {
    throw std::runtime_error("load_dataset: not a directory: " + root.string());
  }
  std::vector<fs::path> class_dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) class_dirs.push_back(e.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) {
    throw std::runtime_error("load_dataset: no class directories under " + root.string());
  }

  std::vector<std::string> vocab;
  std::vector<std::vector<std::pair<std::string, Waveform>>> waves;
  std::size_t longest = 0;
  for (const fs::path& dir : class_dirs) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file() && e.path().extension() == ".wav") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) {
      throw std::runtime_error("load_dataset: empty class directory " + dir.string());
    }
    vocab.push_back(dir.filename().string());
    auto& bucket = waves.emplace_back();
    for (const fs::path& f : files) {
      Waveform w = load_wav(f, sample_rate);
      longest = std::max(longest, w.size());
      bucket.emplace_back(vocab.back() + "/" + f.stem().string(), std::move(w));
    }
  }
  LabeledDataset out(vocab, nominal_length ? nominal_length : longest, sample_rate);
  for (std::size_t k = 0; k < waves.size(); ++k) {
    for (auto& [id, w] : waves[k]) out.add(id, w, static_cast<int>(k));
  }
  return out;
}

void save_dataset(const LabeledDataset& d, const fs::path& root) {
  for (const Sample& s : d.samples()) {
    const auto slash = s.id.find('/');
    const std::string stem = slash == std::string::npos ? s.id : s.id.substr(slash + 1);
    const fs::path dir = root / d.vocabulary()[static_cast<std::size_t>(s.label)];
    fs::create_directories(dir);
    save_wav(s.wave, dir / (stem + ".wav"));
  }
}

// ---- splits ----------------------------------------------------------------

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw std::invalid_argument("unknown split '" + s + "'");
}

LabeledDataset SplitAssignment::take(const LabeledDataset& d, Split which) const {
  std::vector<std::size_t> pos;
  for (std::size_t i = 0; i < d.size(); ++i) {
    auto it = by_id.find(d[i].id);
    if (it == by_id.end()) {
      throw std::runtime_error("split: sample " + d[i].id + " has no assignment");
    }
    if (it->second == which) pos.push_back(i);
  }
  return d.subset(pos);
}

void SplitAssignment::save(const fs::path& path, const std::string& config_digest) const {
  json j;
  j["schema_version"] = 1;
  if (!config_digest.empty()) j["config_digest"] = config_digest;
  json a = json::object();
  for (const auto& [id, s] : by_id) a[id] = split_name(s);
  j["assignments"] = a;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

SplitAssignment SplitAssignment::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  const json j = json::parse(in);
  if (j.value("schema_version", 0) != 1) {
    throw std::runtime_error(path.string() + ": unsupported split schema");
  }
  SplitAssignment s;
  for (const auto& [id, v] : j.at("assignments").items()) {
    s.by_id[id] = parse_split(v.get<std::string>());
  }
  return s;
}

SplitAssignment stratified_split(const LabeledDataset& d, std::uint64_t seed,
                                 double train, double val) {
  if (train < 0 || val < 0 || train + val > 1.0) {
    throw std::invalid_argument("stratified_split: bad fractions");
  }
  SplitAssignment out;
  for (int k = 0; k < d.num_classes(); ++k) {
    std::vector<std::size_t> idx = d.indices_of(k);
    Rng rng = make_rng(seed, {0x73706c6974ULL, static_cast<std::uint64_t>(k)});
    shuffle(idx.begin(), idx.end(), rng);
    const auto n = idx.size();
    const auto n_train = static_cast<std::size_t>(std::llround(train * n));
    const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(val * n)));
    for (std::size_t i = 0; i < n; ++i) {
      const Split s = i < n_train ? Split::kTrain
                                  : (i < n_train + n_val ? Split::kVal : Split::kTest);
      out.by_id[d[idx[i]].id] = s;
    }
  }
  return out;
}

// ---- noise bank ------------------------------------------------------------

NoiseBank synth_noise_bank(const NoiseBankOptions& opts) {
  if (opts.synth_count < 1) throw std::invalid_argument("synth_noise_bank: count < 1");
  const double pi = std::numbers::pi;
  const std::size_t n =
      static_cast<std::size_t>(std::llround(opts.synth_duration_s * opts.sample_rate));
  std::vector<Waveform> bank;
  bank.reserve(static_cast<std::size_t>(opts.synth_count));
  for (int i = 0; i < opts.synth_count; ++i) {
    Rng rng = make_rng(opts.seed, {0x62616e6bULL, static_cast<std::uint64_t>(i)});
    // RBJ band-pass biquad with a random centre and bandwidth.
    const double fc = std::exp(uniform_real(rng, std::log(150.0), std::log(5000.0)));
    const double q = uniform_real(rng, 0.4, 3.0);
    const double w0 = 2.0 * pi * fc / opts.sample_rate;
    const double alpha = std::sin(w0) / (2.0 * q);
    const double a0 = 1.0 + alpha;
    const double b0 = alpha / a0, b2 = -alpha / a0;
    const double a1 = -2.0 * std::cos(w0) / a0, a2 = (1.0 - alpha) / a0;

    // Burst envelope: a few raised-cosine bumps over a low floor.
    const int bursts = static_cast<int>(uniform_int(rng, 1, 4));
    std::vector<double> env(n, uniform_real(rng, 0.05, 0.3));
    for (int b = 0; b < bursts; ++b) {
      const double len = uniform_real(rng, 0.1, 0.6) * n;
      const double start = uniform_real(rng, 0.0, n - len);
      const double gain = uniform_real(rng, 0.5, 1.0);
      for (std::size_t t = static_cast<std::size_t>(start);
           t < static_cast<std::size_t>(start + len) && t < n; ++t) {
        const double u = (t - start) / len;
        env[t] += gain * std::pow(std::sin(pi * u), 2);
      }
    }

    std::vector<double> x(n);
    double x1 = 0, x2 = 0, y1 = 0, y2 = 0, peak = 0;
    for (std::size_t t = 0; t < n; ++t) {
      const double in = normal(rng);
      const double y = b0 * in + b2 * x2 - a1 * y1 - a2 * y2;
      x2 = x1; x1 = in; y2 = y1; y1 = y;
      x[t] = y * env[t];
      peak = std::max(peak, std::abs(x[t]));
    }
    const double level = uniform_real(rng, 0.2, 0.6) / std::max(peak, 1e-12);
    for (double& v : x) v = std::clamp(v * level, -1.0, 1.0);
    bank.emplace_back(std::move(x), opts.sample_rate);
  }
  return NoiseBank(std::move(bank));
}

NoiseBank load_noise_bank(const std::optional<fs::path>& dir,
                          const NoiseBankOptions& opts) {
  std::vector<fs::path> files;
  if (dir && fs::is_directory(*dir)) {
    for (const auto& e : fs::directory_iterator(*dir)) {
      if (e.is_regular_file() && e.path().extension() == ".wav") files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) {
    if (!opts.synthesize_if_missing) {
      throw std::runtime_error("load_noise_bank: no readable WAV files in " +
                               (dir ? dir->string() : std::string("<none>")));
    }
    return synth_noise_bank(opts);
  }
  std::vector<Waveform> noises;
  for (const fs::path& f : files) noises.push_back(load_wav(f, opts.sample_rate));
  return NoiseBank(std::move(noises));
}

}  // namespace bdlab
