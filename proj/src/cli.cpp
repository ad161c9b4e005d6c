#include "ecgcrnn/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>

#include "ecgcrnn/checkpoint.hpp"
#include "ecgcrnn/error.hpp"
#include "ecgcrnn/eval.hpp"
#include "ecgcrnn/log.hpp"
#include "ecgcrnn/stream.hpp"

namespace ecgcrnn::cli {

namespace {

// --- little-endian helpers ---------------------------------------------

void put_u32(std::vector<std::byte>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFF));
}
void put_u64(std::vector<std::byte>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFF));
}
void put_f64(std::vector<std::byte>& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  put_u64(out, bits);
}
void put_str(std::vector<std::byte>& out, std::string_view s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  for (char c : s) out.push_back(static_cast<std::byte>(c));
}

struct Reader {
  std::span<const std::byte> bytes;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (bytes.size() - pos < n) throw Error(Errc::TruncatedFile, "prepared cache is truncated");
  }
  std::uint64_t uint(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
    pos += static_cast<std::size_t>(width);
    return v;
  }
  double f64() {
    const std::uint64_t bits = uint(8);
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }
  std::string str() {
    const auto n = static_cast<std::size_t>(uint(4));
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
    pos += n;
    return s;
  }
};

void write_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

void write_file(const std::filesystem::path& path, std::span<const std::byte> bytes) {
  write_file(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

std::string read_text(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

std::map<std::string, std::string> parse_config(std::string_view text) {
  std::map<std::string, std::string> out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string content = trim(line);
    if (content.empty()) continue;
    const auto eq = content.find('=');
    if (eq == std::string::npos)
      throw Error(Errc::BadConfig, "config line " + std::to_string(line_no) + " has no '='");
    std::string key = trim(std::string_view(content).substr(0, eq));
    std::string value = trim(std::string_view(content).substr(eq + 1));
    if (key.empty()) throw Error(Errc::BadConfig, "config line " + std::to_string(line_no) + " has no key");
    std::replace(key.begin(), key.end(), '_', '-');
    if (!out.emplace(key, value).second)
      throw Error(Errc::BadConfig, "config key '" + key + "' repeated on line " + std::to_string(line_no));
  }
  return out;
}

std::vector<std::byte> encode_cache(const PreparedCache& cache) {
  std::vector<std::byte> out;
  for (char c : kCacheMagic) out.push_back(static_cast<std::byte>(c));
  put_u32(out, kCacheVersion);
  put_str(out, cache.tag);
  put_f64(out, cache.source_fs);
  put_f64(out, cache.target_fs);
  put_f64(out, cache.scale);
  put_u32(out, static_cast<std::uint32_t>(cache.records.size()));
  for (const auto& r : cache.records) {
    put_str(out, r.id);
    out.push_back(static_cast<std::byte>(index_of(r.label)));
    out.push_back(static_cast<std::byte>(r.part));
    put_u64(out, r.samples.size());
    for (double v : r.samples) put_f64(out, v);
  }
  return out;
}

PreparedCache decode_cache(std::span<const std::byte> bytes, const std::string& expected_tag) {
  Reader rd{bytes};
  rd.need(8);
  if (std::memcmp(bytes.data(), kCacheMagic, 8) != 0) throw Error(Errc::BadCheckpoint, "not a prepared cache");
  rd.pos = 8;
  const auto version = rd.uint(4);
  if (version != kCacheVersion)
    throw Error(Errc::BadCheckpoint, "prepared cache version " + std::to_string(version) + " is not supported");
  PreparedCache c;
  c.tag = rd.str();
  if (!expected_tag.empty() && c.tag != expected_tag)
    throw Error(Errc::BadCheckpoint, "prepared cache was built with front end '" + c.tag + "', expected '" +
                                         expected_tag + "'; rerun prepare");
  c.source_fs = rd.f64();
  c.target_fs = rd.f64();
  c.scale = rd.f64();
  const auto n = rd.uint(4);
  c.records.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    PreparedRecord r;
    r.id = rd.str();
    r.label = class_at(rd.uint(1));
    const auto part = rd.uint(1);
    if (part > 2) throw Error(Errc::BadCheckpoint, "bad split part in prepared cache");
    r.part = static_cast<SplitPart>(part);
    const auto count = rd.uint(8);
    rd.need(count * 8);
    r.samples.resize(count);
    for (auto& v : r.samples) v = rd.f64();
    c.records.push_back(std::move(r));
  }
  if (rd.pos != bytes.size()) throw Error(Errc::BadCheckpoint, "trailing bytes in prepared cache");
  return c;
}

std::vector<pipeline::LabeledSignal> signals_of(const PreparedCache& cache, SplitPart part) {
  std::vector<pipeline::LabeledSignal> out;
  for (const auto& r : cache.records) {
    if (r.part != part) continue;
    pipeline::LabeledSignal s{r.id, r.samples, r.label};
    for (auto& v : s.samples) v /= cache.scale;
    out.push_back(std::move(s));
  }
  return out;
}

std::string dataset_report(const DatasetManifest& manifest, const SplitAssignment& split) {
  struct Column {
    std::string name;
    ClassBreakdown shares;
    std::size_t total;
  };
  std::vector<Column> cols;
  auto add = [&](std::string name, const std::vector<std::string>& ids) {
    if (ids.empty()) return;
    const auto sub = subset(manifest, ids);
    cols.push_back({std::move(name), class_breakdown(sub), sub.entries.size()});
  };
  cols.push_back({"all", class_breakdown(manifest), manifest.entries.size()});
  add("train", split.train);
  add("test", split.test);
  add("val", split.validation);

  std::string out = "class               ";
  for (const auto& c : cols) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%16s", c.name.c_str());
    out += buf;
  }
  out += '\n';
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    std::string name(class_name(class_at(k)));
    name.resize(20, ' ');
    out += name;
    for (const auto& c : cols) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%8zu (%4.1f%%)", c.shares[k].count, 100.0 * c.shares[k].proportion);
      out += buf;
    }
    out += '\n';
  }
  out += "total               ";
  for (const auto& c : cols) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%8zu        ", c.total);
    out += buf;
  }
  out += '\n';
  return out;
}

std::string history_svg(std::span<const train::EpochRecord> history) {
  const double width = 640, panel = 220, margin = 50, gap = 40;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
     << 2 * panel + gap + 2 * margin << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  const std::size_t n = history.size();
  const double x0 = margin, x1 = width - 20;
  auto xpos = [&](std::size_t i) { return n <= 1 ? x0 : x0 + (x1 - x0) * static_cast<double>(i) / static_cast<double>(n - 1); };

  auto draw = [&](double top, const char* title, auto train_of, auto test_of) {
    double lo = 0.0, hi = 1e-12;
    for (const auto& r : history) hi = std::max({hi, train_of(r), test_of(r)});
    hi *= 1.05;
    const double bottom = top + panel;
    auto ypos = [&](double v) { return bottom - panel * (v - lo) / (hi - lo); };
    os << "<rect x=\"" << x0 << "\" y=\"" << top << "\" width=\"" << x1 - x0 << "\" height=\"" << panel
       << "\" fill=\"none\" stroke=\"#888\"/>\n";
    os << "<text x=\"" << x0 << "\" y=\"" << top - 6 << "\">" << title << "</text>\n";
    os << "<text x=\"" << x0 - 6 << "\" y=\"" << top + 10 << "\" text-anchor=\"end\">" << fmt("%.3g", hi) << "</text>\n";
    os << "<text x=\"" << x0 - 6 << "\" y=\"" << bottom << "\" text-anchor=\"end\">0</text>\n";
    auto line = [&](auto get, const char* colour) {
      if (n == 0) return;
      os << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t i = 0; i < n; ++i) os << xpos(i) << ',' << ypos(get(history[i])) << ' ';
      os << "\"/>\n";
    };
    line(train_of, "#1f77b4");
    line(test_of, "#d62728");
  };
  draw(margin, "Cross-entropy loss", [](const train::EpochRecord& r) { return r.train_loss; },
       [](const train::EpochRecord& r) { return r.test_loss; });
  draw(margin + panel + gap, "Accuracy", [](const train::EpochRecord& r) { return r.train_acc; },
       [](const train::EpochRecord& r) { return r.test_acc; });
  const double by = 2 * panel + gap + margin + 30;
  os << "<text x=\"" << x0 << "\" y=\"" << by << "\" fill=\"#1f77b4\">train</text>\n";
  os << "<text x=\"" << x0 + 60 << "\" y=\"" << by << "\" fill=\"#d62728\">test</text>\n";
  os << "<text x=\"" << x1 << "\" y=\"" << by << "\" text-anchor=\"end\">epochs 1.." << n << "</text>\n";
  os << "</svg>\n";
  return os.str();
}

std::string filter_response_csv(const dsp::IirCoefficients& coeffs, std::size_t points) {
  if (points < 2) throw Error(Errc::BadConfig, "need at least two response points");
  std::string out = "freq_hz,magnitude\n";
  char buf[96];
  for (std::size_t i = 0; i < points; ++i) {
    const double f = 0.5 * coeffs.fs * static_cast<double>(i) / static_cast<double>(points - 1);
    std::snprintf(buf, sizeof buf, "%.6f,%.12g\n", f, dsp::magnitude_response(coeffs, f));
    out += buf;
  }
  return out;
}

// --- commands ----------------------------------------------------------

namespace {

struct Options {
  std::string config;
  std::uint64_t seed = 0;
  std::string out = "out";

  // dataset / front end
  std::string dataset;
  double fs = 300.0;
  double train_size = 7000;
  double val_size = 0;
  double low_cut = 0.5;
  double high_cut = 40.0;
  int filter_order = 2;
  double target_fs = 200.0;

  // training
  std::string cache;
  std::size_t epochs = 200;
  std::size_t batch_size = 50;
  std::size_t eval_batch_size = 50;
  double lr = 1e-3;
  double dropout = 0.5;
  std::size_t threads = 1;
  std::size_t arch_divisor = 1;
  bool no_augment = false;
  double flip_prob = 0.5;
  double resample_prob = 0.8;
  double stretch = 0.05;
  std::string monitor = "auto";

  // evaluation / inference
  std::string checkpoint;
  std::string part = "test";
  std::vector<std::string> inputs;
  std::string output;

  // streaming
  std::string host = "127.0.0.1";
  std::uint16_t port = 7200;
  std::string prediction_log;
  double expiry_s = 120.0;
  std::size_t capacity = 1 << 16;
  std::size_t frame_size = 500;
  std::string session = "replay";

  // plotting
  std::string history;
  std::size_t points = 512;
};

dsp::PreprocessConfig preprocess_of(const Options& o) {
  dsp::PreprocessConfig p;
  p.low_cut = o.low_cut;
  p.high_cut = o.high_cut;
  p.order = o.filter_order;
  p.target_fs = o.target_fs;
  return p;
}

nlohmann::json preprocess_json(const dsp::PreprocessConfig& p) {
  return {{"low_cut", p.low_cut}, {"high_cut", p.high_cut}, {"order", p.order},
          {"target_fs", p.target_fs}, {"tag", dsp::preprocess_tag(p)}};
}

dsp::PreprocessConfig preprocess_from_json(const nlohmann::json& j) {
  dsp::PreprocessConfig p;
  p.low_cut = j.at("low_cut").get<double>();
  p.high_cut = j.at("high_cut").get<double>();
  p.order = j.at("order").get<int>();
  p.target_fs = j.at("target_fs").get<double>();
  return p;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw Error(Errc::BadConfig, message);
}

void require_path(const std::string& path, const std::string& what) {
  require(!path.empty(), what + " is required");
  require(std::filesystem::exists(path), what + " '" + path + "' does not exist");
}

std::filesystem::path resolve_checkpoint(std::filesystem::path p) {
  if (std::filesystem::is_directory(p)) {
    const auto pointer = p / "best.bin";
    require(std::filesystem::exists(pointer), "no best.bin in checkpoint directory " + p.string());
    return p / trim(read_text(pointer));
  }
  return p;
}

nn::Checkpoint load_model(const std::string& path) {
  require_path(path, "--checkpoint");
  return nn::load_checkpoint(resolve_checkpoint(path));
}

struct ModelContext {
  nn::Checkpoint ckpt;
  dsp::PreprocessConfig pre;
  double scale = 1.0;
};

ModelContext model_context(const std::string& path, const Options& o) {
  ModelContext m{load_model(path), preprocess_of(o), 1.0};
  const auto& meta = m.ckpt.metadata;
  if (meta.contains("preprocess")) m.pre = preprocess_from_json(meta["preprocess"]);
  if (meta.contains("scale")) m.scale = meta["scale"].get<double>();
  return m;
}

int cmd_prepare(const Options& o) {
  require(!o.dataset.empty(), "--dataset is required");
  require(std::filesystem::is_directory(o.dataset), "dataset directory '" + o.dataset + "' does not exist");
  const std::filesystem::path dir(o.dataset);
  require(std::filesystem::exists(dir / "REFERENCE.csv"), "no REFERENCE.csv in " + o.dataset);
  const DatasetManifest manifest = load_manifest_dir(dir);
  require(!manifest.entries.empty(), "REFERENCE.csv in " + o.dataset + " lists no records");

  const std::size_t total = manifest.entries.size();
  auto count_of = [&](double v, const char* name) {
    require(v >= 0.0, std::string(name) + " must be non-negative");
    const double c = v <= 1.0 ? std::round(v * static_cast<double>(total)) : v;
    require(c <= static_cast<double>(total), std::string(name) + " exceeds the " + std::to_string(total) + " records");
    return static_cast<std::size_t>(c);
  };
  const std::size_t train_n = count_of(o.train_size, "--train-size");
  const std::size_t val_n = count_of(o.val_size, "--val-size");
  require(train_n + val_n <= total, "train and validation sizes exceed the dataset");
  const SplitAssignment split = stratified_split(manifest, train_n, o.seed, val_n);

  std::map<std::string, SplitPart> part_of;
  for (const auto& id : split.train) part_of[id] = SplitPart::Train;
  for (const auto& id : split.test) part_of[id] = SplitPart::Test;
  for (const auto& id : split.validation) part_of[id] = SplitPart::Validation;

  const auto pre = preprocess_of(o);
  PreparedCache cache;
  cache.tag = dsp::preprocess_tag(pre);
  cache.source_fs = o.fs;
  cache.target_fs = pre.target_fs;
  std::size_t failures = 0;
  for (const auto& e : manifest.entries) {
    try {
      const EcgRecord rec = load_mat_record(dir / (e.id + ".mat"), o.fs, e.label);
      cache.records.push_back({e.id, e.label, part_of.at(e.id), dsp::preprocess(rec.samples, rec.fs, pre)});
    } catch (const Error& err) {
      ++failures;
      std::cerr << "record " << e.id << ": " << err.what() << "\n";
    }
  }
  if (failures > 0) {
    std::cerr << failures << " of " << total << " records failed to load\n";
    return 1;
  }

  std::vector<std::vector<double>> train_signals;
  for (const auto& r : cache.records)
    if (r.part == SplitPart::Train) train_signals.push_back(r.samples);
  cache.scale = train_signals.empty() ? 1.0 : dsp::training_scale(train_signals).value;

  const std::filesystem::path out(o.out);
  std::filesystem::create_directories(out);
  write_file(out / "split.tsv", format_split(manifest, split));
  write_file(out / "prepared.bin", encode_cache(cache));
  const std::string report = dataset_report(manifest, split);
  write_file(out / "dataset_report.txt", report);
  std::cout << report << "scale " << fmt("%.9g", cache.scale) << "\n";
  return 0;
}

int cmd_train(const Options& o) {
  const std::string cache_path = o.cache.empty() ? (std::filesystem::path(o.out) / "prepared.bin").string() : o.cache;
  const auto pre = preprocess_of(o);
  require_path(cache_path, "--cache");
  const PreparedCache cache = decode_cache(read_file_bytes(cache_path), dsp::preprocess_tag(pre));

  const auto train_set = signals_of(cache, SplitPart::Train);
  const auto val_set = signals_of(cache, SplitPart::Validation);
  const auto test_set = signals_of(cache, SplitPart::Test);
  require(!train_set.empty(), "prepared cache has no training records");
  std::string monitor = o.monitor;
  if (monitor == "auto") monitor = val_set.empty() ? "test" : "val";
  require(monitor == "val" || monitor == "test", "--monitor must be auto, val or test");
  const auto& monitor_set = monitor == "val" ? val_set : test_set;
  if (monitor == "test")
    log::warn("monitoring the test set for the schedule and best-epoch selection leaks test information; "
              "prepare with --val-size for an unbiased estimate");

  train::TrainConfig cfg;
  cfg.epochs = o.epochs;
  cfg.batch_size = o.batch_size;
  cfg.eval_batch_size = o.eval_batch_size;
  cfg.learning_rate = o.lr;
  cfg.dropout = o.dropout;
  cfg.seed = o.seed;
  cfg.threads = o.threads;
  cfg.arch = o.arch_divisor <= 1 ? nn::Architecture::full() : nn::Architecture::reduced(o.arch_divisor);
  cfg.augmentation.enabled = !o.no_augment;
  cfg.augmentation.flip_prob = o.flip_prob;
  cfg.augmentation.resample_prob = o.resample_prob;
  cfg.augmentation.stretch_low = -o.stretch;
  cfg.augmentation.stretch_high = o.stretch;
  cfg.out_dir = std::filesystem::path(o.out);
  cfg.extra_metadata = {{"preprocess", preprocess_json(pre)},
                        {"scale", cache.scale},
                        {"source_fs", cache.source_fs},
                        {"monitor", monitor}};
  train::validate(cfg);

  const auto result = train::train(train_set, monitor_set, cfg);
  std::cout << "best epoch " << result.best_epoch << " " << monitor << " accuracy "
            << fmt("%.4f", result.best_accuracy) << "\n";
  return 0;
}

int cmd_evaluate(const Options& o) {
  const ModelContext m = model_context(o.checkpoint, o);
  const std::string cache_path = o.cache.empty() ? (std::filesystem::path(o.out) / "prepared.bin").string() : o.cache;
  require_path(cache_path, "--cache");
  const PreparedCache cache = decode_cache(read_file_bytes(cache_path), dsp::preprocess_tag(m.pre));
  SplitPart part;
  if (o.part == "train") part = SplitPart::Train;
  else if (o.part == "test") part = SplitPart::Test;
  else if (o.part == "val") part = SplitPart::Validation;
  else throw Error(Errc::BadConfig, "--part must be train, test or val");
  const auto records = signals_of(cache, part);
  require(!records.empty(), "no records in part '" + o.part + "'");

  pipeline::WindowConfig wcfg;
  wcfg.window_len = m.ckpt.params.arch().window_len;
  const auto res = train::evaluate(m.ckpt.params, records, o.eval_batch_size, wcfg);
  std::vector<std::size_t> pred, truth;
  std::vector<bool> skipped(records.size(), false);
  for (std::size_t i : res.skipped) skipped[i] = true;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (skipped[i]) continue;
    pred.push_back(res.predictions[i]);
    truth.push_back(index_of(records[i].label));
  }
  const auto cm = eval::confusion(std::span<const std::size_t>(pred), std::span<const std::size_t>(truth));
  const auto metrics = eval::class_metrics(cm);
  nlohmann::json report = eval::metrics_report(cm, metrics);
  report["part"] = o.part;
  report["loss"] = res.loss;
  report["batch_size"] = o.eval_batch_size;
  report["skipped"] = res.skipped.size();
  const std::string table = eval::metrics_table(metrics);
  const std::filesystem::path out(o.out);
  write_file(out / "metrics.json", report.dump(2) + "\n");
  write_file(out / "metrics.txt", table);
  std::cout << table;
  return 0;
}

int cmd_classify(const Options& o) {
  const ModelContext m = model_context(o.checkpoint, o);
  require(!o.inputs.empty(), "--input is required");
  pipeline::WindowConfig wcfg;
  wcfg.window_len = m.ckpt.params.arch().window_len;
  std::string csv = "record,class,windows,p_N,p_A,p_O,p_noise\n";
  std::size_t failures = 0;
  for (const auto& in : o.inputs) {
    try {
      const EcgRecord rec = load_mat_record(in, o.fs);
      auto x = dsp::preprocess(rec.samples, rec.fs, m.pre);
      for (auto& v : x) v /= m.scale;
      const auto windows = pipeline::extract_windows(x, 0, wcfg, rec.id);
      const auto fwd = nn::model_forward(windows, m.ckpt.params, nn::Mode::Eval);
      csv += rec.id + ',' + class_token(class_at(nn::argmax(fwd.probs))) + ',' + std::to_string(windows.nw);
      for (double p : fwd.probs) csv += ',' + fmt("%.6f", p);
      csv += '\n';
    } catch (const Error& e) {
      ++failures;
      std::cerr << in << ": " << e.what() << "\n";
    }
  }
  if (o.output.empty()) std::cout << csv;
  else write_file(o.output, csv);
  return failures ? 1 : 0;
}

stream::StreamConfig stream_config(const Options& o, const ModelContext& m) {
  stream::StreamConfig s;
  s.preprocess = m.pre;
  s.window.window_len = m.ckpt.params.arch().window_len;
  s.capacity = o.capacity;
  s.expiry_ms = static_cast<std::int64_t>(std::llround(o.expiry_s * 1000.0));
  stream::validate(s);
  return s;
}

std::atomic<stream::Server*> g_server{nullptr};

extern "C" void on_signal(int) {
  if (auto* s = g_server.load()) s->stop();
}

int cmd_serve(const Options& o) {
  std::string ckpt = o.checkpoint;
  if (const char* env = std::getenv("ECGCRNN_CHECKPOINT"); env && *env) ckpt = env;
  const ModelContext m = model_context(ckpt, o);
  stream::ServerConfig cfg;
  cfg.host = o.host;
  cfg.port = o.port;
  cfg.stream = stream_config(o, m);
  if (!o.prediction_log.empty()) cfg.prediction_log = o.prediction_log;
  stream::Server server(cfg, std::make_shared<const nn::ModelParams>(m.ckpt.params));
  const auto port = server.start();
  std::cout << "listening on " << o.host << ":" << port << std::endl;
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  server.run();
  g_server = nullptr;
  return 0;
}

int cmd_replay(const Options& o) {
  const ModelContext m = model_context(o.checkpoint, o);
  require(o.inputs.size() == 1, "replay takes exactly one --input");
  require_path(o.inputs.front(), "--input");
  const auto sig = stream::load_replay_input(o.inputs.front(), o.fs);
  const auto frames = stream::frames_from_signal(sig, o.session, o.frame_size);
  std::optional<std::filesystem::path> log_path;
  if (!o.output.empty()) log_path = o.output;
  const std::string ndjson = stream::replay(frames, stream_config(o, m),
                                            std::make_shared<const nn::ModelParams>(m.ckpt.params), log_path);
  if (!log_path) std::cout << ndjson;
  return 0;
}

int cmd_plot_history(const Options& o) {
  require_path(o.history, "--history");
  const auto history = train::parse_history_csv(read_text(o.history));
  const std::string out = o.output.empty() ? (std::filesystem::path(o.out) / "history.svg").string() : o.output;
  write_file(out, history_svg(history));
  std::cout << out << "\n";
  return 0;
}

int cmd_filter_response(const Options& o) {
  dsp::BandPassSpec spec;
  spec.low_cut = o.low_cut;
  spec.high_cut = o.high_cut;
  spec.order = o.filter_order;
  spec.fs = o.fs;
  const std::string csv = filter_response_csv(dsp::design_bandpass(spec), o.points);
  if (o.output.empty()) std::cout << csv;
  else write_file(o.output, csv);
  return 0;
}

bool is_config_error(Errc c) { return c == Errc::BadConfig || c == Errc::EmptyManifest; }

}  // namespace

int run(int argc, const char* const* argv) {
  Options o;
  CLI::App app{"ECG rhythm classification with a convolutional-recurrent network"};
  app.fallthrough();
  app.require_subcommand(1);
  app.footer("Every long option can also be given as `name = value` in the --config file; flags win.");
  app.add_option("--config", o.config, "flat key = value config file");
  app.add_option("--seed", o.seed, "seed for splits, initialization and augmentation")->capture_default_str();
  app.add_option("--out", o.out, "output directory")->capture_default_str();

  auto front_end = [&](CLI::App* sub, bool with_target) {
    sub->add_option("--low-cut", o.low_cut, "band-pass lower edge (Hz)")->capture_default_str();
    sub->add_option("--high-cut", o.high_cut, "band-pass upper edge (Hz)")->capture_default_str();
    sub->add_option("--filter-order", o.filter_order, "Butterworth order per direction")->capture_default_str();
    if (with_target) sub->add_option("--target-fs", o.target_fs, "rate after resampling (Hz)")->capture_default_str();
  };
  auto stream_opts = [&](CLI::App* sub) {
    sub->add_option("--expiry-s", o.expiry_s, "idle seconds before a session closes")->capture_default_str();
    sub->add_option("--capacity", o.capacity, "raw samples buffered per session")->capture_default_str();
  };

  auto* prepare = app.add_subcommand("prepare", "split the dataset and cache preprocessed records");
  prepare->add_option("--dataset", o.dataset, "directory with MAT files and REFERENCE.csv");
  prepare->add_option("--fs", o.fs, "sampling rate of the records (Hz)")->capture_default_str();
  prepare->add_option("--train-size", o.train_size, "training records (count, or fraction if <= 1)")->capture_default_str();
  prepare->add_option("--val-size", o.val_size, "validation records (count, or fraction if <= 1)")->capture_default_str();
  front_end(prepare, true);

  auto* train_cmd = app.add_subcommand("train", "train the network on a prepared cache");
  train_cmd->add_option("--cache", o.cache, "prepared cache (default <out>/prepared.bin)");
  train_cmd->add_option("--epochs", o.epochs, "training epochs")->capture_default_str();
  train_cmd->add_option("--batch-size", o.batch_size, "records per training batch")->capture_default_str();
  train_cmd->add_option("--eval-batch-size", o.eval_batch_size, "records per evaluation batch")->capture_default_str();
  train_cmd->add_option("--lr", o.lr, "initial learning rate")->capture_default_str();
  train_cmd->add_option("--dropout", o.dropout, "LSTM dropout rate")->capture_default_str();
  train_cmd->add_option("--threads", o.threads, "records processed in parallel")->capture_default_str();
  train_cmd->add_option("--arch-divisor", o.arch_divisor, "divide every layer width (1 = full network)")->capture_default_str();
  train_cmd->add_flag("--no-augment", o.no_augment, "disable flip and stretch augmentation");
  train_cmd->add_option("--flip-prob", o.flip_prob, "sign flip probability")->capture_default_str();
  train_cmd->add_option("--resample-prob", o.resample_prob, "stretch probability")->capture_default_str();
  train_cmd->add_option("--stretch", o.stretch, "maximum relative stretch")->capture_default_str();
  train_cmd->add_option("--monitor", o.monitor, "auto, val or test")->capture_default_str();
  front_end(train_cmd, true);

  auto* evaluate = app.add_subcommand("evaluate", "metrics of a checkpoint on a split part");
  evaluate->add_option("--checkpoint", o.checkpoint, "checkpoint file or training output directory");
  evaluate->add_option("--cache", o.cache, "prepared cache (default <out>/prepared.bin)");
  evaluate->add_option("--part", o.part, "train, test or val")->capture_default_str();
  evaluate->add_option("--eval-batch-size", o.eval_batch_size, "records per batch (1 = no padding)")->capture_default_str();

  auto* classify = app.add_subcommand("classify", "predict the rhythm of MAT records");
  classify->add_option("--checkpoint", o.checkpoint, "checkpoint file or training output directory");
  classify->add_option("--input", o.inputs, "MAT record(s)");
  classify->add_option("--fs", o.fs, "sampling rate of the records (Hz)")->capture_default_str();
  classify->add_option("--output", o.output, "CSV output (default stdout)");

  auto* serve = app.add_subcommand("serve", "run the streaming classification server");
  serve->add_option("--checkpoint", o.checkpoint, "checkpoint (ECGCRNN_CHECKPOINT overrides)");
  serve->add_option("--host", o.host, "listen address")->capture_default_str();
  serve->add_option("--port", o.port, "listen port (0 = ephemeral)")->capture_default_str();
  serve->add_option("--prediction-log", o.prediction_log, "append predictions as NDJSON");
  stream_opts(serve);

  auto* replay_cmd = app.add_subcommand("replay", "feed a recorded signal through the streaming path");
  replay_cmd->add_option("--checkpoint", o.checkpoint, "checkpoint file or training output directory");
  replay_cmd->add_option("--input", o.inputs, "MAT record or raw int16 file with an fs=<Hz> header line");
  replay_cmd->add_option("--fs", o.fs, "rate of MAT input (Hz)")->capture_default_str();
  replay_cmd->add_option("--frame-size", o.frame_size, "samples per telemetry frame")->capture_default_str();
  replay_cmd->add_option("--session", o.session, "session id")->capture_default_str();
  replay_cmd->add_option("--output", o.output, "NDJSON prediction log (default stdout)");
  stream_opts(replay_cmd);

  auto* plot = app.add_subcommand("plot-history", "render loss and accuracy curves as SVG");
  plot->add_option("--history", o.history, "history.csv written by train");
  plot->add_option("--output", o.output, "SVG path (default <out>/history.svg)");

  auto* response = app.add_subcommand("filter-response", "band-pass magnitude response as CSV");
  response->add_option("--fs", o.fs, "sampling rate (Hz)")->capture_default_str();
  response->add_option("--points", o.points, "frequency points from 0 to fs/2")->capture_default_str();
  response->add_option("--output", o.output, "CSV path (default stdout)");
  front_end(response, false);

  try {
    // The config file sets option defaults before parsing, so flags win.
    for (int i = 1; i < argc; ++i) {
      std::string_view a = argv[i];
      std::string path;
      if (a == "--config" && i + 1 < argc) path = argv[i + 1];
      else if (a.rfind("--config=", 0) == 0) path = std::string(a.substr(9));
      if (path.empty()) continue;
      require(std::filesystem::exists(path), "config file '" + path + "' does not exist");
      for (const auto& [key, value] : parse_config(read_text(path))) {
        bool used = false;
        auto apply = [&](CLI::App* a2) {
          if (auto* opt = a2->get_option_no_throw("--" + key)) {
            opt->default_val(value);
            used = true;
          }
        };
        apply(&app);
        for (auto* sub : app.get_subcommands({})) apply(sub);
        require(used, "unknown config key '" + key + "'");
      }
    }
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*prepare) return cmd_prepare(o);
    if (*train_cmd) return cmd_train(o);
    if (*evaluate) return cmd_evaluate(o);
    if (*classify) return cmd_classify(o);
    if (*serve) return cmd_serve(o);
    if (*replay_cmd) return cmd_replay(o);
    if (*plot) return cmd_plot_history(o);
    if (*response) return cmd_filter_response(o);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return is_config_error(e.code()) ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace ecgcrnn::cli
