#include "csileak/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

#include "csileak/band_fusion.hpp"
#include "csileak/band_locator.hpp"
#include "csileak/csi2_codec.hpp"
#include "csileak/emission_sim.hpp"
#include "csileak/error.hpp"
#include "csileak/iq_core.hpp"
#include "csileak/metrics.hpp"
#include "csileak/modality_demux.hpp"
#include "csileak/raster_recon.hpp"
#include "csileak/restoration.hpp"
#include "csileak/test_cards.hpp"

namespace csileak::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

// Bad flags, bad config documents.
struct UsageError : Error {
  using Error::Error;
};

// A pipeline stage failed; `stage` names it in the error line.
struct StageError : Error {
  StageError(std::string stage_name, const std::string& what) : Error(what), stage(std::move(stage_name)) {}
  std::string stage;
};

template <typename F>
auto in_stage(const char* stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

json number(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".partial";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot open " + tmp.string() + " for writing");
    f << text;
    if (!f) throw Error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

void save_image(const GrayImage& img, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_image(img, path);
}

// ---------------------------------------------------------------------------
// Config document

// Reads keys of one JSON object and rejects any key nobody asked for.
class Section {
 public:
  Section(const json& j, std::string name) : name_(std::move(name)) {
    if (j.is_null()) return;
    if (!j.is_object()) throw UsageError("config: section '" + name_ + "' must be an object");
    j_ = &j;
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_ && j_->contains(key);
  }

  template <typename T>
  T get(const char* key, T fallback) {
    if (!has(key)) return fallback;
    try {
      return j_->at(key).get<T>();
    } catch (const json::exception&) {
      throw UsageError("config: " + name_ + "." + key + " has the wrong type");
    }
  }

  const json& raw(const char* key) {
    seen_.insert(key);
    static const json null;
    return j_ && j_->contains(key) ? j_->at(key) : null;
  }

  void finish() const {
    if (!j_) return;
    for (const auto& [k, v] : j_->items())
      if (!seen_.count(k)) throw UsageError("config: unknown key '" + name_ + "." + k + "'");
  }

 private:
  const json* j_ = nullptr;
  std::string name_;
  std::set<std::string> seen_;
};

struct SimulateSection {
  int width = 64;
  int height = 64;
  int frames = 32;
  Schedule schedule = Schedule::Alternating;
  LineTiming timing;
  EmissionConfig emission;
};

struct ScanSection {
  double f_min_hz = 0.0;
  double f_max_hz = 80e6;
  double band_width_hz = 10e6;
  int calibration_captures = 8;
  std::vector<std::string> calibration_paths;
  std::optional<double> theta_E, theta_A, theta_H;
  double theta_img_entropy = Thresholds{}.theta_img_entropy;
  double theta_edge = Thresholds{}.theta_edge;
};

struct ReconSection {
  int width = 64;
  int height = 64;
  int frames = 16;
  Interpolation interpolation = Interpolation::Linear;
  std::string sync = "auto";  // auto | nominal
  int smoothing = 1;
  bool drift_correction = true;
};

struct FuseSection {
  double lambda = 0.1;
  double tau = 0.0;
  std::optional<double> v_target;  // nullopt = auto
  int window = 5;
  double var_threshold = 1e-3;
};

struct RestoreSection {
  double lambda = 0.03;
  int iterations = 50;
  std::string forward = "identity";
};

struct PipelineConfig {
  std::optional<std::uint64_t> seed;
  SimulateSection simulate;
  ScanSection scan;
  ReconSection reconstruct;
  std::string parity = "auto";
  FuseSection fuse;
  RestoreSection restore;
  std::string print_truth;  // empty = built-in card
  std::string vein_truth;
  std::string output_dir = "out";
  fs::path base_dir;

  json echo() const;
  std::string hash() const;
};

Schedule parse_schedule(const std::string& s) {
  if (s == "alternating") return Schedule::Alternating;
  if (s == "single") return Schedule::Single;
  throw UsageError("config: simulate.schedule must be 'single' or 'alternating'");
}

Interpolation parse_interp(const std::string& s) {
  if (s == "linear") return Interpolation::Linear;
  if (s == "nearest") return Interpolation::Nearest;
  throw UsageError("interpolation must be 'linear' or 'nearest', got '" + s + "'");
}

EmissionMode parse_mode(const std::string& s) {
  if (s == "bitgroup") return EmissionMode::BitgroupAnalytic;
  if (s == "nrz") return EmissionMode::NrzPhysical;
  throw UsageError("config: simulate.mode must be 'bitgroup' or 'nrz'");
}

ForwardModel parse_forward(const std::string& s) {
  if (s == "identity") return ForwardModel::identity();
  if (s == "blur3") return ForwardModel::blur(BlurKernel::blur3());
  throw UsageError("forward model must be 'identity' or 'blur3', got '" + s + "'");
}

std::string parity_from_json(const json& j) {
  if (j.is_null()) return "auto";
  if (j.is_string()) {
    auto s = j.get<std::string>();
    if (s == "auto" || s == "0" || s == "1") return s;
  } else if (j.is_number_integer()) {
    const auto v = j.get<int>();
    if (v == 0 || v == 1) return std::to_string(v);
  }
  throw UsageError("config: demux.parity must be auto, 0 or 1");
}

PipelineConfig parse_config(const json& doc, const fs::path& base_dir) {
  if (!doc.is_object()) throw UsageError("config: top level must be an object");
  PipelineConfig c;
  c.base_dir = base_dir;
  Section top(doc, "config");
  if (top.has("seed")) {
    const auto& s = top.raw("seed");
    if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<std::int64_t>() >= 0))
      throw UsageError("config: seed must be a non-negative integer");
    c.seed = s.get<std::uint64_t>();
  }

  {
    Section s(top.raw("simulate"), "simulate");
    auto& sim = c.simulate;
    sim.width = s.get("width", sim.width);
    sim.height = s.get("height", sim.height);
    sim.frames = s.get("frames", sim.frames);
    sim.schedule = parse_schedule(s.get<std::string>("schedule", "alternating"));
    const double bit_rate = s.get("bit_rate_hz", 200e6);
    if (sim.width < 1 || sim.height < 1 || sim.frames < 1)
      throw UsageError("config: simulate dimensions and frame count must be positive");
    sim.timing = LineTiming::defaults_for_width(sim.width, bit_rate);
    sim.timing.line_blank_bits = s.get("line_blank_bits", sim.timing.line_blank_bits);
    sim.timing.frame_blank_bits = s.get("frame_blank_bits", sim.timing.frame_blank_bits);
    sim.timing.header_bits = s.get("header_bits", sim.timing.header_bits);
    sim.timing.trailer_bits = s.get("trailer_bits", sim.timing.trailer_bits);
    auto& e = sim.emission;
    e.sdr_sample_rate_hz = s.get("sdr_sample_rate_hz", e.sdr_sample_rate_hz);
    e.noise_sigma = s.get("noise_sigma", e.noise_sigma);
    e.clock_offset = s.get("clock_offset", e.clock_offset);
    e.drift_ppm = s.get("drift_ppm", e.drift_ppm);
    e.mode = parse_mode(s.get<std::string>("mode", "bitgroup"));
    const auto& bands = s.raw("bands");
    if (!bands.is_null()) {
      if (!bands.is_array()) throw UsageError("config: simulate.bands must be an array");
      for (std::size_t i = 0; i < bands.size(); ++i) {
        Section b(bands[i], "simulate.bands[" + std::to_string(i) + "]");
        EmissionBand eb;
        eb.f_low_hz = b.get("f_low_hz", eb.f_low_hz);
        eb.f_high_hz = b.get("f_high_hz", eb.f_high_hz);
        eb.w_msb = b.get("w_msb", eb.w_msb);
        eb.w_lsb = b.get("w_lsb", eb.w_lsb);
        b.finish();
        e.bands.push_back(eb);
      }
    }
    s.finish();
  }
  {
    Section s(top.raw("scan"), "scan");
    auto& sc = c.scan;
    sc.f_min_hz = s.get("f_min_hz", sc.f_min_hz);
    sc.f_max_hz = s.get("f_max_hz", sc.f_max_hz);
    sc.band_width_hz = s.get("band_width_hz", sc.band_width_hz);
    sc.calibration_captures = s.get("calibration_captures", sc.calibration_captures);
    sc.calibration_paths = s.get("calibration_paths", sc.calibration_paths);
    if (s.has("theta_E")) sc.theta_E = s.get("theta_E", 0.0);
    if (s.has("theta_A")) sc.theta_A = s.get("theta_A", 0.0);
    if (s.has("theta_H")) sc.theta_H = s.get("theta_H", 0.0);
    sc.theta_img_entropy = s.get("theta_img_entropy", sc.theta_img_entropy);
    sc.theta_edge = s.get("theta_edge", sc.theta_edge);
    s.finish();
  }
  {
    Section s(top.raw("reconstruct"), "reconstruct");
    auto& r = c.reconstruct;
    r.width = s.get("width", c.simulate.width);
    r.height = s.get("height", c.simulate.height);
    r.frames = s.get("frames", r.frames);
    r.interpolation = parse_interp(s.get<std::string>("interpolation", "linear"));
    r.sync = s.get<std::string>("sync", r.sync);
    if (r.sync != "auto" && r.sync != "nominal")
      throw UsageError("config: reconstruct.sync must be 'auto' or 'nominal'");
    r.smoothing = s.get("smoothing", r.smoothing);
    r.drift_correction = s.get("drift_correction", r.drift_correction);
    s.finish();
  }
  {
    Section s(top.raw("demux"), "demux");
    c.parity = parity_from_json(s.raw("parity"));
    s.finish();
  }
  {
    Section s(top.raw("fuse"), "fuse");
    auto& f = c.fuse;
    f.lambda = s.get("lambda", f.lambda);
    f.tau = s.get("tau", f.tau);
    const auto& vt = s.raw("v_target");
    if (vt.is_number())
      f.v_target = vt.get<double>();
    else if (!vt.is_null() && !(vt.is_string() && vt.get<std::string>() == "auto"))
      throw UsageError("config: fuse.v_target must be 'auto' or a number");
    f.window = s.get("window", f.window);
    f.var_threshold = s.get("var_threshold", f.var_threshold);
    s.finish();
  }
  {
    Section s(top.raw("restore"), "restore");
    auto& r = c.restore;
    r.lambda = s.get("lambda", r.lambda);
    r.iterations = s.get("iterations", r.iterations);
    r.forward = s.get<std::string>("forward", r.forward);
    parse_forward(r.forward);
    s.finish();
  }
  {
    Section s(top.raw("paths"), "paths");
    c.print_truth = s.get<std::string>("print_truth", "");
    c.vein_truth = s.get<std::string>("vein_truth", "");
    c.output_dir = s.get<std::string>("output_dir", c.output_dir);
    s.finish();
  }
  top.finish();
  return c;
}

PipelineConfig load_config(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw UsageError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(f);
  } catch (const json::parse_error& e) {
    throw UsageError("config " + path.string() + ": " + e.what());
  }
  return parse_config(doc, path.has_parent_path() ? path.parent_path() : fs::path("."));
}

json PipelineConfig::echo() const {
  json bands = json::array();
  for (const auto& b : simulate.emission.bands)
    bands.push_back({{"f_low_hz", b.f_low_hz}, {"f_high_hz", b.f_high_hz}, {"w_msb", b.w_msb}, {"w_lsb", b.w_lsb}});
  const auto& e = simulate.emission;
  json j;
  j["seed"] = seed ? json(*seed) : json(nullptr);
  j["simulate"] = {{"width", simulate.width},
                   {"height", simulate.height},
                   {"frames", simulate.frames},
                   {"schedule", simulate.schedule == Schedule::Alternating ? "alternating" : "single"},
                   {"bit_rate_hz", simulate.timing.bit_rate_hz},
                   {"line_blank_bits", simulate.timing.line_blank_bits},
                   {"frame_blank_bits", simulate.timing.frame_blank_bits},
                   {"header_bits", simulate.timing.header_bits},
                   {"trailer_bits", simulate.timing.trailer_bits},
                   {"sdr_sample_rate_hz", e.sdr_sample_rate_hz},
                   {"noise_sigma", e.noise_sigma},
                   {"clock_offset", e.clock_offset},
                   {"drift_ppm", e.drift_ppm},
                   {"mode", e.mode == EmissionMode::BitgroupAnalytic ? "bitgroup" : "nrz"},
                   {"bands", bands}};
  json sc = {{"f_min_hz", scan.f_min_hz},
             {"f_max_hz", scan.f_max_hz},
             {"band_width_hz", scan.band_width_hz},
             {"calibration_captures", scan.calibration_captures},
             {"calibration_paths", scan.calibration_paths},
             {"theta_img_entropy", scan.theta_img_entropy},
             {"theta_edge", scan.theta_edge}};
  if (scan.theta_E) sc["theta_E"] = *scan.theta_E;
  if (scan.theta_A) sc["theta_A"] = *scan.theta_A;
  if (scan.theta_H) sc["theta_H"] = *scan.theta_H;
  j["scan"] = sc;
  j["reconstruct"] = {{"width", reconstruct.width},
                      {"height", reconstruct.height},
                      {"frames", reconstruct.frames},
                      {"interpolation", reconstruct.interpolation == Interpolation::Linear ? "linear" : "nearest"},
                      {"sync", reconstruct.sync},
                      {"smoothing", reconstruct.smoothing},
                      {"drift_correction", reconstruct.drift_correction}};
  j["demux"] = {{"parity", parity}};
  j["fuse"] = {{"lambda", fuse.lambda},
               {"tau", fuse.tau},
               {"v_target", fuse.v_target ? json(*fuse.v_target) : json("auto")},
               {"window", fuse.window},
               {"var_threshold", fuse.var_threshold}};
  j["restore"] = {{"lambda", restore.lambda}, {"iterations", restore.iterations}, {"forward", restore.forward}};
  j["paths"] = {{"print_truth", print_truth}, {"vein_truth", vein_truth}, {"output_dir", output_dir}};
  return j;
}

std::string PipelineConfig::hash() const {
  json j = echo();
  j["paths"].erase("output_dir");  // where results go is not part of the experiment
  return hex64(fnv1a(j.dump()));
}

fs::path resolve(const PipelineConfig& c, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : c.base_dir / path;
}

struct Truth {
  GrayImage print;
  GrayImage vein;
};

Truth load_truth(const PipelineConfig& c) {
  const int w = c.simulate.width, h = c.simulate.height;
  auto load = [&](const std::string& p, bool print) {
    if (p.empty()) return print ? cards::print_card(w, h) : cards::vein_card(w, h);
    auto img = read_image(resolve(c, p));
    if (img.width() != w || img.height() != h)
      throw Error("truth image " + p + " is " + std::to_string(img.width()) + "x" + std::to_string(img.height()) +
                  ", expected " + std::to_string(w) + "x" + std::to_string(h));
    return img;
  };
  return {load(c.print_truth, true), load(c.vein_truth, false)};
}

PacketStream build_stream(const PipelineConfig& c, const Truth& t) {
  std::vector<GrayImage> frames;
  for (int k = 0; k < c.simulate.frames; ++k)
    frames.push_back(c.simulate.schedule == Schedule::Alternating && k % 2 ? t.vein : t.print);
  return packetize(frames, c.simulate.timing, c.simulate.schedule);
}

EmissionConfig emission_for(const PipelineConfig& c) {
  EmissionConfig e = c.simulate.emission;
  e.seed = *c.seed;
  return e;
}

void require_seed(const PipelineConfig& c) {
  if (!c.seed) throw UsageError("config: 'seed' is mandatory for simulation");
}

// Drift-free timing the simulator was configured with, in SDR samples.
SyncOptions nominal_sync(const PipelineConfig& c) {
  const auto& t = c.simulate.timing;
  const double ratio = t.bit_rate_hz / c.simulate.emission.sdr_sample_rate_hz;
  SyncOptions o;
  o.nominal_line_period = static_cast<double>(bits_per_line(t, c.simulate.width)) / ratio;
  o.nominal_frame_period = static_cast<double>(bits_per_frame(t, c.simulate.width, c.simulate.height)) / ratio;
  double active = 10.0 * c.simulate.width;
  if (c.simulate.emission.mode == EmissionMode::NrzPhysical)
    active = static_cast<double>(payload_bits_per_line(c.simulate.width) + t.header_bits + t.trailer_bits);
  o.line_active_samples = active / ratio;
  return o;
}

RasterParams raster_for(const ReconSection& r) {
  RasterParams p;
  p.out_width = r.width;
  p.out_height = r.height;
  p.frames_to_average = r.frames;
  p.interpolation = r.interpolation;
  p.drift_correction = r.drift_correction;
  return p;
}

json sync_json(const SyncModel& s) {
  return {{"line_period_samples", s.line_period_samples},
          {"frame_period_samples", s.frame_period_samples},
          {"line_active_samples", s.line_active_samples},
          {"theta_blank", s.theta_blank},
          {"drift_estimate", s.drift_estimate},
          {"frames", s.frame_count()},
          {"first_frame_start", s.frame_starts.empty() ? json(nullptr) : json(s.frame_starts.front())}};
}

json metrics_json(const MetricReport& m) {
  return {{"psnr_db", number(m.psnr_db)},
          {"ssim", number(m.ssim)},
          {"entropy_nats", number(m.entropy_nats)},
          {"edge_intensity", number(m.edge_intensity)}};
}

json report_json(const BandReport& r) {
  json j = {{"f_low_hz", r.stats.f_low_hz},
            {"f_high_hz", r.stats.f_high_hz},
            {"energy", number(r.stats.energy)},
            {"spectral_entropy", number(r.stats.spectral_entropy)},
            {"autocorr_peak", number(r.stats.autocorr_peak)},
            {"verdict", verdict_name(r.verdict)}};
  if (r.image_stats)
    j["image_stats"] = {{"image_entropy", number(r.image_stats->image_entropy)},
                        {"edge_intensity", number(r.image_stats->edge_intensity)}};
  if (!r.diagnostic.empty()) j["diagnostic"] = r.diagnostic;
  return j;
}

json thresholds_json(const Thresholds& t) {
  return {{"theta_E", number(t.theta_E)},
          {"theta_A", number(t.theta_A)},
          {"theta_H", number(t.theta_H)},
          {"theta_img_entropy", number(t.theta_img_entropy)},
          {"theta_edge", number(t.theta_edge)}};
}

Thresholds scan_thresholds(const PipelineConfig& c, const PacketStream& stream) {
  Thresholds t;
  t.theta_img_entropy = c.scan.theta_img_entropy;
  t.theta_edge = c.scan.theta_edge;
  if (c.scan.theta_E && c.scan.theta_A && c.scan.theta_H) {
    t.theta_E = *c.scan.theta_E;
    t.theta_A = *c.scan.theta_A;
    t.theta_H = *c.scan.theta_H;
    return t;
  }
  std::vector<IqTrace> noise;
  if (!c.scan.calibration_paths.empty()) {
    for (const auto& p : c.scan.calibration_paths) noise.push_back(read_iq(resolve(c, p)));
  } else {
    if (c.scan.calibration_captures < 1) throw Error("scan: need at least one calibration capture");
    EmissionConfig quiet = emission_for(c);
    quiet.bands.clear();
    const double bw = c.scan.band_width_hz;
    for (int i = 0; i < c.scan.calibration_captures; ++i) {
      quiet.seed = *c.seed + 0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(i + 1);
      const double lo = c.scan.f_min_hz + bw * (i % std::max(1, static_cast<int>((c.scan.f_max_hz - c.scan.f_min_hz) / bw)));
      noise.push_back(simulate_subband(stream, c.simulate.timing, quiet, lo, lo + bw));
    }
  }
  auto cal = calibrate_thresholds(noise, t);
  if (c.scan.theta_E) cal.theta_E = *c.scan.theta_E;
  if (c.scan.theta_A) cal.theta_A = *c.scan.theta_A;
  if (c.scan.theta_H) cal.theta_H = *c.scan.theta_H;
  return cal;
}

// ---------------------------------------------------------------------------
// Subcommands

struct SyncFlags {
  bool sync_auto = false;
  std::string sync_manual;  // "line_period,frame_period,theta_blank"
  bool otsu = false;

  SyncOptions options() const {
    SyncOptions o;
    if (otsu) o.threshold_method = BlankThresholdMethod::Otsu;
    if (sync_manual.empty()) return o;
    std::vector<double> v;
    std::stringstream ss(sync_manual);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw UsageError("--sync-manual: cannot parse '" + tok + "'");
      }
    }
    if (v.size() != 3) throw UsageError("--sync-manual expects line_period,frame_period,theta_blank");
    o.nominal_line_period = v[0];
    o.nominal_frame_period = v[1];
    o.theta_blank = v[2];
    return o;
  }
};

void add_sync_flags(CLI::App* app, SyncFlags& f) {
  auto* a = app->add_flag("--sync-auto", f.sync_auto, "Estimate line/frame timing from the envelope (default)");
  auto* m = app->add_option("--sync-manual", f.sync_manual, "Known timing: line_period,frame_period,theta_blank (samples)");
  a->excludes(m);
  app->add_flag("--otsu", f.otsu, "Otsu blanking threshold instead of the percentile midpoint");
}

struct ReconFlags {
  std::vector<std::string> iq;
  std::size_t band = 0;
  int width = 64;
  int height = 64;
  int frames = 1;
  std::string interp = "linear";
  bool no_drift = false;
  int smoothing = 1;
  SyncFlags sync;

  RasterParams raster() const {
    RasterParams p;
    p.out_width = width;
    p.out_height = height;
    p.frames_to_average = frames;
    p.interpolation = parse_interp(interp);
    p.drift_correction = !no_drift;
    p.validate();
    return p;
  }
};

void add_recon_flags(CLI::App* app, ReconFlags& f, int default_frames) {
  f.frames = default_frames;
  app->add_option("--iq", f.iq, "Input capture(s) (.iq with .meta sidecar)")->required()->check(CLI::ExistingFile);
  app->add_option("--band", f.band, "Index into --iq of the capture to use");
  app->add_option("--width", f.width, "Output width in pixels")->check(CLI::PositiveNumber);
  app->add_option("--height", f.height, "Output height in lines")->check(CLI::PositiveNumber);
  app->add_option("--frames", f.frames, "Frames to average (per modality for demux)")->check(CLI::PositiveNumber);
  app->add_option("--interp", f.interp, "linear|nearest");
  app->add_flag("--no-drift-correction", f.no_drift, "Disable drift realignment");
  app->add_option("--smoothing", f.smoothing, "Envelope moving-average width (odd)");
  add_sync_flags(app, f.sync);
}

struct Loaded {
  std::vector<float> env;
  SyncModel sync;
  double sample_rate;
};

Loaded load_and_sync(const ReconFlags& f) {
  if (f.band >= f.iq.size()) throw UsageError("--band " + std::to_string(f.band) + " out of range");
  const auto options = f.sync.options();
  auto trace = in_stage("reconstruct", [&] { return read_iq(f.iq[f.band]); });
  return in_stage("reconstruct", [&] {
    auto env = envelope(trace, f.smoothing);
    auto sync = detect_sync(env, trace.sample_rate_hz(), options);
    return Loaded{std::move(env), std::move(sync), trace.sample_rate_hz()};
  });
}

int cmd_simulate(const std::string& config, const std::string& out_dir, const std::optional<std::uint64_t>& seed,
                 std::ostream& out) {
  auto c = load_config(config);
  if (seed) c.seed = *seed;
  require_seed(c);
  if (c.simulate.emission.bands.empty()) throw UsageError("config: simulate.bands is empty");
  const fs::path dir = out_dir.empty() ? resolve(c, c.output_dir) : fs::path(out_dir);
  json files = json::array();
  in_stage("simulate", [&] {
    const auto truth = load_truth(c);
    const auto stream = build_stream(c, truth);
    const auto cfg = emission_for(c);
    const auto traces = simulate_all(stream, c.simulate.timing, cfg);
    fs::create_directories(dir);
    for (std::size_t i = 0; i < traces.size(); ++i) {
      const auto p = dir / ("band_" + std::to_string(i) + ".iq");
      write_iq(traces[i], p, 0.0, "simulated band " + std::to_string(i));
      files.push_back(p.filename().string());
    }
    save_image(truth.print, dir / "truth_print.pgm");
    save_image(truth.vein, dir / "truth_vein.pgm");
    const auto nominal = nominal_sync(c);
    json info = {{"config_hash", c.hash()},
                 {"bands", files},
                 {"samples", traces.front().size()},
                 {"nominal_line_period_samples", *nominal.nominal_line_period},
                 {"nominal_frame_period_samples", *nominal.nominal_frame_period},
                 {"line_active_samples", *nominal.line_active_samples},
                 {"expected_frame_starts", expected_frame_starts(stream, c.simulate.timing, cfg)}};
    write_text(dir / "simulate.json", info.dump(2) + "\n");
  });
  out << json({{"output_dir", dir.string()}, {"files", files}}).dump(2) << "\n";
  return kExitOk;
}

int cmd_scan(const std::string& config, const std::vector<std::string>& iq, std::optional<double> f_min,
             std::optional<double> f_max, std::optional<double> bw, const std::string& report, std::ostream& out) {
  std::optional<PipelineConfig> c;
  if (!config.empty()) c = load_config(config);
  ScanSection sc = c ? c->scan : ScanSection{};
  if (f_min) sc.f_min_hz = *f_min;
  if (f_max) sc.f_max_hz = *f_max;
  if (bw) sc.band_width_hz = *bw;

  ReconParams recon;
  recon.raster = c ? raster_for(c->reconstruct) : RasterParams{};
  if (c && c->reconstruct.sync == "nominal") recon.sync = nominal_sync(*c);
  if (c) recon.envelope_smoothing = c->reconstruct.smoothing;

  TraceProvider provider;
  Thresholds thresholds;
  std::optional<PacketStream> stream;
  if (!iq.empty()) {
    std::vector<fs::path> files(iq.begin(), iq.end());
    provider = [files](double lo, double hi) {
      for (const auto& f : files) {
        const auto meta = read_capture_meta(f);
        if (meta.center_frequency_hz >= lo && meta.center_frequency_hz < hi) return read_iq(f);
      }
      throw Error("no capture covers this band");
    };
    const bool explicit_thresholds = c && c->scan.theta_E && c->scan.theta_A && c->scan.theta_H;
    if (c && (explicit_thresholds || !c->scan.calibration_paths.empty()))
      thresholds = in_stage("scan", [&] { return scan_thresholds(*c, PacketStream{}); });
    else if (c) {
      thresholds.theta_img_entropy = c->scan.theta_img_entropy;
      thresholds.theta_edge = c->scan.theta_edge;
    }
  } else {
    if (!c) throw UsageError("scan needs --config or --iq");
    require_seed(*c);
    in_stage("simulate", [&] { stream = build_stream(*c, load_truth(*c)); });
    const auto cfg = emission_for(*c);
    const auto timing = c->simulate.timing;
    provider = [&stream, cfg, timing](double lo, double hi) { return simulate_subband(*stream, timing, cfg, lo, hi); };
    thresholds = in_stage("scan", [&] { return scan_thresholds(*c, *stream); });
  }
  const auto reports = in_stage("scan", [&] {
    return scan(provider, sc.f_min_hz, sc.f_max_hz, sc.band_width_hz, thresholds, recon);
  });
  json j = {{"thresholds", thresholds_json(thresholds)}, {"bands", json::array()}};
  for (const auto& r : reports) j["bands"].push_back(report_json(r));
  if (!report.empty()) in_stage("scan", [&] { write_text(report, j.dump(2) + "\n"); });
  out << j.dump(2) << "\n";
  return kExitOk;
}

int cmd_reconstruct(const ReconFlags& f, const std::string& out_path, std::ostream& out) {
  const auto params = f.raster();
  auto l = load_and_sync(f);
  const auto img = in_stage("reconstruct", [&] { return average_frames(l.env, l.sync, params); });
  in_stage("reconstruct", [&] { save_image(img, out_path); });
  out << json({{"sync", sync_json(l.sync)}, {"output", out_path}}).dump(2) << "\n";
  return kExitOk;
}

int cmd_demux(const ReconFlags& f, const std::string& parity, const std::string& prefix, std::ostream& out,
              std::ostream& err) {
  const auto params = f.raster();
  if (parity != "auto" && parity != "0" && parity != "1") throw UsageError("--parity must be auto, 0 or 1");
  auto l = load_and_sync(f);
  json j = {{"sync", sync_json(l.sync)}};
  const auto result = in_stage("demux", [&] {
    int p = parity == "auto" ? 0 : std::stoi(parity);
    if (parity == "auto") {
      const auto d = auto_parity(l.env, l.sync, params);
      p = d.parity;
      j["auto_parity"] = {{"parity", d.parity}, {"warning", d.warning}};
      if (d.warning) err << "warning: parity could not be determined reliably; using " << p << "\n";
    }
    return demux(l.env, l.sync, params, p);
  });
  const std::string pp = prefix + "_print.pgm", vp = prefix + "_vein.pgm";
  in_stage("demux", [&] {
    save_image(result.print_image, pp);
    save_image(result.vein_image, vp);
  });
  j["parity_offset"] = result.parity_offset;
  j["n_print"] = result.n_print;
  j["n_vein"] = result.n_vein;
  j["outputs"] = {pp, vp};
  out << j.dump(2) << "\n";
  return kExitOk;
}

struct FuseFlags {
  std::vector<std::string> images;
  double lambda = 0.1;
  double tau = 0.0;
  std::string v_target = "auto";
  int window = 5;
  double var_threshold = 1e-3;
  std::string out;
  std::string report;
};

FusionResult run_fusion(const std::vector<GrayImage>& bands, const FuseSection& fs_cfg, std::size_t reference,
                        json& info) {
  const auto mask = segment_uniform(bands.at(reference), fs_cfg.window, fs_cfg.var_threshold);
  FusionProblem p;
  p.bands = bands;
  p.uniform_mask = mask;
  p.lambda = fs_cfg.lambda;
  p.tau = fs_cfg.tau;
  p.v_target = fs_cfg.v_target ? *fs_cfg.v_target : default_v_target(bands, mask);
  auto r = fuse(p);
  info = {{"alpha", r.alpha},
          {"objective", number(r.objective)},
          {"iterations", r.iterations},
          {"v_target", p.v_target},
          {"uniform_pixels", mask.count()}};
  return r;
}

int cmd_fuse(const FuseFlags& f, std::ostream& out) {
  FuseSection s;
  s.lambda = f.lambda;
  s.tau = f.tau;
  s.window = f.window;
  s.var_threshold = f.var_threshold;
  if (f.v_target != "auto") {
    try {
      std::size_t used = 0;
      s.v_target = std::stod(f.v_target, &used);
      if (used != f.v_target.size()) throw std::invalid_argument(f.v_target);
    } catch (const std::exception&) {
      throw UsageError("--v-target must be 'auto' or a number");
    }
  }
  std::vector<GrayImage> bands;
  for (const auto& p : f.images) bands.push_back(in_stage("fuse", [&] { return read_image(p); }));
  json info;
  const auto r = in_stage("fuse", [&] {
    std::size_t ref = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < bands.size(); ++i) {
      const double e = [&] {
        double s2 = 0.0;
        for (double v : bands[i].pixels()) s2 += v * v;
        return s2;
      }();
      if (e > best) {
        best = e;
        ref = i;
      }
    }
    return run_fusion(bands, s, ref, info);
  });
  in_stage("fuse", [&] {
    save_image(r.image, f.out);
    if (!f.report.empty()) write_text(f.report, info.dump(2) + "\n");
  });
  out << info.dump(2) << "\n";
  return kExitOk;
}

int cmd_restore(const std::string& in, const std::string& out_path, double lambda, int iters,
                const std::string& forward, std::ostream& out) {
  const auto model = parse_forward(forward);
  auto y = in_stage("restore", [&] { return read_image(in); });
  const auto r = in_stage("restore", [&] {
    RestorationProblem p{y, lambda, 0.0, model, iters};
    return restore(p);
  });
  in_stage("restore", [&] { save_image(r.image, out_path); });
  out << json({{"iterations", r.iterations},
               {"objective_initial", r.objective_trace.front()},
               {"objective_final", r.objective_trace.back()},
               {"output", out_path}})
             .dump(2)
      << "\n";
  return kExitOk;
}

int cmd_metrics(const std::string& test, const std::string& ref, std::ostream& out) {
  const auto m = in_stage("metrics", [&] { return compare(read_image(test), read_image(ref)); });
  out << metrics_json(m).dump(2) << "\n";
  return kExitOk;
}

int cmd_pipeline(const std::string& config, const std::string& out_dir, std::ostream& out, std::ostream& err) {
  const auto c = load_config(config);
  require_seed(c);
  if (c.simulate.emission.bands.empty()) throw UsageError("config: simulate.bands is empty");
  parse_forward(c.restore.forward);
  const fs::path dir = out_dir.empty() ? resolve(c, c.output_dir) : fs::path(out_dir);
  const bool dual = c.simulate.schedule == Schedule::Alternating;

  json manifest;
  manifest["tool"] = "csileak pipeline";
  manifest["config_hash"] = c.hash();
  manifest["config"] = c.echo();
  json inputs = {{"config", fs::path(config).filename().string()}};
  inputs["print_truth"] = c.print_truth.empty() ? "builtin:print_card" : c.print_truth;
  inputs["vein_truth"] = c.vein_truth.empty() ? "builtin:vein_card" : c.vein_truth;
  manifest["inputs"] = inputs;
  json stages;
  json outputs = json::array();

  // simulate
  const auto truth = in_stage("simulate", [&] { return load_truth(c); });
  const auto stream = in_stage("simulate", [&] { return build_stream(c, truth); });
  const auto cfg = emission_for(c);
  in_stage("simulate", [&] { cfg.validate(c.simulate.timing); });
  stages["simulate"] = {{"frames", stream.frame_count()}, {"link_bits", stream.bits.size()},
                        {"bands", cfg.bands.size()}};

  // scan
  ReconParams recon;
  recon.raster = raster_for(c.reconstruct);
  recon.envelope_smoothing = c.reconstruct.smoothing;
  if (c.reconstruct.sync == "nominal") recon.sync = nominal_sync(c);
  const auto thresholds = in_stage("scan", [&] { return scan_thresholds(c, stream); });
  std::map<double, IqTrace> captured;  // keyed by lower band edge
  const TraceProvider provider = [&](double lo, double hi) {
    auto t = simulate_subband(stream, c.simulate.timing, cfg, lo, hi);
    captured.insert_or_assign(lo, t);
    return t;
  };
  const auto reports = in_stage("scan", [&] {
    return scan(provider, c.scan.f_min_hz, c.scan.f_max_hz, c.scan.band_width_hz, thresholds, recon);
  });
  json scan_json = {{"thresholds", thresholds_json(thresholds)}, {"bands", json::array()}};
  std::vector<std::size_t> accepted;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    scan_json["bands"].push_back(report_json(reports[i]));
    if (reports[i].verdict == Verdict::Accepted) accepted.push_back(i);
  }
  stages["scan"] = scan_json;
  if (accepted.empty()) throw StageError("scan", "no informative band found");

  // reconstruct: shared sync from the strongest accepted band
  std::size_t reference = accepted.front();
  for (std::size_t i : accepted)
    if (reports[i].stats.energy > reports[reference].stats.energy) reference = i;
  std::vector<std::vector<float>> envs;
  for (std::size_t i : accepted) envs.push_back(envelope(captured.at(reports[i].stats.f_low_hz), c.reconstruct.smoothing));
  const std::size_t ref_pos =
      static_cast<std::size_t>(std::find(accepted.begin(), accepted.end(), reference) - accepted.begin());
  const auto sync = in_stage("reconstruct", [&] {
    return detect_sync(envs[ref_pos], captured.at(reports[reference].stats.f_low_hz).sample_rate_hz(), recon.sync);
  });
  stages["reconstruct"] = {{"reference_band", {reports[reference].stats.f_low_hz, reports[reference].stats.f_high_hz}},
                           {"sync", sync_json(sync)}};

  // demux
  std::vector<GrayImage> print_bands, vein_bands;
  std::optional<GrayImage> naive;
  json demux_json;
  in_stage("demux", [&] {
    RasterParams rp = recon.raster;
    if (!dual) {
      for (const auto& e : envs) print_bands.push_back(average_frames(e, sync, rp));
      demux_json = {{"schedule", "single"}};
      return;
    }
    int parity = 0;
    if (c.parity == "auto") {
      const auto d = auto_parity(envs[ref_pos], sync, rp);
      parity = d.parity;
      demux_json["auto_parity"] = {{"parity", d.parity}, {"warning", d.warning}};
      if (d.warning) err << "warning: parity could not be determined reliably; using " << parity << "\n";
    } else {
      parity = std::stoi(c.parity);
    }
    int np = 0, nv = 0;
    for (const auto& e : envs) {
      auto d = demux(e, sync, rp, parity);
      np = d.n_print;
      nv = d.n_vein;
      print_bands.push_back(std::move(d.print_image));
      vein_bands.push_back(std::move(d.vein_image));
    }
    demux_json["parity_offset"] = parity;
    demux_json["n_print"] = np;
    demux_json["n_vein"] = nv;
    RasterParams mixed = rp;
    mixed.frames_to_average = 2 * rp.frames_to_average;
    naive = average_frames(envs[ref_pos], sync, mixed);
    save_image(*naive, dir / "mixed.pgm");
    outputs.push_back("mixed.pgm");
  });
  stages["demux"] = demux_json;

  struct ModalityRun {
    const char* name;
    std::vector<GrayImage>* bands;
    const GrayImage* truth;
  };
  std::vector<ModalityRun> modalities{{"print", &print_bands, &truth.print}};
  if (dual) modalities.push_back({"vein", &vein_bands, &truth.vein});

  json fuse_json, restore_json, metrics_out;
  for (const auto& m : modalities) {
    const GrayImage ref_img = normalize_minmax(*m.truth);
    json per_band = json::array();
    for (std::size_t b = 0; b < m.bands->size(); ++b) {
      const auto name = std::string(m.name) + "_band" + std::to_string(b) + ".pgm";
      in_stage("reconstruct", [&] { save_image((*m.bands)[b], dir / name); });
      outputs.push_back(name);
      per_band.push_back(number(in_stage("metrics", [&] { return ssim((*m.bands)[b], ref_img); })));
    }
    json finfo;
    const auto fused = in_stage("fuse", [&] { return run_fusion(*m.bands, c.fuse, ref_pos, finfo); });
    fuse_json[m.name] = finfo;
    in_stage("fuse", [&] { save_image(fused.image, dir / (std::string(m.name) + "_fused.pgm")); });
    outputs.push_back(std::string(m.name) + "_fused.pgm");

    const auto restored = in_stage("restore", [&] {
      RestorationProblem p{fused.image, c.restore.lambda, 0.0, parse_forward(c.restore.forward), c.restore.iterations};
      return restore(p);
    });
    restore_json[m.name] = {{"iterations", restored.iterations},
                            {"objective_initial", restored.objective_trace.front()},
                            {"objective_final", restored.objective_trace.back()}};
    in_stage("restore", [&] { save_image(restored.image, dir / (std::string(m.name) + "_restored.pgm")); });
    outputs.push_back(std::string(m.name) + "_restored.pgm");

    in_stage("metrics", [&] {
      json mj = metrics_json(compare(restored.image, ref_img));
      mj["ssim_per_band"] = per_band;
      mj["ssim_fused"] = number(ssim(fused.image, ref_img));
      if (naive) mj["ssim_mixed"] = number(ssim(*naive, ref_img));
      metrics_out[m.name] = mj;
    });
  }
  stages["fuse"] = fuse_json;
  stages["restore"] = restore_json;
  stages["metrics"] = metrics_out;
  manifest["stages"] = stages;
  manifest["outputs"] = outputs;
  in_stage("metrics", [&] { write_text(dir / "manifest.json", manifest.dump(2) + "\n"); });

  json summary = {{"manifest", (dir / "manifest.json").string()}, {"config_hash", c.hash()}};
  for (const auto& m : modalities) summary[std::string("ssim_") + m.name] = metrics_out[m.name]["ssim"];
  out << summary.dump(2) << "\n";
  return kExitOk;
}

}  // namespace

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

int run_subcommand(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"EM leakage simulation and reconstruction toolkit for CSI-2 camera links", "csileak"};
  app.require_subcommand(1);

  std::string config, out_dir, report, out_path, parity = "auto", forward = "identity";
  std::optional<std::uint64_t> seed;
  std::vector<std::string> scan_iq;
  std::optional<double> f_min, f_max, bw;
  ReconFlags recon_flags, demux_flags;
  FuseFlags fuse_flags;
  std::string restore_in, metrics_test, metrics_ref;
  double restore_lambda = 0.03;
  int restore_iters = 50;

  auto* sim = app.add_subcommand("simulate", "Simulate per-band IQ captures from a config");
  sim->add_option("--config", config, "Pipeline config (JSON)")->required()->check(CLI::ExistingFile);
  sim->add_option("--out", out_dir, "Output directory (default: paths.output_dir)");
  sim->add_option("--seed", seed, "Override the config seed");

  auto* sc = app.add_subcommand("scan", "Locate informative sub-bands");
  sc->add_option("--config", config, "Pipeline config (JSON)")->check(CLI::ExistingFile);
  sc->add_option("--iq", scan_iq, "Captures to scan instead of simulating")->check(CLI::ExistingFile);
  sc->add_option("--f-min", f_min, "Scan range start (Hz)");
  sc->add_option("--f-max", f_max, "Scan range end (Hz)");
  sc->add_option("--band-width", bw, "Sub-band width (Hz)")->check(CLI::PositiveNumber);
  sc->add_option("--report", report, "Write the per-band report here");

  auto* rec = app.add_subcommand("reconstruct", "Rasterize a capture into an image");
  add_recon_flags(rec, recon_flags, 1);
  rec->add_option("--out", out_path, "Output image (.pgm)")->required();

  auto* dm = app.add_subcommand("demux", "Separate interleaved print/vein frames");
  add_recon_flags(dm, demux_flags, 16);
  dm->add_option("--parity", parity, "auto|0|1");
  dm->add_option("--out", out_path, "Output prefix; writes <prefix>_print.pgm and <prefix>_vein.pgm")->required();

  auto* fu = app.add_subcommand("fuse", "Fuse per-band reconstructions");
  fu->add_option("images", fuse_flags.images, "Band images (.pgm)")->required()->check(CLI::ExistingFile);
  fu->add_option("--lambda", fuse_flags.lambda, "Structure weight")->check(CLI::NonNegativeNumber);
  fu->add_option("--tau", fuse_flags.tau, "Amplitude threshold (noise sigmas)")->check(CLI::NonNegativeNumber);
  fu->add_option("--v-target", fuse_flags.v_target, "auto|<value>");
  fu->add_option("--window", fuse_flags.window, "Uniform-region window (odd)");
  fu->add_option("--var-threshold", fuse_flags.var_threshold, "Uniform-region variance threshold");
  fu->add_option("--out", fuse_flags.out, "Fused image (.pgm)")->required();
  fu->add_option("--report", fuse_flags.report, "Weights report (JSON)");

  auto* rs = app.add_subcommand("restore", "TV restoration of an image");
  rs->add_option("input", restore_in, "Input image")->required()->check(CLI::ExistingFile);
  rs->add_option("--out", out_path, "Output image")->required();
  rs->add_option("--lambda", restore_lambda, "Prior weight")->check(CLI::NonNegativeNumber);
  rs->add_option("--iters", restore_iters, "Iterations")->check(CLI::PositiveNumber);
  rs->add_option("--forward", forward, "identity|blur3");

  auto* me = app.add_subcommand("metrics", "Compare an image against a reference");
  me->add_option("test", metrics_test, "Test image")->required()->check(CLI::ExistingFile);
  me->add_option("reference", metrics_ref, "Reference image")->required()->check(CLI::ExistingFile);

  auto* pl = app.add_subcommand("pipeline", "Run simulate -> scan -> reconstruct -> demux -> fuse -> restore -> metrics");
  pl->add_option("--config", config, "Pipeline config (JSON)")->required()->check(CLI::ExistingFile);
  pl->add_option("--out", out_dir, "Output directory (default: paths.output_dir)");

  std::vector<std::string> argv_store{"csileak"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& s : argv_store) argv.push_back(s.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    const auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << sub->help();
    return kExitUsage;
  }

  try {
    if (sim->parsed()) return cmd_simulate(config, out_dir, seed, out);
    if (sc->parsed()) return cmd_scan(config, scan_iq, f_min, f_max, bw, report, out);
    if (rec->parsed()) return cmd_reconstruct(recon_flags, out_path, out);
    if (dm->parsed()) return cmd_demux(demux_flags, parity, out_path, out, err);
    if (fu->parsed()) return cmd_fuse(fuse_flags, out);
    if (rs->parsed()) return cmd_restore(restore_in, out_path, restore_lambda, restore_iters, forward, out);
    if (me->parsed()) return cmd_metrics(metrics_test, metrics_ref, out);
    if (pl->parsed()) return cmd_pipeline(config, out_dir, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const StageError& e) {
    err << "error [" << e.stage << "]: " << e.what() << "\n";
    return kExitStageError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitStageError;
  }
  return kExitUsage;
}

int run_subcommand(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_subcommand(args, out, err);
}

}  // namespace csileak::cli
