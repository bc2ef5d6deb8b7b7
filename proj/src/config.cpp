#include "tfuse/config.hpp"

#include <charconv>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "tfuse/rng.hpp"
#include "tfuse/tft_io.hpp"

namespace tfuse {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: " + key + " expects true/false, got '" + v + "'");
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size()) throw std::invalid_argument("config: " + key + " expects a number, got '" + v + "'");
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw std::invalid_argument("config: " + key + " expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

struct Field {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

#define SIZE_FIELD(name)                                                                         \
  Field {                                                                                        \
    #name, [](const ExperimentConfig& c) { return std::to_string(c.name); },                     \
        [](ExperimentConfig& c, const std::string& v) { c.name = static_cast<std::size_t>(parse_u64(#name, v)); } \
  }
#define U64_FIELD(name)                                                                          \
  Field {                                                                                        \
    #name, [](const ExperimentConfig& c) { return std::to_string(c.name); },                     \
        [](ExperimentConfig& c, const std::string& v) { c.name = parse_u64(#name, v); }          \
  }
#define DOUBLE_FIELD(name)                                                                       \
  Field {                                                                                        \
    #name, [](const ExperimentConfig& c) { return fmt_double(c.name); },                         \
        [](ExperimentConfig& c, const std::string& v) { c.name = parse_double(#name, v); }       \
  }
#define BOOL_FIELD(name)                                                                         \
  Field {                                                                                        \
    #name, [](const ExperimentConfig& c) { return std::string(c.name ? "true" : "false"); },     \
        [](ExperimentConfig& c, const std::string& v) { c.name = parse_bool(#name, v); }         \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      SIZE_FIELD(image_size),
      SIZE_FIELD(channels),
      SIZE_FIELD(fusion_stride),
      Field{"ffm_variant", [](const ExperimentConfig& c) { return to_string(c.ffm_variant); },
            [](ExperimentConfig& c, const std::string& v) { c.ffm_variant = ffm_variant_from_string(v); }},
      BOOL_FIELD(frm_enabled),
      BOOL_FIELD(frm_gates_open),
      BOOL_FIELD(use_seg),
      BOOL_FIELD(use_neg_corr),
      DOUBLE_FIELD(alpha),
      DOUBLE_FIELD(epsilon),
      DOUBLE_FIELD(lr),
      DOUBLE_FIELD(momentum),
      SIZE_FIELD(epochs),
      SIZE_FIELD(batch_size),
      BOOL_FIELD(flip),
      U64_FIELD(seed),
      U64_FIELD(data_seed),
      SIZE_FIELD(n_train),
      SIZE_FIELD(n_val),
      SIZE_FIELD(max_pedestrians),
      SIZE_FIELD(max_distractors),
      DOUBLE_FIELD(night_attenuation),
      DOUBLE_FIELD(nms_iou),
      DOUBLE_FIELD(score_floor),
  };
  return f;
}

}  // namespace

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
  if (fusion_stride == 0 || (fusion_stride & (fusion_stride - 1)) != 0) fail("fusion_stride must be a power of two");
  if (fusion_stride != 8) fail("the backbone has three stride-2 stages; fusion_stride must be 8");
  if (image_size == 0 || image_size % fusion_stride != 0) fail("image_size must be a multiple of fusion_stride");
  if (channels < 4 || channels % 4 != 0) fail("channels must be a positive multiple of 4");
  if (alpha < 0.0) fail("alpha must be >= 0");
  if (epsilon <= 0.0) fail("epsilon must be > 0");
  if (lr < 0.0) fail("lr must be >= 0");
  if (momentum < 0.0 || momentum >= 1.0) fail("momentum must be in [0,1)");
  if (batch_size == 0) fail("batch_size must be >= 1");
  if (nms_iou <= 0.0 || nms_iou > 1.0) fail("nms_iou must be in (0,1]");
  if (score_floor < 0.0 || score_floor >= 1.0) fail("score_floor must be in [0,1)");
  if (night_attenuation < 0.0 || night_attenuation > 1.0) fail("night_attenuation must be in [0,1]");
  if (!frm_enabled && (frm_gates_open || use_seg || use_neg_corr)) {
    fail("frm_gates_open/use_seg/use_neg_corr require frm_enabled");
  }
}

std::string ExperimentConfig::to_text() const {
  std::ostringstream os;
  for (const auto& f : fields()) os << f.key << " = " << f.get(*this) << '\n';
  return os.str();
}

ExperimentConfig ExperimentConfig::from_text(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    bool found = false;
    for (const auto& f : fields()) {
      if (f.key == key) {
        f.set(cfg, value);
        found = true;
        break;
      }
    }
    if (!found) throw std::invalid_argument("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) { return from_text(read_text(path)); }

std::string ExperimentConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_text())));
  return buf;
}

std::string to_string(AblationRow row) {
  switch (row) {
    case AblationRow::ffm:
      return "ffm";
    case AblationRow::ffm_frm:
      return "ffm+frm";
    case AblationRow::ffm_frm_seg:
      return "ffm+frm+seg";
    case AblationRow::ffm_frm_seg_neg:
      return "ffm+frm+seg+neg_corr";
  }
  return "ffm";
}

ExperimentConfig apply_ablation(ExperimentConfig base, AblationRow row) {
  base.frm_gates_open = false;
  base.frm_enabled = row != AblationRow::ffm;
  base.use_seg = row == AblationRow::ffm_frm_seg || row == AblationRow::ffm_frm_seg_neg;
  base.use_neg_corr = row == AblationRow::ffm_frm_seg_neg;
  return base;
}

}  // namespace tfuse
