#include "tfuse/checkpoint.hpp"

#include <set>
#include <sstream>
#include <stdexcept>

#include "tfuse/tft_io.hpp"

namespace tfuse {

namespace {

constexpr const char* kFormatTag = "tfuse-checkpoint 1";

std::string shape_field(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const ExperimentConfig& cfg, const DetectorParams& params) {
  std::filesystem::create_directories(dir / "params");
  std::ostringstream manifest;
  manifest << kFormatTag << '\n' << "config_hash " << cfg.hash() << '\n';
  const ParameterSet set = params.parameters();
  for (const auto& p : set.items()) {
    const std::string file = p.name + ".tft";
    write_tft(dir / "params" / file, p.tensor);
    manifest << "param " << p.name << ' ' << shape_field(p.tensor.shape()) << ' ' << file << '\n';
  }
  write_text_atomic(dir / "config.txt", cfg.to_text());
  write_text_atomic(dir / "manifest.txt", manifest.str());
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  auto fail = [&](const std::string& msg) { throw std::runtime_error("checkpoint " + dir.string() + ": " + msg); };
  if (!std::filesystem::exists(dir / "manifest.txt")) fail("missing manifest.txt");
  Checkpoint ck;
  ck.config = ExperimentConfig::from_text(read_text(dir / "config.txt"));

  std::istringstream manifest(read_text(dir / "manifest.txt"));
  std::string line;
  std::getline(manifest, line);
  if (line != kFormatTag) fail("unrecognized format tag '" + line + "'");
  std::string key, hash;
  manifest >> key >> hash;
  if (key != "config_hash") fail("manifest lacks config_hash");
  if (hash != ck.config.hash()) fail("config hash " + ck.config.hash() + " does not match manifest hash " + hash);

  ck.params = DetectorParams::init(ck.config);
  ParameterSet expected = ck.params.parameters();
  std::set<std::string> seen;
  std::string name, shape, file;
  while (manifest >> key >> name >> shape >> file) {
    if (key != "param") fail("unexpected manifest entry '" + key + "'");
    if (!expected.contains(name)) fail("parameter " + name + " is not part of the configured model");
    Tensor target = expected.get(name);
    const Tensor stored = read_tft(dir / "params" / file);
    if (stored.shape() != target.shape()) {
      fail("parameter " + name + " has shape " + shape_to_string(stored.shape()) + ", config expects " +
           shape_to_string(target.shape()));
    }
    const auto src = stored.data();
    auto dst = target.mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
    seen.insert(name);
  }
  for (const auto& p : expected.items()) {
    if (!seen.count(p.name)) fail("parameter " + p.name + " missing from manifest");
  }
  return ck;
}

}  // namespace tfuse
