#include "folk/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "folk/error.hpp"

namespace folk {
inline namespace FOLK_PRECISION_NS {
namespace checkpoint {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'F', 'O', 'L', 'K', 'C', 'K', 'P', 'T'};
constexpr std::size_t kHeader = 8 + 4 + 8;

template <typename T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return static_cast<T>(v);
}

void put_f32(std::string& out, float f) { put_le(out, std::bit_cast<std::uint32_t>(f)); }

json describe(const nets::ParamTree& tree) {
  json entries = json::array();
  for (std::size_t i = 0; i < tree.size(); ++i) entries.push_back({{"name", tree.names()[i]}, {"shape", tree.tensors()[i].shape()}});
  return entries;
}

struct Section {
  const char* name;
  const nets::ParamTree* tree;
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DecodeError("cannot open checkpoint '" + path.string() + "'");
  return std::string(std::istreambuf_iterator<char>(in), {});
}

struct Parsed {
  json manifest;
  std::size_t payload_offset = 0;
};

Parsed parse_header(const std::string& bytes) {
  if (bytes.size() < kHeader || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw DecodeError("bad magic: not a FOLKCKPT checkpoint");
  }
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const auto version = get_le<std::uint32_t>(p + 8);
  if (version != kVersion) {
    throw DecodeError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                      std::to_string(kVersion) + ")");
  }
  const auto len = get_le<std::uint64_t>(p + 12);
  if (len > bytes.size() - kHeader) throw DecodeError("truncated manifest");
  Parsed out;
  try {
    out.manifest = json::parse(bytes.begin() + kHeader, bytes.begin() + static_cast<std::ptrdiff_t>(kHeader + len));
  } catch (const json::exception& e) {
    throw DecodeError(std::string("malformed manifest: ") + e.what());
  }
  out.payload_offset = kHeader + len;
  std::uint64_t elements = 0;
  try {
    elements = out.manifest.at("payload_elements").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw DecodeError(std::string("malformed manifest: ") + e.what());
  }
  if (bytes.size() - out.payload_offset != elements * 4) {
    throw DecodeError("payload length mismatch: manifest declares " + std::to_string(elements * 4) +
                      " bytes, file holds " + std::to_string(bytes.size() - out.payload_offset));
  }
  return out;
}

nets::ParamTree read_tree(const json& entries, const unsigned char*& cursor, bool requires_grad) {
  nets::ParamTree tree;
  for (const auto& e : entries) {
    const auto shape = e.at("shape").get<ad::Shape>();
    std::vector<real> data(static_cast<std::size_t>(ad::numel(shape)));
    for (auto& x : data) {
      x = static_cast<real>(std::bit_cast<float>(get_le<std::uint32_t>(cursor)));
      cursor += 4;
    }
    tree.add(e.at("name").get<std::string>(), ad::Tensor(shape, std::move(data), requires_grad));
  }
  return tree;
}

}  // namespace

void save(const fs::path& path, const trainer::TrainState& s, const FolkConfig& cfg) {
  nets::ParamTree center;
  center.add("center", s.center);
  const Section sections[] = {{"student", &s.student}, {"teacher", &s.teacher}, {"adam.m", &s.adam.m},
                              {"adam.v", &s.adam.v},   {"center", &center}};
  json manifest;
  manifest["format"] = "FOLKCKPT";
  manifest["version"] = kVersion;
  manifest["step"] = s.step;
  manifest["epoch"] = s.epoch;
  manifest["seed"] = s.seed;
  // Every random draw is keyed by (seed, epoch, sample, view), so the seed
  // and step fully determine the generator state.
  manifest["rng"] = {{"scheme", "substream"}, {"seed", s.seed}, {"step", s.step}};
  manifest["adam_steps"] = s.adam.steps;
  manifest["config"] = to_json(cfg);
  std::uint64_t elements = 0;
  json secs = json::array();
  for (const auto& sec : sections) {
    secs.push_back({{"name", sec.name}, {"entries", describe(*sec.tree)}});
    elements += static_cast<std::uint64_t>(sec.tree->total_elements());
  }
  manifest["sections"] = secs;
  manifest["payload_elements"] = elements;

  const std::string text = manifest.dump();
  std::string out(kMagic, 8);
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint64_t>(out, text.size());
  out += text;
  out.reserve(out.size() + elements * 4);
  for (const auto& sec : sections)
    for (const auto& t : sec.tree->tensors())
      for (real x : t.data()) put_f32(out, static_cast<float>(x));

  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write checkpoint '" + path.string() + "'");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw Error("failed writing checkpoint '" + path.string() + "'");
  }
  fs::rename(tmp, path);
}

json read_manifest(const fs::path& path) { return parse_header(read_file(path)).manifest; }

Loaded load(const fs::path& path) {
  const std::string bytes = read_file(path);
  Parsed parsed = parse_header(bytes);
  Loaded out;
  out.manifest = parsed.manifest;
  const json& m = parsed.manifest;
  try {
    out.config = config_from_json(m.at("config"));
    auto& s = out.state;
    s.step = m.at("step").get<long long>();
    s.epoch = m.at("epoch").get<long long>();
    s.seed = m.at("seed").get<std::uint64_t>();
    s.adam.steps = m.at("adam_steps").get<std::vector<long long>>();
    const auto* cursor = reinterpret_cast<const unsigned char*>(bytes.data()) + parsed.payload_offset;
    for (const auto& sec : m.at("sections")) {
      const auto name = sec.at("name").get<std::string>();
      const auto& entries = sec.at("entries");
      if (name == "student") s.student = read_tree(entries, cursor, true);
      else if (name == "teacher") s.teacher = read_tree(entries, cursor, false);
      else if (name == "adam.m") s.adam.m = read_tree(entries, cursor, false);
      else if (name == "adam.v") s.adam.v = read_tree(entries, cursor, false);
      else if (name == "center") s.center = read_tree(entries, cursor, false)["center"];
      else throw DecodeError("unknown checkpoint section '" + name + "'");
    }
    if (!s.center.defined() || !s.adam.m.congruent(s.student) || !s.adam.v.congruent(s.student) ||
        s.adam.steps.size() != s.student.size()) {
      throw DecodeError("checkpoint sections are inconsistent");
    }
  } catch (const json::exception& e) {
    throw DecodeError(std::string("malformed manifest: ") + e.what());
  } catch (const ConfigError& e) {
    throw DecodeError(std::string("checkpoint config invalid: ") + e.what());
  }
  return out;
}

}  // namespace checkpoint
}  // namespace FOLK_PRECISION_NS
}  // namespace folk
