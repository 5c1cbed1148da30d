#include "mdn/checkpoint.hpp"

#include <array>
#include <fstream>
#include <sstream>

#include "mdn/config.hpp"
#include "mdn/errors.hpp"
#include "mdn/tensor_io.hpp"

namespace mdn {
namespace fs = std::filesystem;

namespace {

constexpr std::array<char, 4> kContainerMagic{'M', 'D', 'T', 'C'};
constexpr uint8_t kContainerVersion = 1;
constexpr int kManifestVersion = 1;

enum class Role : uint8_t {
  Weight = 0,
  Bias = 1,
  Gamma = 2,
  Beta = 3,
  MomentM = 4,
  MomentV = 5,
  RunningMean = 6,
  RunningVar = 7,
};

Role role_of(ParamKind k) {
  switch (k) {
    case ParamKind::Weight: return Role::Weight;
    case ParamKind::Bias: return Role::Bias;
    case ParamKind::BnGamma: return Role::Gamma;
    case ParamKind::BnBeta: return Role::Beta;
  }
  return Role::Weight;
}

ParamKind kind_of(Role r) {
  switch (r) {
    case Role::Bias: return ParamKind::Bias;
    case Role::Gamma: return ParamKind::BnGamma;
    case Role::Beta: return ParamKind::BnBeta;
    default: return ParamKind::Weight;
  }
}

void put_entry(std::ostream& out, const std::string& name, Role role, const MdtnArray& a) {
  write_u32(out, static_cast<uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  out.put(static_cast<char>(role));
  write_mdtn(out, a);
}

MdtnArray vec_array(const std::vector<float>& v) {
  return {{static_cast<int64_t>(v.size())}, v};
}

std::string join(const std::vector<int64_t>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

}  // namespace

void save_checkpoint(const fs::path& dir, const ParamStore& params,
                     const CheckpointManifest& manifest) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());

  const NetworkConfig& c = manifest.config;
  KeyValues kv;
  kv.set("format", "mdn-checkpoint");
  kv.set("version", std::to_string(kManifestVersion));
  kv.set("model", manifest.model);
  kv.set("input_size", std::to_string(c.input_size));
  kv.set("width_multiplier", format_double(c.width_multiplier));
  kv.set("middle_repeats", std::to_string(c.middle_repeats));
  kv.set("aspp_rates", join(c.aspp_rates));
  kv.set("aspp_out_channels", std::to_string(c.aspp_out_channels));
  kv.set("bn_decay", format_double(c.bn_decay));
  kv.set("step", std::to_string(manifest.step));
  kv.set("bn_mode", manifest.bn_mode);
  kv.set("rng_key", std::to_string(manifest.rng_key));
  kv.set("rng_counter", std::to_string(manifest.rng_counter));
  for (const auto& [k, v] : manifest.extra) kv.set("extra." + k, v);
  {
    std::ofstream out(dir / "manifest.txt");
    if (!out) throw IoError("cannot write " + (dir / "manifest.txt").string());
    kv.write(out);
  }

  std::ofstream out(dir / "tensors.mdtc", std::ios::binary);
  if (!out) throw IoError("cannot write " + (dir / "tensors.mdtc").string());
  out.write(kContainerMagic.data(), kContainerMagic.size());
  out.put(static_cast<char>(kContainerVersion));
  uint32_t count = 0;
  for (const auto& [name, p] : params.params()) count += 1 + !p.m.empty() + !p.v.empty();
  count += 2 * static_cast<uint32_t>(params.bn_stats().size());
  write_u32(out, count);
  for (const auto& [name, p] : params.params()) {
    put_entry(out, name, role_of(p.kind), to_mdtn(*p.value));
    if (!p.m.empty()) put_entry(out, name, Role::MomentM, to_mdtn(p.m));
    if (!p.v.empty()) put_entry(out, name, Role::MomentV, to_mdtn(p.v));
  }
  for (const auto& [name, s] : params.bn_stats()) {
    put_entry(out, name, Role::RunningMean, vec_array(s.running_mean));
    put_entry(out, name, Role::RunningVar, vec_array(s.running_var));
  }
  if (!out) throw IoError("write failed: " + (dir / "tensors.mdtc").string());
}

Checkpoint load_checkpoint(const fs::path& dir, const NetworkConfig* expected) {
  Checkpoint ck;
  KeyValues kv = KeyValues::load(dir / "manifest.txt");
  if (kv.get_string("format", "") != "mdn-checkpoint") {
    throw IoError(dir.string() + ": not a checkpoint manifest");
  }
  const int64_t version = kv.get_int("version", -1);
  if (version != kManifestVersion) {
    throw IoError(dir.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  CheckpointManifest& m = ck.manifest;
  m.model = kv.get_string("model", "encoder_decoder");
  m.config.input_size = kv.get_int("input_size", m.config.input_size);
  m.config.width_multiplier = kv.get_double("width_multiplier", m.config.width_multiplier);
  m.config.middle_repeats = kv.get_int("middle_repeats", m.config.middle_repeats);
  m.config.aspp_rates = kv.get_int_list("aspp_rates", m.config.aspp_rates);
  m.config.aspp_out_channels = kv.get_int("aspp_out_channels", m.config.aspp_out_channels);
  m.config.bn_decay = static_cast<float>(kv.get_double("bn_decay", m.config.bn_decay));
  m.step = kv.get_int("step", 0);
  m.bn_mode = kv.get_string("bn_mode", "training");
  m.rng_key = kv.get_uint64("rng_key", 0);
  m.rng_counter = kv.get_uint64("rng_counter", 0);
  for (const auto& [k, e] : kv.entries()) {
    if (k.rfind("extra.", 0) == 0) m.extra[k.substr(6)] = e.value;
  }

  if (expected && m.model == "encoder_decoder" && !(m.config == *expected)) {
    std::ostringstream os;
    os << dir.string() << ": checkpoint config (width_multiplier=" << m.config.width_multiplier
       << ", input_size=" << m.config.input_size << ", middle_repeats=" << m.config.middle_repeats
       << ") does not match the requested network (width_multiplier="
       << expected->width_multiplier << ", input_size=" << expected->input_size
       << ", middle_repeats=" << expected->middle_repeats << ")";
    throw ConfigError(os.str());
  }

  const fs::path tpath = dir / "tensors.mdtc";
  std::ifstream in(tpath, std::ios::binary);
  if (!in) throw IoError("cannot open " + tpath.string());
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kContainerMagic) throw IoError(tpath.string() + ": bad container magic");
  const int cver = in.get();
  if (cver != kContainerVersion) {
    throw IoError(tpath.string() + ": unsupported container version " + std::to_string(cver));
  }
  try {
    const uint32_t count = read_u32(in);
    std::map<std::string, MdtnArray> means, vars;
    for (uint32_t i = 0; i < count; ++i) {
      const uint32_t len = read_u32(in);
      if (len > 4096) throw IoError("corrupt entry name length");
      std::string name(len, '\0');
      in.read(name.data(), len);
      const int role = in.get();
      if (!in || role < 0 || role > 7) throw IoError("corrupt entry header");
      MdtnArray a = read_mdtn(in);
      switch (static_cast<Role>(role)) {
        case Role::MomentM: ck.params.get(name).m = from_mdtn(a); break;
        case Role::MomentV: ck.params.get(name).v = from_mdtn(a); break;
        case Role::RunningMean: means[name] = std::move(a); break;
        case Role::RunningVar: vars[name] = std::move(a); break;
        default: ck.params.add(name, from_mdtn(a), kind_of(static_cast<Role>(role)));
      }
    }
    for (auto& [name, a] : means) {
      auto it = vars.find(name);
      if (it == vars.end() || it->second.data.size() != a.data.size()) {
        throw IoError("batch-norm '" + name + "' has inconsistent statistics");
      }
      BatchNormStats& s = ck.params.add_bn(name, static_cast<int64_t>(a.data.size()),
                                           m.config.bn_decay);
      s.running_mean = a.data;
      s.running_var = it->second.data;
    }
  } catch (const IoError& e) {
    throw IoError(tpath.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw IoError(tpath.string() + ": " + e.what());
  }
  return ck;
}

void save_identity_checkpoint(const fs::path& dir, int64_t input_size) {
  CheckpointManifest m;
  m.model = "identity";
  m.config.input_size = input_size;
  save_checkpoint(dir, ParamStore{}, m);
}

}  // namespace mdn
