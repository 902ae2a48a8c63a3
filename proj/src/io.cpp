#include "briges/io.hpp"

#include <openssl/evp.h>

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "briges/errors.hpp"

namespace briges {

namespace {

static_assert(std::endian::native == std::endian::little, "DMAP I/O assumes a little-endian host");

void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

std::uint32_t get_u32(const std::string& bytes, std::size_t at) {
  std::uint32_t v;
  std::memcpy(&v, bytes.data() + at, 4);
  return v;
}

}  // namespace

std::string encode_dmap(const Dmap& map) {
  const std::size_t n = static_cast<std::size_t>(map.width) * map.height * map.channels;
  if (map.data.size() != n) {
    throw DimensionError("DMAP: " + std::to_string(map.data.size()) + " samples for " + std::to_string(map.width) +
                         "x" + std::to_string(map.height) + "x" + std::to_string(map.channels));
  }
  std::string out = "DMAP";
  put_u32(out, map.width);
  put_u32(out, map.height);
  put_u32(out, map.channels);
  out.append(reinterpret_cast<const char*>(map.data.data()), n * sizeof(float));
  return out;
}

Dmap decode_dmap(const std::string& bytes, std::size_t offset) {
  if (offset > bytes.size() || bytes.size() - offset < kDmapHeaderBytes) {
    throw IoError("DMAP: truncated header at offset " + std::to_string(offset));
  }
  if (bytes.compare(offset, 4, "DMAP") != 0) throw IoError("DMAP: bad magic at offset " + std::to_string(offset));
  Dmap map;
  map.width = get_u32(bytes, offset + 4);
  map.height = get_u32(bytes, offset + 8);
  map.channels = get_u32(bytes, offset + 12);
  const std::uint64_t n = std::uint64_t{map.width} * map.height * map.channels;
  const std::size_t avail = bytes.size() - offset - kDmapHeaderBytes;
  if (n > avail / sizeof(float)) {
    throw IoError("DMAP: payload of " + std::to_string(n) + " floats exceeds the " + std::to_string(avail) +
                  " bytes available");
  }
  map.data.resize(n);
  std::memcpy(map.data.data(), bytes.data() + offset + kDmapHeaderBytes, n * sizeof(float));
  return map;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

void write_dmap(const std::filesystem::path& path, const Dmap& map) { write_file(path, encode_dmap(map)); }

Dmap read_dmap(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  Dmap map = decode_dmap(bytes);
  if (bytes.size() != kDmapHeaderBytes + map.data.size() * sizeof(float)) {
    throw IoError(path.string() + ": trailing bytes after DMAP payload");
  }
  return map;
}

Dmap to_dmap(const Tensor& t, std::size_t height, std::size_t width) {
  if (height * width != t.size()) {
    throw DimensionError("to_dmap: " + shape_string(t.shape()) + " is not " + std::to_string(height) + "x" +
                         std::to_string(width));
  }
  Dmap map;
  map.width = static_cast<std::uint32_t>(width);
  map.height = static_cast<std::uint32_t>(height);
  map.channels = 1;
  map.data.assign(t.values().begin(), t.values().end());
  return map;
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex += kHex[digest[i] >> 4];
    hex += kHex[digest[i] & 0xf];
  }
  return hex;
}

// ---------------------------------------------------------------------------
// Settings

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::size_t parse_count(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError(key, "config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError(key, "config key '" + key + "': expected a finite number, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key, "config key '" + key + "': expected true or false, got '" + v + "'");
}

Grid parse_grid(const std::string& key, const std::string& v) {
  const auto x = v.find('x');
  if (x == std::string::npos) throw ConfigError(key, "config key '" + key + "': expected HxW, got '" + v + "'");
  return {parse_count(key, v.substr(0, x)), parse_count(key, v.substr(x + 1))};
}

std::string grid_text(Grid g) { return std::to_string(g.height) + "x" + std::to_string(g.width); }

std::string real_text(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

using Setter = std::function<void(Settings&, const std::string& key, const std::string& value)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    t["channels"] = [](Settings& s, auto& k, auto& v) { s.model.gate.channels = parse_count(k, v); };
    t["proj_dim"] = [](Settings& s, auto& k, auto& v) { s.model.gate.proj_dim = parse_count(k, v); };
    t["heads"] = [](Settings& s, auto& k, auto& v) { s.model.gate.heads = parse_count(k, v); };
    t["mlp_ratio"] = [](Settings& s, auto& k, auto& v) { s.model.gate.mlp_ratio = parse_count(k, v); };
    t["residual"] = [](Settings& s, auto& k, auto& v) { s.model.gate.residual = parse_bool(k, v); };
    t["init_gain"] = [](Settings& s, auto& k, auto& v) { s.model.gate.init_gain = parse_real(k, v); };
    t["level_grid"] = [](Settings& s, auto& k, auto& v) { s.model.level_grids.fill(parse_grid(k, v)); };
    for (std::size_t i = 0; i < kLevels; ++i) {
      t["level" + std::to_string(i + 1)] = [i](Settings& s, auto& k, auto& v) {
        s.model.level_grids[i] = parse_grid(k, v);
      };
    }
    t["semantic_grid"] = [](Settings& s, auto& k, auto& v) { s.model.semantic_grid = parse_grid(k, v); };
    t["output"] = [](Settings& s, auto& k, auto& v) { s.model.output = parse_grid(k, v); };
    t["latent_dim"] = [](Settings& s, auto& k, auto& v) { s.model.latent_dim = parse_count(k, v); };
    t["feature_scale"] = [](Settings& s, auto& k, auto& v) { s.model.feature_scale = parse_real(k, v); };
    t["tau_inference"] = [](Settings& s, auto& k, auto& v) { s.model.tau_inference = parse_real(k, v); };
    t["mode"] = [](Settings& s, auto& k, auto& v) {
      if (v == "v1") {
        s.model.mode = LossMode::V1;
      } else if (v == "v2") {
        s.model.mode = LossMode::V2;
      } else {
        throw ConfigError(k, "config key '" + k + "': expected v1 or v2, got '" + v + "'");
      }
    };
    t["gm_scales"] = [](Settings& s, auto& k, auto& v) { s.model.loss.gm_scales = parse_count(k, v); };
    t["model_seed"] = [](Settings& s, auto& k, auto& v) { s.model.model_seed = parse_count(k, v); };
    t["lr"] = [](Settings& s, auto& k, auto& v) { s.optim.lr = parse_real(k, v); };
    t["weight_decay"] = [](Settings& s, auto& k, auto& v) { s.optim.weight_decay = parse_real(k, v); };
    t["beta1"] = [](Settings& s, auto& k, auto& v) { s.optim.beta1 = parse_real(k, v); };
    t["beta2"] = [](Settings& s, auto& k, auto& v) { s.optim.beta2 = parse_real(k, v); };
    t["eps"] = [](Settings& s, auto& k, auto& v) { s.optim.eps = parse_real(k, v); };
    t["steps"] = [](Settings& s, auto& k, auto& v) { s.steps = parse_count(k, v); };
    t["batch_size"] = [](Settings& s, auto& k, auto& v) { s.batch_size = parse_count(k, v); };
    return t;
  }();
  return table;
}

void check_settings(const Settings& s) {
  const ModelConfig& m = s.model;
  auto need = [](bool ok, const char* key, const std::string& what) {
    if (!ok) throw ConfigError(key, std::string("config key '") + key + "': " + what);
  };
  need(m.gate.channels >= 1, "channels", "must be >= 1");
  need(m.gate.proj_dim >= 1, "proj_dim", "must be >= 1");
  need(m.gate.heads >= 1 && m.gate.proj_dim % m.gate.heads == 0, "heads", "must be >= 1 and divide proj_dim");
  need(m.gate.mlp_ratio >= 1, "mlp_ratio", "must be >= 1");
  need(m.gate.init_gain > 0.0, "init_gain", "must be > 0");
  for (std::size_t i = 0; i < kLevels; ++i) {
    const std::string key = "level" + std::to_string(i + 1);
    if (m.level_grids[i].tokens() == 0) throw ConfigError(key, "config key '" + key + "': grid must be non-empty");
  }
  need(m.semantic_grid.tokens() >= 1, "semantic_grid", "grid must be non-empty");
  need(m.output.tokens() >= 2, "output", "raster needs >= 2 pixels");
  need(m.latent_dim >= 1, "latent_dim", "must be >= 1");
  need(m.feature_scale > 0.0, "feature_scale", "must be > 0");
  need(m.tau_inference >= 1.0, "tau_inference", "must be >= 1");
  need(m.loss.gm_scales >= 1, "gm_scales", "must be >= 1");
  need(s.optim.lr >= 0.0, "lr", "must be >= 0");
  need(s.optim.weight_decay >= 0.0, "weight_decay", "must be >= 0");
  need(s.optim.beta1 >= 0.0 && s.optim.beta1 < 1.0, "beta1", "must be in [0, 1)");
  need(s.optim.beta2 >= 0.0 && s.optim.beta2 < 1.0, "beta2", "must be in [0, 1)");
  need(s.optim.eps > 0.0, "eps", "must be > 0");
  need(s.steps >= 1, "steps", "must be >= 1");
  need(s.batch_size >= 1, "batch_size", "must be >= 1");
}

}  // namespace

Settings parse_settings(const std::string& text) {
  Settings s;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(body, "config line " + std::to_string(lineno) + ": expected 'key = value', got '" + body + "'");
    }
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError(key, "unknown config key '" + key + "'");
    it->second(s, key, value);
  }
  check_settings(s);
  return s;
}

Settings load_settings(const std::filesystem::path& path) {
  std::ifstream probe(path);
  if (!probe) throw ConfigError("config", "cannot read config file " + path.string());
  return parse_settings(read_file(path));
}

std::string format_settings(const Settings& s) {
  const ModelConfig& m = s.model;
  std::ostringstream out;
  out << "channels = " << m.gate.channels << "\n"
      << "proj_dim = " << m.gate.proj_dim << "\n"
      << "heads = " << m.gate.heads << "\n"
      << "mlp_ratio = " << m.gate.mlp_ratio << "\n"
      << "residual = " << (m.gate.residual ? "true" : "false") << "\n"
      << "init_gain = " << real_text(m.gate.init_gain) << "\n";
  for (std::size_t i = 0; i < kLevels; ++i) out << "level" << i + 1 << " = " << grid_text(m.level_grids[i]) << "\n";
  out << "semantic_grid = " << grid_text(m.semantic_grid) << "\n"
      << "output = " << grid_text(m.output) << "\n"
      << "latent_dim = " << m.latent_dim << "\n"
      << "feature_scale = " << real_text(m.feature_scale) << "\n"
      << "tau_inference = " << real_text(m.tau_inference) << "\n"
      << "mode = " << (m.mode == LossMode::V1 ? "v1" : "v2") << "\n"
      << "gm_scales = " << m.loss.gm_scales << "\n"
      << "model_seed = " << m.model_seed << "\n"
      << "lr = " << real_text(s.optim.lr) << "\n"
      << "weight_decay = " << real_text(s.optim.weight_decay) << "\n"
      << "beta1 = " << real_text(s.optim.beta1) << "\n"
      << "beta2 = " << real_text(s.optim.beta2) << "\n"
      << "eps = " << real_text(s.optim.eps) << "\n"
      << "steps = " << s.steps << "\n"
      << "batch_size = " << s.batch_size << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr const char* kCheckpointMagic = "BRIGES-CKPT 1";

Dmap split_tensor(const Tensor& t) {
  Dmap map;
  map.height = static_cast<std::uint32_t>(t.rows());
  map.width = static_cast<std::uint32_t>(t.cols());
  map.channels = 2;
  map.data.reserve(2 * t.size());
  for (double v : t.values()) {
    const float hi = static_cast<float>(v);
    map.data.push_back(hi);
    map.data.push_back(static_cast<float>(v - static_cast<double>(hi)));
  }
  return map;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  GateSet gates = ckpt.gates;
  std::string payload;
  std::ostringstream records;
  for (const auto& [name, tensor] : gate_params(gates)) {
    const Dmap map = split_tensor(*tensor);
    records << "record " << name << " " << payload.size() << " " << map.height << " " << map.width << " "
            << map.channels << "\n";
    payload += encode_dmap(map);
  }
  std::string out = std::string(kCheckpointMagic) + "\n";
  out += format_settings(ckpt.settings);
  out += "frozen_digest " + ckpt.frozen_digest + "\n";
  out += "payload_sha256 " + sha256_hex(payload) + "\n";
  out += records.str();
  out += "end\n";
  out += payload;
  write_file(path, out);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  const std::string where = path.string() + ": ";
  std::size_t pos = 0;
  auto next_line = [&]() {
    const auto nl = bytes.find('\n', pos);
    if (nl == std::string::npos) throw IoError(where + "truncated manifest");
    std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };
  if (next_line() != kCheckpointMagic) throw IoError(where + "not a checkpoint (bad header)");

  std::string settings_text, payload_digest;
  Checkpoint ckpt;
  struct Record {
    std::string name;
    std::size_t offset, height, width, channels;
  };
  std::vector<Record> records;
  for (std::string line = next_line(); line != "end"; line = next_line()) {
    std::istringstream ls(line);
    std::string head;
    ls >> head;
    if (head == "frozen_digest") {
      ls >> ckpt.frozen_digest;
    } else if (head == "payload_sha256") {
      ls >> payload_digest;
    } else if (head == "record") {
      Record r;
      if (!(ls >> r.name >> r.offset >> r.height >> r.width >> r.channels)) {
        throw IoError(where + "malformed record line '" + line + "'");
      }
      records.push_back(r);
    } else {
      settings_text += line + "\n";
    }
  }
  try {
    ckpt.settings = parse_settings(settings_text);
  } catch (const std::invalid_argument& e) {
    throw IoError(where + "bad settings in manifest: " + e.what());
  }
  const std::string payload = bytes.substr(pos);
  if (sha256_hex(payload) != payload_digest) throw IoError(where + "payload checksum mismatch");

  ckpt.gates = GateSet{};
  for (GateParams& g : ckpt.gates) g = GateParams::zeros(ckpt.settings.model.gate);
  ParamRefs params = gate_params(ckpt.gates);
  if (records.size() != params.size()) {
    throw IoError(where + std::to_string(records.size()) + " records for " + std::to_string(params.size()) +
                  " gate parameters");
  }
  for (const Record& r : records) {
    const auto it = params.find(r.name);
    if (it == params.end()) throw IoError(where + "unknown record '" + r.name + "'");
    Tensor& t = *it->second;
    const Dmap map = decode_dmap(payload, r.offset);
    if (map.height != r.height || map.width != r.width || map.channels != 2 || map.height != t.rows() ||
        map.width != t.cols()) {
      throw IoError(where + "record '" + r.name + "' has the wrong shape");
    }
    for (std::size_t i = 0; i < t.size(); ++i) {
      t[i] = static_cast<double>(map.data[2 * i]) + static_cast<double>(map.data[2 * i + 1]);
    }
  }
  for (GateParams& g : ckpt.gates) g.set_requires_grad(true);
  return ckpt;
}

StubModel model_from_checkpoint(const Checkpoint& ckpt) {
  StubModel model = build_model(ckpt.settings.model, 0);
  const std::string digest = frozen_digest(model);
  if (digest != ckpt.frozen_digest) {
    throw IoError("checkpoint frozen digest " + ckpt.frozen_digest + " does not match rebuilt model " + digest);
  }
  model.gates = ckpt.gates;
  return model;
}

}  // namespace briges
