#include "cyclenet/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cyclenet {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  // prefer the short form when it round-trips
  char short_buf[64];
  std::snprintf(short_buf, sizeof(short_buf), "%.9g", v);
  if (std::stod(short_buf) == v) return short_buf;
  return buf;
}

KeyValueConfig KeyValueConfig::from_text(const std::string& text) {
  KeyValueConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": expected `key = value`, got \"" + line + "\"");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": empty key");
    cfg.set(key, value);
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

const std::string* KeyValueConfig::find(const std::string& key) const {
  for (const auto& [k, v] : items_)
    if (k == key) return &v;
  return nullptr;
}

bool KeyValueConfig::has(const std::string& key) const { return find(key) != nullptr; }

void KeyValueConfig::set(const std::string& key, std::string value) {
  for (auto& [k, v] : items_)
    if (k == key) {
      v = std::move(value);
      return;
    }
  items_.emplace_back(key, std::move(value));
}

std::string KeyValueConfig::get_string(const std::string& key) const {
  const std::string* v = find(key);
  if (!v) throw std::invalid_argument("config: missing key `" + key + "`");
  return *v;
}

std::string KeyValueConfig::get_string_or(const std::string& key, const std::string& fallback) const {
  const std::string* v = find(key);
  return v ? *v : fallback;
}

long long KeyValueConfig::get_int(const std::string& key) const {
  const std::string v = get_string(key);
  try {
    size_t pos = 0;
    long long r = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key `" + key + "` is not an integer: \"" + v + "\"");
  }
}

long long KeyValueConfig::get_int_or(const std::string& key, long long fallback) const {
  return has(key) ? get_int(key) : fallback;
}

double KeyValueConfig::get_double(const std::string& key) const {
  const std::string v = get_string(key);
  try {
    size_t pos = 0;
    double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key `" + key + "` is not a number: \"" + v + "\"");
  }
}

double KeyValueConfig::get_double_or(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

bool KeyValueConfig::get_bool_or(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  std::string v = get_string(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::invalid_argument("config: key `" + key + "` is not a boolean: \"" + v + "\"");
}

std::vector<std::string> KeyValueConfig::get_list(const std::string& key) const {
  const std::string v = get_string(key);
  if (trim(v).empty() || trim(v) == "none") return {};
  return split(v, ',');
}

std::vector<long long> KeyValueConfig::get_int_list(const std::string& key) const {
  std::vector<long long> out;
  for (const std::string& item : get_list(key)) {
    try {
      size_t pos = 0;
      out.push_back(std::stoll(item, &pos));
      if (pos != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw std::invalid_argument("config: key `" + key + "` has a non-integer item: \"" + item +
                                  "\"");
    }
  }
  return out;
}

std::string KeyValueConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : items_) {
    out += k;
    out += " = ";
    out += v;
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// NetworkSpec serialization
// ---------------------------------------------------------------------------

namespace {

std::string cycles_value(const NetworkSpec& spec) {
  std::string out;
  for (size_t i = 0; i < spec.cycles.size(); ++i) {
    if (i) out += ",";
    const CycleSpec& c = spec.cycles[i];
    if (c.cubic) {
      out += std::to_string(c.width);
    } else {
      out += std::to_string(c.out_extents[0]) + ":" + std::to_string(c.out_extents[1]) + ":" +
             std::to_string(c.out_extents[2]);
    }
  }
  if (spec.cycles.empty()) out = "none";
  return out;
}

template <typename Get>
std::string uniform_or_list(const NetworkSpec& spec, Get&& get) {
  std::string first, all;
  bool uniform = true;
  for (size_t i = 0; i < spec.cycles.size(); ++i) {
    std::string v = get(spec.cycles[i]);
    if (i == 0)
      first = v;
    else if (v != first)
      uniform = false;
    if (i) all += ",";
    all += v;
  }
  if (spec.cycles.empty()) return "";
  return uniform ? first : all;
}

template <typename Parse>
void assign_per_cycle(const KeyValueConfig& cfg, const std::string& key, NetworkSpec& spec,
                      Parse&& parse) {
  if (!cfg.has(key) || spec.cycles.empty()) return;
  std::vector<std::string> items = cfg.get_list(key);
  if (items.size() == 1) {
    for (auto& c : spec.cycles) parse(c, items[0]);
  } else if (items.size() == spec.cycles.size()) {
    for (size_t i = 0; i < items.size(); ++i) parse(spec.cycles[i], items[i]);
  } else {
    throw std::invalid_argument("config: `" + key + "` must have one value or one per cycle");
  }
}

}  // namespace

NetworkSpec network_spec_from_config(const KeyValueConfig& cfg) {
  NetworkSpec spec;
  std::vector<long long> in_shape = cfg.get_int_list("input_shape");
  if (in_shape.size() != 3)
    throw std::invalid_argument("config: input_shape must be three extents x,y,channels");
  spec.input_shape = {int(in_shape[0]), int(in_shape[1]), int(in_shape[2])};
  spec.first_conv_features = int(cfg.get_int("first_conv_features"));
  spec.first_conv_kernel = int(cfg.get_int_or("first_conv_kernel", 3));
  spec.n_classes = int(cfg.get_int("n_classes"));

  std::string head = cfg.get_string_or("head", "flatten");
  if (head == "flatten")
    spec.head = Head::Flatten;
  else if (head == "global_pool")
    spec.head = Head::GlobalPool;
  else
    throw std::invalid_argument("config: head must be `flatten` or `global_pool`, got `" + head +
                                "`");

  if (cfg.has("cycles")) {
    for (const std::string& item : cfg.get_list("cycles")) {
      CycleSpec c;
      if (item.find(':') != std::string::npos) {
        std::vector<std::string> parts = split(item, ':');
        if (parts.size() != 3)
          throw std::invalid_argument("config: non-cubic cycle needs three extents, got \"" +
                                      item + "\"");
        c.cubic = false;
        for (int d = 0; d < 3; ++d) c.out_extents[size_t(d)] = std::stoi(parts[size_t(d)]);
      } else {
        c.cubic = true;
        c.width = std::stoi(item);
      }
      spec.cycles.push_back(c);
    }
  }

  assign_per_cycle(cfg, "cycle_kinds", spec, [](CycleSpec& c, const std::string& v) {
    if (v == "orthogonal")
      c.kind = CycleKind::Orthogonal;
    else if (v == "standard")
      c.kind = CycleKind::Standard;
    else
      throw std::invalid_argument("config: cycle kind must be orthogonal|standard, got `" + v + "`");
  });
  assign_per_cycle(cfg, "kernel_size", spec,
                   [](CycleSpec& c, const std::string& v) { c.kernel_size = std::stoi(v); });
  assign_per_cycle(cfg, "dropout_rate", spec,
                   [](CycleSpec& c, const std::string& v) { c.dropout_rate = std::stod(v); });
  return spec;
}

void network_spec_to_config(const NetworkSpec& spec, KeyValueConfig& cfg) {
  cfg.set("input_shape", std::to_string(spec.input_shape[0]) + "," +
                             std::to_string(spec.input_shape[1]) + "," +
                             std::to_string(spec.input_shape[2]));
  cfg.set("first_conv_features", std::to_string(spec.first_conv_features));
  cfg.set("first_conv_kernel", std::to_string(spec.first_conv_kernel));
  cfg.set("cycles", cycles_value(spec));
  if (!spec.cycles.empty()) {
    cfg.set("cycle_kinds", uniform_or_list(spec, [](const CycleSpec& c) {
              return std::string(c.kind == CycleKind::Orthogonal ? "orthogonal" : "standard");
            }));
    cfg.set("kernel_size",
            uniform_or_list(spec, [](const CycleSpec& c) { return std::to_string(c.kernel_size); }));
    cfg.set("dropout_rate",
            uniform_or_list(spec, [](const CycleSpec& c) { return format_double(c.dropout_rate); }));
  }
  cfg.set("head", spec.head == Head::Flatten ? "flatten" : "global_pool");
  cfg.set("n_classes", std::to_string(spec.n_classes));
}

std::string network_spec_text(const NetworkSpec& spec) {
  KeyValueConfig cfg;
  network_spec_to_config(spec, cfg);
  return cfg.to_text();
}

}  // namespace cyclenet
