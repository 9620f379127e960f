#include "hitl/config.hpp"

#include <cctype>
#include <cerrno>
#include <cstdlib>
#include <functional>
#include <set>
#include <sstream>

#include "hitl/error.hpp"
#include "hitl/record_io.hpp"

namespace hitl {
namespace {

class ValueParser {
 public:
  ValueParser(const std::string& text, int line) : s_(text), line_(line) {}

  TomlValue parse_all() {
    TomlValue v = value();
    skip_ws();
    if (pos_ != s_.size()) fail("unexpected text after value");
    return v;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError("line " + std::to_string(line_) + ": " + what);
  }

  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }

  TomlValue value() {
    skip_ws();
    if (pos_ >= s_.size()) fail("missing value");
    const char c = s_[pos_];
    if (c == '"') return TomlValue{string()};
    if (c == '[') return array();
    return scalar();
  }

  std::string string() {
    ++pos_;
    std::string out;
    while (pos_ < s_.size() && s_[pos_] != '"') {
      char c = s_[pos_++];
      if (c == '\\') {
        if (pos_ >= s_.size()) break;
        const char e = s_[pos_++];
        switch (e) {
          case 'n': c = '\n'; break;
          case 't': c = '\t'; break;
          case '"': c = '"'; break;
          case '\\': c = '\\'; break;
          default: fail(std::string("unsupported escape \\") + e);
        }
      }
      out += c;
    }
    if (pos_ >= s_.size()) fail("unterminated string");
    ++pos_;
    return out;
  }

  TomlValue array() {
    ++pos_;
    std::vector<TomlValue> items;
    for (;;) {
      skip_ws();
      if (pos_ >= s_.size()) fail("unterminated array");
      if (s_[pos_] == ']') {
        ++pos_;
        break;
      }
      items.push_back(value());
      skip_ws();
      if (pos_ < s_.size() && s_[pos_] == ',') {
        ++pos_;
      } else if (pos_ < s_.size() && s_[pos_] == ']') {
        ++pos_;
        break;
      } else {
        fail("expected ',' or ']' in array");
      }
    }
    return TomlValue{std::move(items)};
  }

  TomlValue scalar() {
    const std::size_t start = pos_;
    while (pos_ < s_.size() && s_[pos_] != ',' && s_[pos_] != ']' &&
           !std::isspace(static_cast<unsigned char>(s_[pos_]))) {
      ++pos_;
    }
    std::string tok = s_.substr(start, pos_ - start);
    if (tok == "true") return TomlValue{true};
    if (tok == "false") return TomlValue{false};
    std::string digits;
    for (char c : tok) {
      if (c != '_') digits += c;
    }
    if (digits.empty()) fail("missing value");
    const bool integral = digits.find_first_not_of("+-0123456789") == std::string::npos;
    errno = 0;
    char* end = nullptr;
    if (integral) {
      const long long v = std::strtoll(digits.c_str(), &end, 10);
      if (*end != '\0' || errno == ERANGE) fail("bad integer '" + tok + "'");
      return TomlValue{static_cast<std::int64_t>(v)};
    }
    const double v = std::strtod(digits.c_str(), &end);
    if (end == digits.c_str() || *end != '\0') fail("bad value '" + tok + "'");
    return TomlValue{v};
  }

  const std::string& s_;
  int line_;
  std::size_t pos_ = 0;
};

std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) in_string = !in_string;
    if (line[i] == '#' && !in_string) return line.substr(0, i);
  }
  return line;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

int bracket_depth(const std::string& s) {
  int depth = 0;
  bool in_string = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) in_string = !in_string;
    if (in_string) continue;
    if (s[i] == '[') ++depth;
    if (s[i] == ']') --depth;
  }
  return depth;
}

// Typed readers; `name` is "section.key" for error messages.
double as_double(const TomlValue& v, const std::string& name) {
  if (const auto* d = std::get_if<double>(&v.v)) return *d;
  if (const auto* i = std::get_if<std::int64_t>(&v.v)) return static_cast<double>(*i);
  throw ConfigError(name + ": expected a number");
}

std::int64_t as_int(const TomlValue& v, const std::string& name) {
  if (const auto* i = std::get_if<std::int64_t>(&v.v)) return *i;
  throw ConfigError(name + ": expected an integer");
}

std::string as_string(const TomlValue& v, const std::string& name) {
  if (const auto* s = std::get_if<std::string>(&v.v)) return *s;
  throw ConfigError(name + ": expected a string");
}

const std::vector<TomlValue>& as_array(const TomlValue& v, const std::string& name) {
  if (const auto* a = std::get_if<std::vector<TomlValue>>(&v.v)) return *a;
  throw ConfigError(name + ": expected an array");
}

std::vector<double> as_doubles(const TomlValue& v, const std::string& name) {
  std::vector<double> out;
  for (const auto& x : as_array(v, name)) out.push_back(as_double(x, name));
  return out;
}

std::vector<int> as_ints(const TomlValue& v, const std::string& name) {
  std::vector<int> out;
  for (const auto& x : as_array(v, name)) out.push_back(static_cast<int>(as_int(x, name)));
  return out;
}

int as_int32(const TomlValue& v, const std::string& name) {
  const auto i = as_int(v, name);
  if (i < INT32_MIN || i > INT32_MAX) throw ConfigError(name + ": out of range");
  return static_cast<int>(i);
}

std::uint64_t as_seed(const TomlValue& v, const std::string& name) {
  const auto i = as_int(v, name);
  if (i < 0) throw ConfigError(name + ": must be non-negative");
  return static_cast<std::uint64_t>(i);
}

std::string fmt(double v) {
  std::string s = format_double(v);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

std::string fmt(const std::vector<double>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fmt(v[i]);
  return s + "]";
}

std::string fmt(const std::vector<int>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
  return s + "]";
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}

using Setter = std::function<void(AppConfig&, const TomlValue&, const std::string&)>;

const std::map<std::string, std::map<std::string, Setter>>& schema() {
  static const std::map<std::string, std::map<std::string, Setter>> s = {
      {"experiment",
       {
           {"Ts", [](AppConfig& c, const TomlValue& v, const std::string& n) { c.experiment.Ts = as_double(v, n); }},
           {"n", [](AppConfig& c, const TomlValue& v, const std::string& n) { c.experiment.n = as_int32(v, n); }},
           {"divergence_bound",
            [](AppConfig& c, const TomlValue& v, const std::string& n) { c.experiment.divergence_bound = as_double(v, n); }},
           {"trials_per_subject",
            [](AppConfig& c, const TomlValue& v, const std::string& n) {
              c.experiment.trials_per_subject = as_int32(v, n);
            }},
           {"preview_levels",
            [](AppConfig& c, const TomlValue& v, const std::string& n) {
              const auto p = as_doubles(v, n);
              if (p.size() != 4) throw ConfigError(n + ": expected 4 values (one per group)");
              std::copy(p.begin(), p.end(), c.experiment.preview_levels.begin());
            }},
           {"plant_num",
            [](AppConfig& c, const TomlValue& v, const std::string& n) {
              const auto p = as_doubles(v, n);
              try {
                c.experiment.plant = ContinuousTF(Eigen::Map<const Coeffs>(p.data(), static_cast<Eigen::Index>(p.size())),
                                                  c.experiment.plant.den());
              } catch (const std::invalid_argument& e) {
                throw ConfigError(n + ": " + e.what());
              }
            }},
           {"plant_den",
            [](AppConfig& c, const TomlValue& v, const std::string& n) {
              const auto p = as_doubles(v, n);
              try {
                c.experiment.plant = ContinuousTF(c.experiment.plant.num(),
                                                  Eigen::Map<const Coeffs>(p.data(), static_cast<Eigen::Index>(p.size())));
              } catch (const std::invalid_argument& e) {
                throw ConfigError(n + ": " + e.what());
              }
            }},
       }},
      {"cohort",
       {
           {"subjects_per_group",
            [](AppConfig& c, const TomlValue& v, const std::string& n) { c.cohort.subjects_per_group = as_int32(v, n); }},
           {"sensory_delay_s",
            [](AppConfig& c, const TomlValue& v, const std::string& n) { c.cohort.sensory_delay_s = as_double(v, n); }},
           {"quality_start",
            [](AppConfig& c, const TomlValue& v, const std::string& n) { c.cohort.quality_start = as_double(v, n); }},
           {"quality_end",
            [](AppConfig& c, const TomlValue& v, const std::string& n) { c.cohort.quality_end = as_double(v, n); }},
           {"quality_jitter",
            [](AppConfig& c, const TomlValue& v, const std::string& n) { c.cohort.quality_jitter = as_double(v, n); }},
           {"ramp_trials",
            [](AppConfig& c, const TomlValue& v, const std::string& n) { c.cohort.ramp_trials = as_int32(v, n); }},
           {"seed", [](AppConfig& c, const TomlValue& v, const std::string& n) { c.cohort.seed = as_seed(v, n); }},
           {"kappa_indices",
            [](AppConfig& c, const TomlValue& v, const std::string& n) { c.cohort.kappa_indices = as_ints(v, n); }},
           {"divergence_rate",
            [](AppConfig& c, const TomlValue& v, const std::string& n) {
              const auto p = as_doubles(v, n);
              if (p.size() != 4) throw ConfigError(n + ": expected 4 values (one per group)");
              std::copy(p.begin(), p.end(), c.cohort.divergence_rate.begin());
            }},
           {"divergence_decay",
            [](AppConfig& c, const TomlValue& v, const std::string& n) { c.cohort.divergence_decay = as_double(v, n); }},
           {"divergence_gain",
            [](AppConfig& c, const TomlValue& v, const std::string& n) { c.cohort.divergence_gain = as_double(v, n); }},
       }},
      {"pools",
       {
           {"kappas", [](AppConfig& c, const TomlValue& v, const std::string& n) { c.pools.kappas = as_doubles(v, n); }},
           {"zeros", [](AppConfig& c, const TomlValue& v, const std::string& n) { c.pools.zeros = as_doubles(v, n); }},
           {"pole_pairs",
            [](AppConfig& c, const TomlValue& v, const std::string& n) {
              c.pools.pole_pairs.clear();
              for (const auto& item : as_array(v, n)) {
                const auto p = as_doubles(item, n);
                if (p.size() != 4) throw ConfigError(n + ": each pair is [re1, im1, re2, im2]");
                c.pools.pole_pairs.push_back({{p[0], p[1]}, {p[2], p[3]}});
              }
            }},
           {"tau_fb_min", [](AppConfig& c, const TomlValue& v, const std::string& n) { c.pools.tau_fb_min = as_int32(v, n); }},
           {"tau_fb_max", [](AppConfig& c, const TomlValue& v, const std::string& n) { c.pools.tau_fb_max = as_int32(v, n); }},
           {"tau_ff_min", [](AppConfig& c, const TomlValue& v, const std::string& n) { c.pools.tau_ff_min = as_int32(v, n); }},
           {"tau_ff_max", [](AppConfig& c, const TomlValue& v, const std::string& n) { c.pools.tau_ff_max = as_int32(v, n); }},
       }},
      {"ssid",
       {
           {"weighting",
            [](AppConfig& c, const TomlValue& v, const std::string& n) {
              const auto w = as_string(v, n);
              if (w == "none") {
                c.weighting = Weighting::none;
              } else if (w == "inverse_magnitude") {
                c.weighting = Weighting::inverse_magnitude;
              } else {
                throw ConfigError(n + ": expected \"none\" or \"inverse_magnitude\"");
              }
            }},
           {"threads",
            [](AppConfig& c, const TomlValue& v, const std::string& n) {
              const int t = as_int32(v, n);
              if (t < 0) throw ConfigError(n + ": must be >= 0");
              c.threads = static_cast<unsigned>(t);
            }},
       }},
      {"report",
       {
           {"buckets",
            [](AppConfig& c, const TomlValue& v, const std::string& n) {
              c.report.buckets.clear();
              for (const auto& item : as_array(v, n)) {
                const auto p = as_ints(item, n);
                if (p.size() != 2) throw ConfigError(n + ": each bucket is [first, last]");
                c.report.buckets.push_back({std::to_string(p[0]) + "-" + std::to_string(p[1]), p[0], p[1]});
              }
            }},
           {"trace_trials",
            [](AppConfig& c, const TomlValue& v, const std::string& n) { c.report.trace_trials = as_ints(v, n); }},
           {"bode_trials",
            [](AppConfig& c, const TomlValue& v, const std::string& n) { c.report.bode_trials = as_ints(v, n); }},
           {"last_trials",
            [](AppConfig& c, const TomlValue& v, const std::string& n) { c.report.last_trials = as_int32(v, n); }},
           {"quadrature_nodes",
            [](AppConfig& c, const TomlValue& v, const std::string& n) { c.report.quadrature_nodes = as_int32(v, n); }},
       }},
      {"service",
       {
           {"host", [](AppConfig& c, const TomlValue& v, const std::string& n) { c.service.host = as_string(v, n); }},
           {"port", [](AppConfig& c, const TomlValue& v, const std::string& n) { c.service.port = as_int32(v, n); }},
           {"store", [](AppConfig& c, const TomlValue& v, const std::string& n) { c.service.store = as_string(v, n); }},
           {"input_gain",
            [](AppConfig& c, const TomlValue& v, const std::string& n) { c.service.input_gain = as_double(v, n); }},
           {"preview_resolution",
            [](AppConfig& c, const TomlValue& v, const std::string& n) { c.service.preview_resolution = as_double(v, n); }},
           {"seed", [](AppConfig& c, const TomlValue& v, const std::string& n) { c.service.seed = as_seed(v, n); }},
       }},
  };
  return s;
}

}  // namespace

TomlDocument parse_toml(const std::string& text) {
  TomlDocument doc;
  std::string section;
  std::set<std::string> seen_sections;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const int start_line = line_no;
    std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[' && line.find('=') == std::string::npos) {
      if (line.back() != ']' || line.size() < 3) throw ConfigError("line " + std::to_string(line_no) + ": bad section header");
      section = trim(line.substr(1, line.size() - 2));
      if (!seen_sections.insert(section).second) {
        throw ConfigError("line " + std::to_string(line_no) + ": duplicate section [" + section + "]");
      }
      doc[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    std::string value = trim(line.substr(eq + 1));
    while (bracket_depth(value) > 0) {
      if (!std::getline(in, raw)) throw ConfigError("line " + std::to_string(start_line) + ": unterminated array");
      ++line_no;
      value += " " + trim(strip_comment(raw));
    }
    auto& table = doc[section];
    if (table.count(key)) {
      throw ConfigError("line " + std::to_string(start_line) + ": duplicate key " +
                        (section.empty() ? key : section + "." + key));
    }
    table[key] = ValueParser(value, start_line).parse_all();
  }
  return doc;
}

void ServiceConfig::validate() const {
  if (port < 0 || port > 65535) throw ConfigError("service.port: must lie in 0..65535");
  if (!(input_gain > 0.0) || !std::isfinite(input_gain)) throw ConfigError("service.input_gain: must be positive");
  if (!(preview_resolution > 0.0)) throw ConfigError("service.preview_resolution: must be positive");
  if (store.empty()) throw ConfigError("service.store: must be non-empty");
}

void AppConfig::validate() const {
  experiment.validate();
  cohort.validate();
  pools.validate();
  service.validate();
  validate_buckets(report.buckets, experiment.trials_per_subject);
  if (report.last_trials < 1 || report.last_trials > experiment.trials_per_subject) {
    throw ConfigError("report.last_trials: must lie in 1..trials_per_subject");
  }
  if (report.quadrature_nodes < 2) throw ConfigError("report.quadrature_nodes: must be >= 2");
  for (int t : report.trace_trials) {
    if (t < 1 || t > experiment.trials_per_subject) throw ConfigError("report.trace_trials: trial out of range");
  }
  for (int t : report.bode_trials) {
    if (t < 1 || t > experiment.trials_per_subject) throw ConfigError("report.bode_trials: trial out of range");
  }
}

AppConfig config_from_toml(const std::string& text) {
  const TomlDocument doc = parse_toml(text);
  AppConfig cfg;
  const auto& s = schema();
  for (const auto& [section, table] : doc) {
    const auto sec = s.find(section);
    if (sec == s.end()) {
      if (section.empty() && !table.empty()) {
        throw ConfigError(table.begin()->first + ": keys must be inside a section");
      }
      if (!section.empty()) throw ConfigError(section + ": unknown section");
      continue;
    }
    for (const auto& [key, value] : table) {
      const auto setter = sec->second.find(key);
      if (setter == sec->second.end()) throw ConfigError(section + "." + key + ": unknown key");
      setter->second(cfg, value, section + "." + key);
    }
  }
  cfg.validate();
  return cfg;
}

AppConfig load_config(const std::string& path) {
  std::string text;
  try {
    text = read_text(path);
  } catch (const DataError&) {
    throw ConfigError("cannot read config file " + path);
  }
  return config_from_toml(text);
}

std::string to_toml(const AppConfig& c) {
  std::ostringstream o;
  const auto& e = c.experiment;
  auto vec = [](const Coeffs& x) { return std::vector<double>(x.data(), x.data() + x.size()); };
  o << "[experiment]\n"
    << "Ts = " << fmt(e.Ts) << "\n"
    << "n = " << e.n << "\n"
    << "divergence_bound = " << fmt(e.divergence_bound) << "\n"
    << "trials_per_subject = " << e.trials_per_subject << "\n"
    << "preview_levels = " << fmt(std::vector<double>(e.preview_levels.begin(), e.preview_levels.end())) << "\n"
    << "plant_num = " << fmt(vec(e.plant.num())) << "\n"
    << "plant_den = " << fmt(vec(e.plant.den())) << "\n\n";
  const auto& h = c.cohort;
  o << "[cohort]\n"
    << "subjects_per_group = " << h.subjects_per_group << "\n"
    << "sensory_delay_s = " << fmt(h.sensory_delay_s) << "\n"
    << "quality_start = " << fmt(h.quality_start) << "\n"
    << "quality_end = " << fmt(h.quality_end) << "\n"
    << "quality_jitter = " << fmt(h.quality_jitter) << "\n"
    << "ramp_trials = " << h.ramp_trials << "\n"
    << "seed = " << h.seed << "\n"
    << "kappa_indices = " << fmt(h.kappa_indices) << "\n"
    << "divergence_rate = " << fmt(std::vector<double>(h.divergence_rate.begin(), h.divergence_rate.end())) << "\n"
    << "divergence_decay = " << fmt(h.divergence_decay) << "\n"
    << "divergence_gain = " << fmt(h.divergence_gain) << "\n\n";
  const auto& p = c.pools;
  o << "[pools]\n"
    << "kappas = " << fmt(p.kappas) << "\n"
    << "zeros = " << fmt(p.zeros) << "\n"
    << "pole_pairs = [";
  for (std::size_t i = 0; i < p.pole_pairs.size(); ++i) {
    const auto& [a, b] = p.pole_pairs[i];
    o << (i ? ", " : "") << fmt(std::vector<double>{a.real(), a.imag(), b.real(), b.imag()});
  }
  o << "]\n"
    << "tau_fb_min = " << p.tau_fb_min << "\n"
    << "tau_fb_max = " << p.tau_fb_max << "\n"
    << "tau_ff_min = " << p.tau_ff_min << "\n"
    << "tau_ff_max = " << p.tau_ff_max << "\n\n";
  o << "[ssid]\n"
    << "weighting = " << quote(c.weighting == Weighting::none ? "none" : "inverse_magnitude") << "\n"
    << "threads = " << c.threads << "\n\n";
  const auto& r = c.report;
  o << "[report]\n"
    << "buckets = [";
  for (std::size_t i = 0; i < r.buckets.size(); ++i) {
    o << (i ? ", " : "") << fmt(std::vector<int>{r.buckets[i].first, r.buckets[i].last});
  }
  o << "]\n"
    << "trace_trials = " << fmt(r.trace_trials) << "\n"
    << "bode_trials = " << fmt(r.bode_trials) << "\n"
    << "last_trials = " << r.last_trials << "\n"
    << "quadrature_nodes = " << r.quadrature_nodes << "\n\n";
  const auto& s = c.service;
  o << "[service]\n"
    << "host = " << quote(s.host) << "\n"
    << "port = " << s.port << "\n"
    << "store = " << quote(s.store) << "\n"
    << "input_gain = " << fmt(s.input_gain) << "\n"
    << "preview_resolution = " << fmt(s.preview_resolution) << "\n"
    << "seed = " << s.seed << "\n";
  return o.str();
}

}  // namespace hitl
