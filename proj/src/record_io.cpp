#include "hitl/record_io.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <vector>

#include "hitl/error.hpp"
#include "json.hpp"

namespace hitl {
namespace {

double parse_double(const std::string& field, int line) {
  const char* begin = field.c_str();
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0' || errno == ERANGE) {
    throw DataError("trial CSV line " + std::to_string(line) + ": bad number '" + field + "'");
  }
  return v;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string trial_csv(const TrialRecord& rec) {
  if (rec.u.size() != rec.r.size() || rec.y.size() != rec.r.size()) {
    throw std::invalid_argument("trial_csv: r, u, y lengths differ");
  }
  std::string out = "k,t,r,u,y\n";
  out.reserve(static_cast<std::size_t>(rec.r.size()) * 80);
  for (Eigen::Index k = 0; k < rec.r.size(); ++k) {
    out += std::to_string(k + 1);
    for (double v : {static_cast<double>(k) * rec.Ts, rec.r[k], rec.u[k], rec.y[k]}) {
      out += ',';
      out += format_double(v);
    }
    out += '\n';
  }
  return out;
}

std::string trial_sidecar(const TrialRecord& rec) {
  nlohmann::ordered_json j;
  j["subject_id"] = rec.subject_id;
  j["group"] = rec.group;
  j["preview_s"] = rec.preview_s;
  j["trial_index"] = rec.trial_index;
  j["Ts"] = rec.Ts;
  j["n"] = rec.n();
  j["divergent"] = rec.divergent;
  j["reference_seed"] = rec.reference_seed;
  j["settle_periods"] = rec.settle_periods;
  j["gap_count"] = rec.gap_count;
  j["input_gain"] = rec.input_gain;
  return j.dump(2) + "\n";
}

TrialRecord parse_trial(const std::string& csv, const std::string& sidecar, double bound) {
  TrialRecord rec;
  int n = 0;
  try {
    const auto j = nlohmann::json::parse(sidecar);
    rec.subject_id = j.at("subject_id").get<std::string>();
    rec.group = j.at("group").get<int>();
    rec.preview_s = j.at("preview_s").get<double>();
    rec.trial_index = j.at("trial_index").get<int>();
    rec.Ts = j.at("Ts").get<double>();
    n = j.at("n").get<int>();
    rec.divergent = j.at("divergent").get<bool>();
    rec.reference_seed = j.at("reference_seed").get<std::uint64_t>();
    rec.settle_periods = j.value("settle_periods", 0);
    rec.gap_count = j.value("gap_count", 0);
    rec.input_gain = j.value("input_gain", 1.0);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("trial sidecar: ") + e.what());
  }
  if (n <= 0 || !(rec.Ts > 0.0)) throw DataError("trial sidecar: non-positive n or Ts");

  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || line != "k,t,r,u,y") throw DataError("trial CSV: missing or wrong header");
  rec.r.resize(n);
  rec.u.resize(n);
  rec.y.resize(n);
  int row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 5) throw DataError("trial CSV line " + std::to_string(row + 2) + ": expected 5 columns");
    if (row >= n) throw DataError("trial CSV: more rows than the sidecar's n");
    if (parse_double(f[0], row + 2) != row + 1) throw DataError("trial CSV: sample index out of sequence");
    rec.r[row] = parse_double(f[2], row + 2);
    rec.u[row] = parse_double(f[3], row + 2);
    rec.y[row] = parse_double(f[4], row + 2);
    ++row;
  }
  if (row != n) throw DataError("trial CSV: " + std::to_string(row) + " rows, sidecar says " + std::to_string(n));
  if (detect_divergence(rec.y, bound) != rec.divergent) {
    throw DataError("trial sidecar: divergent flag disagrees with the recorded output");
  }
  return rec;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << text;
    if (!out.flush()) throw DataError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_trial(const std::filesystem::path& stem, const TrialRecord& rec) {
  auto csv = stem;
  csv += ".csv";
  auto json = stem;
  json += ".json";
  // The sidecar goes last: its presence marks a complete record.
  write_text(csv, trial_csv(rec));
  write_text(json, trial_sidecar(rec));
}

TrialRecord read_trial(const std::filesystem::path& stem, double bound) {
  auto csv = stem;
  csv += ".csv";
  auto json = stem;
  json += ".json";
  return parse_trial(read_text(csv), read_text(json), bound);
}

}  // namespace hitl
