#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "airfed/harness.hpp"

namespace airfed {

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string cell_text(const Cell& c) {
  if (const auto* i = std::get_if<int64_t>(&c)) return std::to_string(*i);
  if (const auto* d = std::get_if<double>(&c)) return format_double(*d);
  return csv_field(std::get<std::string>(c));
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << bytes;
  if (!out) throw Error("write failed: " + path.string());
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string to_csv(const Table& table) {
  std::string out;
  for (size_t i = 0; i < table.columns.size(); ++i) {
    if (i) out += ',';
    out += csv_field(table.columns[i]);
  }
  out += '\n';
  for (const auto& row : table.rows) {
    for (size_t i = 0; i < row.size(); ++i) {
      if (i) out += ',';
      out += cell_text(row[i]);
    }
    out += '\n';
  }
  return out;
}

std::string fnv1a_hex(const std::string& bytes) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream s;
  s << std::hex;
  s.width(16);
  s.fill('0');
  s << h;
  return s.str();
}

std::vector<std::string> emit_report(const ExperimentConfig& config, const ScenarioOutput& out,
                                     const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir))
    throw Error("cannot create output directory " + out_dir.string());

  std::vector<std::pair<std::string, std::string>> files;
  std::set<std::string> seen;
  for (const Table& t : out.tables) {
    std::string name = t.name + ".csv";
    if (!seen.insert(name).second) throw Error("duplicate table " + t.name);
    files.emplace_back(std::move(name), to_csv(t));
  }
  std::string trace;
  for (const auto& e : out.trace) trace += e.dump() + '\n';
  files.emplace_back("trace.jsonl", std::move(trace));

  nlohmann::json manifest;
  const nlohmann::json cfg = to_json(config);
  manifest["tool"] = kToolName;
  manifest["version"] = kToolVersion;
  manifest["scenario"] = config.scenario;
  manifest["seed"] = config.seed;
  manifest["config"] = cfg;
  manifest["config_hash"] = fnv1a_hex(cfg.dump());
  manifest["outputs"] = nlohmann::json::object();
  for (const auto& [name, bytes] : files) manifest["outputs"][name] = fnv1a_hex(bytes);

  std::vector<std::string> names;
  for (const auto& [name, bytes] : files) {
    write_file(out_dir / name, bytes);
    names.push_back(name);
  }
  write_file(out_dir / "manifest.json", manifest.dump(2) + '\n');
  names.push_back("manifest.json");
  return names;
}

}  // namespace airfed
