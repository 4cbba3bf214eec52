#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "prefjoint/dataset.hpp"
#include "prefjoint/simulate.hpp"

namespace prefjoint {

// All numeric output uses '.' decimals and 17 significant digits.
inline std::string fmt_g17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (const char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(what);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("could not parse number '" + s + "' for " + what);
  }
}

inline long parse_long(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const long v = std::stol(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(what);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("could not parse integer '" + s + "' for " + what);
  }
}

// Flat key=value configuration files; '#' starts a comment line.
inline std::map<std::string, std::string> read_key_values(std::istream& in) {
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("line " + std::to_string(lineno) + ": expected key=value");
    kv[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
  }
  return kv;
}

inline std::map<std::string, std::string> read_key_value_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open " + path);
  return read_key_values(in);
}

// Dataset CSV schema: x,y,z,value,source,vessel_id with value empty iff z=0.
inline void save_dataset_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("cannot write " + path);
  out << "x,y,z,value,source,vessel_id\n";
  for (const auto& o : data.obs) {
    out << fmt_g17(o.location.x) << ',' << fmt_g17(o.location.y) << ',' << o.z << ',';
    if (o.value) out << fmt_g17(*o.value);
    out << ',' << to_string(o.source) << ',';
    if (o.vessel_id > 0) out << o.vessel_id;
    out << '\n';
  }
}

inline Dataset load_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument(path + ": empty file");
  if (trim(line) != "x,y,z,value,source,vessel_id")
    throw std::invalid_argument(path + ": expected header x,y,z,value,source,vessel_id");

  Dataset data;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = split(line, ',');
    const std::string at = path + " line " + std::to_string(lineno);
    if (f.size() != 6) throw std::invalid_argument(at + ": expected 6 fields, got " +
                                                   std::to_string(f.size()));
    Observation o;
    o.location.x = parse_double(trim(f[0]), at + " x");
    o.location.y = parse_double(trim(f[1]), at + " y");
    const long z = parse_long(trim(f[2]), at + " z");
    if (z != 0 && z != 1) throw std::invalid_argument(at + ": z must be 0 or 1");
    o.z = static_cast<int>(z);
    const std::string value = trim(f[3]);
    if (o.z == 1) {
      if (value.empty()) throw std::invalid_argument(at + ": z=1 requires a value");
      o.value = parse_double(value, at + " value");
      if (!(*o.value > 0.0)) throw std::invalid_argument(at + ": value must be positive");
    } else if (!value.empty()) {
      throw std::invalid_argument(at + ": value present with z=0");
    }
    const std::string src = trim(f[4]);
    if (src == "FID") o.source = Source::fid;
    else if (src == "FDD") o.source = Source::fdd;
    else throw std::invalid_argument(at + ": source must be FID or FDD");
    const std::string vessel = trim(f[5]);
    if (!vessel.empty()) {
      const long j = parse_long(vessel, at + " vessel_id");
      if (j < 1) throw std::invalid_argument(at + ": vessel_id must be >= 1");
      o.vessel_id = static_cast<int>(j);
    }
    data.obs.push_back(o);
  }
  data.validate();
  return data;
}

// Per-source presence summary; mirrors the zero-inflation report of the
// survey vs commercial sources.
struct SourceSummary {
  int n_fid = 0, n_fdd = 0;
  int pos_fid = 0, pos_fdd = 0;
  double presence_rate_fid() const { return n_fid > 0 ? double(pos_fid) / n_fid : 0.0; }
  double presence_rate_fdd() const { return n_fdd > 0 ? double(pos_fdd) / n_fdd : 0.0; }
};

inline SourceSummary summarize_sources(const Dataset& data) {
  SourceSummary s;
  s.n_fid = data.count(Source::fid);
  s.n_fdd = data.count(Source::fdd);
  s.pos_fid = data.presences(Source::fid);
  s.pos_fdd = data.presences(Source::fdd);
  return s;
}

// Gridded truth CSV: one row per node.
inline void save_truth_csv(const SyntheticTruth& t, const GridSpec& g, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("cannot write " + path);
  out << "node,x,y,v,u,pi,mu,z,y,s\n";
  for (int k = 0; k < g.n_nodes(); ++k) {
    out << k << ',' << fmt_g17(g.node_x(k)) << ',' << fmt_g17(g.node_y(k)) << ','
        << fmt_g17(t.v_field[k]) << ',' << fmt_g17(t.u_field[k]) << ','
        << fmt_g17(t.pi_field[k]) << ',' << fmt_g17(t.mu_field[k]) << ',' << t.z_field[k] << ',';
    if (t.z_field[k] == 1) out << fmt_g17(t.y_field[k]);
    out << ',' << fmt_g17(t.s_field[k]) << '\n';
  }
}

// Reads the biomass column s from a truth or prediction CSV (column by name).
inline Eigen::VectorXd load_field_column(const std::string& path, const std::string& column) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument(path + ": empty file");
  const auto header = split(trim(line), ',');
  int col = -1;
  for (std::size_t i = 0; i < header.size(); ++i)
    if (trim(header[i]) == column) col = static_cast<int>(i);
  if (col < 0) throw std::invalid_argument(path + ": no column named " + column);

  std::vector<double> vals;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = split(line, ',');
    if (static_cast<int>(f.size()) <= col)
      throw std::invalid_argument(path + " line " + std::to_string(lineno) + ": short row");
    vals.push_back(parse_double(trim(f[col]), path + " line " + std::to_string(lineno)));
  }
  Eigen::VectorXd v(static_cast<int>(vals.size()));
  for (std::size_t i = 0; i < vals.size(); ++i) v[static_cast<int>(i)] = vals[i];
  return v;
}

}  // namespace prefjoint
