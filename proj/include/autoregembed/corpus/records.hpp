#pragma once

// JSON Lines record files: one object per line with integer-array fields
// "anchor", "positive", "negatives", "instr_next", "instr_self" and an
// optional "gold" similarity.

#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "autoregembed/compressor/compressor.hpp"

namespace are {

struct TripletRecord {
  std::vector<int> anchor;
  std::vector<int> positive;
  std::vector<std::vector<int>> negatives;
  std::vector<int> instr_next;
  std::vector<int> instr_self;
  std::optional<double> gold;

  bool operator==(const TripletRecord&) const = default;
};

struct RecordParseError : std::runtime_error {
  RecordParseError(const std::string& path, std::size_t line, const std::string& what)
      : std::runtime_error(path + ":" + std::to_string(line) + ": " + what), line_number(line) {}
  std::size_t line_number;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline nlohmann::json record_to_json(const TripletRecord& r) {
  nlohmann::json j;
  j["anchor"] = r.anchor;
  j["positive"] = r.positive;
  j["negatives"] = r.negatives;
  j["instr_next"] = r.instr_next;
  j["instr_self"] = r.instr_self;
  if (r.gold) j["gold"] = *r.gold;
  return j;
}

inline TripletRecord record_from_json(const nlohmann::json& j) {
  TripletRecord r;
  r.anchor = j.at("anchor").get<std::vector<int>>();
  r.positive = j.at("positive").get<std::vector<int>>();
  r.negatives = j.at("negatives").get<std::vector<std::vector<int>>>();
  r.instr_next = j.at("instr_next").get<std::vector<int>>();
  r.instr_self = j.at("instr_self").get<std::vector<int>>();
  if (j.contains("gold") && !j.at("gold").is_null()) r.gold = j.at("gold").get<double>();
  if (r.anchor.empty() || r.positive.empty()) throw std::invalid_argument("anchor and positive must be non-empty");
  return r;
}

inline void save_records(const std::vector<TripletRecord>& records, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  for (const auto& r : records) os << record_to_json(r).dump() << '\n';
  if (!os) throw IoError("write failed for '" + path + "'");
}

/// Streams the file line by line; blank lines are skipped.
template <typename Fn>
void for_each_record(const std::string& path, Fn&& fn) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path + "'");
  std::string line;
  std::size_t number = 0;
  while (std::getline(is, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    TripletRecord rec;
    try {
      rec = record_from_json(nlohmann::json::parse(line));
    } catch (const std::exception& e) {
      throw RecordParseError(path, number, e.what());
    }
    fn(std::move(rec));
  }
}

inline std::vector<TripletRecord> load_records(const std::string& path) {
  std::vector<TripletRecord> out;
  for_each_record(path, [&](TripletRecord r) { out.push_back(std::move(r)); });
  return out;
}

/// Compression samples derived from alignment records: the anchor with its
/// I_next instruction reconstructs the positive, and the positive with I_self
/// reconstructs itself.
inline std::vector<IcSample> compression_samples(std::span<const TripletRecord> records) {
  std::vector<IcSample> out;
  out.reserve(records.size() * 2);
  for (const auto& r : records) {
    out.push_back({r.anchor, r.instr_next, r.positive});
    out.push_back({r.positive, r.instr_self, r.positive});
  }
  return out;
}

/// Backbone pretraining text: "<bos> anchor <sep> positive" and
/// "<bos> positive <sep> positive" for every record.
inline std::vector<std::vector<int>> pretraining_sequences(std::span<const TripletRecord> records, int bos, int sep) {
  std::vector<std::vector<int>> out;
  out.reserve(records.size() * 2);
  auto join = [&](const std::vector<int>& a, const std::vector<int>& b) {
    std::vector<int> s{bos};
    s.insert(s.end(), a.begin(), a.end());
    s.push_back(sep);
    s.insert(s.end(), b.begin(), b.end());
    return s;
  };
  for (const auto& r : records) {
    out.push_back(join(r.anchor, r.positive));
    out.push_back(join(r.positive, r.positive));
  }
  return out;
}

}  // namespace are
