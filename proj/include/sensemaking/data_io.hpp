#pragma once

// Dataset files: schema.json, cases.csv, probs.json, heatmaps/<case>/<concept>.pgm.
// Loading is strict; nothing is renormalized or imputed.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sensemaking/core.hpp"
#include "sensemaking/domain.hpp"
#include "sensemaking/scorer.hpp"

namespace sensemaking {

namespace fs = std::filesystem;

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void write_file(const fs::path& path, std::string_view content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error(ErrorCode::IoError, "short write to " + path.string());
}

inline Json read_json(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
}

inline ConceptSchema load_schema(const fs::path& path) { return ConceptSchema::from_json(read_json(path)); }

inline void save_schema(const fs::path& path, const ConceptSchema& schema) {
  write_file(path, schema.to_json().dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// CSV

namespace csv {

// RFC 4180 rows; quoted fields may contain commas, quotes and newlines.
inline std::vector<std::vector<std::string>> parse(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool field_started = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(ch);
      }
      continue;
    }
    switch (ch) {
      case '"':
        if (!field.empty()) throw Error(ErrorCode::ParseError, "stray quote inside CSV field");
        quoted = true;
        field_started = true;
        break;
      case ',':
        row.push_back(std::move(field));
        field.clear();
        field_started = true;
        break;
      case '\r':
        break;
      case '\n':
        if (field_started || !field.empty() || !row.empty()) {
          row.push_back(std::move(field));
          rows.push_back(std::move(row));
        }
        field.clear();
        row.clear();
        field_started = false;
        break;
      default:
        field.push_back(ch);
        field_started = true;
    }
  }
  if (quoted) throw Error(ErrorCode::ParseError, "unterminated quoted CSV field");
  if (field_started || !field.empty() || !row.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string escape(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char ch : field) {
    if (ch == '"') out.push_back('"');
    out.push_back(ch);
  }
  out.push_back('"');
  return out;
}

}  // namespace csv

// ---------------------------------------------------------------------------
// Heatmaps (PGM, P2 or P5)

inline Heatmap parse_pgm(std::string_view bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto next_int = [&]() -> std::size_t {
    skip_space();
    std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw Error(ErrorCode::ParseError, "malformed PGM header");
    return static_cast<std::size_t>(std::stoull(std::string(bytes.substr(start, pos - start))));
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '2' && bytes[1] != '5')) {
    throw Error(ErrorCode::ParseError, "not a PGM (P2/P5) file");
  }
  const bool binary = bytes[1] == '5';
  pos = 2;
  Heatmap map;
  map.width = next_int();
  map.height = next_int();
  const std::size_t maxval = next_int();
  if (map.width == 0 || map.height == 0 || maxval == 0 || maxval > 65535) {
    throw Error(ErrorCode::ParseError, "invalid PGM dimensions");
  }
  const std::size_t count = map.width * map.height;
  map.values.reserve(count);
  if (binary) {
    ++pos;  // single whitespace after maxval
    const std::size_t sample = maxval > 255 ? 2 : 1;
    if (bytes.size() < pos + count * sample) throw Error(ErrorCode::ParseError, "truncated PGM raster");
    for (std::size_t i = 0; i < count; ++i) {
      std::size_t v = static_cast<unsigned char>(bytes[pos + i * sample]);
      if (sample == 2) v = (v << 8) | static_cast<unsigned char>(bytes[pos + i * sample + 1]);
      map.values.push_back(static_cast<double>(std::min(v, maxval)) / static_cast<double>(maxval));
    }
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      map.values.push_back(static_cast<double>(std::min(next_int(), maxval)) / static_cast<double>(maxval));
    }
  }
  return map;
}

// ASCII PGM with maxval 255.
inline std::string format_pgm(const Heatmap& map) {
  std::ostringstream out;
  out << "P2\n" << map.width << " " << map.height << "\n255\n";
  for (std::size_t y = 0; y < map.height; ++y) {
    for (std::size_t x = 0; x < map.width; ++x) {
      const double v = std::clamp(map.at(x, y), 0.0, 1.0);
      out << (x ? " " : "") << static_cast<int>(std::lround(v * 255.0));
    }
    out << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Cases

struct CaseError {
  std::string case_id;
  std::size_t row = 0;  // 1-based CSV line, 0 when not row-bound
  std::vector<std::string> messages;
};

struct LoadedCases {
  std::vector<Case> cases;
  std::vector<CaseError> errors;
};

// Bad files throw ParseError; bad cases are collected in errors and skipped.
inline LoadedCases load_cases(const fs::path& csv_path, const fs::path& probs_path, const ConceptSchema& schema,
                              const std::optional<fs::path>& heatmap_dir = std::nullopt) {
  const auto rows = csv::parse(read_file(csv_path));
  if (rows.empty()) throw Error(ErrorCode::ParseError, csv_path.string() + ": missing header");

  const auto& header = rows.front();
  if (header.size() < 3 || header[0] != "case_id" || header[1] != "image_path" || header[2] != "diagnosis") {
    throw Error(ErrorCode::ParseError, csv_path.string() + ": header must start with case_id,image_path,diagnosis");
  }
  std::vector<std::string> concept_columns(header.begin() + 3, header.end());
  {
    std::set<std::string> got(concept_columns.begin(), concept_columns.end());
    std::set<std::string> want;
    for (const auto& c : schema.concepts()) want.insert(c.id);
    if (got != want || got.size() != concept_columns.size()) {
      throw Error(ErrorCode::ParseError, csv_path.string() + ": concept columns do not match the schema");
    }
  }

  const Json probs = read_json(probs_path);
  if (!probs.is_object()) throw Error(ErrorCode::ParseError, probs_path.string() + ": expected an object");

  LoadedCases out;
  std::set<std::string> seen;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    CaseError err{row.empty() ? "" : row[0], r + 1, {}};
    if (row.size() != header.size()) {
      err.messages.push_back("expected " + std::to_string(header.size()) + " fields, found " +
                             std::to_string(row.size()));
      out.errors.push_back(std::move(err));
      continue;
    }
    Case c;
    c.case_id = row[0];
    c.image_ref = row[1];
    if (c.case_id.empty()) err.messages.push_back("empty case_id");
    if (!seen.insert(c.case_id).second) err.messages.push_back("duplicate case_id");
    if (!row[2].empty()) c.true_diagnosis = row[2];
    for (std::size_t i = 0; i < concept_columns.size(); ++i) {
      const std::string& value = row[3 + i];
      if (value.empty()) continue;
      const std::size_t ci = *schema.concept_index(concept_columns[i]);
      if (!schema.state_index(ci, value)) {
        err.messages.push_back("UnknownState: annotated state '" + value + "' for '" + concept_columns[i] + "'");
      }
      c.annotated_states[concept_columns[i]] = value;
    }

    if (!probs.contains(c.case_id)) {
      err.messages.push_back("no entry in " + probs_path.filename().string());
    } else {
      try {
        for (const auto& [concept_id, states] : probs.at(c.case_id).items()) {
          for (const auto& [state, p] : states.items()) c.concept_probs[concept_id][state] = p.get<double>();
        }
      } catch (const Json::exception& e) {
        err.messages.push_back(std::string("malformed probabilities: ") + e.what());
      }
    }
    for (const auto& issue : validate_case(c, schema)) {
      err.messages.push_back(std::string(to_string(issue.kind)) +
                             (issue.concept_id.empty() ? "" : " [" + issue.concept_id + "]") + ": " + issue.message);
    }

    if (heatmap_dir && err.messages.empty()) {
      for (const auto& concept_def : schema.concepts()) {
        const fs::path p = *heatmap_dir / c.case_id / (concept_def.id + ".pgm");
        if (!fs::exists(p)) continue;
        try {
          c.heatmaps[concept_def.id] = parse_pgm(read_file(p));
          c.heatmap_refs[concept_def.id] = p.string();
        } catch (const Error& e) {
          err.messages.push_back(std::string("heatmap ") + p.string() + ": " + e.what());
        }
      }
    }

    if (err.messages.empty()) {
      out.cases.push_back(std::move(c));
    } else {
      out.errors.push_back(std::move(err));
    }
  }
  for (const auto& [case_id, _] : probs.items()) {
    if (!seen.count(case_id)) out.errors.push_back({case_id, 0, {"probabilities for a case absent from the CSV"}});
  }
  return out;
}

inline std::string format_cases_csv(const std::vector<Case>& cases, const ConceptSchema& schema) {
  std::string out = "case_id,image_path,diagnosis";
  for (const auto& c : schema.concepts()) out += "," + csv::escape(c.id);
  out += "\n";
  for (const auto& c : cases) {
    out += csv::escape(c.case_id) + "," + csv::escape(c.image_ref) + "," +
           csv::escape(c.true_diagnosis.value_or(""));
    for (const auto& concept_def : schema.concepts()) {
      auto it = c.annotated_states.find(concept_def.id);
      out += "," + csv::escape(it == c.annotated_states.end() ? "" : it->second);
    }
    out += "\n";
  }
  return out;
}

inline Json format_probs_json(const std::vector<Case>& cases, const ConceptSchema& schema) {
  Json out = Json::object();
  for (const auto& c : cases) {
    Json concepts = Json::object();
    for (const auto& concept_def : schema.concepts()) {
      Json states = Json::object();
      for (const auto& s : concept_def.states) states[s] = c.concept_probs.at(concept_def.id).at(s);
      concepts[concept_def.id] = states;
    }
    out[c.case_id] = concepts;
  }
  return out;
}

// Labeled vectors straight from case probabilities. Cases without a
// diagnosis are an error: every split member must be usable.
inline std::vector<LabeledExample> labeled_examples(const std::vector<Case>& cases, const ConceptSchema& schema) {
  std::vector<LabeledExample> out;
  out.reserve(cases.size());
  for (const auto& c : cases) {
    if (!c.true_diagnosis) throw Error(ErrorCode::ValidationError, "case '" + c.case_id + "' has no diagnosis");
    out.push_back({ConceptVector{flatten_probabilities(c, schema)}, *c.true_diagnosis});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splits

struct SplitRatios {
  double train = 0.6;
  double cal = 0.2;
  double test = 0.2;
};

template <typename T>
struct Split {
  std::vector<T> train;
  std::vector<T> cal;
  std::vector<T> test;
};

// Seeded shuffle, then cal and test take their rounded shares; the
// remainder goes to train.
template <typename T>
Split<T> split(const std::vector<T>& items, const SplitRatios& ratios, std::uint64_t seed) {
  if (items.empty()) throw Error(ErrorCode::EmptyInput, "nothing to split");
  if (!(ratios.train > 0.0 && ratios.cal > 0.0 && ratios.test > 0.0) ||
      std::abs(ratios.train + ratios.cal + ratios.test - 1.0) > 1e-9) {
    throw Error(ErrorCode::ValidationError, "split ratios must be positive and sum to 1");
  }
  std::vector<std::size_t> order(items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  const double n = static_cast<double>(items.size());
  auto n_cal = static_cast<std::size_t>(std::llround(ratios.cal * n));
  auto n_test = static_cast<std::size_t>(std::llround(ratios.test * n));
  n_cal = std::min(n_cal, items.size());
  n_test = std::min(n_test, items.size() - n_cal);
  const std::size_t n_train = items.size() - n_cal - n_test;

  Split<T> out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const T& item = items[order[i]];
    if (i < n_train) {
      out.train.push_back(item);
    } else if (i < n_train + n_cal) {
      out.cal.push_back(item);
    } else {
      out.test.push_back(item);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SyntheticOptions {
  double planted_scale = 1.5;  // std-dev of planted weight entries
  bool argmax_labels = false;  // label = planted argmax instead of a softmax draw
  double min_margin = 0.0;     // reject true-state draws whose top-2 logit gap is smaller
};

struct SyntheticDataset {
  std::vector<Case> cases;
  ModelWeights planted;
  // Ground-truth one-hot concept vectors, aligned with cases.
  std::vector<ConceptVector> true_vectors;
};

inline ConceptSchema synthetic_schema(std::size_t num_concepts, std::size_t states_per_concept,
                                      std::size_t num_diagnoses) {
  std::vector<Concept> concepts;
  for (std::size_t i = 0; i < num_concepts; ++i) {
    Concept c;
    c.id = "c" + std::to_string(i);
    c.name = "concept " + std::to_string(i);
    for (std::size_t s = 0; s < states_per_concept; ++s) c.states.push_back("s" + std::to_string(s));
    concepts.push_back(std::move(c));
  }
  std::vector<std::string> diagnoses;
  for (std::size_t k = 0; k < num_diagnoses; ++k) diagnoses.push_back("dx" + std::to_string(k));
  return ConceptSchema(std::move(concepts), std::move(diagnoses));
}

// True states are uniform per concept. Observed probabilities mix the true
// one-hot with a flat-Dirichlet draw: (1 - noise) * onehot + noise * u.
inline SyntheticDataset generate_synthetic(std::uint64_t seed, std::size_t n, const ConceptSchema& schema,
                                           double noise, const SyntheticOptions& options = {}) {
  if (n == 0) throw Error(ErrorCode::ValidationError, "n must be at least 1");
  if (!(noise >= 0.0 && noise < 1.0)) throw Error(ErrorCode::ValidationError, "noise must lie in [0,1)");

  Rng rng(seed);
  SyntheticDataset out;
  out.planted = ModelWeights::zeros(schema);
  out.planted.training_meta.seed = seed;
  for (double& w : out.planted.W) w = options.planted_scale * rng.normal();

  const std::size_t width = std::to_string(n).size();
  constexpr int kMaxRejections = 10000;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> truth(schema.num_concepts());
    ConceptVector onehot;
    std::vector<double> logit;
    for (int attempt = 0;; ++attempt) {
      onehot.values.assign(schema.dimension(), 0.0);
      for (std::size_t ci = 0; ci < schema.num_concepts(); ++ci) {
        truth[ci] = static_cast<std::size_t>(rng.below(schema.concepts()[ci].states.size()));
        onehot.values[schema.offset(ci) + truth[ci]] = 1.0;
      }
      logit = logits(out.planted, onehot);
      if (options.min_margin <= 0.0) break;
      std::vector<double> sorted = logit;
      std::sort(sorted.rbegin(), sorted.rend());
      if (sorted[0] - sorted[1] >= options.min_margin) break;
      if (attempt >= kMaxRejections) {
        throw Error(ErrorCode::ValidationError, "planted model cannot reach the requested margin");
      }
    }

    Case c;
    std::ostringstream id;
    id << "syn-" << std::setw(static_cast<int>(width)) << std::setfill('0') << i;
    c.case_id = id.str();
    c.image_ref = "images/" + c.case_id + ".png";
    for (std::size_t ci = 0; ci < schema.num_concepts(); ++ci) {
      const auto& concept_def = schema.concepts()[ci];
      const std::size_t m = concept_def.states.size();
      std::vector<double> u(m);
      double total = 0.0;
      for (double& v : u) {
        double draw = rng.uniform();
        while (draw <= 0.0) draw = rng.uniform();
        v = -std::log(draw);
        total += v;
      }
      for (std::size_t s = 0; s < m; ++s) {
        const double hot = s == truth[ci] ? 1.0 : 0.0;
        c.concept_probs[concept_def.id][concept_def.states[s]] = (1.0 - noise) * hot + noise * (u[s] / total);
      }
      c.annotated_states[concept_def.id] = concept_def.states[truth[ci]];
    }
    const auto p = softmax(logit);
    const std::size_t label = options.argmax_labels ? argmax(p) : rng.categorical(p);
    c.true_diagnosis = schema.diagnoses()[label];
    out.cases.push_back(std::move(c));
    out.true_vectors.push_back(std::move(onehot));
  }
  return out;
}

// schema.json, cases.csv, probs.json under dir.
inline void write_dataset(const fs::path& dir, const ConceptSchema& schema, const std::vector<Case>& cases) {
  fs::create_directories(dir);
  save_schema(dir / "schema.json", schema);
  write_file(dir / "cases.csv", format_cases_csv(cases, schema));
  write_file(dir / "probs.json", format_probs_json(cases, schema).dump(2) + "\n");
}

}  // namespace sensemaking
