#include "fmue/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "fmue/errors.hpp"

namespace fmue {

namespace {

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::string line;
  std::istringstream in(text);
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

std::vector<std::string> split_csv_line(const std::string& line, long row) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) throw ParseError("unterminated quote", row);
  fields.push_back(std::move(cur));
  return fields;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

bool is_ood_label(const std::string& label) { return label == "ood" || label.rfind("ood:", 0) == 0; }

std::optional<int> DatasetManifest::class_index(const SampleRecord& r) const {
  const auto it = std::find(class_vocabulary.begin(), class_vocabulary.end(), r.label);
  if (it == class_vocabulary.end()) return std::nullopt;
  return static_cast<int>(it - class_vocabulary.begin());
}

std::filesystem::path DatasetManifest::resolve(const SampleRecord& r) const {
  const std::filesystem::path p(r.image_path);
  return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
}

void DatasetManifest::validate() const {
  std::set<std::string> vocab;
  for (const auto& c : class_vocabulary) {
    if (c.empty()) throw ParseError("empty class name in vocabulary");
    if (is_ood_label(c)) throw ParseError("class name '" + c + "' collides with the OOD tag");
    if (!vocab.insert(c).second) throw ParseError("duplicate class '" + c + "' in vocabulary");
  }
  std::set<std::string> paths;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const long row = static_cast<long>(i) + 1;
    if (r.image_path.empty()) throw ParseError("empty image_path", row);
    if (r.patient_id.empty()) throw ParseError("empty patient_id", row);
    if (!paths.insert(r.image_path).second) throw ParseError("duplicate image_path '" + r.image_path + "'", row);
    if (!is_ood_label(r.label) && !vocab.count(r.label)) {
      throw ParseError("label '" + r.label + "' is not in the class vocabulary", row);
    }
  }
}

std::vector<std::string> read_vocabulary(const std::filesystem::path& path) {
  std::vector<std::string> vocab;
  for (auto& line : split_lines(read_text(path))) {
    if (!line.empty()) vocab.push_back(line);
  }
  if (vocab.size() < 2) throw ParseError("vocabulary " + path.string() + " needs at least two classes");
  return vocab;
}

void write_vocabulary(const std::filesystem::path& path, const std::vector<std::string>& vocab) {
  std::string text;
  for (const auto& c : vocab) text += c + "\n";
  write_text(path, text);
}

DatasetManifest parse_manifest(const std::string& csv_text, std::vector<std::string> vocabulary) {
  const auto lines = split_lines(csv_text);
  if (lines.empty()) throw ParseError("manifest is empty");

  const auto header = split_csv_line(lines[0], 0);
  auto column = [&](const std::string& name, bool required) -> int {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      if (required) throw ParseError("missing column '" + name + "'", 0);
      return -1;
    }
    return static_cast<int>(it - header.begin());
  };
  const int c_path = column("image_path", true);
  const int c_label = column("label", true);
  const int c_patient = column("patient_id", true);
  const int c_dataset = column("dataset_tag", true);
  const int c_device = column("device_tag", false);

  DatasetManifest m;
  m.class_vocabulary = std::move(vocabulary);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const long row = static_cast<long>(m.records.size()) + 1;
    const auto f = split_csv_line(lines[i], row);
    if (f.size() != header.size()) {
      throw ParseError("expected " + std::to_string(header.size()) + " columns, found " + std::to_string(f.size()),
                       row);
    }
    SampleRecord r;
    r.image_path = f[static_cast<std::size_t>(c_path)];
    r.label = f[static_cast<std::size_t>(c_label)];
    r.patient_id = f[static_cast<std::size_t>(c_patient)];
    r.dataset_tag = f[static_cast<std::size_t>(c_dataset)];
    if (c_device >= 0) r.device_tag = f[static_cast<std::size_t>(c_device)];
    m.records.push_back(std::move(r));
  }
  m.validate();
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path,
                              const std::optional<std::filesystem::path>& vocabulary_path) {
  const auto vocab_path = vocabulary_path.value_or(path.parent_path() / "classes.txt");
  DatasetManifest m;
  try {
    m = parse_manifest(read_text(path), read_vocabulary(vocab_path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.row());
  }
  m.base_dir = path.parent_path();
  return m;
}

std::string format_manifest(const DatasetManifest& manifest) {
  std::string out = std::string(kManifestHeader) + "\n";
  for (const auto& r : manifest.records) {
    out += csv_field(r.image_path) + "," + csv_field(r.label) + "," + csv_field(r.patient_id) + "," +
           csv_field(r.dataset_tag) + "," + csv_field(r.device_tag) + "\n";
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  write_text(path, format_manifest(manifest));
}

const char* split_name(Split s) {
  switch (s) {
    case Split::Train:
      return "train";
    case Split::Val:
      return "val";
    case Split::Test:
      return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw ParseError("unknown split '" + name + "'");
}

std::array<std::size_t, 3> SplitAssignment::image_counts(const DatasetManifest& manifest) const {
  std::array<std::size_t, 3> counts{};
  for (const auto& r : manifest.records) {
    const auto it = patients.find(r.patient_id);
    if (it != patients.end()) ++counts[static_cast<std::size_t>(it->second)];
  }
  return counts;
}

SplitAssignment patient_split(const DatasetManifest& manifest, const SplitOptions& options) {
  for (double r : options.ratios) {
    if (!(r > 0.0)) throw ConfigError("split ratios must be positive");
  }
  const double ratio_sum = options.ratios[0] + options.ratios[1] + options.ratios[2];

  // Majority label per patient decides its stratum; ties go to the smaller label.
  std::map<std::string, std::map<std::string, std::size_t>> label_counts;
  std::map<std::string, std::size_t> patient_images;
  for (const auto& r : manifest.records) {
    ++label_counts[r.patient_id][r.label];
    ++patient_images[r.patient_id];
  }
  std::map<std::string, std::vector<std::string>> strata;
  for (const auto& [patient, counts] : label_counts) {
    const auto best = std::max_element(counts.begin(), counts.end(),
                                       [](const auto& a, const auto& b) { return a.second < b.second; });
    strata[best->first].push_back(patient);
  }

  SplitAssignment out;
  std::uint64_t stratum_index = 0;
  for (auto& [label, patients] : strata) {
    std::mt19937_64 rng(options.seed * 0x9E3779B97F4A7C15ULL + stratum_index++);
    std::shuffle(patients.begin(), patients.end(), rng);

    if (patients.size() < 3 && options.small_strata_to_train) {
      out.warnings.push_back("label '" + label + "' has " + std::to_string(patients.size()) +
                             " patient(s); all assigned to train");
      for (const auto& p : patients) out.patients[p] = Split::Train;
      continue;
    }

    std::size_t total = 0;
    for (const auto& p : patients) total += patient_images[p];
    std::array<double, 3> deficit{};
    for (std::size_t s = 0; s < 3; ++s) deficit[s] = options.ratios[s] / ratio_sum * static_cast<double>(total);
    for (const auto& p : patients) {
      const auto s = static_cast<std::size_t>(std::max_element(deficit.begin(), deficit.end()) - deficit.begin());
      out.patients[p] = static_cast<Split>(s);
      deficit[s] -= static_cast<double>(patient_images[p]);
    }
  }
  return out;
}

DatasetManifest subset(const DatasetManifest& manifest, const SplitAssignment& assignment, Split split) {
  DatasetManifest out;
  out.class_vocabulary = manifest.class_vocabulary;
  out.base_dir = manifest.base_dir;
  for (const auto& r : manifest.records) {
    const auto it = assignment.patients.find(r.patient_id);
    if (it != assignment.patients.end() && it->second == split) out.records.push_back(r);
  }
  return out;
}

std::string format_split(const SplitAssignment& assignment) {
  std::string out = "patient_id,split\n";
  for (const auto& [p, s] : assignment.patients) out += csv_field(p) + "," + split_name(s) + "\n";
  return out;
}

SplitAssignment parse_split_file(const std::filesystem::path& path) {
  const auto lines = split_lines(read_text(path));
  if (lines.empty() || lines[0] != "patient_id,split") throw ParseError(path.string() + ": bad split header", 0);
  SplitAssignment out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto f = split_csv_line(lines[i], static_cast<long>(i));
    if (f.size() != 2) throw ParseError(path.string() + ": expected 2 columns", static_cast<long>(i));
    out.patients[f[0]] = parse_split(f[1]);
  }
  return out;
}

}  // namespace fmue
