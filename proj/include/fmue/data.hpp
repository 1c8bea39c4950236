#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fmue {

// Labels of out-of-distribution records are "ood" or start with "ood:".
bool is_ood_label(const std::string& label);

struct SampleRecord {
  std::string image_path;
  std::string label;
  std::string patient_id;
  std::string dataset_tag;
  std::string device_tag;

  bool operator==(const SampleRecord&) const = default;
};

struct DatasetManifest {
  std::vector<SampleRecord> records;
  std::vector<std::string> class_vocabulary;
  // Relative image paths resolve against this directory.
  std::filesystem::path base_dir;

  // Class index of a record, or nullopt for OOD records.
  std::optional<int> class_index(const SampleRecord& r) const;
  std::filesystem::path resolve(const SampleRecord& r) const;
  // Throws ParseError on duplicate vocabulary, duplicate paths, or unknown labels.
  void validate() const;
};

inline constexpr const char* kManifestHeader = "image_path,label,patient_id,dataset_tag,device_tag";

std::vector<std::string> read_vocabulary(const std::filesystem::path& path);
void write_vocabulary(const std::filesystem::path& path, const std::vector<std::string>& vocab);

// Reads a manifest CSV; the vocabulary defaults to classes.txt beside it.
DatasetManifest load_manifest(const std::filesystem::path& path,
                              const std::optional<std::filesystem::path>& vocabulary_path = std::nullopt);
DatasetManifest parse_manifest(const std::string& csv_text, std::vector<std::string> vocabulary);
std::string format_manifest(const DatasetManifest& manifest);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

enum class Split { Train, Val, Test };
const char* split_name(Split s);
Split parse_split(const std::string& name);

struct SplitOptions {
  std::array<double, 3> ratios{6.0, 2.0, 2.0};
  std::uint64_t seed = 0;
  // Strata with fewer than three patients go entirely to train.
  bool small_strata_to_train = true;
};

struct SplitAssignment {
  std::map<std::string, Split> patients;
  std::vector<std::string> warnings;

  std::array<std::size_t, 3> image_counts(const DatasetManifest& manifest) const;
};

// Patients are stratified by their majority label, shuffled by seed, and
// assigned greedily to the split with the largest remaining image deficit.
SplitAssignment patient_split(const DatasetManifest& manifest, const SplitOptions& options = {});

DatasetManifest subset(const DatasetManifest& manifest, const SplitAssignment& assignment, Split split);

std::string format_split(const SplitAssignment& assignment);
SplitAssignment parse_split_file(const std::filesystem::path& path);

}  // namespace fmue
