#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "apgl/data.hpp"
#include "apgl/training.hpp"

namespace apgl::cli {

// Bad flags, unknown keys or unparsable values: exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct KeySpec {
  std::string name;
  std::string default_value;
  std::string help;
};

// Keys shared by train, eval and gridsearch, in resolved-file order.
std::span<const KeySpec> config_keys();

// Flat key = value settings. Every value is kept as text until converted.
class Settings {
 public:
  Settings();  // all defaults

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  bool is_set(const std::string& key) const;  // non-empty value

  // '#' comments and blank lines allowed; unknown keys throw UsageError.
  void merge_file(const std::filesystem::path& path);
  void merge_text(const std::string& text, const std::string& origin);

  std::string resolved() const;

  training::TrainConfig train_config() const;
  data::Delimiter delimiter() const;
  int min_count() const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

double parse_double(const std::string& key, const std::string& text);
long long parse_int(const std::string& key, const std::string& text);
std::size_t parse_size(const std::string& key, const std::string& text);
bool parse_bool(const std::string& key, const std::string& text);
std::vector<std::string> split_list(const std::string& text);

// Flag spelling of a key: lambda_gce -> --lambda-gce.
std::string flag_name(const std::string& key);

}  // namespace apgl::cli
