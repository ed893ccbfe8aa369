#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace winstat {

enum class Direction { larger_better, smaller_better };

/// Endpoint hierarchy: K ordinal endpoints in priority order with their
/// category counts. Categories are coded 0..l_k-1 internally, larger is better.
///
/// Joint cells over the first k endpoints are indexed in mixed radix with the
/// first endpoint most significant, so the all-best cell has the largest index.
class Hierarchy {
 public:
  explicit Hierarchy(std::vector<int> supports,
                     std::vector<Direction> directions = {});

  int endpoints() const noexcept { return static_cast<int>(supports_.size()); }
  int support(int endpoint) const { return supports_.at(endpoint); }
  const std::vector<int>& supports() const noexcept { return supports_; }
  Direction direction(int endpoint) const { return directions_.at(endpoint); }

  /// Number of joint cells over endpoints 1..level.
  std::size_t cell_count(int level) const;
  std::size_t cell_index(std::span<const int> prefix) const;
  std::vector<int> cell_prefix(std::size_t index, int level) const;

  /// Non-fatal findings from construction (e.g. very large cell counts).
  const std::vector<std::string>& warnings() const noexcept { return warnings_; }

  bool operator==(const Hierarchy& other) const {
    return supports_ == other.supports_;
  }

 private:
  std::vector<int> supports_;
  std::vector<Direction> directions_;
  std::vector<std::string> warnings_;
};

struct Subject {
  int arm = 0;
  /// One entry per endpoint; empty when the outcome was not observed.
  std::vector<std::optional<int>> outcomes;
  /// Raw covariates without the intercept column.
  std::vector<double> covariates;

  bool observed(int endpoint) const { return outcomes.at(endpoint).has_value(); }
};

/// Immutable, validated trial data. Both arms must be populated.
class TrialDataset {
 public:
  TrialDataset(Hierarchy hierarchy, std::vector<Subject> subjects,
               std::vector<std::string> covariate_names = {});

  const Hierarchy& hierarchy() const noexcept { return hierarchy_; }
  std::span<const Subject> subjects() const noexcept { return subjects_; }
  const Subject& operator[](std::size_t i) const { return subjects_[i]; }
  std::size_t size() const noexcept { return subjects_.size(); }
  std::size_t arm_size(int arm) const { return arm_sizes_.at(arm); }
  std::size_t covariate_count() const noexcept { return covariate_names_.size(); }
  const std::vector<std::string>& covariate_names() const noexcept {
    return covariate_names_;
  }

  /// Index of a named covariate; throws when absent.
  std::size_t covariate_index(const std::string& name) const;

 private:
  Hierarchy hierarchy_;
  std::vector<Subject> subjects_;
  std::vector<std::string> covariate_names_;
  std::array<std::size_t, 2> arm_sizes_{0, 0};
};

/// Dense joint probability table over the first `level` endpoints of one arm.
struct CellTable {
  int arm = 0;
  int level = 1;
  std::vector<int> supports;  // supports of endpoints 1..level
  std::vector<double> probs;

  std::size_t size() const noexcept { return probs.size(); }
  double total() const;
};

/// Win, loss and tie probabilities; the tie entry is always the complement.
struct WinTriple {
  double win = 0.0;
  double loss = 0.0;
  double tie = 1.0;

  static WinTriple from_win_loss(double win, double loss) {
    return {win, loss, 1.0 - win - loss};
  }
};

/// 1 iff endpoints 1..level are all observed.
bool joint_nonmiss(const Subject& subject, int level);

/// Cell index of the subject's first `level` outcomes, or empty if any is missing.
std::optional<std::size_t> prefix_cell(const Hierarchy& hierarchy,
                                       const Subject& subject, int level);

/// Within-arm complete-data proportions; every arm subject must be observed
/// through `level`.
CellTable empirical_cells(const TrialDataset& data, int arm, int level);

/// Sums out the last endpoint of a table with level >= 2.
CellTable marginalize_cells(const CellTable& table);

struct EndpointColumn {
  std::string column;
  int categories = 2;
  Direction direction = Direction::larger_better;
  /// Raw value of the lowest category; raw codes are lowest..lowest+categories-1.
  int lowest = 0;
};

/// Column mapping for delimited input.
struct ColumnSchema {
  std::string treatment;
  std::string treated_value = "1";
  std::string control_value = "0";
  std::vector<EndpointColumn> endpoints;
  std::vector<std::string> covariates;
  char delimiter = ',';
  std::string missing = "NA";

  Hierarchy hierarchy() const;
};

TrialDataset ingest_dataset(const std::filesystem::path& path,
                            const ColumnSchema& schema);

/// Header row of a delimited file, split on `delimiter`.
std::vector<std::string> read_header(const std::filesystem::path& path,
                                     char delimiter);

}  // namespace winstat
