#include "winstat/data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "winstat/error.hpp"

namespace winstat {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::invalid_argument: return "invalid_argument";
    case Errc::malformed_input: return "malformed_input";
    case Errc::out_of_range: return "out_of_range";
    case Errc::missing_covariate: return "missing_covariate";
    case Errc::single_arm: return "single_arm";
    case Errc::dimension_mismatch: return "dimension_mismatch";
    case Errc::rank_deficient: return "rank_deficient";
    case Errc::separation: return "separation";
    case Errc::no_complete_cases: return "no_complete_cases";
    case Errc::not_converged: return "not_converged";
    case Errc::singular_information: return "singular_information";
    case Errc::non_finite: return "non_finite";
  }
  return "unknown";
}

namespace {

constexpr std::size_t kLargeCellCount = 1'000'000;

[[noreturn]] void fail(Errc code, const std::string& message) {
  throw Error(code, "data_model", message);
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

std::vector<std::string> split_row(const std::string& line, char delimiter) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') {
      quoted = !quoted;
    } else if (c == delimiter && !quoted) {
      fields.emplace_back(trim(field));
      field.clear();
    } else {
      field.push_back(c);
    }
  }
  fields.emplace_back(trim(field));
  return fields;
}

std::optional<long> parse_int(std::string_view text) {
  long value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    // Accept integral values written as reals, e.g. "2.0".
    double real = 0.0;
    auto [rptr, rec] = std::from_chars(text.data(), text.data() + text.size(), real);
    if (rec != std::errc{} || rptr != text.data() + text.size() ||
        std::floor(real) != real)
      return std::nullopt;
    return static_cast<long>(real);
  }
  return value;
}

std::optional<double> parse_double(std::string_view text) {
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size() || !std::isfinite(value))
    return std::nullopt;
  return value;
}

}  // namespace

// --- Hierarchy -------------------------------------------------------------

Hierarchy::Hierarchy(std::vector<int> supports, std::vector<Direction> directions)
    : supports_(std::move(supports)), directions_(std::move(directions)) {
  if (supports_.empty()) fail(Errc::invalid_argument, "hierarchy needs at least one endpoint");
  if (directions_.empty()) directions_.assign(supports_.size(), Direction::larger_better);
  if (directions_.size() != supports_.size())
    fail(Errc::invalid_argument, "one direction flag per endpoint required");
  std::size_t cells = 1;
  for (std::size_t k = 0; k < supports_.size(); ++k) {
    if (supports_[k] < 2)
      fail(Errc::invalid_argument,
           "endpoint " + std::to_string(k + 1) + " needs at least 2 categories");
    if (cells > std::numeric_limits<std::size_t>::max() / supports_[k])
      fail(Errc::invalid_argument, "joint cell count overflows");
    cells *= static_cast<std::size_t>(supports_[k]);
  }
  if (cells > kLargeCellCount)
    warnings_.push_back("joint cell count " + std::to_string(cells) +
                        " exceeds 1e6; dense tables will be large");
}

std::size_t Hierarchy::cell_count(int level) const {
  if (level < 1 || level > endpoints())
    fail(Errc::out_of_range, "level " + std::to_string(level) + " outside 1.." +
                                 std::to_string(endpoints()));
  std::size_t cells = 1;
  for (int k = 0; k < level; ++k) cells *= static_cast<std::size_t>(supports_[k]);
  return cells;
}

std::size_t Hierarchy::cell_index(std::span<const int> prefix) const {
  if (prefix.empty() || prefix.size() > supports_.size())
    fail(Errc::out_of_range, "cell prefix length out of range");
  std::size_t index = 0;
  for (std::size_t k = 0; k < prefix.size(); ++k) {
    if (prefix[k] < 0 || prefix[k] >= supports_[k])
      fail(Errc::out_of_range, "category outside support");
    index = index * static_cast<std::size_t>(supports_[k]) +
            static_cast<std::size_t>(prefix[k]);
  }
  return index;
}

std::vector<int> Hierarchy::cell_prefix(std::size_t index, int level) const {
  if (index >= cell_count(level)) fail(Errc::out_of_range, "cell index out of range");
  std::vector<int> prefix(level);
  for (int k = level - 1; k >= 0; --k) {
    prefix[k] = static_cast<int>(index % supports_[k]);
    index /= supports_[k];
  }
  return prefix;
}

// --- TrialDataset ----------------------------------------------------------

TrialDataset::TrialDataset(Hierarchy hierarchy, std::vector<Subject> subjects,
                           std::vector<std::string> covariate_names)
    : hierarchy_(std::move(hierarchy)),
      subjects_(std::move(subjects)),
      covariate_names_(std::move(covariate_names)) {
  const int K = hierarchy_.endpoints();
  if (!subjects_.empty() && covariate_names_.empty() &&
      !subjects_.front().covariates.empty()) {
    for (std::size_t j = 0; j < subjects_.front().covariates.size(); ++j)
      covariate_names_.push_back("X" + std::to_string(j + 1));
  }
  const std::size_t p = covariate_names_.size();
  for (std::size_t i = 0; i < subjects_.size(); ++i) {
    const Subject& s = subjects_[i];
    if (s.arm != 0 && s.arm != 1)
      fail(Errc::invalid_argument, "subject " + std::to_string(i) + " has arm not in {0,1}");
    if (static_cast<int>(s.outcomes.size()) != K)
      fail(Errc::dimension_mismatch,
           "subject " + std::to_string(i) + " has wrong number of outcomes");
    for (int k = 0; k < K; ++k) {
      if (s.outcomes[k] && (*s.outcomes[k] < 0 || *s.outcomes[k] >= hierarchy_.support(k)))
        fail(Errc::out_of_range, "subject " + std::to_string(i) + " endpoint " +
                                     std::to_string(k + 1) + " outside support");
    }
    if (s.covariates.size() != p)
      fail(Errc::dimension_mismatch,
           "subject " + std::to_string(i) + " has inconsistent covariate length");
    for (double x : s.covariates)
      if (!std::isfinite(x))
        fail(Errc::missing_covariate, "subject " + std::to_string(i) + " has a non-finite covariate");
    ++arm_sizes_[s.arm];
  }
  if (arm_sizes_[0] == 0 || arm_sizes_[1] == 0)
    fail(Errc::single_arm, "both arms must contain at least one subject");
}

std::size_t TrialDataset::covariate_index(const std::string& name) const {
  for (std::size_t j = 0; j < covariate_names_.size(); ++j)
    if (covariate_names_[j] == name) return j;
  fail(Errc::invalid_argument, "unknown covariate '" + name + "'");
}

double CellTable::total() const {
  return std::accumulate(probs.begin(), probs.end(), 0.0);
}

// --- cell operations -------------------------------------------------------

bool joint_nonmiss(const Subject& subject, int level) {
  if (level < 1 || level > static_cast<int>(subject.outcomes.size()))
    fail(Errc::out_of_range, "level " + std::to_string(level) + " out of range");
  for (int k = 0; k < level; ++k)
    if (!subject.outcomes[k]) return false;
  return true;
}

std::optional<std::size_t> prefix_cell(const Hierarchy& hierarchy,
                                       const Subject& subject, int level) {
  if (!joint_nonmiss(subject, level)) return std::nullopt;
  std::size_t index = 0;
  for (int k = 0; k < level; ++k)
    index = index * static_cast<std::size_t>(hierarchy.support(k)) +
            static_cast<std::size_t>(*subject.outcomes[k]);
  return index;
}

CellTable empirical_cells(const TrialDataset& data, int arm, int level) {
  const Hierarchy& h = data.hierarchy();
  CellTable table{arm, level,
                  std::vector<int>(h.supports().begin(), h.supports().begin() + level),
                  std::vector<double>(h.cell_count(level), 0.0)};
  std::vector<std::size_t> counts(table.probs.size(), 0);
  std::size_t n = 0;
  for (const Subject& s : data.subjects()) {
    if (s.arm != arm) continue;
    auto cell = prefix_cell(h, s, level);
    if (!cell)
      fail(Errc::invalid_argument,
           "empirical_cells requires complete outcomes through level " + std::to_string(level));
    ++counts[*cell];
    ++n;
  }
  for (std::size_t c = 0; c < counts.size(); ++c)
    table.probs[c] = static_cast<double>(counts[c]) / static_cast<double>(n);
  return table;
}

CellTable marginalize_cells(const CellTable& table) {
  if (table.level < 2) fail(Errc::invalid_argument, "cannot marginalize a level-1 table");
  const auto last = static_cast<std::size_t>(table.supports.back());
  CellTable out{table.arm, table.level - 1,
                std::vector<int>(table.supports.begin(), table.supports.end() - 1),
                std::vector<double>(table.probs.size() / last, 0.0)};
  for (std::size_t c = 0; c < out.probs.size(); ++c)
    for (std::size_t i = 0; i < last; ++i) out.probs[c] += table.probs[c * last + i];
  return out;
}

// --- ingestion ---------------------------------------------------------------

Hierarchy ColumnSchema::hierarchy() const {
  std::vector<int> supports;
  std::vector<Direction> directions;
  for (const auto& e : endpoints) {
    supports.push_back(e.categories);
    directions.push_back(e.direction);
  }
  return Hierarchy(std::move(supports), std::move(directions));
}

std::vector<std::string> read_header(const std::filesystem::path& path, char delimiter) {
  std::ifstream in(path);
  if (!in) fail(Errc::invalid_argument, "cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) fail(Errc::malformed_input, "missing header row");
  return split_row(line, delimiter);
}

TrialDataset ingest_dataset(const std::filesystem::path& path, const ColumnSchema& schema) {
  Hierarchy hierarchy = schema.hierarchy();
  std::ifstream in(path);
  if (!in) fail(Errc::invalid_argument, "cannot open '" + path.string() + "'");

  std::string line;
  if (!std::getline(in, line)) fail(Errc::malformed_input, "missing header row");
  const auto header = split_row(line, schema.delimiter);
  auto column_of = [&](const std::string& name) {
    for (std::size_t j = 0; j < header.size(); ++j)
      if (header[j] == name) return j;
    fail(Errc::invalid_argument, "column '" + name + "' not found in header");
  };

  const std::size_t treat_col = column_of(schema.treatment);
  std::vector<std::size_t> endpoint_cols;
  for (const auto& e : schema.endpoints) endpoint_cols.push_back(column_of(e.column));
  std::vector<std::size_t> covariate_cols;
  for (const auto& c : schema.covariates) covariate_cols.push_back(column_of(c));

  auto is_missing = [&](std::string_view v) { return v.empty() || v == schema.missing; };

  std::vector<Subject> subjects;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto fields = split_row(line, schema.delimiter);
    const std::string where = "row " + std::to_string(row);
    if (fields.size() != header.size())
      fail(Errc::malformed_input, where + ": expected " + std::to_string(header.size()) +
                                      " fields, found " + std::to_string(fields.size()));
    Subject s;
    const std::string& t = fields[treat_col];
    if (t == schema.treated_value) {
      s.arm = 1;
    } else if (t == schema.control_value) {
      s.arm = 0;
    } else {
      fail(Errc::malformed_input, where + ": treatment value '" + t + "' is not binary-coded");
    }
    for (std::size_t k = 0; k < schema.endpoints.size(); ++k) {
      const auto& e = schema.endpoints[k];
      const std::string& raw = fields[endpoint_cols[k]];
      if (is_missing(raw)) {
        s.outcomes.emplace_back();
        continue;
      }
      auto value = parse_int(raw);
      if (!value)
        fail(Errc::malformed_input, where + ": endpoint '" + e.column + "' value '" + raw +
                                        "' is not an integer");
      const long code = *value - e.lowest;
      if (code < 0 || code >= e.categories)
        fail(Errc::out_of_range, where + ": endpoint '" + e.column + "' value " + raw +
                                     " outside its " + std::to_string(e.categories) +
                                     " categories");
      const int c = static_cast<int>(code);
      s.outcomes.emplace_back(e.direction == Direction::larger_better ? c
                                                                      : e.categories - 1 - c);
    }
    for (std::size_t j = 0; j < covariate_cols.size(); ++j) {
      const std::string& raw = fields[covariate_cols[j]];
      if (is_missing(raw))
        fail(Errc::missing_covariate,
             where + ": covariate '" + schema.covariates[j] + "' is missing");
      auto value = parse_double(raw);
      if (!value)
        fail(Errc::malformed_input,
             where + ": covariate '" + schema.covariates[j] + "' value '" + raw + "' is not numeric");
      s.covariates.push_back(*value);
    }
    subjects.push_back(std::move(s));
  }
  return TrialDataset(std::move(hierarchy), std::move(subjects), schema.covariates);
}

}  // namespace winstat
