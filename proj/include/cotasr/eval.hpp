#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace cotasr::eval {

using Words = std::vector<std::string>;

// Lowercases and splits on whitespace.
Words normalize(std::string_view text);

enum class Op { Match, Substitute, Insert, Delete };

inline constexpr std::size_t kNoIndex = static_cast<std::size_t>(-1);

struct AlignedOp {
  Op op = Op::Match;
  std::size_t ref = kNoIndex;  // kNoIndex for insertions
  std::size_t hyp = kNoIndex;  // kNoIndex for deletions
  friend bool operator==(const AlignedOp&, const AlignedOp&) = default;
};

struct AlignmentResult {
  std::vector<AlignedOp> ops;
  std::size_t substitutions = 0;
  std::size_t insertions = 0;
  std::size_t deletions = 0;
  std::size_t ref_length = 0;

  std::size_t errors() const { return substitutions + insertions + deletions; }
  // Throws UndefinedMetricError for an empty reference.
  double wer() const;
};

// Minimum-edit alignment. Backtrace prefers match, then substitute, then
// delete, then insert among equal-cost predecessors.
AlignmentResult align(const Words& ref, const Words& hyp);

// Pooled sum(S+I+D) / sum(R). InputError on length mismatch,
// UndefinedMetricError when every reference is empty.
double wer(const std::vector<Words>& refs, const std::vector<Words>& hyps);

struct EntitySpan {
  std::size_t first = 0;
  std::size_t end = 0;  // exclusive word index
};

struct EntityReference {
  Words words;
  std::vector<EntitySpan> entities;
};

struct EntityCounts {
  std::size_t total = 0;
  std::size_t recalled = 0;
};

// An entity is recalled iff every reference word in its span aligns as an
// exact match. Spans are scored independently.
EntityCounts entity_counts(const std::vector<EntityReference>& refs,
                           const std::vector<Words>& hyps);
// 1 - recalled/total; UndefinedMetricError when there are no entities.
double eer(const std::vector<EntityReference>& refs, const std::vector<Words>& hyps);

class BiasList {
 public:
  BiasList() = default;
  explicit BiasList(const std::vector<std::string>& words);
  // One word per line; blank lines ignored. IoError if unreadable.
  static BiasList load(const std::filesystem::path& path);
  bool contains(const std::string& word) const { return words_.contains(word); }
  const std::set<std::string>& words() const { return words_; }

 private:
  std::set<std::string> words_;
};

struct BiasedCounts {
  std::size_t errors = 0;
  std::size_t ref_words = 0;
  std::size_t biased_errors = 0;
  std::size_t biased_ref_words = 0;
  std::size_t unbiased_errors = 0;
  std::size_t unbiased_ref_words = 0;
};

struct BiasedWer {
  BiasedCounts counts;
  double wer = 0.0;
  std::optional<double> b_wer;  // absent when no reference word is biased
  std::optional<double> u_wer;  // absent when every reference word is biased
};

// Substitutions and deletions go to the partition of their reference word;
// insertions go to the partition of the inserted hypothesis word.
BiasedCounts biased_counts(const Words& ref, const Words& hyp, const BiasList& bias);
BiasedWer biased_wer(const std::vector<Words>& refs, const std::vector<Words>& hyps,
                     const BiasList& bias);

// Aggregate reporting ------------------------------------------------------

inline constexpr int kReportSchemaVersion = 1;
inline constexpr std::string_view kUndefined = "n/a";

struct SetMetrics {
  std::string name;
  std::size_t utterances = 0;
  std::optional<double> wer;
  std::optional<double> eer;
  std::optional<double> b_wer;
  std::optional<double> u_wer;
  std::optional<double> rtf;
  friend bool operator==(const SetMetrics&, const SetMetrics&) = default;
};

struct SystemMetrics {
  std::string name;
  std::vector<SetMetrics> sets;
  friend bool operator==(const SystemMetrics&, const SystemMetrics&) = default;
};

struct Report {
  std::vector<SystemMetrics> systems;
  friend bool operator==(const Report&, const Report&) = default;
};

// Unweighted mean over the sets where the metric is defined.
SetMetrics average(const SystemMetrics& system);

// One row per test set plus an "average" row; columns are system x metric in
// input order. Metric columns appear only when some value is present.
// Error rates are printed as percentages, RTF as a plain ratio.
std::string format_table(const Report& report);

std::string report_to_json(const Report& report);
// InputError on malformed text or an unknown schema version.
Report report_from_json(std::string_view text);

}  // namespace cotasr::eval
