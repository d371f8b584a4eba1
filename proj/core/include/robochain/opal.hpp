#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include "robochain/bytes.hpp"

namespace robochain::opal {

struct PatientRecord {
  std::string record_id;
  std::int64_t age = 0;
  std::int64_t gender_code = 0;
  std::vector<double> assessment_scores;
  std::set<std::string> condition_tags;
  std::string party_id;
};

enum class Aggregation { Count, Mean, Variance, ProportionAbove };

std::string_view to_string(Aggregation a);
Aggregation parse_aggregation(std::string_view text);

struct VettedAlgorithm {
  std::string algo_id;
  Aggregation aggregation = Aggregation::Count;
  std::set<std::string> allowed_fields;
  std::uint64_t min_group_size = 2;  // k
  bool expert_verified = false;
  double threshold = 0.0;  // ProportionAbove only: counts target > threshold
};

/// Numeric record fields: "age", "gender_code", "score_<i>" (assessment
/// score i). "condition_tags" may appear in filters only.
inline constexpr std::string_view kTagsField = "condition_tags";

enum class CompareOp { Eq, Lt, Le, Gt, Ge, In };

/// One conjunct of a filter. Numeric fields compare against `numbers`
/// (a single constant except for In). For condition_tags, Eq/In match when
/// the record carries any of `labels`.
struct Condition {
  std::string field;
  CompareOp op = CompareOp::Eq;
  std::vector<double> numbers;
  std::vector<std::string> labels;
};

struct Query {
  std::string query_id;
  std::string algo_id;
  std::vector<Condition> filter;
  std::string target_field;
  std::string requester_id;
  Tick timestamp = 0;
};

/// What leaves a protected database. A suppressed answer carries neither a
/// statistic nor a group size (group below k).
struct AggregatedAnswer {
  std::string query_id;
  std::optional<std::uint64_t> group_size;
  std::optional<double> statistic;
  std::optional<double> relative_comparison_pct;
  std::uint64_t contributing_parties = 0;

  bool suppressed() const { return !statistic.has_value(); }
};

Bytes serialize(const Query& q);
Bytes serialize(const AggregatedAnswer& a);
Query parse_query(ByteView data);
AggregatedAnswer parse_answer(ByteView data);

/// Order-independent, correctly rounded floating-point sum (non-overlapping
/// partials). Two ExactSums over the same multiset round to the same double
/// regardless of insertion order or how the multiset was split.
class ExactSum {
 public:
  void add(double x);
  void merge(const ExactSum& other);
  double value() const;
  const std::vector<double>& partials() const { return partials_; }

 private:
  std::vector<double> partials_;
};

/// Sufficient statistics for exact federation. Produced and consumed inside
/// the trusted service boundary; only AggregatedAnswer is released.
struct PartialAggregate {
  std::uint64_t count = 0;
  ExactSum sum;
  double m2 = 0.0;  // sum of squared deviations about this partial's mean
  std::uint64_t above = 0;

  double mean() const { return count == 0 ? 0.0 : sum.value() / static_cast<double>(count); }

  /// Builds the statistics from raw values (two-pass for m2).
  static PartialAggregate of(std::span<const double> values, double threshold = 0.0);
};

double statistic_of(const PartialAggregate& p, Aggregation aggregation);

/// Composes partials: counts and sums add exactly; m2 by the parallel
/// (pairwise) variance update.
PartialAggregate merge_partials(std::span<const PartialAggregate> parts);

/// Merges per-party partials into one answer, suppressed when the merged
/// group is below k.
AggregatedAnswer merge_answers(std::span<const PartialAggregate> parts, const VettedAlgorithm& algo,
                               const std::string& query_id);

struct AlgoRef {
  std::string algo_id;
};

class AlgorithmRegistry {
 public:
  AlgoRef register_vetted_algorithm(VettedAlgorithm algo);
  std::optional<VettedAlgorithm> find(std::string_view algo_id) const;
  std::vector<std::string> ids() const;

  static std::shared_ptr<AlgorithmRegistry> load(const std::filesystem::path& path);

 private:
  mutable std::shared_mutex mutex_;
  std::map<std::string, VettedAlgorithm, std::less<>> algorithms_;
};

AlgoRef register_vetted_algorithm(AlgorithmRegistry& registry, VettedAlgorithm algo);

/// A party's records behind the trust boundary. Queries run against an
/// immutable snapshot; the records themselves are never returned.
class ProtectedDatabase {
 public:
  ProtectedDatabase(std::string party_id, std::vector<PatientRecord> records,
                    std::shared_ptr<const AlgorithmRegistry> registry);

  static ProtectedDatabase load(const std::filesystem::path& jsonl, std::string party_id,
                                std::shared_ptr<const AlgorithmRegistry> registry);

  const std::string& party_id() const { return party_id_; }
  std::size_t record_count() const { return records_.size(); }
  const std::shared_ptr<const AlgorithmRegistry>& registry() const { return registry_; }

  AggregatedAnswer execute(const Query& q) const;

  /// Federation hook: the partial over matching records, or nullopt when the
  /// local group is below k.
  std::optional<PartialAggregate> partial(const Query& q) const;

 private:
  PartialAggregate compute(const Query& q, const VettedAlgorithm& algo) const;
  VettedAlgorithm resolve(const Query& q) const;

  std::string party_id_;
  std::vector<PatientRecord> records_;
  std::shared_ptr<const AlgorithmRegistry> registry_;
};

AggregatedAnswer execute_query(const ProtectedDatabase& db, const Query& q);

struct PartyFailure {
  std::string party_id;
  std::string error;
};

struct FederatedAnswer {
  AggregatedAnswer answer;
  std::vector<PartyFailure> failures;
};

FederatedAnswer federate_query(std::span<const ProtectedDatabase* const> parties, const Query& q);

/// Relative difference 100*(ans - baseline)/baseline.
double relative_difference_pct(const AggregatedAnswer& ans, const AggregatedAnswer& baseline);

/// Sentence form of a comparison, with the percentage rounded to one
/// decimal. Negative differences read as "lower".
std::string render_answer_template(const AggregatedAnswer& ans, const AggregatedAnswer& baseline,
                                   std::string_view exercise = "x");

bool is_numeric_field(std::string_view field);
std::optional<double> field_value(const PatientRecord& r, std::string_view field);
bool matches(const PatientRecord& r, const Condition& c);

PatientRecord parse_record_json(std::string_view line);
std::string record_to_json(const PatientRecord& r);

}  // namespace robochain::opal
