#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "robochain/crypto.hpp"
#include "robochain/ledger.hpp"
#include "robochain/modelstore.hpp"

namespace robochain::consensus {

using modelstore::HubId;
using modelstore::ModelDelta;
using modelstore::ModelVersion;
using modelstore::VersionId;

using RoundId = std::uint64_t;

struct CandidateModel {
  ModelVersion model;
  HubId source_hub;
  std::string source_robot;
  double locked_score = 0.0;
  Tick announced_at = 0;
};

struct FeedbackScore {
  std::string robot_id;
  VersionId model_hash;
  double score = 0.0;
  Tick received_at = 0;
};

enum class RoundState { Open, Accepted, Rejected, Expired };

std::string_view to_string(RoundState s);

struct Decision {
  RoundState outcome = RoundState::Open;
  double candidate_mean = 0.0;
  double baseline_mean = 0.0;
  std::size_t candidate_count = 0;
  std::size_t quorum = 0;
};

/// Update a destination hub trained from the candidate on its own session
/// data and sent back to the source.
struct ReturnedUpdate {
  std::string robot_id;
  ModelDelta delta;
  double weight = 1.0;
};

struct ConsensusRound {
  RoundId round_id = 0;
  CandidateModel candidate;
  ModelVersion baseline;
  ModelDelta candidate_delta;  // baseline -> candidate
  std::vector<FeedbackScore> baseline_scores;
  std::vector<FeedbackScore> candidate_scores;
  std::vector<ReturnedUpdate> returned_updates;
  Tick opened_at = 0;
  Tick deadline = 0;
  std::size_t quorum = 1;
  RoundState state = RoundState::Open;
  std::optional<Decision> decision;
  std::optional<ModelVersion> promoted;
  std::optional<ModelDelta> adopted_delta;  // baseline -> promoted
  std::optional<ledger::BlockRef> notarization;
};

/// Mean of the scores in submission order; 0 for an empty list.
double mean_score(const std::vector<FeedbackScore>& scores);

/// The acceptance rule: Expired below quorum, otherwise Accepted iff the
/// candidate mean is strictly greater than the baseline mean.
RoundState decide(double candidate_mean, double baseline_mean, std::size_t candidate_count,
                  std::size_t quorum);

/// ⌈n/2⌉, at least 1.
std::size_t default_quorum(std::size_t destinations);

/// Network-wide round registry. At most one round is Open at any time.
class Coordinator {
 public:
  /// `lineage`, when given, is searched for an ancestry path from the
  /// candidate to the baseline; otherwise the candidate's parent must be the
  /// baseline.
  ConsensusRound& open_round(CandidateModel candidate, ModelVersion baseline, Tick window,
                             std::size_t quorum, Tick now,
                             const modelstore::Repository* lineage = nullptr);

  /// Records a destination robot's scores for the candidate and the baseline
  /// measured on the same session data.
  bool submit_feedback(RoundId id, FeedbackScore candidate_score, FeedbackScore baseline_score);

  void return_update(RoundId id, ReturnedUpdate update);

  /// Requires now >= deadline unless `all_reported`.
  Decision resolve(RoundId id, Tick now, bool all_reported = false);

  const ConsensusRound& round(RoundId id) const;
  ConsensusRound& round(RoundId id);
  std::optional<RoundId> open_round_id() const { return open_; }
  std::size_t open_count() const;
  const std::map<RoundId, ConsensusRound>& rounds() const { return rounds_; }

 private:
  std::map<RoundId, ConsensusRound> rounds_;
  std::optional<RoundId> open_;
  RoundId next_id_ = 1;
};

/// Immediate-delivery variant: commits nothing at destinations, places the
/// candidate in every working directory through the hub network.
ConsensusRound& open_round(Coordinator& coordinator, modelstore::HubNetwork& network,
                           CandidateModel candidate, ModelVersion baseline, Tick window,
                           std::size_t quorum, Tick now);

bool submit_feedback(Coordinator& coordinator, RoundId id, FeedbackScore candidate_score,
                     FeedbackScore baseline_score);
Decision resolve(Coordinator& coordinator, RoundId id, Tick now, bool all_reported = false);

/// The next consensual model: the candidate itself, or the candidate with
/// the returned destination updates folded in by weighted averaging. Its
/// parent is always the baseline.
ModelVersion next_baseline(const ConsensusRound& round, bool fold_destination_updates, Tick now);

/// Source-side promotion: commits and marks M(j+1) consensual at the source
/// hub and records it on the round. Returns the announcement to broadcast.
modelstore::Announcement prepare_promotion(ConsensusRound& round, modelstore::Hub& source_hub,
                                           bool fold_destination_updates, Tick now);

/// Promotion with immediate network-wide adoption.
ModelVersion promote(Coordinator& coordinator, modelstore::HubNetwork& network, RoundId id,
                     bool fold_destination_updates, Tick now);

/// Rejected or Expired: every hub returns to its consensual head.
void roll_back(modelstore::HubNetwork& network, const ConsensusRound& round);

struct PayloadEntry {
  std::string public_id;
  double candidate_score = 0.0;
  double baseline_score = 0.0;

  bool operator==(const PayloadEntry&) const = default;
};

struct ConsensusPayload {
  std::vector<PayloadEntry> entries;
  std::uint64_t quorum = 0;
  RoundState decision = RoundState::Open;

  bool operator==(const ConsensusPayload&) const = default;
};

inline constexpr std::uint8_t kDecisionAccepted = 0x01;
inline constexpr std::uint8_t kDecisionRejected = 0x02;
inline constexpr std::uint8_t kDecisionExpired = 0x03;

/// u32le count || count x (u32le len || id || f64le candidate || f64le baseline)
/// || u64le quorum || decision byte.
Bytes encode_payload(const ConsensusPayload& payload);
ConsensusPayload decode_payload(ByteView data);
ConsensusPayload payload_of(const ConsensusRound& round);

/// Re-runs the acceptance rule over a decrypted payload.
RoundState recompute_decision(const ConsensusPayload& payload);

/// Hash notarized for a round: the adopted delta for Accepted rounds, the
/// discarded candidate delta otherwise.
Digest notarized_update_hash(const ConsensusRound& round);

ledger::BlockRef notarize(ledger::Ledger& chain, ConsensusRound& round,
                          const crypto::NetworkKey& network_key, const crypto::Identity& signer,
                          Tick broadcast_time);

}  // namespace robochain::consensus
