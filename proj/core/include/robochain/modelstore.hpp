#pragma once

#include <deque>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "robochain/bytes.hpp"

namespace robochain::modelstore {

using VersionId = Digest;
using HubId = std::string;

/// Recognised hyperparameter keys. Anything else is refused by the store.
inline constexpr std::string_view kHyperparamKeys[] = {"learning_rate", "rho", "epsilon",
                                                       "epochs"};
using Hyperparams = std::map<std::string, double>;

struct ModelVersion {
  VersionId version_id;
  std::vector<double> params;
  Hyperparams hyperparams;
  std::optional<VersionId> parent_id;
  Tick created_at = 0;
  bool consensual = false;

  /// Pure function of (params, hyperparams, parent_id).
  static VersionId compute_id(std::span<const double> params, const Hyperparams& hyperparams,
                              const std::optional<VersionId>& parent_id);
  static ModelVersion make(std::vector<double> params, Hyperparams hyperparams,
                           std::optional<VersionId> parent_id, Tick created_at);

  bool id_matches_content() const;

  bool operator==(const ModelVersion&) const = default;
};

Bytes serialize(const ModelVersion& v);
ModelVersion parse_version(ByteView data);

/// Dense difference between two versions. `param_diff` is to - from rounded
/// to double; `residual` and `exact` carry what rounding lost so that
/// apply_delta reproduces the target bit for bit.
struct ModelDelta {
  VersionId from_id;
  VersionId to_id;
  std::vector<double> param_diff;
  std::vector<double> residual;
  std::map<std::uint32_t, double> exact;  // rare elements where two terms are not enough
  Hyperparams hyper_diff;                 // changed or added entries, new values
  Digest update_hash;

  Digest compute_hash() const;
};

Bytes serialize(const ModelDelta& d);
ModelDelta parse_delta(ByteView data);

ModelDelta make_delta(const ModelVersion& from, const ModelVersion& to);
std::vector<double> apply_delta(const ModelVersion& base, const ModelDelta& delta);
Hyperparams apply_hyper_delta(const Hyperparams& base, const ModelDelta& delta);

/// Rebuilds the target version from base + delta, assuming the target's
/// parent is the base. Throws CorruptData if the content id does not match.
ModelVersion reconstruct(const ModelVersion& base, const ModelDelta& delta, Tick now);

class Repository {
 public:
  explicit Repository(std::size_t dimension);

  std::size_t dimension() const { return dimension_; }

  /// New version whose parent is the current head; head advances.
  ModelVersion commit(std::vector<double> params, Hyperparams hyperparams, Tick now);
  /// Commits a version built elsewhere (e.g. by the learner). Its parent
  /// must be the current head.
  ModelVersion commit(ModelVersion version);
  ModelVersion checkout(const VersionId& id) const;
  ModelDelta diff(const VersionId& from, const VersionId& to) const;

  /// head := consensual head.
  ModelVersion rollback();

  /// Marks `id` consensual and moves both heads to it. The previous
  /// consensual head must be an ancestor.
  ModelVersion promote(const VersionId& id);

  /// Inserts a version built elsewhere. Its parent must already be present.
  ModelVersion import_version(ModelVersion v);

  bool contains(const VersionId& id) const { return versions_.count(id) > 0; }
  bool is_ancestor(const VersionId& ancestor, const VersionId& descendant) const;
  std::size_t size() const { return versions_.size(); }

  const std::optional<VersionId>& head() const { return head_; }
  const std::optional<VersionId>& consensual_head() const { return consensual_head_; }
  std::vector<VersionId> consensual_chain() const;

  void save(const std::filesystem::path& dir) const;
  static Repository load(const std::filesystem::path& dir);

  bool operator==(const Repository& other) const;

 private:
  const ModelVersion& get(const VersionId& id) const;
  void check_params(std::span<const double> params) const;

  std::size_t dimension_;
  std::map<VersionId, ModelVersion> versions_;
  std::optional<VersionId> head_;
  std::optional<VersionId> consensual_head_;
};

ModelVersion commit(Repository& repo, std::vector<double> params, Hyperparams hyperparams, Tick now);
ModelVersion checkout(const Repository& repo, const VersionId& id);
ModelDelta diff(const Repository& repo, const VersionId& from, const VersionId& to);
ModelVersion rollback(Repository& repo);

struct Announcement {
  Digest update_hash;
  ModelDelta delta;
  HubId source_hub;
};

/// update_hash || delta || source hub, each length-prefixed.
Bytes serialize(const Announcement& a);
Announcement parse_announcement(ByteView data);
Announcement make_announcement(ModelDelta delta, HubId source_hub);

/// A robot's checked-out model. Never committed implicitly.
struct WorkingCopy {
  VersionId version_id;
  std::vector<double> params;
  Hyperparams hyperparams;
};

/// A site's compute node: one repository plus the working directories of
/// its subscribed robots.
class Hub {
 public:
  Hub(HubId id, Repository repository);

  const HubId& id() const { return id_; }
  Repository& repository() { return repo_; }
  const Repository& repository() const { return repo_; }

  void subscribe(const std::string& robot_id);
  const std::set<std::string>& subscribers() const { return subscribers_; }

  const WorkingCopy& working_copy(const std::string& robot_id) const;
  void checkout_to(const std::string& robot_id, const VersionId& id);

  /// Applies a candidate update to every subscriber's working directory.
  /// Throws StaleBase when the delta is not based on this hub's consensual
  /// head; nothing is applied in that case.
  std::size_t notify_subscribers(const Announcement& ann, Tick now);

  /// StaleBase recovery: place a full version into working directories.
  std::size_t receive_full(const ModelVersion& version);

  /// Network-accepted update: reconstruct, commit, mark consensual, and
  /// check it out for every subscriber.
  ModelVersion adopt(const Announcement& ann, Tick now);
  ModelVersion adopt_full(const ModelVersion& version);

  /// Every working directory back to the consensual head; repository head too.
  void rollback();

 private:
  HubId id_;
  Repository repo_;
  std::set<std::string> subscribers_;
  std::map<std::string, WorkingCopy> working_;
};

using Adjacency = std::map<HubId, std::set<HubId>>;

/// Flooding by rounds: a hub that first receives in round r forwards to all
/// neighbours, which receive in round r + 1. Returns first-receipt rounds.
std::map<HubId, std::size_t> flood_schedule(const Adjacency& adjacency, const HubId& source);

using AnnouncementId = std::uint64_t;

enum class AnnouncementKind { Candidate, Promotion };

struct Delivery {
  AnnouncementId id = 0;
  HubId hub;
  std::size_t round = 0;
  std::size_t delivered = 0;  // subscriber working directories updated
  bool stale = false;         // StaleBase surfaced; recovered with a full fetch
};

/// In-process hub network with round-based flooding. The simulator drives
/// hubs directly with latencies; this class backs standalone use and tests.
class HubNetwork {
 public:
  Hub& add_hub(Hub hub);
  void connect(const HubId& a, const HubId& b);

  Hub& hub(const HubId& id);
  const Hub& hub(const HubId& id) const;
  const Adjacency& adjacency() const { return adjacency_; }
  std::vector<HubId> hub_ids() const;

  AnnouncementId publish_update(const HubId& source, const ModelDelta& delta,
                                AnnouncementKind kind = AnnouncementKind::Candidate);

  /// Delivers one flooding round of all in-flight announcements.
  std::vector<Delivery> step(Tick now = 0);
  std::vector<Delivery> deliver_all(Tick now = 0);
  bool idle() const { return in_flight_.empty(); }

 private:
  struct InFlight {
    AnnouncementId id;
    AnnouncementKind kind;
    Announcement ann;
    std::size_t round;
    std::set<HubId> seen;
    std::set<HubId> frontier;
  };

  Delivery deliver(InFlight& f, const HubId& hub, Tick now);

  std::map<HubId, Hub> hubs_;
  Adjacency adjacency_;
  std::deque<InFlight> in_flight_;
  AnnouncementId next_id_ = 1;
};

AnnouncementId publish_update(HubNetwork& network, const HubId& hub, const ModelDelta& delta);
std::size_t notify_subscribers(Hub& hub, const Announcement& announcement, Tick now = 0);

}  // namespace robochain::modelstore
