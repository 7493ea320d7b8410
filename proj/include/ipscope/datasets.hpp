#pragma once

#include <chrono>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <variant>
#include <vector>

#include "ipscope/clock.hpp"
#include "ipscope/model.hpp"
#include "ipscope/net.hpp"
#include "ipscope/prefix_index.hpp"

namespace ipscope::datasets {

/// Well-known dataset ids the detectors consult.
inline constexpr const char* kGeo = "geo";
inline constexpr const char* kTorExits = "tor_exits";
inline constexpr const char* kVpnRanges = "vpn_ranges";
inline constexpr const char* kDatacenterRanges = "dc_ranges";

enum class DatasetKind { geo, exact_ips, cidr_ranges };

std::string_view to_string(DatasetKind k) noexcept;
std::optional<DatasetKind> dataset_kind_from_string(std::string_view text) noexcept;

struct DatasetManifest {
  std::string id;
  DatasetKind kind = DatasetKind::exact_ips;
  Timestamp loaded_at{};
  std::string source_uri;
  std::size_t entry_count = 0;
  /// 1-based line numbers (CSV / IP list) or array indices (JSON) that were skipped.
  std::vector<std::size_t> rejected;
  /// Rows whose prefix repeated an earlier row; the later row won.
  std::size_t duplicates = 0;
};

void to_json(json& j, const DatasetManifest& m);

class GeoTable {
 public:
  std::optional<GeoRecord> lookup(const IpAddress& ip) const;
  std::size_t size() const noexcept { return index_.size(); }

 private:
  friend class DatasetBuilder;
  PrefixIndex index_;
  std::vector<GeoRecord> records_;
};

class IpSet {
 public:
  bool contains(const IpAddress& ip) const { return ips_.count(ip) > 0; }
  std::size_t size() const noexcept { return ips_.size(); }
  const std::set<IpAddress>& entries() const noexcept { return ips_; }

 private:
  friend class DatasetBuilder;
  std::set<IpAddress> ips_;
};

struct CidrEntry {
  IpPrefix prefix;
  std::string label;
};

class CidrSet {
 public:
  /// Longest matching range, if any.
  std::optional<CidrEntry> match(const IpAddress& ip) const;
  std::size_t size() const noexcept { return index_.size(); }
  const std::vector<CidrEntry>& entries() const noexcept { return entries_; }

 private:
  friend class DatasetBuilder;
  PrefixIndex index_;
  std::vector<CidrEntry> entries_;
};

/// Immutable loaded snapshot. Refresh swaps whole snapshots.
struct Dataset {
  DatasetManifest manifest;
  std::variant<GeoTable, IpSet, CidrSet> data;
};

using DatasetPtr = std::shared_ptr<const Dataset>;

/// Parsers over in-memory content; `source` only feeds the manifest.
DatasetPtr parse_geo_csv(std::string_view content, const std::string& id, const std::string& source, Timestamp now);
DatasetPtr parse_ip_list(std::string_view content, const std::string& id, const std::string& source, Timestamp now);
DatasetPtr parse_cidr_ranges(std::string_view content, const std::string& id, const std::string& source,
                             Timestamp now);

struct Membership {
  bool member = false;
  /// Matched IP or prefix text, empty when not a member.
  std::string matched;
  std::string label;
};

struct RefreshReport {
  std::string id;
  std::size_t old_count = 0;
  std::size_t new_count = 0;
  Timestamp loaded_at{};
};

/// Holds the live dataset snapshots. Lookups are lock-free after grabbing the
/// current snapshot pointer; refresh builds a complete replacement before
/// publishing it.
class Registry {
 public:
  explicit Registry(const Clock& clock = system_clock()) : clock_(&clock) {}

  /// Registers an id and its kind without loading it. Queries against it
  /// raise DatasetNotLoaded until a load succeeds.
  void declare(const std::string& id, DatasetKind kind, const std::string& source_uri = {});

  DatasetManifest load_geo_csv(const std::string& path, const std::string& id = kGeo);
  DatasetManifest load_ip_list(const std::string& path, const std::string& id);
  DatasetManifest load_cidr_ranges(const std::string& path, const std::string& id);

  /// Publishes a prebuilt snapshot under its manifest id.
  void install(DatasetPtr ds);

  std::optional<GeoRecord> lookup_geo(const Target& ip, const std::string& id = kGeo) const;
  Membership contains(const std::string& id, const Target& ip) const;

  /// Reloads `id` from a file path, `file://` URI or HTTP(S) URL. An empty
  /// `source_uri` reuses the last known source. The previous snapshot stays
  /// live when fetching or parsing fails.
  RefreshReport refresh_dataset(const std::string& id, const std::string& source_uri = {},
                                NetMeter* meter = nullptr);

  /// Snapshot for `id`, nullptr when declared but not loaded. Throws
  /// UnknownDataset for undeclared ids.
  DatasetPtr get(const std::string& id) const;
  bool is_loaded(const std::string& id) const;
  bool is_known(const std::string& id) const;

  /// True when the dataset was loaded longer ago than `max_age`.
  bool is_stale(const std::string& id, std::chrono::seconds max_age) const;

  /// Manifests of loaded datasets, sorted by id.
  std::vector<DatasetManifest> manifests() const;

  const Clock& clock() const noexcept { return *clock_; }

 private:
  struct Slot {
    DatasetKind kind;
    std::string source_uri;
    DatasetPtr live;
  };

  DatasetPtr require(const std::string& id) const;

  const Clock* clock_;
  mutable std::shared_mutex mu_;
  std::map<std::string, Slot> slots_;
};

/// Fetches dataset content from a path, `file://` URI or HTTP(S) URL.
/// Throws FetchError (HTTP) or IoError (files).
std::string fetch_source(const std::string& source_uri, NetMeter* meter);

}  // namespace ipscope::datasets
