#include "ipscope/datasets.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <mutex>
#include <sstream>

#include <httplib.h>

#include "ipscope/error.hpp"

namespace ipscope::datasets {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_lines(std::string_view content) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos < content.size()) {
    auto nl = content.find('\n', pos);
    if (nl == std::string_view::npos) nl = content.size();
    auto line = content.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    pos = nl + 1;
  }
  return lines;
}

// Minimal RFC 4180 field splitter: double-quoted fields may hold commas and
// doubled quotes.
std::optional<std::vector<std::string>> split_csv(std::string_view line) {
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
  if (quoted) return std::nullopt;
  fields.push_back(std::move(cur));
  return fields;
}

std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  std::string buf(s);
  char* end = nullptr;
  const double v = std::strtod(buf.c_str(), &end);
  if (end != buf.c_str() + buf.size()) return std::nullopt;
  return v;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed for " + path);
  return ss.str();
}

bool too_many_rejected(std::size_t rejected, std::size_t rows) {
  return rows > 0 && rejected * 10 > rows;
}

}  // namespace

// Grants the parsers access to the snapshot internals.
class DatasetBuilder {
 public:
  static void add_geo(GeoTable& t, GeoRecord rec, std::size_t& duplicates) {
    const auto id = static_cast<std::uint32_t>(t.records_.size());
    const auto prefix = rec.cidr;
    t.records_.push_back(std::move(rec));
    if (t.index_.insert(prefix, id)) ++duplicates;
  }

  static bool add_ip(IpSet& s, const IpAddress& ip) { return s.ips_.insert(ip).second; }

  static void add_cidr(CidrSet& s, CidrEntry entry, std::size_t& duplicates) {
    const auto id = static_cast<std::uint32_t>(s.entries_.size());
    const auto prefix = entry.prefix;
    s.entries_.push_back(std::move(entry));
    if (s.index_.insert(prefix, id)) ++duplicates;
  }

  static const GeoRecord& geo_at(const GeoTable& t, std::uint32_t id) { return t.records_[id]; }
  static const CidrEntry& cidr_at(const CidrSet& s, std::uint32_t id) { return s.entries_[id]; }
};

std::optional<GeoRecord> GeoTable::lookup(const IpAddress& ip) const {
  auto m = index_.longest_match(ip);
  if (!m) return std::nullopt;
  return DatasetBuilder::geo_at(*this, m->id);
}

std::optional<CidrEntry> CidrSet::match(const IpAddress& ip) const {
  auto m = index_.longest_match(ip);
  if (!m) return std::nullopt;
  return DatasetBuilder::cidr_at(*this, m->id);
}

std::string_view to_string(DatasetKind k) noexcept {
  switch (k) {
    case DatasetKind::geo: return "geo_csv";
    case DatasetKind::exact_ips: return "ip_list";
    case DatasetKind::cidr_ranges: return "cidr_ranges";
  }
  return "ip_list";
}

std::optional<DatasetKind> dataset_kind_from_string(std::string_view text) noexcept {
  if (text == "geo_csv" || text == "geo") return DatasetKind::geo;
  if (text == "ip_list" || text == "exact_ips") return DatasetKind::exact_ips;
  if (text == "cidr_ranges") return DatasetKind::cidr_ranges;
  return std::nullopt;
}

void to_json(json& j, const DatasetManifest& m) {
  j = json{{"id", m.id},
           {"kind", to_string(m.kind)},
           {"loaded_at", format_rfc3339(m.loaded_at)},
           {"source_uri", m.source_uri},
           {"entry_count", m.entry_count},
           {"rejected", m.rejected},
           {"duplicates", m.duplicates}};
}

DatasetPtr parse_geo_csv(std::string_view content, const std::string& id, const std::string& source, Timestamp now) {
  auto ds = std::make_shared<Dataset>();
  ds->manifest = DatasetManifest{id, DatasetKind::geo, now, source, 0, {}, 0};
  GeoTable table;

  const auto lines = split_lines(content);
  std::size_t first = 0;
  while (first < lines.size() && trim(lines[first]).empty()) ++first;
  if (first == lines.size()) throw FormatError("geo CSV is missing its header line");
  {
    auto header = split_csv(lines[first]);
    std::vector<std::string> cols;
    if (header) {
      for (auto& h : *header) {
        std::string c(trim(h));
        std::transform(c.begin(), c.end(), c.begin(), [](unsigned char ch) { return std::tolower(ch); });
        cols.push_back(std::move(c));
      }
    }
    if (cols != std::vector<std::string>{"cidr", "country", "city", "lat", "lon"}) {
      throw FormatError("geo CSV header must be 'cidr,country,city,lat,lon'");
    }
  }

  std::size_t rows = 0;
  for (std::size_t i = first + 1; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    ++rows;
    const std::size_t line_no = i + 1;
    auto fields = split_csv(lines[i]);
    if (!fields || fields->size() != 5) {
      ds->manifest.rejected.push_back(line_no);
      continue;
    }
    auto prefix = IpPrefix::parse(trim((*fields)[0]));
    std::string country(trim((*fields)[1]));
    auto lat = parse_double((*fields)[3]);
    auto lon = parse_double((*fields)[4]);
    const bool country_ok = country.size() == 2 && std::isalpha(static_cast<unsigned char>(country[0])) &&
                            std::isalpha(static_cast<unsigned char>(country[1]));
    if (!prefix || !country_ok || !lat || !lon || *lat < -90 || *lat > 90 || *lon < -180 || *lon > 180) {
      ds->manifest.rejected.push_back(line_no);
      continue;
    }
    std::transform(country.begin(), country.end(), country.begin(), [](unsigned char c) { return std::toupper(c); });
    DatasetBuilder::add_geo(table, GeoRecord{*prefix, country, std::string(trim((*fields)[2])), *lat, *lon},
                            ds->manifest.duplicates);
  }
  if (too_many_rejected(ds->manifest.rejected.size(), rows)) {
    throw FormatError("geo CSV rejected " + std::to_string(ds->manifest.rejected.size()) + " of " +
                      std::to_string(rows) + " rows");
  }
  ds->manifest.entry_count = table.size();
  ds->data = std::move(table);
  return ds;
}

DatasetPtr parse_ip_list(std::string_view content, const std::string& id, const std::string& source, Timestamp now) {
  auto ds = std::make_shared<Dataset>();
  ds->manifest = DatasetManifest{id, DatasetKind::exact_ips, now, source, 0, {}, 0};
  IpSet set;
  const auto lines = split_lines(content);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto line = trim(lines[i]);
    if (line.empty() || line.front() == '#') continue;
    auto ip = IpAddress::parse(line);
    if (!ip) {
      ds->manifest.rejected.push_back(i + 1);
      continue;
    }
    if (!DatasetBuilder::add_ip(set, *ip)) ++ds->manifest.duplicates;
  }
  ds->manifest.entry_count = set.size();
  ds->data = std::move(set);
  return ds;
}

DatasetPtr parse_cidr_ranges(std::string_view content, const std::string& id, const std::string& source,
                             Timestamp now) {
  json doc;
  try {
    doc = json::parse(content);
  } catch (const json::parse_error& e) {
    throw FormatError("CIDR ranges file is not valid JSON: " + std::string(e.what()));
  }
  if (!doc.is_array()) throw FormatError("CIDR ranges file must be a JSON array");

  auto ds = std::make_shared<Dataset>();
  ds->manifest = DatasetManifest{id, DatasetKind::cidr_ranges, now, source, 0, {}, 0};
  CidrSet set;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& item = doc[i];
    std::optional<IpPrefix> prefix;
    if (item.is_object() && item.contains("prefix") && item["prefix"].is_string()) {
      prefix = IpPrefix::parse(trim(item["prefix"].get<std::string>()));
    }
    if (!prefix) {
      ds->manifest.rejected.push_back(i);
      continue;
    }
    std::string label = item.contains("label") && item["label"].is_string() ? item["label"].get<std::string>() : "";
    DatasetBuilder::add_cidr(set, CidrEntry{*prefix, std::move(label)}, ds->manifest.duplicates);
  }
  if (too_many_rejected(ds->manifest.rejected.size(), doc.size())) {
    throw FormatError("CIDR ranges file rejected " + std::to_string(ds->manifest.rejected.size()) + " of " +
                      std::to_string(doc.size()) + " entries");
  }
  ds->manifest.entry_count = set.size();
  ds->data = std::move(set);
  return ds;
}

std::string fetch_source(const std::string& source_uri, NetMeter* meter) {
  const bool http = source_uri.rfind("http://", 0) == 0 || source_uri.rfind("https://", 0) == 0;
  if (!http) {
    const std::string path = source_uri.rfind("file://", 0) == 0 ? source_uri.substr(7) : source_uri;
    return read_file(path);
  }

  meter_or_default(meter).begin(Channel::http);
  const auto scheme_end = source_uri.find("://") + 3;
  const auto path_start = source_uri.find('/', scheme_end);
  const std::string base = source_uri.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : source_uri.substr(path_start);

  httplib::Client client(base);
  client.set_connection_timeout(std::chrono::seconds(10));
  client.set_read_timeout(std::chrono::seconds(30));
  client.set_follow_location(true);
  auto res = client.Get(path);
  if (!res) throw FetchError("fetching " + source_uri + " failed: " + httplib::to_string(res.error()));
  if (res->status != 200) throw FetchError("fetching " + source_uri + " returned HTTP " + std::to_string(res->status));
  return res->body;
}

void Registry::declare(const std::string& id, DatasetKind kind, const std::string& source_uri) {
  std::unique_lock lock(mu_);
  auto& slot = slots_[id];
  slot.kind = kind;
  if (!source_uri.empty()) slot.source_uri = source_uri;
}

void Registry::install(DatasetPtr ds) {
  std::unique_lock lock(mu_);
  auto& slot = slots_[ds->manifest.id];
  slot.kind = ds->manifest.kind;
  slot.source_uri = ds->manifest.source_uri;
  slot.live = std::move(ds);
}

DatasetManifest Registry::load_geo_csv(const std::string& path, const std::string& id) {
  auto ds = parse_geo_csv(read_file(path), id, path, clock_->now());
  install(ds);
  return ds->manifest;
}

DatasetManifest Registry::load_ip_list(const std::string& path, const std::string& id) {
  auto ds = parse_ip_list(read_file(path), id, path, clock_->now());
  install(ds);
  return ds->manifest;
}

DatasetManifest Registry::load_cidr_ranges(const std::string& path, const std::string& id) {
  auto ds = parse_cidr_ranges(read_file(path), id, path, clock_->now());
  install(ds);
  return ds->manifest;
}

DatasetPtr Registry::get(const std::string& id) const {
  std::shared_lock lock(mu_);
  auto it = slots_.find(id);
  if (it == slots_.end()) throw UnknownDataset("unknown dataset '" + id + "'");
  return it->second.live;
}

DatasetPtr Registry::require(const std::string& id) const {
  auto ds = get(id);
  if (!ds) throw DatasetNotLoaded("dataset '" + id + "' is not loaded");
  return ds;
}

bool Registry::is_loaded(const std::string& id) const {
  std::shared_lock lock(mu_);
  auto it = slots_.find(id);
  return it != slots_.end() && it->second.live;
}

bool Registry::is_known(const std::string& id) const {
  std::shared_lock lock(mu_);
  return slots_.count(id) > 0;
}

bool Registry::is_stale(const std::string& id, std::chrono::seconds max_age) const {
  auto ds = get(id);
  return ds && clock_->now() - ds->manifest.loaded_at > max_age;
}

std::optional<GeoRecord> Registry::lookup_geo(const Target& ip, const std::string& id) const {
  auto addr = ip.address();
  if (!addr) throw UnsupportedTarget("geolocation needs an IP address");
  if (!is_known(id)) throw DatasetNotLoaded("dataset '" + id + "' is not loaded");
  auto ds = require(id);
  const auto* table = std::get_if<GeoTable>(&ds->data);
  if (!table) throw InvalidArgument("dataset '" + id + "' is not a geolocation table");
  return table->lookup(*addr);
}

Membership Registry::contains(const std::string& id, const Target& ip) const {
  auto addr = ip.address();
  if (!addr) throw UnsupportedTarget("membership queries need an IP address");
  auto ds = require(id);
  Membership out;
  if (const auto* set = std::get_if<IpSet>(&ds->data)) {
    if (set->contains(*addr)) {
      out.member = true;
      out.matched = addr->to_string();
    }
  } else if (const auto* ranges = std::get_if<CidrSet>(&ds->data)) {
    if (auto m = ranges->match(*addr)) {
      out.member = true;
      out.matched = m->prefix.to_string();
      out.label = m->label;
    }
  } else if (const auto* geo = std::get_if<GeoTable>(&ds->data)) {
    if (auto m = geo->lookup(*addr)) {
      out.member = true;
      out.matched = m->cidr.to_string();
      out.label = m->country;
    }
  }
  return out;
}

RefreshReport Registry::refresh_dataset(const std::string& id, const std::string& source_uri, NetMeter* meter) {
  DatasetKind kind;
  std::string source;
  std::size_t old_count = 0;
  {
    std::shared_lock lock(mu_);
    auto it = slots_.find(id);
    if (it == slots_.end()) throw UnknownDataset("unknown dataset '" + id + "'");
    kind = it->second.kind;
    source = source_uri.empty() ? it->second.source_uri : source_uri;
    if (it->second.live) old_count = it->second.live->manifest.entry_count;
  }
  if (source.empty()) throw FetchError("dataset '" + id + "' has no source to refresh from");

  std::string content;
  try {
    content = fetch_source(source, meter);
  } catch (const IoError& e) {
    throw FetchError(e.what());
  }

  DatasetPtr fresh;
  const auto now = clock_->now();
  switch (kind) {
    case DatasetKind::geo: fresh = parse_geo_csv(content, id, source, now); break;
    case DatasetKind::exact_ips: {
      fresh = parse_ip_list(content, id, source, now);
      // A refresh that yields nothing but garbage is almost certainly an
      // error page, not an empty list.
      if (fresh->manifest.entry_count == 0 && !fresh->manifest.rejected.empty()) {
        throw FormatError("IP list from " + source + " has no valid entries");
      }
      break;
    }
    case DatasetKind::cidr_ranges: fresh = parse_cidr_ranges(content, id, source, now); break;
  }
  install(fresh);
  return RefreshReport{id, old_count, fresh->manifest.entry_count, now};
}

std::vector<DatasetManifest> Registry::manifests() const {
  std::shared_lock lock(mu_);
  std::vector<DatasetManifest> out;
  for (const auto& [id, slot] : slots_) {
    if (slot.live) out.push_back(slot.live->manifest);
  }
  return out;
}

}  // namespace ipscope::datasets
