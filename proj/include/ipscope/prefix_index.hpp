#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "ipscope/target.hpp"

namespace ipscope::datasets {

/// Binary trie keyed by prefix bits, one trie per address family. Each
/// prefix maps to a caller-defined record id.
class PrefixIndex {
 public:
  struct Match {
    IpPrefix prefix;
    std::uint32_t id = 0;
  };

  /// Inserts or replaces. Returns true when the prefix was already present.
  bool insert(const IpPrefix& prefix, std::uint32_t id);

  /// Entry with the longest prefix containing `ip`.
  std::optional<Match> longest_match(const IpAddress& ip) const;

  /// Number of distinct prefixes.
  std::size_t size() const noexcept { return size_; }

 private:
  struct Node {
    std::int32_t child[2] = {-1, -1};
    std::int64_t value = -1;
  };

  std::vector<Node>& trie(IpFamily f) { return f == IpFamily::v4 ? v4_ : v6_; }
  const std::vector<Node>& trie(IpFamily f) const { return f == IpFamily::v4 ? v4_ : v6_; }

  std::vector<Node> v4_{Node{}};
  std::vector<Node> v6_{Node{}};
  std::size_t size_ = 0;
};

}  // namespace ipscope::datasets
