#include "ipscope/prefix_index.hpp"

namespace ipscope::datasets {

bool PrefixIndex::insert(const IpPrefix& prefix, std::uint32_t id) {
  auto& nodes = trie(prefix.network.family());
  std::int32_t cur = 0;
  for (unsigned i = 0; i < prefix.length; ++i) {
    const int b = prefix.network.bit(i);
    if (nodes[cur].child[b] < 0) {
      nodes[cur].child[b] = static_cast<std::int32_t>(nodes.size());
      nodes.emplace_back();
    }
    cur = nodes[cur].child[b];
  }
  const bool existed = nodes[cur].value >= 0;
  nodes[cur].value = id;
  if (!existed) ++size_;
  return existed;
}

std::optional<PrefixIndex::Match> PrefixIndex::longest_match(const IpAddress& ip) const {
  const auto& nodes = trie(ip.family());
  std::optional<Match> best;
  std::int32_t cur = 0;
  unsigned depth = 0;
  while (true) {
    if (nodes[cur].value >= 0) {
      best = Match{IpPrefix{ip.masked(depth), depth}, static_cast<std::uint32_t>(nodes[cur].value)};
    }
    if (depth == ip.bit_width()) break;
    const auto next = nodes[cur].child[ip.bit(depth)];
    if (next < 0) break;
    cur = next;
    ++depth;
  }
  return best;
}

}  // namespace ipscope::datasets
