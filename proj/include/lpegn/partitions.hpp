#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lpegn/errors.hpp"

namespace lpegn {

// A set partition of {0..k-1} in canonical form: block ids are assigned in
// first-occurrence order, so `assignment` is a restricted growth string
// (assignment[0] == 0 and assignment[i] <= 1 + max(assignment[0..i-1])).
struct SetPartition {
  std::vector<std::uint8_t> assignment;

  int element_count() const { return static_cast<int>(assignment.size()); }

  int block_count() const {
    int b = 0;
    for (auto a : assignment) b = std::max(b, static_cast<int>(a) + 1);
    return b;
  }

  bool operator==(const SetPartition& other) const = default;

  // e.g. {{0,2},{1}} for k=3, assignment 0,1,0
  std::string to_string() const {
    const int blocks = block_count();
    std::string out = "{";
    for (int b = 0; b < blocks; ++b) {
      if (b > 0) out += ",";
      out += "{";
      bool first = true;
      for (int i = 0; i < element_count(); ++i) {
        if (assignment[static_cast<std::size_t>(i)] == b) {
          if (!first) out += ",";
          out += std::to_string(i);
          first = false;
        }
      }
      out += "}";
    }
    out += "}";
    return out;
  }
};

// Canonical equality pattern of an index tuple: elements get the block id of
// the first equal value seen. ("0,1,0" for the tuple (7,4,7).)
template <typename It>
SetPartition pattern_of(It begin, It end) {
  SetPartition p;
  std::vector<typename std::iterator_traits<It>::value_type> seen;
  for (It it = begin; it != end; ++it) {
    std::uint8_t block = 0;
    bool found = false;
    for (std::size_t s = 0; s < seen.size(); ++s) {
      if (seen[s] == *it) {
        block = static_cast<std::uint8_t>(s);
        found = true;
        break;
      }
    }
    if (!found) {
      block = static_cast<std::uint8_t>(seen.size());
      seen.push_back(*it);
    }
    p.assignment.push_back(block);
  }
  return p;
}

// All set partitions of {0..k-1} in restricted-growth-string lexicographic
// order. This order is load-bearing: weight indices are keyed by position in
// this list, and checkpoints rely on it never changing.
inline std::vector<SetPartition> enumerate_partitions(int k) {
  if (k < 0) throw InputError("enumerate_partitions: negative order");
  std::vector<SetPartition> out;
  if (k == 0) {
    out.push_back(SetPartition{});
    return out;
  }
  std::vector<std::uint8_t> rgs(static_cast<std::size_t>(k), 0);
  while (true) {
    out.push_back(SetPartition{rgs});
    // next restricted growth string in lexicographic order
    int i = k - 1;
    for (; i > 0; --i) {
      std::uint8_t maxprefix = 0;
      for (int j = 0; j < i; ++j)
        maxprefix = std::max(maxprefix, rgs[static_cast<std::size_t>(j)]);
      if (rgs[static_cast<std::size_t>(i)] <= maxprefix) break;
    }
    if (i == 0) break;
    ++rgs[static_cast<std::size_t>(i)];
    for (int j = i + 1; j < k; ++j) rgs[static_cast<std::size_t>(j)] = 0;
  }
  return out;
}

// Bell(k): number of set partitions of a k-element set.
inline std::uint64_t bell_number(int k) {
  if (k < 0) throw InputError("bell_number: negative order");
  // Bell triangle
  std::vector<std::uint64_t> row{1};
  for (int i = 1; i <= k; ++i) {
    std::vector<std::uint64_t> next;
    next.reserve(row.size() + 1);
    next.push_back(row.back());
    for (std::size_t j = 0; j < row.size(); ++j)
      next.push_back(next[j] + row[j]);
    row = std::move(next);
  }
  return row.front();
}

// Partitions of k elements with at most m blocks; the dimension of the
// permutation-equivariant map space once the index alphabet has only m
// symbols.
inline std::uint64_t partition_count_max_blocks(int k, int m) {
  std::uint64_t n = 0;
  for (const auto& p : enumerate_partitions(k))
    if (p.block_count() <= m) ++n;
  return n;
}

}  // namespace lpegn
