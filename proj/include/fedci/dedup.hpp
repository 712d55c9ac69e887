#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedci/messages.hpp"
#include "fedci/model.hpp"

namespace fedci::dedup {

/// Key fields joined with the 0x1F unit separator, bytes kept as given.
std::string canonical_key(const std::vector<std::string>& fields);

/// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(const std::string& bytes);

/// Order-preserving digests of the primary keys. Throws EmptyKey.
DigestList hash_keys(int source_id, const std::vector<std::string>& keys, const std::string& salt = "");

/// Server step: a digest present in more than k_keep sources is kept in k_keep of
/// them, chosen uniformly with the seeded generator, and excluded elsewhere.
/// Repeats inside one source keep their first occurrence.
std::vector<ExclusionList> match_and_assign(const std::vector<DigestList>& lists, int k_keep, std::uint64_t seed);

/// Drop the listed rows, keeping the order of the rest. Throws IndexOutOfRange.
SourceData apply_exclusions(const SourceData& src, const ExclusionList& ex);

}  // namespace fedci::dedup
