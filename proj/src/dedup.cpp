#include "fedci/dedup.hpp"

#include <algorithm>
#include <map>
#include <random>
#include <set>

#include <openssl/evp.h>

#include "fedci/error.hpp"

namespace fedci::dedup {

std::string canonical_key(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out.push_back('\x1f');
    out += fields[i];
  }
  return out;
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorKind::IoError, "SHA-256 computation failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 0xf]);
  }
  return out;
}

DigestList hash_keys(int source_id, const std::vector<std::string>& keys, const std::string& salt) {
  DigestList out{source_id, {}};
  out.digests.reserve(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (keys[i].empty()) {
      throw Error(ErrorKind::EmptyKey, "source " + std::to_string(source_id) + " row " + std::to_string(i));
    }
    out.digests.push_back(sha256_hex(salt + keys[i]));
  }
  return out;
}

std::vector<ExclusionList> match_and_assign(const std::vector<DigestList>& lists, int k_keep, std::uint64_t seed) {
  if (k_keep < 1) throw Error(ErrorKind::InvalidConfig, "k_keep must be >= 1");
  std::vector<ExclusionList> out;
  // digest -> (list position, first row) for every list holding it, in list order.
  std::map<std::string, std::vector<std::pair<std::size_t, Eigen::Index>>> where;
  for (std::size_t l = 0; l < lists.size(); ++l) {
    out.push_back({lists[l].source_id, {}});
    std::set<std::string> seen;
    for (std::size_t i = 0; i < lists[l].digests.size(); ++i) {
      const auto& d = lists[l].digests[i];
      const auto row = static_cast<Eigen::Index>(i);
      if (!seen.insert(d).second) {
        out[l].rows.push_back(row);
        continue;
      }
      where[d].emplace_back(l, row);
    }
  }
  std::mt19937_64 rng(seed);
  for (auto& [digest, holders] : where) {
    if (holders.size() <= static_cast<std::size_t>(k_keep)) continue;
    std::shuffle(holders.begin(), holders.end(), rng);
    for (std::size_t h = static_cast<std::size_t>(k_keep); h < holders.size(); ++h) {
      out[holders[h].first].rows.push_back(holders[h].second);
    }
  }
  for (auto& ex : out) std::sort(ex.rows.begin(), ex.rows.end());
  return out;
}

SourceData apply_exclusions(const SourceData& src, const ExclusionList& ex) {
  std::vector<bool> drop(static_cast<std::size_t>(src.size()), false);
  for (Eigen::Index r : ex.rows) {
    if (r < 0 || r >= src.size()) {
      throw Error(ErrorKind::IndexOutOfRange, "exclusion row " + std::to_string(r) + " outside source " +
                                                  std::to_string(src.source_id) + " of size " +
                                                  std::to_string(src.size()));
    }
    drop[static_cast<std::size_t>(r)] = true;
  }
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < src.size(); ++i) {
    if (!drop[static_cast<std::size_t>(i)]) keep.push_back(i);
  }
  return src.subset(keep);
}

}  // namespace fedci::dedup
