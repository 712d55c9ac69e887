#include <doctest.h>

#include <array>
#include <cstdint>
#include <map>
#include <random>
#include <set>

#include "fedci/dedup.hpp"
#include "fedci/error.hpp"
#include "reference_sha256.hpp"
#include "test_util.hpp"

using namespace fedci;
using fedci::testing::reference_sha256;

TEST_CASE("SHA-256 digests") {
  CHECK(reference_sha256("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(dedup::sha256_hex("abc") == reference_sha256("abc"));
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> len(0, 200), byte(0, 255);
  for (int t = 0; t < 100; ++t) {
    std::string s(static_cast<std::size_t>(len(rng)), '\0');
    for (auto& c : s) c = static_cast<char>(byte(rng));
    CHECK(dedup::sha256_hex(s) == reference_sha256(s));
  }
  const auto d = dedup::hash_keys(2, {"abc", "x", "abc"});
  CHECK(d.source_id == 2);
  CHECK(d.digests[0] == d.digests[2]);
  CHECK(d.digests[1].size() == 64);
  CHECK(dedup::hash_keys(0, {"abc"}, "salt").digests[0] == reference_sha256("saltabc"));
  CHECK_THROWS_AS(dedup::hash_keys(0, {"a", ""}), Error);
  try {
    dedup::hash_keys(0, {""});
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::EmptyKey);
  }
  CHECK(dedup::canonical_key({"Jane", "1970-01-01"}) == std::string("Jane\x1f" "1970-01-01"));
}

TEST_CASE("match_and_assign on simple patterns") {
  const auto unique = dedup::match_and_assign({dedup::hash_keys(0, {"a", "b"}), dedup::hash_keys(1, {"c"})}, 1, 0);
  CHECK(unique[0].rows.empty());
  CHECK(unique[1].rows.empty());

  std::vector<DigestList> lists{dedup::hash_keys(0, {"p", "dup"}), dedup::hash_keys(1, {"dup"}),
                                dedup::hash_keys(2, {"q", "r", "dup"})};
  const auto ex = dedup::match_and_assign(lists, 1, 5);
  const std::size_t excluded = ex[0].rows.size() + ex[1].rows.size() + ex[2].rows.size();
  CHECK(excluded == 2);
  CHECK(dedup::match_and_assign(lists, 1, 5)[2].rows == ex[2].rows);
  CHECK(dedup::match_and_assign(lists, 3, 5)[0].rows.empty());

  const auto within = dedup::match_and_assign({dedup::hash_keys(0, {"a", "b", "a", "a"})}, 1, 0);
  CHECK(within[0].rows == std::vector<Eigen::Index>{2, 3});
  CHECK_THROWS_AS(dedup::match_and_assign(lists, 0, 0), Error);
}

TEST_CASE("every digest survives in at most k_keep sources") {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 100; ++t) {
    std::uniform_int_distribution<int> msrc(1, 6), nrow(0, 25), pool(0, 30), kk(1, 3);
    const int m = msrc(rng);
    const int k_keep = kk(rng);
    std::vector<DigestList> lists;
    for (int s = 0; s < m; ++s) {
      std::vector<std::string> keys;
      const int n = nrow(rng);
      for (int i = 0; i < n; ++i) keys.push_back("id" + std::to_string(pool(rng)));
      lists.push_back(dedup::hash_keys(s, keys));
    }
    const auto ex = dedup::match_and_assign(lists, k_keep, static_cast<std::uint64_t>(t));
    // Recount: which sources still hold each digest, and how often.
    std::map<std::string, std::set<int>> holders_before, holders_after;
    std::map<std::pair<int, std::string>, int> copies_after;
    for (int s = 0; s < m; ++s) {
      const auto& l = lists[static_cast<std::size_t>(s)];
      std::set<Eigen::Index> drop(ex[static_cast<std::size_t>(s)].rows.begin(),
                                  ex[static_cast<std::size_t>(s)].rows.end());
      CHECK(drop.size() == ex[static_cast<std::size_t>(s)].rows.size());
      for (std::size_t i = 0; i < l.digests.size(); ++i) {
        holders_before[l.digests[i]].insert(s);
        if (drop.count(static_cast<Eigen::Index>(i))) continue;
        holders_after[l.digests[i]].insert(s);
        copies_after[{s, l.digests[i]}]++;
      }
    }
    for (const auto& [digest, before] : holders_before) {
      const auto kept = holders_after[digest].size();
      CHECK(kept <= static_cast<std::size_t>(k_keep));
      CHECK(kept == std::min(before.size(), static_cast<std::size_t>(k_keep)));
    }
    for (const auto& [key, c] : copies_after) CHECK(c == 1);
  }
}

TEST_CASE("apply_exclusions") {
  SourceData src;
  src.x = Matrix(3, 1);
  src.x << 0.0, 1.0, 2.0;
  src.w = Vector::Zero(3);
  src.y_obs = src.x.col(0);
  src.keys = {"a", "b", "c"};
  CHECK(dedup::apply_exclusions(src, {0, {}}).y_obs == src.y_obs);
  const SourceData rest = dedup::apply_exclusions(src, {0, {0}});
  CHECK(rest.size() == 2);
  CHECK(rest.y_obs[0] == 1.0);
  CHECK(rest.y_obs[1] == 2.0);
  CHECK(rest.keys == std::vector<std::string>{"b", "c"});
  CHECK(dedup::apply_exclusions(src, {0, {0, 1, 2}}).size() == 0);
  try {
    dedup::apply_exclusions(src, {0, {3}});
    FAIL("expected IndexOutOfRange");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::IndexOutOfRange);
  }
}

TEST_CASE("dedup wire messages") {
  const DigestList d = dedup::hash_keys(4, {"k1", "k2"});
  const auto back = std::get<DigestList>(decode(encode(d)));
  CHECK(back.source_id == 4);
  CHECK(back.digests == d.digests);
  const ExclusionList e{4, {1, 7}};
  CHECK(std::get<ExclusionList>(decode(encode(e))).rows == e.rows);
  CHECK(encode(e) == R"({"rows":[1,7],"source_id":4,"type":"exclude"})");
}
