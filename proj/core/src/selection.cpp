#include "stylemark/selection.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "stylemark/error.hpp"
#include "stylemark/random.hpp"

namespace stylemark {

using nlohmann::json;

std::vector<RankedImage> rank_values(std::span<const std::pair<std::string, double>> nmes) {
  std::vector<RankedImage> ranked;
  ranked.reserve(nmes.size());
  for (const auto& [id, v] : nmes) ranked.push_back({id, v, 0});
  std::sort(ranked.begin(), ranked.end(), [](const RankedImage& a, const RankedImage& b) {
    if (a.nme != b.nme) return a.nme < b.nme;
    return a.id < b.id;
  });
  for (std::size_t i = 0; i < ranked.size(); ++i) ranked[i].rank = i + 1;
  return ranked;
}

std::vector<RankedImage> rank_by_nme(const PredictionSet& predictions, const DatasetManifest& gt,
                                     const Normalizer& norm) {
  std::vector<std::pair<std::string, double>> values;
  values.reserve(gt.records.size());
  for (const auto& rec : gt.records) {
    const auto it = predictions.entries.find(rec.id);
    if (it == predictions.entries.end()) {
      throw SelectionError("missing prediction for record '" + rec.id + "'");
    }
    values.emplace_back(rec.id, nme(it->second, rec.landmarks, norm));
  }
  return rank_values(values);
}

StylePool sst_select(std::span<const RankedImage> ranked, std::size_t n) {
  if (n == 0) throw SelectionError("style pool size must be at least 1");
  if (ranked.empty()) throw SelectionError("cannot select from an empty ranking");
  StylePool pool;
  pool.n = n;
  const std::size_t take = std::min(n, ranked.size());
  pool.members.reserve(take);
  for (std::size_t i = 0; i < take; ++i) pool.members.push_back(ranked[i].id);
  return pool;
}

StylePool full_pool(const DatasetManifest& train) {
  StylePool pool;
  pool.n = train.records.size();
  for (const auto& r : train.records) pool.members.push_back(r.id);
  return pool;
}

Pairing assign_styles(const DatasetManifest& train, const StylePool& pool, std::uint64_t seed,
                      bool forbid_self) {
  if (train.records.empty()) throw SelectionError("assign_styles: empty content set");
  if (pool.members.empty()) throw SelectionError("assign_styles: empty style pool");
  Pairing pairing;
  pairing.seed = seed;
  pairing.pool = "sst:" + std::to_string(pool.n);
  Rng rng(derive_seed(seed, "assign_styles"));
  const std::size_t m = pool.members.size();
  for (const auto& rec : train.records) {
    std::size_t pick = rng.uniform_index(m);
    if (forbid_self && pool.members[pick] == rec.id) {
      if (m == 1) {
        spdlog::info("assign_styles: '{}' is the only style source; self-pairing kept", rec.id);
      } else {
        // Uniform over the other m-1 members.
        std::size_t alt = rng.uniform_index(m - 1);
        if (alt >= pick) ++alt;
        pick = alt;
      }
    }
    pairing.pairs.emplace_back(rec.id, pool.members[pick]);
  }
  return pairing;
}

Pairing make_test_st(const DatasetManifest& test, const DatasetManifest& train,
                     std::uint64_t seed) {
  if (test.records.empty() || train.records.empty()) {
    throw SelectionError("make_test_st: test and train sets must be nonempty");
  }
  Pairing pairing;
  pairing.seed = seed;
  pairing.pool = "train:" + std::to_string(train.records.size());
  Rng rng(derive_seed(seed, "make_test_st"));
  for (const auto& rec : test.records) {
    const auto pick = rng.uniform_index(train.records.size());
    pairing.pairs.emplace_back(rec.id, train.records[pick].id);
  }
  return pairing;
}

namespace {

std::vector<json> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<json> lines;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      lines.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw ParseError(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return lines;
}

void write_lines(const std::vector<json>& lines, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  for (const auto& j : lines) out << j.dump() << '\n';
  if (!out.flush()) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace

void save_pairing(const Pairing& pairing, const std::filesystem::path& path) {
  std::vector<json> lines;
  lines.push_back({{"seed", pairing.seed}, {"pool", pairing.pool}});
  for (const auto& [c, s] : pairing.pairs) lines.push_back({{"content_id", c}, {"style_id", s}});
  write_lines(lines, path);
}

Pairing load_pairing(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  if (lines.empty()) throw ParseError("pairing file '" + path.string() + "' is empty");
  Pairing p;
  try {
    p.seed = lines[0].at("seed").get<std::uint64_t>();
    p.pool = lines[0].at("pool").get<std::string>();
    for (std::size_t i = 1; i < lines.size(); ++i) {
      p.pairs.emplace_back(lines[i].at("content_id").get<std::string>(),
                           lines[i].at("style_id").get<std::string>());
    }
  } catch (const json::exception& e) {
    throw ParseError("pairing file '" + path.string() + "': " + e.what());
  }
  return p;
}

void save_ranking(std::span<const RankedImage> ranked, const std::filesystem::path& path) {
  std::vector<json> lines;
  for (const auto& r : ranked) lines.push_back({{"id", r.id}, {"nme", r.nme}, {"rank", r.rank}});
  write_lines(lines, path);
}

std::vector<RankedImage> load_ranking(const std::filesystem::path& path) {
  std::vector<RankedImage> out;
  try {
    for (const auto& j : read_lines(path)) {
      out.push_back({j.at("id").get<std::string>(), j.at("nme").get<double>(),
                     j.at("rank").get<std::size_t>()});
    }
  } catch (const json::exception& e) {
    throw ParseError("ranking file '" + path.string() + "': " + e.what());
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i].rank != i + 1 || (i > 0 && out[i].nme < out[i - 1].nme)) {
      throw ParseError("ranking file '" + path.string() + "' is not in rank order");
    }
  }
  return out;
}

}  // namespace stylemark
