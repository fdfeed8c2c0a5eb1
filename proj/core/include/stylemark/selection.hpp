#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stylemark/dataset.hpp"
#include "stylemark/metrics.hpp"

namespace stylemark {

struct RankedImage {
  std::string id;
  double nme = 0.0;  // percent
  std::size_t rank = 0;  // 1 = lowest NME
  friend bool operator==(const RankedImage&, const RankedImage&) = default;
};

// Top-n style sources, in rank order.
struct StylePool {
  std::size_t n = 0;
  std::vector<std::string> members;
  friend bool operator==(const StylePool&, const StylePool&) = default;
};

struct Pairing {
  std::vector<std::pair<std::string, std::string>> pairs;  // (content id, style id)
  std::uint64_t seed = 0;
  std::string pool;  // e.g. "sst:10", "all:500", "train:500"
  friend bool operator==(const Pairing&, const Pairing&) = default;
};

// Ascending NME; ties broken by id. Throws SelectionError when a ground-truth
// record has no prediction.
std::vector<RankedImage> rank_by_nme(const PredictionSet& predictions, const DatasetManifest& gt,
                                     const Normalizer& norm = {});

// Same ordering from precomputed values.
std::vector<RankedImage> rank_values(std::span<const std::pair<std::string, double>> nmes);

// The first min(n, |ranked|) entries.
StylePool sst_select(std::span<const RankedImage> ranked, std::size_t n);

// Pool holding every record of `train`, in manifest order (the unsupervised regime).
StylePool full_pool(const DatasetManifest& train);

// Each content image draws one style uniformly, with replacement across
// content images. With `forbid_self`, a draw equal to the content id is
// replaced by a uniform draw over the remaining pool members; a singleton
// pool that equals the content id is kept and logged.
Pairing assign_styles(const DatasetManifest& train, const StylePool& pool, std::uint64_t seed,
                      bool forbid_self = true);

// Each test image is styled by a uniformly drawn training image.
Pairing make_test_st(const DatasetManifest& test, const DatasetManifest& train,
                     std::uint64_t seed);

// Line-delimited: header {"seed", "pool"} then {"content_id", "style_id"}.
void save_pairing(const Pairing& pairing, const std::filesystem::path& path);
Pairing load_pairing(const std::filesystem::path& path);

void save_ranking(std::span<const RankedImage> ranked, const std::filesystem::path& path);
std::vector<RankedImage> load_ranking(const std::filesystem::path& path);

}  // namespace stylemark
