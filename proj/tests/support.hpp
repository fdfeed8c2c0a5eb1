#pragma once

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include <unistd.h>

#include "stylemark/dataset.hpp"
#include "stylemark/random.hpp"
#include "stylemark/synthetic.hpp"

namespace testing_support {

namespace fs = std::filesystem;

// Fresh directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name = "t") {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("stylemark-" + name + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  fs::path path_;
};

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline stylemark::LandmarkSet make_set(std::initializer_list<stylemark::Point2> pts) {
  std::vector<stylemark::Point2> v(pts);
  return stylemark::LandmarkSet::from_points(v);
}

// n random points in [lo, hi)^2.
inline stylemark::LandmarkSet random_set(stylemark::Rng& rng, int n, double lo, double hi) {
  std::vector<stylemark::Point2> v;
  for (int i = 0; i < n; ++i) v.push_back({rng.uniform(lo, hi), rng.uniform(lo, hi)});
  return stylemark::LandmarkSet::from_points(v);
}

inline stylemark::ImageRecord make_record(const std::string& id, const stylemark::LandmarkSet& lm,
                                          int w = 100, int h = 100) {
  stylemark::ImageRecord r;
  r.id = id;
  r.image_path = "images/" + id + ".png";
  r.landmarks = lm;
  r.width = w;
  r.height = h;
  return r;
}

// Every file under `dir`, relative path -> bytes.
inline std::vector<std::pair<std::string, std::string>> snapshot(const fs::path& dir) {
  std::vector<std::pair<std::string, std::string>> out;
  if (!fs::exists(dir)) return out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out.emplace_back(fs::relative(e.path(), dir).generic_string(), read_file(e.path()));
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct ReferenceRow {
  std::string configuration;
  double nme = 0.0;
  std::string extra;  // third column, verbatim
};

// Reads a fixture CSV of configuration,nme,<extra>; configuration names hold no commas.
inline std::vector<ReferenceRow> load_reference(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  std::vector<ReferenceRow> rows;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto a = line.find(',');
    const auto b = line.find(',', a + 1);
    rows.push_back({line.substr(0, a), std::stod(line.substr(a + 1, b - a - 1)), line.substr(b + 1)});
  }
  return rows;
}

}  // namespace testing_support
