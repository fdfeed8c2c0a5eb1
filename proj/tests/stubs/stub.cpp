// Stand-in style and detector backends for protocol tests.
//
//   stub copy <job.manifest>               copy content to output, write loss.csv
//   stub fail <job.manifest>               exit 3 with a diagnostic
//   stub missing <job.manifest>            exit 0 without output
//   stub fail-if <text> <job.manifest>     fail when the job id contains <text>, else copy
//   stub bad-loss <job.manifest>           copy, but loss.csv has repeated epochs
//   stub sleep <seconds> <job.manifest>    sleep, then copy
//   stub detect-echo <manifest> <out>      predictions equal to ground truth
//   stub detect-drop <manifest> <out>      as detect-echo without the last record
//
// Loss curve params (job "params"): epochs (4000), start (1.0), mid (0.28 at 1000), final (0.08).

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return json::parse(in);
}

double param(const json& job, const char* key, double fallback) {
  if (!job.contains("params") || !job["params"].contains(key)) return fallback;
  return std::stod(job["params"][key].get<std::string>());
}

void write_loss(const json& job, const fs::path& path, bool broken) {
  const int epochs = static_cast<int>(param(job, "epochs", 4000));
  const double start = param(job, "start", 1.0);
  const double mid = param(job, "mid", 0.28);
  const double final_loss = param(job, "final", 0.08);
  std::ofstream out(path);
  out << "epoch,total,appearance,structure,identity\n";
  for (int e = 1; e <= epochs; ++e) {
    double t;
    if (e == epochs) {
      t = final_loss;
    } else if (epochs > 1000 && e <= 1000) {
      t = start + (mid - start) * (e - 1) / 999.0;
    } else if (epochs > 1000) {
      t = mid + (final_loss - mid) * (e - 1000) / static_cast<double>(epochs - 1000);
    } else {
      t = start + (final_loss - start) * (e - 1) / std::max(1, epochs - 1);
    }
    char line[160];
    std::snprintf(line, sizeof line, "%d,%.6f,%.6f,%.6f,%.6f\n", broken && e > 1 ? e - 1 : e, t,
                  0.5 * t, 0.3 * t, 0.2 * t);
    out << line;
  }
}

int copy(const fs::path& manifest, bool broken_loss) {
  const json job = read_json(manifest);
  const fs::path content = job.at("content_path").get<std::string>();
  const fs::path style = job.at("style_path").get<std::string>();
  if (!fs::exists(style)) {
    std::cerr << "style image not found: " << style.string() << "\n";
    return 4;
  }
  fs::copy_file(content, job.at("output_path").get<std::string>(), fs::copy_options::overwrite_existing);
  write_loss(job, manifest.parent_path() / "loss.csv", broken_loss);
  return 0;
}

int detect(const fs::path& manifest, const fs::path& out, bool drop_last) {
  std::ifstream in(manifest);
  std::string line;
  std::getline(in, line);
  const json header = json::parse(line);
  std::vector<json> records;
  while (std::getline(in, line)) {
    if (!line.empty()) records.push_back(json::parse(line));
  }
  if (drop_last && !records.empty()) records.pop_back();
  std::ofstream o(out);
  o << json{{"tag", header.at("tag")},
            {"landmark_count", header.at("landmark_count")},
            {"ground_truth", manifest.string()}}
           .dump()
    << "\n";
  for (const auto& r : records) o << json{{"id", r.at("id")}, {"landmarks", r.at("landmarks")}}.dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 3) {
    std::cerr << "usage: stub <mode> ...\n";
    return 64;
  }
  const std::string mode = argv[1];
  try {
    if (mode == "copy") return copy(argv[2], false);
    if (mode == "bad-loss") return copy(argv[2], true);
    if (mode == "missing") return 0;
    if (mode == "fail") {
      std::cerr << "stub backend failure for " << argv[2] << "\n";
      return 3;
    }
    if (mode == "fail-if" && argc >= 4) {
      const json job = read_json(argv[3]);
      if (job.at("job_id").get<std::string>().find(argv[2]) != std::string::npos) {
        std::cerr << "refusing job " << job.at("job_id").get<std::string>() << "\n";
        return 5;
      }
      return copy(argv[3], false);
    }
    if (mode == "sleep" && argc >= 4) {
      std::this_thread::sleep_for(std::chrono::duration<double>(std::stod(argv[2])));
      return copy(argv[3], false);
    }
    if (mode == "detect-echo" && argc >= 4) return detect(argv[2], argv[3], false);
    if (mode == "detect-drop" && argc >= 4) return detect(argv[2], argv[3], true);
  } catch (const std::exception& e) {
    std::cerr << "stub: " << e.what() << "\n";
    return 2;
  }
  std::cerr << "stub: unknown mode '" << mode << "'\n";
  return 64;
}
