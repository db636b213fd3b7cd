#include "pegp/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "pegp/rng.hpp"

namespace pegp {

std::string_view to_string(Scenario s) {
  switch (s) {
    case Scenario::CIL: return "cil";
    case Scenario::TIL: return "til";
    case Scenario::DIL: return "dil";
    case Scenario::OIL: return "oil";
  }
  return "unknown";
}

Scenario parse_scenario(std::string_view name) {
  for (auto s : {Scenario::CIL, Scenario::TIL, Scenario::DIL, Scenario::OIL})
    if (to_string(s) == name) return s;
  throw std::invalid_argument("unknown scenario '" + std::string(name) + "' (expected cil, til, dil or oil)");
}

std::size_t ScenarioSpec::total_classes() const {
  return scenario == Scenario::DIL ? classes_per_task : tasks * classes_per_task;
}

void ScenarioSpec::validate() const {
  if (tasks < 1) throw std::invalid_argument("scenario.tasks must be >= 1");
  if (classes_per_task < 2) throw std::invalid_argument("scenario.classes_per_task must be >= 2");
  if (samples_per_class < 5) throw std::invalid_argument("scenario.samples_per_class must be >= 5");
  if (seq_len < 1 || token_width < 1) throw std::invalid_argument("scenario.seq_len and token_width must be >= 1");
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw std::invalid_argument("scenario.noise must be >= 0");
  if (!(separation > 0.0) || !std::isfinite(separation)) throw std::invalid_argument("scenario.separation must be > 0");
  if (!std::isfinite(shift)) throw std::invalid_argument("scenario.shift must be finite");
}

namespace {

std::vector<std::vector<double>> class_means(std::size_t count, std::size_t dim, double separation,
                                             std::uint64_t seed) {
  Rng rng(sub_seed(seed, "class_means"));
  std::vector<std::vector<double>> means(count, std::vector<double>(dim));
  for (auto& m : means) {
    double n = 0.0;
    do {
      for (double& v : m) v = rng.normal();
      n = norm(m);
    } while (n == 0.0);
    for (double& v : m) v *= separation / n;
  }
  return means;
}

// Draws one class's samples and appends them 80/20 to train/test.
void draw_class(const std::vector<double>& mean, int label, const ScenarioSpec& spec, std::uint64_t seed,
                RawTask& task) {
  Rng rng(seed);
  std::vector<RawSample> all(spec.samples_per_class);
  for (auto& s : all) {
    s.label = label;
    s.features = mean;
    for (double& v : s.features) v += spec.noise * rng.normal();
  }
  rng.shuffle(all.begin(), all.end());
  const std::size_t test = std::max<std::size_t>(1, spec.samples_per_class / 5);
  for (std::size_t i = 0; i < all.size(); ++i) (i < test ? task.test : task.train).push_back(std::move(all[i]));
}

}  // namespace

std::vector<RawTask> gen_split_classes(const ScenarioSpec& spec, std::uint64_t seed) {
  spec.validate();
  const std::size_t total = spec.tasks * spec.classes_per_task;
  const auto means = class_means(total, spec.raw_dim(), spec.separation, seed);
  std::vector<RawTask> out(spec.tasks);
  for (std::size_t t = 0; t < spec.tasks; ++t) {
    out[t].task_id = static_cast<int>(t);
    for (std::size_t c = 0; c < spec.classes_per_task; ++c) {
      const int label = static_cast<int>(t * spec.classes_per_task + c);
      out[t].classes.push_back(label);
      draw_class(means[static_cast<std::size_t>(label)], label, spec, sub_seed(seed, "class_samples", t, c), out[t]);
    }
  }
  return out;
}

std::vector<RawTask> gen_domain_shift(const ScenarioSpec& spec, std::uint64_t seed) {
  spec.validate();
  const std::size_t dim = spec.raw_dim();
  const auto means = class_means(spec.classes_per_task, dim, spec.separation, seed);
  Rng rng(sub_seed(seed, "domain_planes"));
  const Matrix q = svd(rng.normal_matrix(dim, dim, 1.0)).u;  // random orthonormal frame

  std::vector<RawTask> out(spec.tasks);
  for (std::size_t t = 0; t < spec.tasks; ++t) {
    RawTask& task = out[t];
    task.task_id = static_cast<int>(t);
    for (std::size_t c = 0; c < spec.classes_per_task; ++c) {
      task.classes.push_back(static_cast<int>(c));
      draw_class(means[c], static_cast<int>(c), spec, sub_seed(seed, "class_samples", t, c), task);
    }
    const double angle = spec.shift * static_cast<double>(t);
    if (angle == 0.0) continue;
    // R = Q G Q^T with G rotating consecutive coordinate pairs by `angle`.
    const double cs = std::cos(angle), sn = std::sin(angle);
    auto rotate = [&](std::vector<double>& v) {
      std::vector<double> z(dim, 0.0);
      for (std::size_t k = 0; k < dim; ++k)
        for (std::size_t i = 0; i < dim; ++i) z[k] += q(i, k) * v[i];
      for (std::size_t k = 0; k + 1 < dim; k += 2) {
        const double a = z[k], b = z[k + 1];
        z[k] = cs * a - sn * b;
        z[k + 1] = sn * a + cs * b;
      }
      for (std::size_t i = 0; i < dim; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < dim; ++k) s += q(i, k) * z[k];
        v[i] = s;
      }
    };
    for (auto& s : task.train) rotate(s.features);
    for (auto& s : task.test) rotate(s.features);
  }
  return out;
}

std::vector<RawTask> generate_stream(const ScenarioSpec& spec, std::uint64_t seed) {
  return spec.scenario == Scenario::DIL ? gen_domain_shift(spec, seed) : gen_split_classes(spec, seed);
}

Tokenizer Tokenizer::make(std::size_t seq_len, std::size_t token_width, std::size_t dim, std::uint64_t seed) {
  if (seq_len < 1 || token_width < 1 || dim < 1) throw std::invalid_argument("Tokenizer: zero size");
  Rng rng(seed);
  return {seq_len, token_width, rng.normal_matrix(token_width, dim, 1.0 / std::sqrt(static_cast<double>(token_width)))};
}

Matrix Tokenizer::tokenize(const std::vector<double>& raw) const {
  if (raw.size() != seq_len * token_width)
    throw std::invalid_argument("tokenize: expected " + std::to_string(seq_len * token_width) + " values, got " +
                                std::to_string(raw.size()));
  return matmul(Matrix(seq_len, token_width, raw), map);
}

TaskDataset tokenize_task(const RawTask& task, const Tokenizer& tokenizer) {
  TaskDataset out;
  out.task_id = task.task_id;
  out.classes = task.classes;
  for (const auto& s : task.train) out.train.push_back({tokenizer.tokenize(s.features), s.label});
  for (const auto& s : task.test) out.test.push_back({tokenizer.tokenize(s.features), s.label});
  return out;
}

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    cells.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return cells;
}

std::string where(const std::filesystem::path& path, std::size_t line, std::size_t column) {
  return path.string() + ":" + std::to_string(line) + ": column " + std::to_string(column);
}

}  // namespace

std::vector<RawSample> load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::vector<RawSample> out;
  std::string line;
  std::size_t line_no = 0;
  std::size_t width = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_commas(line);
    if (!header_seen) {
      if (cells.size() < 2 || cells[0] != "label")
        throw ParseError(path.string() + ":" + std::to_string(line_no) + ": header must be label,f0,f1,...");
      for (std::size_t c = 1; c < cells.size(); ++c)
        if (cells[c] != "f" + std::to_string(c - 1))
          throw ParseError(where(path, line_no, c + 1) + ": expected header f" + std::to_string(c - 1));
      width = cells.size() - 1;
      header_seen = true;
      continue;
    }
    if (cells.size() != width + 1)
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(width + 1) +
                       " cells, got " + std::to_string(cells.size()));
    RawSample s;
    {
      const auto cell = cells[0];
      const auto r = std::from_chars(cell.data(), cell.data() + cell.size(), s.label);
      if (r.ec != std::errc() || r.ptr != cell.data() + cell.size() || s.label < 0)
        throw ParseError(where(path, line_no, 1) + ": bad label '" + std::string(cell) + "'");
    }
    s.features.resize(width);
    for (std::size_t c = 0; c < width; ++c) {
      const auto cell = cells[c + 1];
      const auto r = std::from_chars(cell.data(), cell.data() + cell.size(), s.features[c]);
      if (r.ec != std::errc() || r.ptr != cell.data() + cell.size() || !std::isfinite(s.features[c]))
        throw ParseError(where(path, line_no, c + 2) + ": bad number '" + std::string(cell) + "'");
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<RawTask> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  if (!j.is_object() || !j.contains("tasks") || !j["tasks"].is_array())
    throw ParseError(path.string() + ": manifest needs a \"tasks\" array");
  const auto base = path.parent_path();
  std::vector<RawTask> out;
  for (std::size_t t = 0; t < j["tasks"].size(); ++t) {
    const auto& entry = j["tasks"][t];
    if (!entry.is_object() || !entry.contains("train") || !entry.contains("test") || !entry["train"].is_string() ||
        !entry["test"].is_string())
      throw ParseError(path.string() + ": tasks[" + std::to_string(t) + "] needs \"train\" and \"test\" paths");
    auto resolve = [&](const std::string& p) {
      const std::filesystem::path fp(p);
      return fp.is_absolute() ? fp : base / fp;
    };
    RawTask task;
    task.task_id = static_cast<int>(t);
    task.train = load_csv(resolve(entry["train"].get<std::string>()));
    task.test = load_csv(resolve(entry["test"].get<std::string>()));
    std::set<int> labels;
    for (const auto& s : task.train) labels.insert(s.label);
    for (const auto& s : task.test) labels.insert(s.label);
    task.classes.assign(labels.begin(), labels.end());
    out.push_back(std::move(task));
  }
  return out;
}

}  // namespace pegp
