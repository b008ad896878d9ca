#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "stockformer/autodiff/tensor.hpp"

namespace stockformer::ad {

/// Named trainable tensors in registration order. Names are stable path
/// strings such as "enc.3.attn.wq" and key the checkpoint format.
class ParamStore {
 public:
  Tensor& add(const std::string& path, Tensor tensor) {
    if (index_.contains(path)) throw InvalidArgument("duplicate parameter path: " + path);
    tensor.set_requires_grad(true);
    index_[path] = entries_.size();
    entries_.emplace_back(path, std::move(tensor));
    return entries_.back().second;
  }

  const Tensor& get(const std::string& path) const {
    auto it = index_.find(path);
    if (it == index_.end()) throw UnknownKey("unknown parameter path: " + path);
    return entries_[it->second].second;
  }
  Tensor& get(const std::string& path) {
    auto it = index_.find(path);
    if (it == index_.end()) throw UnknownKey("unknown parameter path: " + path);
    return entries_[it->second].second;
  }
  bool contains(const std::string& path) const { return index_.contains(path); }

  std::size_t size() const noexcept { return entries_.size(); }
  const std::vector<std::pair<std::string, Tensor>>& entries() const noexcept { return entries_; }
  std::vector<std::pair<std::string, Tensor>>& entries() noexcept { return entries_; }

  /// Handles to every parameter, for the optimizer.
  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    out.reserve(entries_.size());
    for (const auto& [_, t] : entries_) out.push_back(t);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += t.size();
    return n;
  }

  void zero_grad() {
    for (auto& [_, t] : entries_) t.zero_grad();
  }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, std::size_t> index_;
};

namespace detail {

inline std::string shape_token(const Shape& shape) {
  std::string out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(shape[i]);
  }
  return out;
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

/// Writes one CSV row per parameter: `path,shape,values` where shape is
/// `AxBxC` and values are space-separated with round-trip precision.
inline void save_parameters(const ParamStore& store, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw IoError("cannot write " + file.string());
  out << "path,shape,values\n";
  for (const auto& [path, t] : store.entries()) {
    out << path << ',' << detail::shape_token(t.shape()) << ',';
    const auto data = t.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (i) out << ' ';
      out << detail::format_double(data[i]);
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + file.string());
}

/// Overwrites the values of `store` from a parameter CSV. Every stored path
/// must be present with an identical shape.
inline void load_parameters(ParamStore& store, const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot read " + file.string());
  std::string line;
  std::getline(in, line);
  std::map<std::string, std::pair<std::string, std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 == std::string::npos ? c1 : c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) throw IoError("bad parameter row in " + file.string());
    rows[line.substr(0, c1)] = {line.substr(c1 + 1, c2 - c1 - 1), line.substr(c2 + 1)};
  }
  for (const auto& [path, t] : store.entries()) {
    auto it = rows.find(path);
    if (it == rows.end()) throw UnknownKey("checkpoint lacks parameter " + path);
    if (it->second.first != detail::shape_token(t.shape())) {
      throw ShapeMismatch("checkpoint parameter " + path + " has shape " + it->second.first + ", model expects " +
                          detail::shape_token(t.shape()));
    }
  }
  if (rows.size() != store.size()) throw UnknownKey("checkpoint has parameters the model does not define");
  for (auto& [path, t] : store.entries()) {
    std::istringstream values(rows[path].second);
    auto data = t.mutable_data();
    for (double& v : data) {
      std::string tok;
      if (!(values >> tok)) throw IoError("checkpoint parameter " + path + " has too few values");
      v = std::stod(tok);
    }
    std::string extra;
    if (values >> extra) throw IoError("checkpoint parameter " + path + " has too many values");
  }
}

/// Checkpoint directory: `params.csv` plus a `config.json` sidecar.
inline void save_checkpoint(const std::filesystem::path& dir, const ParamStore& store, const nlohmann::json& sidecar) {
  std::filesystem::create_directories(dir);
  save_parameters(store, dir / "params.csv");
  std::ofstream out(dir / "config.json");
  if (!out) throw IoError("cannot write " + (dir / "config.json").string());
  out << sidecar.dump(2) << '\n';
}

inline nlohmann::json read_sidecar(const std::filesystem::path& dir) {
  std::ifstream in(dir / "config.json");
  if (!in) throw IoError("cannot read " + (dir / "config.json").string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad checkpoint sidecar: " + std::string(e.what()));
  }
}

}  // namespace stockformer::ad
