#include "omni/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "omni/error.hpp"

namespace omni {

namespace {

template <typename T>
CosineResult cosine_impl(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) {
    throw ShapeError("cosine: lengths " + std::to_string(a.size()) + " and " + std::to_string(b.size()) + " differ");
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i], y = b[i];
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  if (na == 0.0 || nb == 0.0) return {0.0, true};
  return {std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0), false};
}

struct ParsedName {
  int layer = 0;  // block index, -1 embed, -2 head
  std::string branch;
  std::string rest;
};

ParsedName parse_name(const std::string& name) {
  ParsedName p;
  if (name.rfind("embed.", 0) == 0) {
    p.layer = -1;
    p.branch = "shared";
    p.rest = name;
    return p;
  }
  const auto d1 = name.find('.');
  const auto d2 = name.find('.', d1 + 1);
  if (d1 == std::string::npos || d2 == std::string::npos) throw InvalidArgument("unexpected parameter name '" + name + "'");
  const std::string head = name.substr(0, d1);
  if (head == "head") {
    p.layer = -2;
    p.branch = name.substr(d1 + 1, d2 - d1 - 1);
    p.rest = "head." + name.substr(d2 + 1);
    return p;
  }
  const auto d3 = name.find('.', d2 + 1);
  if (head != "blocks" || d3 == std::string::npos) throw InvalidArgument("unexpected parameter name '" + name + "'");
  p.layer = std::stoi(name.substr(d1 + 1, d2 - d1 - 1));
  p.branch = name.substr(d2 + 1, d3 - d2 - 1);
  p.rest = name.substr(d3 + 1);
  return p;
}

std::string counterpart(const std::string& name, const ParsedName& p) {
  if (p.branch == "shared") return name;
  const std::string prefix = p.layer == -2 ? "head." : "blocks." + std::to_string(p.layer) + ".";
  const std::string rest = p.layer == -2 ? p.rest.substr(5) : p.rest;
  return prefix + "rob." + rest;
}

std::vector<float> delta(const StoredTensor& after, const StoredTensor& before) {
  std::vector<float> d(after.data.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = after.data[i] - before.data[i];
  return d;
}

std::string layer_label(int layer) {
  if (layer == -1) return "embed";
  if (layer == -2) return "head";
  return std::to_string(layer);
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9f", v);
  return buf;
}

}  // namespace

CosineResult cosine(std::span<const float> a, std::span<const float> b) { return cosine_impl(a, b); }
CosineResult cosine(std::span<const double> a, std::span<const double> b) { return cosine_impl(a, b); }

UpdateSimilarityReport param_update_similarity(const Checkpoint& base, const Checkpoint& after_gui,
                                               const Checkpoint& after_rob, double cutoff) {
  const std::uint64_t h = parameter_hash(base.params);
  if (after_gui.base_hash != h || after_rob.base_hash != h) {
    throw ConfigMismatch("runs not comparable: a run's base hash differs from the base checkpoint");
  }
  std::map<std::string, const StoredTensor*> base_by, rob_by;
  for (const auto& p : base.params) base_by[p.name] = &p;
  for (const auto& p : after_rob.params) rob_by[p.name] = &p;

  UpdateSimilarityReport report;
  report.cutoff = cutoff;
  report.probe_steps = after_gui.step;
  std::map<int, std::pair<std::vector<float>, std::vector<float>>> per_layer;

  for (const auto& g : after_gui.params) {
    const ParsedName p = parse_name(g.name);
    if (p.branch == "rob") continue;
    const std::string other = counterpart(g.name, p);
    auto r_it = rob_by.find(other);
    auto bg_it = base_by.find(g.name);
    auto br_it = base_by.find(other);
    if (r_it == rob_by.end() || bg_it == base_by.end() || br_it == base_by.end()) continue;
    const StoredTensor& r = *r_it->second;
    if (g.shape != bg_it->second->shape || r.shape != br_it->second->shape || g.shape != r.shape) {
      throw CheckpointShapeError("tensor pair '" + g.name + "' / '" + other + "' has mismatched shapes");
    }
    const auto dg = delta(g, *bg_it->second);
    const auto dr = delta(r, *br_it->second);
    report.params.push_back({g.name, other, p.layer, p.rest, cosine(dg, dr)});
    if (p.layer >= 0) {
      auto& acc = per_layer[p.layer];
      acc.first.insert(acc.first.end(), dg.begin(), dg.end());
      acc.second.insert(acc.second.end(), dr.begin(), dr.end());
    }
  }
  for (const auto& [layer, acc] : per_layer) {
    const CosineResult c = cosine(acc.first, acc.second);
    report.layers.push_back({layer, c});
    if (!report.recommended_k && !c.degenerate && c.value < cutoff) report.recommended_k = layer;
  }
  return report;
}

void write_update_similarity(const std::filesystem::path& dir, const UpdateSimilarityReport& report) {
  std::filesystem::create_directories(dir);
  const std::string header = "# probe_steps=" + std::to_string(report.probe_steps) + " cutoff=" + fmt(report.cutoff) +
                             " recommended_k=" + (report.recommended_k ? std::to_string(*report.recommended_k) : "none") +
                             "\n";
  {
    auto out = open_out(dir / "update_similarity.csv");
    out << header << "layer,submodule,cosine,degenerate_flag\n";
    for (const auto& p : report.params) {
      out << layer_label(p.layer) << ',' << p.submodule << ',' << fmt(p.cosine.value) << ',' << (p.cosine.degenerate ? 1 : 0)
          << '\n';
    }
  }
  {
    auto out = open_out(dir / "update_similarity_layers.csv");
    out << header << "layer,cosine,degenerate_flag\n";
    for (const auto& l : report.layers) {
      out << l.layer << ',' << fmt(l.cosine.value) << ',' << (l.cosine.degenerate ? 1 : 0) << '\n';
    }
  }
  // Whole-layer cosine against depth, y in [-1, 1].
  constexpr double kW = 480, kH = 240, kPad = 32;
  auto out = open_out(dir / "update_similarity.svg");
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\">\n";
  out << "<line x1=\"" << kPad << "\" y1=\"" << kH / 2 << "\" x2=\"" << kW - kPad << "\" y2=\"" << kH / 2
      << "\" stroke=\"#999\"/>\n";
  out << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
  const std::size_t n = report.layers.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = kPad + (n > 1 ? (kW - 2 * kPad) * static_cast<double>(i) / static_cast<double>(n - 1) : 0.0);
    const double y = kH / 2 - (kH / 2 - kPad) * report.layers[i].cosine.value;
    out << fmt(x) << ',' << fmt(y) << ' ';
  }
  out << "\"/>\n<text x=\"" << kPad << "\" y=\"16\" font-size=\"12\">whole-layer update cosine by block</text>\n</svg>\n";
}

std::vector<std::vector<std::vector<double>>> pooled_features(const LayerHetModel& model,
                                                              std::span<const UnifiedSample> samples,
                                                              std::span<const int> layers) {
  for (int l : layers) {
    if (l < 0 || l >= model.config().n_layers) {
      throw InvalidArgument("feature layer " + std::to_string(l) + " is outside [0, " +
                            std::to_string(model.config().n_layers) + ")");
    }
  }
  std::vector<std::vector<std::vector<double>>> out(layers.size());
  for (const auto& s : samples) {
    Tape tape;
    tape.set_recording(false);
    std::vector<Tensor> hidden;
    forward_hidden(tape, model, encode_context(s), &hidden);
    for (std::size_t li = 0; li < layers.size(); ++li) {
      const Tensor& h = hidden[static_cast<std::size_t>(layers[li])];
      std::vector<double> mean(h.cols(), 0.0);
      for (std::size_t r = 0; r < h.rows(); ++r)
        for (std::size_t c = 0; c < h.cols(); ++c) mean[c] += h.at(r, c);
      for (auto& m : mean) m /= static_cast<double>(h.rows());
      out[li].push_back(std::move(mean));
    }
  }
  return out;
}

std::vector<FeatureSimilarityMatrix> feature_similarity(const LayerHetModel& model_gui, const LayerHetModel& model_rob,
                                                        std::span<const UnifiedSample> gui_samples,
                                                        std::span<const UnifiedSample> rob_samples,
                                                        std::span<const int> layers) {
  const auto fg = pooled_features(model_gui, gui_samples, layers);
  const auto fr = pooled_features(model_rob, rob_samples, layers);
  std::vector<FeatureSimilarityMatrix> out;
  for (std::size_t li = 0; li < layers.size(); ++li) {
    FeatureSimilarityMatrix m;
    m.layer = layers[li];
    m.rows = gui_samples.size();
    m.cols = rob_samples.size();
    double total = 0.0;
    for (std::size_t i = 0; i < m.rows; ++i) {
      for (std::size_t j = 0; j < m.cols; ++j) {
        const double c = cosine(std::span<const double>(fg[li][i]), std::span<const double>(fr[li][j])).value;
        m.values.push_back(c);
        total += c;
      }
    }
    m.mean = m.values.empty() ? 0.0 : total / static_cast<double>(m.values.size());
    out.push_back(std::move(m));
  }
  return out;
}

void write_feature_similarity(const std::filesystem::path& dir, std::span<const FeatureSimilarityMatrix> matrices) {
  std::filesystem::create_directories(dir);
  auto means = open_out(dir / "feature_means.csv");
  means << "# pooling=mean over all context positions (patches and text)\nlayer,mean\n";
  for (const auto& m : matrices) {
    means << m.layer << ',' << fmt(m.mean) << '\n';
    auto out = open_out(dir / ("feature_similarity_L" + std::to_string(m.layer) + ".csv"));
    for (std::size_t i = 0; i < m.rows; ++i) {
      for (std::size_t j = 0; j < m.cols; ++j) out << (j ? "," : "") << fmt(m.at(i, j));
      out << '\n';
    }
  }
}

}  // namespace omni
