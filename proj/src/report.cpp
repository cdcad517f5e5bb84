#include "divcot/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "divcot/diagnostics.hpp"
#include "divcot/image_io.hpp"

namespace fs = std::filesystem;

namespace divcot {

namespace {

constexpr const char* kSeriesColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out << text;
  if (!out) throw std::runtime_error(path + ": write failed");
}

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

}  // namespace

std::string format_metric(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out;
  const auto& cols = metrics_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out += (i ? "," : "") + cols[i];
  out += '\n';
  for (const MetricsRow& r : rows) {
    out += std::to_string(r.epoch) + ',' + std::to_string(r.model);
    for (double v : {r.loss_sup, r.loss_unsup, r.lr, r.miou, r.agree_rate, r.d_l2, r.d_kl}) out += ',' + format_metric(v);
    out += '\n';
  }
  return out;
}

std::string diversity_csv(const std::vector<DiversityReport>& rows) {
  std::string out = "epoch,model_a,model_b,agree_rate,d_l2,d_kl\n";
  for (const DiversityReport& r : rows)
    out += std::to_string(r.epoch) + ',' + std::to_string(r.model_a) + ',' + std::to_string(r.model_b) + ',' +
           format_metric(r.agree_rate) + ',' + format_metric(r.d_l2) + ',' + format_metric(r.d_kl) + '\n';
  return out;
}

int CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  return it == header.end() ? -1 : static_cast<int>(it - header.begin());
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open CSV");
  CsvTable t;
  std::string line;
  bool first = true;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.emplace_back();
    if (first) {
      t.header = std::move(cells);
      first = false;
    } else {
      if (cells.size() != t.header.size())
        throw std::runtime_error(path + ": line " + std::to_string(lineno) + " has " + std::to_string(cells.size()) +
                                 " cells, header has " + std::to_string(t.header.size()));
      t.rows.push_back(std::move(cells));
    }
  }
  return t;
}

std::string render_svg(const std::string& title, const std::string& y_label, const std::vector<Series>& series) {
  constexpr double W = 640, H = 400, left = 70, right = 150, top = 40, bottom = 50;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool any = false;
  for (const Series& s : series)
    for (const auto& [x, y] : s.points) {
      if (!any) {
        x0 = x1 = x;
        y0 = y1 = y;
        any = true;
      }
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  if (x1 - x0 < 1e-12) x1 = x0 + 1;
  if (y1 - y0 < 1e-12) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  const double pw = W - left - right, ph = H - top - bottom;
  auto sx = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto sy = [&](double y) { return top + ph - (y - y0) / (y1 - y0) * ph; };

  std::string out;
  out += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" viewBox=\"0 0 640 400\">\n";
  out += "<rect x=\"0\" y=\"0\" width=\"640\" height=\"400\" fill=\"white\"/>\n";
  out += "<text x=\"" + fixed(left + pw / 2) + "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">" +
         xml_escape(title) + "</text>\n";
  out += "<line x1=\"" + fixed(left) + "\" y1=\"" + fixed(top + ph) + "\" x2=\"" + fixed(left + pw) + "\" y2=\"" +
         fixed(top + ph) + "\" stroke=\"black\"/>\n";
  out += "<line x1=\"" + fixed(left) + "\" y1=\"" + fixed(top) + "\" x2=\"" + fixed(left) + "\" y2=\"" + fixed(top + ph) +
         "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = x0 + (x1 - x0) * k / 4.0, yv = y0 + (y1 - y0) * k / 4.0;
    out += "<text x=\"" + fixed(sx(xv)) + "\" y=\"" + fixed(top + ph + 18) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" + tick_label(xv) + "</text>\n";
    out += "<text x=\"" + fixed(left - 6) + "\" y=\"" + fixed(sy(yv) + 4) +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" + tick_label(yv) + "</text>\n";
  }
  out += "<text x=\"" + fixed(left + pw / 2) + "\" y=\"" + fixed(H - 12) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">epoch</text>\n";
  out += "<text x=\"16\" y=\"" + fixed(top + ph / 2) + "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 16 " +
         fixed(top + ph / 2) + ")\">" + xml_escape(y_label) + "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const Series& s = series[i];
    const char* color = kSeriesColors[i % std::size(kSeriesColors)];
    if (!s.points.empty()) {
      out += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"2\" points=\"";
      for (std::size_t p = 0; p < s.points.size(); ++p)
        out += (p ? " " : "") + fixed(sx(s.points[p].first)) + "," + fixed(sy(s.points[p].second));
      out += "\"/>\n";
    }
    const double ly = top + 10 + 18.0 * static_cast<double>(i);
    out += "<line x1=\"" + fixed(left + pw + 12) + "\" y1=\"" + fixed(ly) + "\" x2=\"" + fixed(left + pw + 32) + "\" y2=\"" +
           fixed(ly) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    out += "<text x=\"" + fixed(left + pw + 38) + "\" y=\"" + fixed(ly + 4) +
           "\" font-family=\"sans-serif\" font-size=\"11\">" + xml_escape(s.name) + "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

std::vector<std::string> plot_metrics(const std::string& csv_path, const std::string& out_dir) {
  const CsvTable t = read_csv(csv_path);
  if (!t.header.empty())
    for (const std::string& c : metrics_columns())
      if (t.column(c) < 0) throw std::invalid_argument(csv_path + ": missing column '" + c + "'");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error(out_dir + ": cannot create directory: " + ec.message());

  std::set<long long> models;
  for (const auto& row : t.rows) models.insert(std::stoll(row[static_cast<std::size_t>(t.column("model"))]));
  std::vector<std::string> written;
  for (const std::string& metric : metrics_columns()) {
    if (metric == "epoch" || metric == "model") continue;
    std::vector<Series> series;
    for (long long m : models) {
      Series s;
      s.name = "model " + std::to_string(m);
      for (const auto& row : t.rows) {
        if (std::stoll(row[static_cast<std::size_t>(t.column("model"))]) != m) continue;
        const std::string& cell = row[static_cast<std::size_t>(t.column(metric))];
        if (cell == "nan" || cell.empty()) continue;
        s.points.emplace_back(std::stod(row[static_cast<std::size_t>(t.column("epoch"))]), std::stod(cell));
      }
      series.push_back(std::move(s));
    }
    const std::string path = (fs::path(out_dir) / (metric + ".svg")).string();
    write_text(path, render_svg(metric + " vs epoch", metric, series));
    written.push_back(path);
  }
  return written;
}

std::array<std::uint8_t, 3> palette_color(std::uint8_t cls) {
  static constexpr std::array<std::array<std::uint8_t, 3>, 8> table = {{{0, 0, 0},
                                                                        {230, 25, 75},
                                                                        {60, 180, 75},
                                                                        {0, 130, 200},
                                                                        {255, 225, 25},
                                                                        {245, 130, 48},
                                                                        {145, 30, 180},
                                                                        {70, 240, 240}}};
  if (cls == kIgnoreLabel) return {255, 255, 255};
  if (cls < table.size()) return table[cls];
  return {128, 128, 128};
}

Tensor colorize(const LabelMap& labels) {
  const std::size_t h = static_cast<std::size_t>(labels.height), w = static_cast<std::size_t>(labels.width);
  Tensor out({3, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const auto c = palette_color(labels(static_cast<int>(y), static_cast<int>(x)));
      for (std::size_t k = 0; k < 3; ++k) out.at(k, y, x) = c[k] / 255.0;
    }
  return out;
}

std::vector<std::string> dump_label_maps(const Dataset& data, const std::vector<int>& ids,
                                         const std::vector<std::vector<LabelMap>>& predictions,
                                         const std::string& out_dir) {
  for (const auto& member : predictions)
    if (member.size() != ids.size()) throw std::invalid_argument("dump_label_maps: one prediction per id required");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error(out_dir + ": cannot create directory: " + ec.message());
  std::vector<std::string> written;
  auto path_of = [&](const std::string& name) { return (fs::path(out_dir) / name).string(); };
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const Sample& s = data.sample(ids[i]);
    char stem[32];
    std::snprintf(stem, sizeof stem, "%06d", ids[i]);
    const std::string base = stem;
    written.push_back(path_of(base + "_input.ppm"));
    write_ppm(written.back(), s.image);
    written.push_back(path_of(base + "_gt.pgm"));
    write_pgm(written.back(), s.mask);
    written.push_back(path_of(base + "_gt_color.ppm"));
    write_ppm(written.back(), colorize(s.mask));
    for (std::size_t m = 0; m < predictions.size(); ++m) {
      const std::string name = base + "_pred_m" + std::to_string(m);
      written.push_back(path_of(name + ".pgm"));
      write_pgm(written.back(), predictions[m][i]);
      written.push_back(path_of(name + "_color.ppm"));
      write_ppm(written.back(), colorize(predictions[m][i]));
    }
  }
  return written;
}

std::vector<std::string> dump_predictions(const std::vector<Network>& nets, const Dataset& data,
                                          const std::vector<int>& ids, const std::string& out_dir) {
  std::vector<std::vector<LabelMap>> predictions;
  for (const Network& net : nets) {
    std::vector<std::vector<LabelMap>> per_head(net.heads());
    for (int id : ids) {
      Tensor x = to_domain_input(data.sample(id).image, net.spec().domain, data.norm);
      x = x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)});
      const auto logits = net.forward(x);
      for (std::size_t h = 0; h < logits.size(); ++h) per_head[h].push_back(argmax_labels(logits[h])[0]);
    }
    for (auto& p : per_head) predictions.push_back(std::move(p));
  }
  return dump_label_maps(data, ids, predictions, out_dir);
}

}  // namespace divcot
