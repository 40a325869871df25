#include "diffsteer/eval.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace diffsteer {

namespace {

constexpr int kW = 640, kH = 440, kMargin = 64;

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22"};
constexpr int kPaletteSize = 9;

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

struct Frame {
  double xmin, xmax, ymin, ymax;
  double px(double x) const {
    const double span = xmax > xmin ? xmax - xmin : 1.0;
    return kMargin + (x - xmin) / span * (kW - 2 * kMargin);
  }
  double py(double y) const {
    const double span = ymax > ymin ? ymax - ymin : 1.0;
    return kH - kMargin - (y - ymin) / span * (kH - 2 * kMargin);
  }
};

std::ofstream open_plot(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write plot file: " + path);
  f.precision(6);
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW
    << "\" height=\"" << kH << "\" viewBox=\"0 0 " << kW << ' ' << kH << "\">\n"
    << "<rect width=\"" << kW << "\" height=\"" << kH << "\" fill=\"white\"/>\n";
  return f;
}

void axes(std::ofstream& f, const Frame& fr, const std::string& xlabel,
          const std::string& ylabel) {
  f << "<line x1=\"" << kMargin << "\" y1=\"" << kH - kMargin << "\" x2=\""
    << kW - kMargin << "\" y2=\"" << kH - kMargin
    << "\" stroke=\"black\"/>\n"
    << "<line x1=\"" << kMargin << "\" y1=\"" << kMargin << "\" x2=\"" << kMargin
    << "\" y2=\"" << kH - kMargin << "\" stroke=\"black\"/>\n";
  f << "<text x=\"" << kMargin << "\" y=\"" << kH - kMargin + 18
    << "\" font-size=\"11\">" << fmt(fr.xmin) << "</text>\n"
    << "<text x=\"" << kW - kMargin - 10 << "\" y=\"" << kH - kMargin + 18
    << "\" font-size=\"11\">" << fmt(fr.xmax) << "</text>\n"
    << "<text x=\"" << kMargin - 40 << "\" y=\"" << kH - kMargin + 4
    << "\" font-size=\"11\">" << fmt(fr.ymin) << "</text>\n"
    << "<text x=\"" << kMargin - 40 << "\" y=\"" << kMargin + 4
    << "\" font-size=\"11\">" << fmt(fr.ymax) << "</text>\n";
  f << "<text x=\"" << kW / 2 - 30 << "\" y=\"" << kH - 14
    << "\" font-size=\"12\">" << xlabel << "</text>\n"
    << "<text x=\"14\" y=\"" << kH / 2
    << "\" font-size=\"12\" transform=\"rotate(-90 14 " << kH / 2 << ")\">"
    << ylabel << "</text>\n";
}

// one polyline per mode from (x, mean accuracy) points
void curve_plot(const std::string& path,
                const std::map<std::string, std::map<double, double>>& series,
                const std::string& xlabel) {
  double xmin = 1e300, xmax = -1e300;
  for (const auto& [mode, pts] : series)
    for (const auto& [x, y] : pts) {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
    }
  const Frame fr{xmin, xmax, 0.0, 1.0};
  std::ofstream f = open_plot(path);
  axes(f, fr, xlabel, "accuracy");
  int ci = 0;
  for (const auto& [mode, pts] : series) {
    const char* color = kPalette[ci % kPaletteSize];
    if (pts.size() > 1) {
      f << "<polyline fill=\"none\" stroke=\"" << color
        << "\" stroke-width=\"1.5\" points=\"";
      for (const auto& [x, y] : pts) f << fr.px(x) << ',' << fr.py(y) << ' ';
      f << "\"/>\n";
    }
    for (const auto& [x, y] : pts)
      f << "<circle cx=\"" << fr.px(x) << "\" cy=\"" << fr.py(y)
        << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    f << "<text x=\"" << kW - kMargin + 6 << "\" y=\"" << kMargin + 14 * ci
      << "\" font-size=\"11\" fill=\"" << color << "\">" << mode << "</text>\n";
    ++ci;
  }
  f << "</svg>\n";
}

}  // namespace

std::vector<std::string> emit_plots(const std::vector<MetricsRecord>& records,
                                    const Matrix& samples,
                                    const RingMixtureSpec& rings,
                                    const std::string& out_dir) {
  require(!records.empty(), "no records to plot");
  std::filesystem::create_directories(out_dir);
  std::vector<std::string> files;

  // accuracy vs epoch, averaged over n and seeds per (mode, epoch)
  {
    std::map<std::string, std::map<double, std::pair<double, int>>> sums;
    for (const MetricsRecord& r : records) {
      auto& cell = sums[to_string(r.mode)][static_cast<double>(r.epoch)];
      cell.first += r.accuracy;
      cell.second += 1;
    }
    std::map<std::string, std::map<double, double>> series;
    for (const auto& [mode, pts] : sums)
      for (const auto& [x, sc] : pts) series[mode][x] = sc.first / sc.second;
    const std::string path =
        (std::filesystem::path(out_dir) / "accuracy_vs_epoch.svg").string();
    curve_plot(path, series, "fine-tune epoch");
    files.push_back(path);
  }

  // accuracy vs labeled-set size at each run's final recorded epoch
  {
    std::map<std::string, int> last_epoch;
    for (const MetricsRecord& r : records) {
      auto [it, inserted] = last_epoch.try_emplace(r.run_id, r.epoch);
      if (!inserted) it->second = std::max(it->second, r.epoch);
    }
    std::map<std::string, std::map<double, std::pair<double, int>>> sums;
    for (const MetricsRecord& r : records) {
      if (r.epoch != last_epoch.at(r.run_id)) continue;
      auto& cell = sums[to_string(r.mode)][static_cast<double>(r.n_labeled)];
      cell.first += r.accuracy;
      cell.second += 1;
    }
    std::map<std::string, std::map<double, double>> series;
    for (const auto& [mode, pts] : sums)
      for (const auto& [x, sc] : pts) series[mode][x] = sc.first / sc.second;
    const std::string path =
        (std::filesystem::path(out_dir) / "accuracy_vs_n.svg").string();
    curve_plot(path, series, "labeled samples n");
    files.push_back(path);
  }

  if (samples.rows() > 0) {
    require(samples.cols() == 2, "scatter plot expects planar samples");
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    auto grow = [&](double x, double y) {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    };
    for (Eigen::Index i = 0; i < samples.rows(); ++i)
      grow(samples(i, 0), samples(i, 1));
    for (const Ring& ring : rings.rings) {
      grow(ring.center(0) - ring.r_outer, ring.center(1) - ring.r_outer);
      grow(ring.center(0) + ring.r_outer, ring.center(1) + ring.r_outer);
    }
    // equal aspect so annuli render as circles
    const double cx = 0.5 * (xmin + xmax), cy = 0.5 * (ymin + ymax);
    const double half = 0.55 * std::max(xmax - xmin, ymax - ymin);
    const double half_y =
        half * (kH - 2.0 * kMargin) / (kW - 2.0 * kMargin);
    const Frame fr{cx - half, cx + half, cy - half_y, cy + half_y};
    const std::string path =
        (std::filesystem::path(out_dir) / "samples_scatter.svg").string();
    std::ofstream f = open_plot(path);
    axes(f, fr, "x", "y");
    const double unit = fr.px(1.0) - fr.px(0.0);
    for (const Ring& ring : rings.rings) {
      for (double r : {ring.r_inner, ring.r_outer})
        f << "<circle cx=\"" << fr.px(ring.center(0)) << "\" cy=\""
          << fr.py(ring.center(1)) << "\" r=\"" << r * unit
          << "\" fill=\"none\" stroke=\"#888\" stroke-dasharray=\"4 3\"/>\n";
    }
    for (Eigen::Index i = 0; i < samples.rows(); ++i)
      f << "<circle cx=\"" << fr.px(samples(i, 0)) << "\" cy=\""
        << fr.py(samples(i, 1)) << "\" r=\"1.6\" fill=\"#1f77b4\" fill-opacity=\"0.6\"/>\n";
    f << "</svg>\n";
    files.push_back(path);
  }
  return files;
}

}  // namespace diffsteer
