#include "uadan/plots/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace uadan::plots {

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#17becf"};
constexpr int kPaletteSize = 7;

constexpr double kMarginLeft = 64.0;
constexpr double kMarginRight = 24.0;
constexpr double kMarginTop = 36.0;
constexpr double kMarginBottom = 48.0;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

struct Range {
  double lo = 0.0;
  double hi = 1.0;
};

Range padded(double lo, double hi, bool from_zero) {
  if (from_zero) lo = std::min(lo, 0.0);
  if (!(lo < hi)) {  // degenerate or empty data: open a unit window around it
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = 0.05 * (hi - lo);
  return Range{from_zero && lo == 0.0 ? 0.0 : lo - pad, hi + pad};
}

/** Tick spacing from the 1-2-5 ladder covering the range with ~6 steps. */
double tick_step(const Range& r) {
  const double raw = (r.hi - r.lo) / 6.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double frac = raw / mag;
  if (frac <= 1.0) return mag;
  if (frac <= 2.0) return 2.0 * mag;
  if (frac <= 5.0) return 5.0 * mag;
  return 10.0 * mag;
}

class SvgWriter {
 public:
  SvgWriter(const std::filesystem::path& path, const PlotOptions& opt, Range xr, Range yr)
      : out_(path), opt_(opt), xr_(xr), yr_(yr) {
    if (!out_) throw std::runtime_error("plot: cannot write " + path.string());
    out_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << opt.width << "\" height=\""
         << opt.height << "\" viewBox=\"0 0 " << opt.width << " " << opt.height << "\">\n";
    out_ << "<rect width=\"" << opt.width << "\" height=\"" << opt.height
         << "\" fill=\"white\"/>\n";
  }

  double px(double x) const {
    const double w = opt_.width - kMarginLeft - kMarginRight;
    return kMarginLeft + (x - xr_.lo) / (xr_.hi - xr_.lo) * w;
  }
  double py(double y) const {
    const double h = opt_.height - kMarginTop - kMarginBottom;
    return kMarginTop + (yr_.hi - y) / (yr_.hi - yr_.lo) * h;
  }

  void frame() {
    const double x0 = kMarginLeft, x1 = opt_.width - kMarginRight;
    const double y0 = kMarginTop, y1 = opt_.height - kMarginBottom;
    // Gridlines + tick labels on both axes.
    for (const bool x_axis : {true, false}) {
      const Range& r = x_axis ? xr_ : yr_;
      const double step = tick_step(r);
      for (double t = std::ceil(r.lo / step) * step; t <= r.hi + 1e-12 * step; t += step) {
        const double v = std::abs(t) < 1e-12 * step ? 0.0 : t;
        if (x_axis) {
          const double gx = px(v);
          out_ << "<line x1=\"" << fmt(gx) << "\" y1=\"" << fmt(y0) << "\" x2=\"" << fmt(gx)
               << "\" y2=\"" << fmt(y1) << "\" stroke=\"#e0e0e0\"/>\n";
          text(gx, y1 + 16.0, fmt(v), "middle", "#444444", 11);
        } else {
          const double gy = py(v);
          out_ << "<line x1=\"" << fmt(x0) << "\" y1=\"" << fmt(gy) << "\" x2=\"" << fmt(x1)
               << "\" y2=\"" << fmt(gy) << "\" stroke=\"#e0e0e0\"/>\n";
          text(x0 - 6.0, gy + 4.0, fmt(v), "end", "#444444", 11);
        }
      }
    }
    out_ << "<rect x=\"" << fmt(x0) << "\" y=\"" << fmt(y0) << "\" width=\"" << fmt(x1 - x0)
         << "\" height=\"" << fmt(y1 - y0) << "\" fill=\"none\" stroke=\"#333333\"/>\n";
    text(opt_.width / 2.0, 20.0, opt_.title, "middle", "#111111", 14);
    text(opt_.width / 2.0, opt_.height - 12.0, opt_.x_label, "middle", "#111111", 12);
    out_ << "<text x=\"16\" y=\"" << fmt(opt_.height / 2.0)
         << "\" text-anchor=\"middle\" fill=\"#111111\" font-size=\"12\" "
            "font-family=\"sans-serif\" transform=\"rotate(-90 16 "
         << fmt(opt_.height / 2.0) << ")\">"
         << escape(opt_.y_label) << "</text>\n";
  }

  void polyline(const std::vector<double>& x, const std::vector<double>& y,
                const std::string& color) {
    if (x.empty()) return;
    out_ << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < x.size(); ++i) {
      out_ << fmt(px(x[i])) << "," << fmt(py(y[i])) << (i + 1 < x.size() ? " " : "");
    }
    out_ << "\"/>\n";
  }

  void dots(const std::vector<double>& x, const std::vector<double>& y, const std::string& color) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      out_ << "<circle cx=\"" << fmt(px(x[i])) << "\" cy=\"" << fmt(py(y[i]))
           << "\" r=\"2.2\" fill=\"" << color << "\" fill-opacity=\"0.75\"/>\n";
    }
  }

  void legend_entry(int slot, const std::string& label, const std::string& color) {
    const double lx = kMarginLeft + 12.0;
    const double ly = kMarginTop + 14.0 + 16.0 * slot;
    out_ << "<rect x=\"" << fmt(lx) << "\" y=\"" << fmt(ly - 8.0)
         << "\" width=\"12\" height=\"8\" fill=\"" << color << "\"/>\n";
    text(lx + 18.0, ly, label, "start", "#111111", 11);
  }

  void finish() { out_ << "</svg>\n"; }

 private:
  static std::string escape(const std::string& s) {
    std::string r;
    for (char c : s) {
      switch (c) {
        case '&': r += "&amp;"; break;
        case '<': r += "&lt;"; break;
        case '>': r += "&gt;"; break;
        default: r += c;
      }
    }
    return r;
  }

  void text(double x, double y, const std::string& s, const char* anchor, const char* fill,
            int size) {
    if (s.empty()) return;
    out_ << "<text x=\"" << fmt(x) << "\" y=\"" << fmt(y) << "\" text-anchor=\"" << anchor
         << "\" fill=\"" << fill << "\" font-size=\"" << size
         << "\" font-family=\"sans-serif\">" << escape(s) << "</text>\n";
  }

  std::ofstream out_;
  PlotOptions opt_;
  Range xr_, yr_;
};

template <typename Group>
void data_range(const std::vector<Group>& groups, Range& xr, Range& yr) {
  double xlo = std::numeric_limits<double>::infinity(), xhi = -xlo;
  double ylo = xlo, yhi = -xlo;
  for (const Group& g : groups) {
    for (double v : g.x) {
      xlo = std::min(xlo, v);
      xhi = std::max(xhi, v);
    }
    for (double v : g.y) {
      ylo = std::min(ylo, v);
      yhi = std::max(yhi, v);
    }
  }
  if (!std::isfinite(xlo)) xlo = 0.0, xhi = 1.0;
  if (!std::isfinite(ylo)) ylo = 0.0, yhi = 1.0;
  xr = Range{xlo, xhi};
  yr = Range{ylo, yhi};
}

const char* color_for(const std::string& requested, std::size_t index) {
  return requested.empty() ? kPalette[index % kPaletteSize] : requested.c_str();
}

}  // namespace

void write_line_svg(const std::filesystem::path& path, const std::vector<Series>& series,
                    const PlotOptions& options) {
  for (const Series& s : series) {
    if (s.x.size() != s.y.size()) throw std::invalid_argument("plot: series x/y length mismatch");
  }
  Range xr, yr;
  data_range(series, xr, yr);
  SvgWriter svg(path, options, padded(xr.lo, xr.hi, false),
                padded(yr.lo, yr.hi, options.y_from_zero));
  svg.frame();
  for (std::size_t i = 0; i < series.size(); ++i) {
    svg.polyline(series[i].x, series[i].y, color_for(series[i].color, i));
  }
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (!series[i].label.empty()) {
      svg.legend_entry(static_cast<int>(i), series[i].label, color_for(series[i].color, i));
    }
  }
  svg.finish();
}

void write_scatter_svg(const std::filesystem::path& path, const std::vector<ScatterGroup>& groups,
                       const PlotOptions& options) {
  for (const ScatterGroup& g : groups) {
    if (g.x.size() != g.y.size()) throw std::invalid_argument("plot: group x/y length mismatch");
  }
  Range xr, yr;
  data_range(groups, xr, yr);
  SvgWriter svg(path, options, padded(xr.lo, xr.hi, false), padded(yr.lo, yr.hi, false));
  svg.frame();
  for (std::size_t i = 0; i < groups.size(); ++i) {
    svg.dots(groups[i].x, groups[i].y, color_for(groups[i].color, i));
  }
  for (std::size_t i = 0; i < groups.size(); ++i) {
    if (!groups[i].label.empty()) {
      svg.legend_entry(static_cast<int>(i), groups[i].label, color_for(groups[i].color, i));
    }
  }
  svg.finish();
}

Eigen::MatrixXd principal_plane(const Eigen::MatrixXd& features) {
  const Eigen::Index n = features.cols();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(2, n);
  if (n < 2 || features.rows() < 1) return out;
  const Eigen::VectorXd mean = features.rowwise().mean();
  const Eigen::MatrixXd centered = features.colwise() - mean;
  const Eigen::MatrixXd cov =
      centered * centered.transpose() / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) return out;
  const Eigen::Index d = cov.rows();
  // Eigenvalues ascend, so the top directions are the last columns. Fix the
  // sign so the projection is deterministic across platforms.
  for (int k = 0; k < 2 && k < d; ++k) {
    Eigen::VectorXd dir = eig.eigenvectors().col(d - 1 - k);
    Eigen::Index max_idx = 0;
    dir.cwiseAbs().maxCoeff(&max_idx);
    if (dir(max_idx) < 0.0) dir = -dir;
    out.row(k) = (dir.transpose() * centered).row(0);
  }
  return out;
}

}  // namespace uadan::plots
