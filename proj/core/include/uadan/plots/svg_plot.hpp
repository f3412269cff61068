#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <string>
#include <vector>

namespace uadan::plots {

/** One polyline on a line chart. Empty color picks from the default cycle. */
struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::string color;
};

/** One labeled point cloud on a scatter chart. */
struct ScatterGroup {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::string color;
};

struct PlotOptions {
  std::string title;
  std::string x_label;
  std::string y_label;
  int width = 760;
  int height = 480;
  bool y_from_zero = false;  // force the y axis to include zero
};

/**
 * Self-contained SVG line chart (axes, 1-2-5 ticks, legend). Output depends
 * only on the inputs — no timestamps — so identical runs produce identical
 * bytes.
 */
void write_line_svg(const std::filesystem::path& path, const std::vector<Series>& series,
                    const PlotOptions& options);

/** Self-contained SVG scatter chart with the same determinism contract. */
void write_scatter_svg(const std::filesystem::path& path,
                       const std::vector<ScatterGroup>& groups, const PlotOptions& options);

/**
 * Project feature columns onto their top two principal directions (a plain
 * linear projection, not a neighborhood embedding). Returns a (2, n) matrix;
 * fewer than two samples or constant features degrade gracefully to zeros on
 * the missing axes.
 */
Eigen::MatrixXd principal_plane(const Eigen::MatrixXd& features);

}  // namespace uadan::plots
