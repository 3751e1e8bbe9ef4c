#pragma once
// Text artifacts: CSV tables and SVG scatter plots. Output is byte-stable
// for identical inputs so reruns can be diffed.

#include <span>
#include <string>
#include <vector>

#include "ecm_sphere/metrics.hpp"
#include "ecm_sphere/tensor.hpp"

namespace ecm_sphere {

/// Shortest round-trip text for a double ("nan", "inf", "-inf" for the rest).
std::string format_number(double v);

/// Writes via a sibling temp file and rename.
void write_text_atomic(const std::string& path, const std::string& text);
std::string read_text(const std::string& path);

/// metric,value rows: n, v_measure, homogeneity, completeness, inertia,
/// cd_r, min_centroid_angle_deg, pca_ratio_1, pca_ratio_2.
std::string scores_csv(const EvalReport& r);

/// Header row "label,<names...>", then one row per label.
std::string matrix_csv(const Tensor& m, const std::vector<std::string>& names);

/// 2-D scatter, one circle per row of `coords`, colored by label, with a
/// legend. Points are emitted in row order.
std::string scatter_svg(const Tensor& coords, std::span<const std::size_t> labels,
                        const std::vector<std::string>& names, const std::string& title);

}  // namespace ecm_sphere
