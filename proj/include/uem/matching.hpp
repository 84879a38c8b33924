#pragma once

#include <span>
#include <vector>

#include "uem/matrix.hpp"

namespace uem {

// Minimum-cost assignment on a square cost matrix (Hungarian method).
// Returns assignment[row] = column.
std::vector<int> hungarian(const Matrix& cost);

double cosine_similarity(std::span<const double> a, std::span<const double> b);
double total_variation(std::span<const double> a, std::span<const double> b);

// Experience labels are not identifiable; this maps each reference row to the
// estimated row that maximizes the summed cosine similarity. Both matrices
// must have the same shape.
std::vector<int> align_groups(const Matrix& reference, const Matrix& estimate);

}  // namespace uem
