#pragma once

#include <array>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace weaver {

using Point2 = std::array<double, 2>;

struct PcaFit {
    std::vector<double> mean;
    // Top-2 principal axes, unit length, ordered by descending eigenvalue.
    std::array<std::vector<double>, 2> components;
    std::array<double, 2> eigenvalues{};
    std::vector<Point2> coords;
};

// Needs >= 3 vectors of one dimension >= 2; throws ArgumentError otherwise.
// Each axis is signed so that its largest-magnitude loading is positive.
PcaFit pca_fit(std::span<const std::vector<double>> vectors);
std::vector<Point2> pca_project(std::span<const std::vector<double>> vectors);

struct ProjectionRecord {
    std::string token;
    std::string corpus;
    std::string model_tag;
    double x = 0.0;
    double y = 0.0;
};

// CSV with header token,corpus,model_tag,x,y; coordinates with 6 significant digits.
void export_projection(std::span<const ProjectionRecord> records, std::ostream& out);
std::vector<ProjectionRecord> parse_projection(std::istream& in);

// Euclidean distance between the centroids of two point sets.
double centroid_distance(std::span<const Point2> a, std::span<const Point2> b);

}  // namespace weaver
