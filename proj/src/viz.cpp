#include "weaver/viz.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "weaver/error.hpp"

namespace weaver {

PcaFit pca_fit(std::span<const std::vector<double>> vectors) {
    if (vectors.size() < 3) {
        throw ArgumentError(fmt::format("pca: need at least 3 vectors, got {}", vectors.size()));
    }
    const std::size_t dim = vectors.front().size();
    if (dim < 2) {
        throw ArgumentError("pca: vectors need at least 2 dimensions");
    }
    for (const auto& v : vectors) {
        if (v.size() != dim) {
            throw ArgumentError("pca: inconsistent vector dimensions");
        }
    }
    const auto n = static_cast<Eigen::Index>(vectors.size());
    const auto d = static_cast<Eigen::Index>(dim);
    Eigen::MatrixXd x(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) {
            x(i, j) = vectors[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        }
    }
    const Eigen::RowVectorXd mean = x.colwise().mean();
    x.rowwise() -= mean;
    const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n - 1);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) {
        throw Error("pca: eigen-decomposition failed");
    }

    // Descending eigenvalue; equal eigenvalues keep solver index order.
    std::vector<Eigen::Index> order(static_cast<std::size_t>(d));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        return solver.eigenvalues()(a) > solver.eigenvalues()(b);
    });

    PcaFit fit;
    fit.mean.assign(mean.data(), mean.data() + d);
    Eigen::MatrixXd axes(d, 2);
    for (int c = 0; c < 2; ++c) {
        Eigen::VectorXd axis = solver.eigenvectors().col(order[static_cast<std::size_t>(c)]);
        Eigen::Index best = 0;
        for (Eigen::Index j = 1; j < d; ++j) {
            if (std::abs(axis(j)) > std::abs(axis(best))) {
                best = j;
            }
        }
        if (axis(best) < 0.0) {
            axis = -axis;
        }
        axes.col(c) = axis;
        fit.components[static_cast<std::size_t>(c)].assign(axis.data(), axis.data() + d);
        fit.eigenvalues[static_cast<std::size_t>(c)] = std::max(0.0, solver.eigenvalues()(order[static_cast<std::size_t>(c)]));
    }
    const Eigen::MatrixXd proj = x * axes;
    fit.coords.resize(vectors.size());
    for (Eigen::Index i = 0; i < n; ++i) {
        fit.coords[static_cast<std::size_t>(i)] = {proj(i, 0), proj(i, 1)};
    }
    return fit;
}

std::vector<Point2> pca_project(std::span<const std::vector<double>> vectors) {
    return pca_fit(vectors).coords;
}

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) {
        return s;
    }
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') {
            out += '"';
        }
        out += c;
    }
    out += '"';
    return out;
}

std::vector<std::string> split_csv_line(std::istream& in, const std::string& first_line) {
    std::vector<std::string> fields;
    std::string line = first_line;
    std::string cur;
    bool quoted = false;
    std::size_t i = 0;
    for (;;) {
        if (i == line.size()) {
            if (quoted) {
                // Quoted field spans a newline.
                cur += '\n';
                if (!std::getline(in, line)) {
                    throw InputError("projection CSV: unterminated quoted field");
                }
                i = 0;
                continue;
            }
            break;
        }
        const char c = line[i++];
        if (quoted) {
            if (c == '"') {
                if (i < line.size() && line[i] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    fields.push_back(std::move(cur));
    return fields;
}

}  // namespace

void export_projection(std::span<const ProjectionRecord> records, std::ostream& out) {
    out << "token,corpus,model_tag,x,y\n";
    for (const auto& r : records) {
        if (!std::isfinite(r.x) || !std::isfinite(r.y)) {
            throw ArgumentError(fmt::format("projection of '{}' has non-finite coordinates", r.token));
        }
        out << csv_field(r.token) << ',' << csv_field(r.corpus) << ',' << csv_field(r.model_tag) << ','
            << fmt::format("{:.6g},{:.6g}", r.x, r.y) << '\n';
    }
    if (!out) {
        throw Error("projection export: write failed");
    }
}

std::vector<ProjectionRecord> parse_projection(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != "token,corpus,model_tag,x,y") {
        throw InputError("projection CSV: missing header");
    }
    std::vector<ProjectionRecord> out;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const auto f = split_csv_line(in, line);
        if (f.size() != 5) {
            throw InputError(fmt::format("projection CSV: expected 5 fields, got {}", f.size()));
        }
        out.push_back(ProjectionRecord{f[0], f[1], f[2], std::stod(f[3]), std::stod(f[4])});
    }
    return out;
}

double centroid_distance(std::span<const Point2> a, std::span<const Point2> b) {
    if (a.empty() || b.empty()) {
        throw ArgumentError("centroid_distance: empty point set");
    }
    auto centroid = [](std::span<const Point2> pts) {
        Point2 c{0.0, 0.0};
        for (const auto& p : pts) {
            c[0] += p[0];
            c[1] += p[1];
        }
        c[0] /= static_cast<double>(pts.size());
        c[1] /= static_cast<double>(pts.size());
        return c;
    };
    const Point2 ca = centroid(a);
    const Point2 cb = centroid(b);
    return std::hypot(ca[0] - cb[0], ca[1] - cb[1]);
}

}  // namespace weaver
