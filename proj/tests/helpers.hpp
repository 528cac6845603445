#pragma once

#include "ovb/dataio.hpp"
#include "ovb/dml.hpp"

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

namespace testing {

inline std::string temp_path(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "ovb_tests";
    std::filesystem::create_directories(dir);
    return (dir / name).string();
}

inline std::string write_text(const std::string& name, const std::string& text) {
    const std::string path = temp_path(name);
    std::ofstream(path, std::ios::binary) << text;
    return path;
}

inline ovb::Dataset make_data(const ovb::Vector& y, const ovb::Vector& d, const ovb::Matrix& x) {
    ovb::Dataset data;
    data.outcome = y;
    data.treatment = d;
    data.covariates = x;
    for (Eigen::Index j = 0; j < x.cols(); ++j) data.column_names.push_back("x" + std::to_string(j + 1));
    return data;
}

inline ovb::Matrix normal_matrix(std::mt19937_64& rng, Eigen::Index n, Eigen::Index p) {
    std::normal_distribution<double> z;
    ovb::Matrix m(n, p);
    for (Eigen::Index j = 0; j < p; ++j)
        for (Eigen::Index i = 0; i < n; ++i) m(i, j) = z(rng);
    return m;
}

// Every fold uses the same fixed functions.
inline ovb::NuisanceFit oracle_nuisances(Eigen::Index n, int folds, ovb::EvaluableFunction g,
                                         ovb::EvaluableFunction alpha,
                                         ovb::EvaluableFunction m_g = {},
                                         ovb::EvaluableFunction m_alpha = {}) {
    ovb::NuisanceFit fit;
    fit.plan = ovb::make_fold_plan(n, folds, 1);
    for (int k = 0; k < folds; ++k) fit.folds.push_back({g, alpha, m_g, m_alpha});
    return fit;
}

// Population of a discrete model written out row by row: cell (d, x) holds
// count[d][x] rows whose outcomes average to mean[d][x] (two values spread
// symmetrically around it). The empirical law of the rows is the model.
struct DiscreteToy {
    ovb::Dataset data;
    double cell_mean[2][3];
    double cell_prob[2][3];
    double propensity[3];
};

inline DiscreteToy discrete_toy() {
    const int count[2][3] = {{30, 12, 8}, {10, 18, 22}};
    const double mean[2][3] = {{0.5, 1.25, -2.0}, {2.0, 0.75, 3.5}};
    DiscreteToy t{};
    std::vector<double> y, d, x;
    double total = 0;
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 3; ++b) total += count[a][b];
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 3; ++b) {
            t.cell_mean[a][b] = mean[a][b];
            t.cell_prob[a][b] = count[a][b] / total;
            for (int k = 0; k < count[a][b]; ++k) {
                y.push_back(mean[a][b] + (k % 2 == 0 ? 0.3 : -0.3));
                d.push_back(a);
                x.push_back(b);
            }
        }
    for (int b = 0; b < 3; ++b) t.propensity[b] = t.cell_prob[1][b] / (t.cell_prob[0][b] + t.cell_prob[1][b]);
    const auto n = static_cast<Eigen::Index>(y.size());
    t.data = make_data(Eigen::Map<ovb::Vector>(y.data(), n), Eigen::Map<ovb::Vector>(d.data(), n),
                       Eigen::Map<ovb::Matrix>(x.data(), n, 1));
    return t;
}

}  // namespace testing
