#pragma once

#include "ovb/common.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ovb {

// Observed sample (Y, D, X). Rows of short_rows() are the short regressors
// W^s = (D, X) with the treatment in column 0.
struct Dataset {
    Vector outcome;
    Vector treatment;
    Matrix covariates;
    std::optional<std::vector<std::int64_t>> group_label;
    std::optional<std::vector<std::int64_t>> strata;
    std::vector<std::string> column_names;  // covariate names, length p
    std::string outcome_name = "y";
    std::string treatment_name = "d";

    Eigen::Index n() const { return outcome.size(); }
    Eigen::Index p() const { return covariates.cols(); }

    // [D | X], n x (p + 1).
    Matrix short_rows() const;
    // Names matching short_rows() columns.
    std::vector<std::string> short_names() const;

    bool treatment_is_binary() const;

    // Throws if lengths disagree, n < 2 or any value is non-finite.
    void validate() const;

    Dataset subset(const std::vector<Eigen::Index>& rows) const;
    Dataset without_covariate(Eigen::Index column) const;
};

struct CsvSchema {
    std::string outcome;
    std::string treatment;
    std::vector<std::string> covariates;
    std::optional<std::string> group;
    std::optional<std::string> strata;
};

// Reads an RFC-4180 CSV file with a header row. Missing or non-numeric cells
// in any selected column are errors (reported with the 1-based data row).
// Group and strata columns may hold arbitrary labels; they are coded to
// integers in order of first appearance.
Dataset load_csv(const std::string& path, const CsvSchema& schema);

// Parses CSV text into header + rows of raw cells.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};
CsvTable parse_csv(const std::string& text);

struct FoldPlan {
    Eigen::Index n = 0;
    int num_folds = 0;
    std::vector<int> assignment;
    std::uint64_t seed = 0;

    std::vector<Eigen::Index> test_rows(int fold) const;
    std::vector<Eigen::Index> train_rows(int fold) const;
    std::vector<Eigen::Index> fold_sizes() const;
};

inline constexpr int kDefaultFolds = 5;

// Random partition of 0..n-1 into L folds.
//  - plain: shuffled indices dealt round-robin (sizes differ by at most one);
//  - grouped: whole groups are assigned, largest first, to the currently
//    smallest fold;
//  - stratified: rows (or groups) sorted by stratum, shuffled within stratum,
//    dealt round-robin with the counter carried across strata.
FoldPlan make_fold_plan(Eigen::Index n, int num_folds, std::uint64_t seed,
                        const std::optional<std::vector<std::int64_t>>& groups = std::nullopt,
                        const std::optional<std::vector<std::int64_t>>& strata = std::nullopt);

}  // namespace ovb
