#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gpsdd/rng.hpp"

namespace gpsdd {

struct Error : std::runtime_error {
    enum class Code {
        missing_file,
        non_numeric_cell,
        empty_file,
        bad_argument,
        zero_variance_column,
        dimension_mismatch,
        not_positive_definite,
        non_differentiable,
        solver_divergence,
        unsupported,
    };
    Error(Code c, const std::string& msg) : std::runtime_error(msg), code(c) {}
    Code code;
};

/// Per-column affine transform x -> (x - shift) / scale recorded so that
/// standardization can be inverted.
struct Standardization {
    Eigen::VectorXd input_shift, input_scale;  // size d' (empty if identity)
    double target_shift = 0.0, target_scale = 1.0;
    bool applied = false;
};

struct Dataset {
    Eigen::MatrixXd inputs;   // n x d'
    Eigen::VectorXd targets;  // n
    Standardization standardization;
    std::vector<std::string> column_names;  // feature names then target name

    Eigen::Index n() const { return inputs.rows(); }
    Eigen::Index dim() const { return inputs.cols(); }

    double unstandardize_target(double y) const {
        return y * standardization.target_scale + standardization.target_shift;
    }
};

struct NoiseModel {
    double precision;  // b > 0
    explicit NoiseModel(double b) : precision(b) {
        if (!(b > 0.0) || !std::isfinite(b))
            throw Error(Error::Code::bad_argument, "noise precision must be positive and finite");
    }
    double variance() const { return 1.0 / precision; }
};

struct SplitSpec {
    double train_fraction = 0.9;
    std::uint64_t shuffle_seed = 0;
};

inline Dataset load_csv(const std::string& path, const std::string& target_column) {
    std::ifstream in(path);
    if (!in) throw Error(Error::Code::missing_file, "cannot open " + path);

    std::string line;
    if (!std::getline(in, line)) throw Error(Error::Code::empty_file, path + " is empty");

    auto split_row = [](const std::string& s) {
        std::vector<std::string> out;
        std::stringstream ss(s);
        std::string cell;
        while (std::getline(ss, cell, ',')) out.push_back(cell);
        if (!s.empty() && s.back() == ',') out.push_back("");
        return out;
    };

    std::vector<std::string> header = split_row(line);
    auto target_it = std::find(header.begin(), header.end(), target_column);
    if (target_it == header.end())
        throw Error(Error::Code::bad_argument, "target column '" + target_column + "' not found");
    const std::size_t target_idx = static_cast<std::size_t>(target_it - header.begin());

    std::vector<std::vector<double>> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto cells = split_row(line);
        if (cells.size() != header.size())
            throw Error(Error::Code::non_numeric_cell,
                        path + ":" + std::to_string(lineno) + ": expected " +
                            std::to_string(header.size()) + " cells, got " +
                            std::to_string(cells.size()));
        std::vector<double> row(cells.size());
        for (std::size_t j = 0; j < cells.size(); ++j) {
            try {
                std::size_t pos = 0;
                row[j] = std::stod(cells[j], &pos);
                while (pos < cells[j].size() && std::isspace(static_cast<unsigned char>(cells[j][pos]))) ++pos;
                if (pos != cells[j].size()) throw std::invalid_argument("trailing junk");
            } catch (const std::exception&) {
                throw Error(Error::Code::non_numeric_cell,
                            path + ":" + std::to_string(lineno) + ": non-numeric cell '" + cells[j] + "'");
            }
            if (!std::isfinite(row[j]))
                throw Error(Error::Code::non_numeric_cell,
                            path + ":" + std::to_string(lineno) + ": non-finite cell");
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw Error(Error::Code::empty_file, path + " has no data rows");

    Dataset ds;
    const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
    const Eigen::Index d = static_cast<Eigen::Index>(header.size()) - 1;
    ds.inputs.resize(n, d);
    ds.targets.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::Index col = 0;
        for (std::size_t j = 0; j < header.size(); ++j) {
            if (j == target_idx)
                ds.targets(i) = rows[static_cast<std::size_t>(i)][j];
            else
                ds.inputs(i, col++) = rows[static_cast<std::size_t>(i)][j];
        }
    }
    for (std::size_t j = 0; j < header.size(); ++j)
        if (j != target_idx) ds.column_names.push_back(header[j]);
    ds.column_names.push_back(header[target_idx]);
    return ds;
}

inline void write_csv(const std::string& path, const Dataset& ds) {
    std::ofstream out(path);
    if (!out) throw Error(Error::Code::missing_file, "cannot write " + path);
    out.precision(17);
    for (Eigen::Index j = 0; j < ds.dim(); ++j) {
        if (!ds.column_names.empty())
            out << ds.column_names[static_cast<std::size_t>(j)] << ",";
        else
            out << "x" << j << ",";
    }
    out << (ds.column_names.empty() ? "y" : ds.column_names.back()) << "\n";
    for (Eigen::Index i = 0; i < ds.n(); ++i) {
        for (Eigen::Index j = 0; j < ds.dim(); ++j) out << ds.inputs(i, j) << ",";
        out << ds.targets(i) << "\n";
    }
}

/// Shift/scale every input column and the target column to mean 0, std 1.
/// Uses the population standard deviation (1/n).
inline Dataset standardize(const Dataset& ds) {
    if (ds.n() < 2) throw Error(Error::Code::bad_argument, "standardize needs n >= 2");
    Dataset out = ds;
    const double n = static_cast<double>(ds.n());
    out.standardization.input_shift.resize(ds.dim());
    out.standardization.input_scale.resize(ds.dim());
    for (Eigen::Index j = 0; j < ds.dim(); ++j) {
        const double mu = ds.inputs.col(j).mean();
        const double sd = std::sqrt((ds.inputs.col(j).array() - mu).square().sum() / n);
        if (sd <= 0.0)
            throw Error(Error::Code::zero_variance_column,
                        "input column " + std::to_string(j) + " is constant");
        out.inputs.col(j) = (ds.inputs.col(j).array() - mu) / sd;
        out.standardization.input_shift(j) = mu;
        out.standardization.input_scale(j) = sd;
    }
    const double ymu = ds.targets.mean();
    const double ysd = std::sqrt((ds.targets.array() - ymu).square().sum() / n);
    if (ysd <= 0.0) throw Error(Error::Code::zero_variance_column, "target column is constant");
    out.targets = (ds.targets.array() - ymu) / ysd;
    out.standardization.target_shift = ymu;
    out.standardization.target_scale = ysd;
    out.standardization.applied = true;
    return out;
}

/// Apply a previously recorded transform (e.g. train statistics to test data).
inline Dataset apply_standardization(const Dataset& ds, const Standardization& st) {
    Dataset out = ds;
    if (!st.applied) return out;
    for (Eigen::Index j = 0; j < ds.dim(); ++j)
        out.inputs.col(j) = (ds.inputs.col(j).array() - st.input_shift(j)) / st.input_scale(j);
    out.targets = (ds.targets.array() - st.target_shift) / st.target_scale;
    out.standardization = st;
    return out;
}

inline std::pair<Dataset, Dataset> split(const Dataset& ds, const SplitSpec& spec, RngStream rng) {
    if (ds.n() < 2) throw Error(Error::Code::bad_argument, "split needs n >= 2");
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(ds.n()));
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng.engine());
    const Eigen::Index n_train =
        static_cast<Eigen::Index>(spec.train_fraction * static_cast<double>(ds.n()));

    auto take = [&](Eigen::Index lo, Eigen::Index hi) {
        Dataset part;
        part.inputs.resize(hi - lo, ds.dim());
        part.targets.resize(hi - lo);
        for (Eigen::Index i = lo; i < hi; ++i) {
            part.inputs.row(i - lo) = ds.inputs.row(idx[static_cast<std::size_t>(i)]);
            part.targets(i - lo) = ds.targets(idx[static_cast<std::size_t>(i)]);
        }
        part.standardization = ds.standardization;
        part.column_names = ds.column_names;
        return part;
    };
    return {take(0, n_train), take(n_train, ds.n())};
}

}  // namespace gpsdd
