#include "robtrack/model.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

#include "robtrack/errors.hpp"
#include "robtrack/parallel.hpp"
#include "robtrack/rng.hpp"

namespace robtrack {

namespace {

void require_finite(const MatrixCRef& m, const char* what) {
    if (!m.allFinite()) throw DataError(std::string(what) + ": non-finite entry");
}

void require_symmetric(const Matrix& m, const char* what) {
    if (m.rows() != m.cols()) {
        throw std::invalid_argument(std::string(what) + ": matrix is not square");
    }
    const double tol = 1e-12 * std::max(1.0, m.cwiseAbs().maxCoeff());
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > tol) {
        throw std::invalid_argument(std::string(what) + ": matrix is not symmetric");
    }
}

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

bool parse_double(const std::string& s, double& out) {
    if (s.empty()) return false;
    std::size_t used = 0;
    try {
        out = std::stod(s, &used);
    } catch (const std::exception&) {
        return false;
    }
    return used == s.size();
}

}  // namespace

// ---------------------------------------------------------------------------
// NominalModel

NominalModel NominalModel::gaussian(Vector mean, Matrix covariance) {
    NominalModel m;
    m.kind_ = ModelKind::Gaussian;
    m.mean_ = std::move(mean);
    m.scale_ = std::move(covariance);
    m.factorize();
    return m;
}

NominalModel NominalModel::student_t(Vector location, Matrix scale, double dof) {
    if (!(dof > 0.0) || !std::isfinite(dof)) {
        throw std::invalid_argument("student_t: dof must be positive and finite");
    }
    NominalModel m;
    m.kind_ = ModelKind::StudentT;
    m.mean_ = std::move(location);
    m.scale_ = std::move(scale);
    m.dof_ = dof;
    m.factorize();
    return m;
}

NominalModel NominalModel::empirical(Matrix samples) {
    if (samples.rows() < 2 || samples.cols() < 1) {
        throw std::invalid_argument("empirical: need at least two sample rows");
    }
    require_finite(samples, "empirical");
    NominalModel m;
    m.kind_ = ModelKind::Empirical;
    m.mean_ = samples.colwise().mean().transpose();
    const Matrix centered = samples.rowwise() - m.mean_.transpose();
    m.scale_ = centered.transpose() * centered / static_cast<double>(samples.rows() - 1);
    m.samples_ = std::move(samples);
    m.factorize();
    return m;
}

void NominalModel::factorize() {
    if (mean_.size() == 0) throw std::invalid_argument("model: empty mean vector");
    if (scale_.rows() != mean_.size()) {
        throw std::invalid_argument("model: mean and scale dimensions differ");
    }
    require_finite(mean_, "model mean");
    require_finite(scale_, "model scale");
    require_symmetric(scale_, "model scale");
    llt_.compute(scale_);
    if (llt_.info() != Eigen::Success) {
        throw NumericalError("model: scale matrix is not positive definite (Cholesky failed)");
    }
    log_det_scale_ = 2.0 * llt_.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

Matrix NominalModel::covariance() const {
    if (kind_ == ModelKind::StudentT) {
        if (!(dof_ > 2.0)) throw std::domain_error("student_t covariance requires dof > 2");
        return dof_ / (dof_ - 2.0) * scale_;
    }
    return scale_;
}

NominalModel NominalModel::with_mean(Vector mean) const {
    if (mean.size() != mean_.size()) throw std::invalid_argument("with_mean: dimension mismatch");
    if (kind_ == ModelKind::Empirical) {
        throw std::invalid_argument("with_mean: empirical models cannot be re-centred");
    }
    NominalModel m = *this;
    m.mean_ = std::move(mean);
    require_finite(m.mean_, "model mean");
    return m;
}

double NominalModel::log_density(const VectorCRef& x) const {
    if (x.size() != dimension()) throw std::invalid_argument("log_density: dimension mismatch");
    const double l = static_cast<double>(dimension());
    const Vector z = llt_.matrixL().solve(x - mean_);
    const double q = z.squaredNorm();
    switch (kind_) {
        case ModelKind::Gaussian:
            return -0.5 * (l * std::log(2.0 * std::numbers::pi) + log_det_scale_ + q);
        case ModelKind::StudentT:
            return std::lgamma(0.5 * (l + dof_)) - std::lgamma(0.5 * dof_) -
                   0.5 * l * std::log(std::numbers::pi * dof_) - 0.5 * log_det_scale_ -
                   0.5 * (l + dof_) * std::log1p(q / dof_);
        case ModelKind::Empirical:
            break;
    }
    throw std::invalid_argument("log_density: empirical models have no density");
}

NominalModel PerturbationSpec::apply(const NominalModel& nominal) const {
    if (!std::isfinite(k)) throw std::invalid_argument("perturbation: k must be finite");
    return nominal.with_mean(k * nominal.mean());
}

IndexComposition::IndexComposition(Vector weights) : weights_(std::move(weights)) {
    if (weights_.size() == 0) throw std::invalid_argument("composition: empty weight vector");
    if (!weights_.allFinite() || (weights_.array() < 0.0).any()) {
        throw std::invalid_argument("composition: weights must be finite and non-negative");
    }
    if (std::abs(weights_.sum() - 1.0) > 1e-12) {
        throw std::invalid_argument("composition: weights must sum to 1");
    }
}

// ---------------------------------------------------------------------------
// Sampling

namespace {

// Each chunk of rows owns an engine derived from (seed, chunk index); every
// row draws its standard normals first and then, for Student-t, its
// chi-square mixing variable.
template <bool StudentT>
Matrix sample_rows(const NominalModel& model, Index n, Seed seed) {
    if (n < 1) throw std::invalid_argument("sample: n must be >= 1");
    const Index l = model.dimension();
    const Matrix L = model.scale_factor().matrixL();
    Matrix out(n, l);
    for_each_chunk(n, [&](Index chunk, Index begin, Index end) {
        auto engine = make_engine(seed, static_cast<std::uint64_t>(chunk));
        std::normal_distribution<double> normal(0.0, 1.0);
        std::chi_squared_distribution<double> chi2(StudentT ? model.dof() : 1.0);
        Vector z(l);
        for (Index i = begin; i < end; ++i) {
            for (Index j = 0; j < l; ++j) z[j] = normal(engine);
            double scale = 1.0;
            if constexpr (StudentT) scale = std::sqrt(model.dof() / chi2(engine));
            out.row(i) = (model.mean() + scale * (L * z)).transpose();
        }
    });
    return out;
}

}  // namespace

Matrix sample_gaussian(const NominalModel& model, Index n, Seed seed) {
    if (model.kind() != ModelKind::Gaussian) {
        throw std::invalid_argument("sample_gaussian: model is not Gaussian");
    }
    return sample_rows<false>(model, n, seed);
}

Matrix sample_student_t(const NominalModel& model, Index n, Seed seed) {
    if (model.kind() != ModelKind::StudentT) {
        throw std::invalid_argument("sample_student_t: model is not Student-t");
    }
    return sample_rows<true>(model, n, seed);
}

Matrix sample(const NominalModel& model, Index n, Seed seed) {
    switch (model.kind()) {
        case ModelKind::Gaussian: return sample_gaussian(model, n, seed);
        case ModelKind::StudentT: return sample_student_t(model, n, seed);
        case ModelKind::Empirical: break;
    }
    throw std::invalid_argument("sample: empirical models cannot be sampled");
}

Vector synthesize_index(const MatrixCRef& asset_returns, const IndexComposition& composition) {
    if (asset_returns.cols() != composition.size()) {
        throw std::invalid_argument("synthesize_index: column count differs from composition size");
    }
    return asset_returns * composition.weights();
}

ScenarioSet scenarios_from(const MatrixCRef& asset_returns, const VectorCRef& index_returns,
                           Seed seed, ScenarioSource source) {
    if (asset_returns.rows() != index_returns.size()) {
        throw std::invalid_argument("scenarios_from: asset and index lengths differ");
    }
    if (asset_returns.rows() < 1 || asset_returns.cols() < 1) {
        throw std::invalid_argument("scenarios_from: empty scenario set");
    }
    require_finite(asset_returns, "scenarios_from: asset returns");
    require_finite(index_returns, "scenarios_from: index returns");
    ScenarioSet s;
    s.R = asset_returns.array() + 1.0;
    s.B = index_returns.array() + 1.0;
    s.seed = seed;
    s.source = source;
    return s;
}

Matrix select_columns(const MatrixCRef& m, const std::vector<Index>& columns) {
    Matrix out(m.rows(), static_cast<Index>(columns.size()));
    for (std::size_t j = 0; j < columns.size(); ++j) {
        if (columns[j] < 0 || columns[j] >= m.cols()) {
            throw std::invalid_argument("select_columns: column index out of range");
        }
        out.col(static_cast<Index>(j)) = m.col(columns[j]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Price files

PriceTable read_prices_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open price file: " + path.string());

    PriceTable table;
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t line_no = 0;
    std::size_t width = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        auto cells = split_csv_line(line);
        if (rows.empty() && table.header.empty()) {
            double probe = 0.0;
            const bool numeric = !cells.empty() && parse_double(cells.front(), probe);
            if (!numeric) {
                table.header = cells;
                width = cells.size();
                continue;
            }
        }
        if (width == 0) width = cells.size();
        if (cells.size() != width) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                            std::to_string(width) + " columns, found " +
                            std::to_string(cells.size()));
        }
        std::vector<double> values(cells.size());
        for (std::size_t j = 0; j < cells.size(); ++j) {
            if (!parse_double(cells[j], values[j]) || !std::isfinite(values[j])) {
                throw DataError(path.string() + ":" + std::to_string(line_no) +
                                ": non-numeric or missing cell in column " + std::to_string(j + 1));
            }
            if (values[j] <= 0.0) {
                throw DataError(path.string() + ":" + std::to_string(line_no) +
                                ": prices must be strictly positive");
            }
        }
        rows.push_back(std::move(values));
    }
    if (rows.size() < 2) throw DataError(path.string() + ": need at least two price rows");

    table.prices.resize(static_cast<Index>(rows.size()), static_cast<Index>(width));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < width; ++j) {
            table.prices(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
        }
    }
    return table;
}

PriceTable read_orlib_prices(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open price file: " + path.string());
    long stocks = 0;
    long periods = 0;
    if (!(in >> stocks >> periods) || stocks < 1 || periods < 2) {
        throw DataError(path.string() + ": bad OR-Library header");
    }
    PriceTable table;
    table.prices.resize(periods, stocks + 1);
    table.header.emplace_back("index");
    for (long s = 1; s <= stocks; ++s) table.header.push_back("stock" + std::to_string(s));
    for (long c = 0; c <= stocks; ++c) {
        for (long t = 0; t < periods; ++t) {
            double p = 0.0;
            if (!(in >> p) || !std::isfinite(p) || p <= 0.0) {
                throw DataError(path.string() + ": truncated or invalid price for series " +
                                std::to_string(c) + ", period " + std::to_string(t + 1));
            }
            table.prices(t, c) = p;
        }
    }
    return table;
}

ReturnTable prices_to_returns(const PriceTable& prices) {
    const Matrix& p = prices.prices;
    if (p.rows() < 2) throw DataError("prices_to_returns: need at least two rows");
    if ((p.array() <= 0.0).any() || !p.allFinite()) {
        throw DataError("prices_to_returns: prices must be finite and strictly positive");
    }
    ReturnTable out;
    out.header = prices.header;
    const Index T = p.rows() - 1;
    out.returns = p.bottomRows(T).array() / p.topRows(T).array() - 1.0;
    return out;
}

ReturnTable load_prices_csv(const std::filesystem::path& path) {
    return prices_to_returns(read_prices_csv(path));
}

}  // namespace robtrack
