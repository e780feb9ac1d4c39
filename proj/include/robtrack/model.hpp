#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Cholesky>

#include "robtrack/types.hpp"

namespace robtrack {

enum class ModelKind { Gaussian, StudentT, Empirical };

/// Parametric (or empirical) law of the per-period simple returns of the
/// index constituents.
///
/// For a Gaussian model `scale` is the covariance; for a Student-t model it is
/// the scale matrix, whose covariance is dof/(dof-2) * scale. The Cholesky
/// factor of `scale` is computed once at construction, which is also where a
/// non-positive-definite matrix is rejected.
class NominalModel {
public:
    static NominalModel gaussian(Vector mean, Matrix covariance);
    static NominalModel student_t(Vector location, Matrix scale, double dof);
    static NominalModel empirical(Matrix samples);

    ModelKind kind() const { return kind_; }
    Index dimension() const { return mean_.size(); }
    const Vector& mean() const { return mean_; }
    const Matrix& scale() const { return scale_; }
    double dof() const { return dof_; }
    const std::optional<Matrix>& samples() const { return samples_; }
    const Eigen::LLT<Matrix>& scale_factor() const { return llt_; }

    /// Covariance of the return vector. Student-t requires dof > 2.
    Matrix covariance() const;

    /// Same family and scale with the mean replaced.
    NominalModel with_mean(Vector mean) const;

    /// Log density at x. Not available for Empirical models.
    double log_density(const VectorCRef& x) const;

private:
    NominalModel() = default;
    void factorize();

    ModelKind kind_ = ModelKind::Gaussian;
    Vector mean_;
    Matrix scale_;
    double dof_ = 0.0;
    std::optional<Matrix> samples_;
    Eigen::LLT<Matrix> llt_;
    double log_det_scale_ = 0.0;
};

/// Mean-scaling perturbation mu2 = k * mu1 with the scale matrix kept.
struct PerturbationSpec {
    double k = 1.0;

    NominalModel apply(const NominalModel& nominal) const;
};

/// Index weights over the constituents: non-negative and summing to one.
class IndexComposition {
public:
    explicit IndexComposition(Vector weights);

    const Vector& weights() const { return weights_; }
    Index size() const { return weights_.size(); }

private:
    Vector weights_;
};

enum class ScenarioSource { Simulated, HistoricalWindow };

/// Gross asset returns R (one row per scenario) and gross index returns B.
/// This is the empirical measure standing in for the nominal distribution.
struct ScenarioSet {
    Matrix R;
    Vector B;
    Seed seed = 0;
    ScenarioSource source = ScenarioSource::Simulated;

    Index size() const { return R.rows(); }
    Index dimension() const { return R.cols(); }
};

Matrix sample_gaussian(const NominalModel& model, Index n, Seed seed);
Matrix sample_student_t(const NominalModel& model, Index n, Seed seed);

/// Dispatches on the model kind; Empirical models cannot be sampled.
Matrix sample(const NominalModel& model, Index n, Seed seed);

/// b_i = w^T r_i for each row of simple returns.
Vector synthesize_index(const MatrixCRef& asset_returns, const IndexComposition& composition);

/// Converts simple returns into gross returns R = 1 + r, B = 1 + b.
ScenarioSet scenarios_from(const MatrixCRef& asset_returns, const VectorCRef& index_returns,
                           Seed seed = 0, ScenarioSource source = ScenarioSource::Simulated);

/// Selects the given columns of a return matrix, in the given order.
Matrix select_columns(const MatrixCRef& m, const std::vector<Index>& columns);

struct PriceTable {
    std::vector<std::string> header;  // empty when the file had no header row
    Matrix prices;                    // periods x instruments
};

struct ReturnTable {
    std::vector<std::string> header;
    Matrix returns;  // (periods - 1) x instruments
};

/// Reads a comma-separated price file: optional single header row, one row per
/// period, one column per instrument, strictly positive prices.
PriceTable read_prices_csv(const std::filesystem::path& path);

/// Reads the OR-Library index-tracking format ("N T" then T index prices
/// followed by T prices for each of the N stocks). Column 0 is the index.
PriceTable read_orlib_prices(const std::filesystem::path& path);

/// r_t = p_t / p_{t-1} - 1 per column.
ReturnTable prices_to_returns(const PriceTable& prices);

/// read_prices_csv followed by prices_to_returns.
ReturnTable load_prices_csv(const std::filesystem::path& path);

}  // namespace robtrack
