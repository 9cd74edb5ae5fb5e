#pragma once

#include "olts/sample.hpp"

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <array>
#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace olts::solvers {

class SolverFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite state; the trajectory is aborted.
class Divergence : public SolverFailure {
public:
    using SolverFailure::SolverFailure;
};

enum class Kind { Heat, Lorenz, Advection };

Kind parse_kind(const std::string& text);
const char* to_string(Kind kind);

/// Number of timesteps emitted for t_total/dt steps, counting the initial state.
std::uint32_t emitted_steps(double t_total, double dt);

// ---------------------------------------------------------------- heat

struct HeatParams {
    double T_ic = 300.0;
    double T_x1 = 300.0;
    double T_x2 = 300.0;
    double T_y1 = 300.0;
    double T_y2 = 300.0;
    double alpha = 1.0;
    std::uint32_t n = 32;
    double dt = 0.01;
    double t_total = 1.0;
    double L = 1.0;
    double cg_tolerance = 1e-10;
};

/// Grid of n x n temperatures, row-major with row i along y and column j
/// along x. Columns 0 and n-1 hold T_x1 and T_x2, rows 0 and n-1 hold T_y1
/// and T_y2; the x edges own the four corners.
struct HeatState {
    Eigen::VectorXd grid;
    std::uint32_t t_index = 0;
};

/// Implicit Euler for u_t = alpha * Laplace(u) with Dirichlet edges, solved
/// for the interior unknowns with conjugate gradient.
class HeatSolver {
public:
    explicit HeatSolver(const HeatParams& p);

    HeatState initial_state() const;
    /// Advances one step. Throws SolverFailure if CG does not converge within
    /// 10 * n^2 iterations.
    HeatState step(const HeatState& state) const;

    const HeatParams& params() const noexcept { return p_; }
    /// CG iterations used by the most recent step.
    int last_iterations() const noexcept { return last_iterations_; }

private:
    HeatParams p_;
    Eigen::SparseMatrix<double> system_;  // I - alpha*dt*L_h on interior nodes
    mutable int last_iterations_ = 0;
};

HeatState heat_step(const HeatState& state, const HeatParams& p);

// ---------------------------------------------------------------- lorenz

enum class LorenzVariant {
    Standard,   ///< dx/dt = sigma (y - x)
    AsPrinted,  ///< dx/dt = sigma (y - z)
};

struct LorenzParams {
    double sigma = 10.0;
    double beta = 8.0 / 3.0;
    double rho = 28.0;
    double x0 = 1.0;
    double y0 = 1.0;
    double z0 = 1.0;
    double dt = 0.01;
    double t_total = 20.0;
    LorenzVariant variant = LorenzVariant::Standard;
};

using Vec3 = Eigen::Vector3d;

Vec3 lorenz_field(const Vec3& pos, const LorenzParams& p);
/// One explicit Euler step. Throws Divergence on a non-finite result.
Vec3 lorenz_step(const Vec3& pos, const LorenzParams& p);

// ---------------------------------------------------------------- advection

struct AdvectionParams {
    double beta = 1.0;
    std::uint32_t n = 64;
    double dt = 0.005;
    double t_total = 1.0;
    double L = 1.0;
    /// Initial profile; when empty, built from amplitude/wavenumber/phase.
    std::vector<double> u0;
    double amplitude = 1.0;
    double wavenumber = 1.0;
    double phase = 0.0;

    double dx() const { return L / n; }
    double cfl() const { return std::abs(beta) * dt / dx(); }
};

std::vector<double> advection_initial(const AdvectionParams& p);
/// First-order upwind update on a periodic grid.
std::vector<double> advect_step(std::span<const double> u, const AdvectionParams& p);

// ---------------------------------------------------------------- common

/// Knobs that are not part of the parameter vector.
struct SolverSettings {
    std::uint32_t heat_n = 32;
    double heat_dt = 0.01;
    double heat_t_total = 1.0;
    double heat_alpha = 1.0;
    double heat_L = 1.0;
    double lorenz_dt = 0.01;
    double lorenz_t_total = 20.0;
    LorenzVariant lorenz_variant = LorenzVariant::Standard;
    std::uint32_t adv_n = 64;
    double adv_dt = 0.005;
    double adv_t_total = 1.0;
    double adv_L = 1.0;
};

/// Parameter names each kind reads from a ParamVector.
std::vector<std::string> param_names(Kind kind);

/// A steppable solver instance emitting a flat field per timestep.
class Simulation {
public:
    virtual ~Simulation() = default;
    virtual std::vector<std::uint32_t> field_shape() const = 0;
    /// Number of fields emitted over the run, the initial one included.
    virtual std::uint32_t steps_total() const = 0;
    virtual std::uint32_t t_index() const = 0;
    virtual std::span<const double> field() const = 0;
    /// Advances one step; throws on divergence.
    virtual void advance() = 0;
    bool finished() const { return t_index() + 1 >= steps_total(); }
};

std::unique_ptr<Simulation> make_simulation(Kind kind, const ParamVector& params,
                                            const SolverSettings& settings);

using TimestepSink = std::function<void(std::uint32_t t_index, std::span<const double> field)>;

struct TrajectorySummary {
    std::uint32_t steps_emitted = 0;
    std::chrono::duration<double> wall_time{};
};

/// Runs to completion, calling sink after every step including t = 0.
/// Exceptions from the solver or the sink abort the run.
TrajectorySummary run_trajectory(Kind kind, const ParamVector& params, const SolverSettings& settings,
                                 const TimestepSink& sink);
TrajectorySummary run_trajectory(Simulation& sim, const TimestepSink& sink);

}  // namespace olts::solvers
