#include "olts/solvers.hpp"

#include <Eigen/IterativeLinearSolvers>

#include <cmath>
#include <numbers>

namespace olts::solvers {

Kind parse_kind(const std::string& text) {
    if (text == "heat") return Kind::Heat;
    if (text == "lorenz") return Kind::Lorenz;
    if (text == "advection") return Kind::Advection;
    throw std::invalid_argument("unknown solver kind '" + text + "'");
}

const char* to_string(Kind kind) {
    switch (kind) {
        case Kind::Heat: return "heat";
        case Kind::Lorenz: return "lorenz";
        case Kind::Advection: return "advection";
    }
    return "?";
}

std::uint32_t emitted_steps(double t_total, double dt) {
    if (!(dt > 0.0) || !(t_total >= 0.0)) throw std::invalid_argument("need dt > 0 and t_total >= 0");
    return static_cast<std::uint32_t>(std::llround(t_total / dt)) + 1;
}

// ---------------------------------------------------------------- heat

namespace {

struct ConjugateGradient {
    Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper> cg;
};

void check_heat(const HeatParams& p) {
    if (p.n < 3) throw std::invalid_argument("heat grid needs n >= 3");
    if (!(p.dt > 0.0) || !(p.alpha > 0.0) || !(p.L > 0.0))
        throw std::invalid_argument("heat needs dt > 0, alpha > 0, L > 0");
}

}  // namespace

HeatSolver::HeatSolver(const HeatParams& p) : p_(p) {
    check_heat(p_);
    const int m = static_cast<int>(p_.n) - 2;
    const double dx = p_.L / (p_.n - 1);
    const double r = p_.alpha * p_.dt / (dx * dx);

    std::vector<Eigen::Triplet<double>> entries;
    entries.reserve(static_cast<std::size_t>(5 * m * m));
    const auto id = [m](int i, int j) { return i * m + j; };
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) {
            entries.emplace_back(id(i, j), id(i, j), 1.0 + 4.0 * r);
            if (i > 0) entries.emplace_back(id(i, j), id(i - 1, j), -r);
            if (i + 1 < m) entries.emplace_back(id(i, j), id(i + 1, j), -r);
            if (j > 0) entries.emplace_back(id(i, j), id(i, j - 1), -r);
            if (j + 1 < m) entries.emplace_back(id(i, j), id(i, j + 1), -r);
        }
    }
    system_.resize(m * m, m * m);
    system_.setFromTriplets(entries.begin(), entries.end());
    system_.makeCompressed();
}

HeatState HeatSolver::initial_state() const {
    const auto n = static_cast<Eigen::Index>(p_.n);
    HeatState s;
    s.grid = Eigen::VectorXd::Constant(n * n, p_.T_ic);
    for (Eigen::Index j = 0; j < n; ++j) {
        s.grid(j) = p_.T_y1;
        s.grid((n - 1) * n + j) = p_.T_y2;
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        s.grid(i * n) = p_.T_x1;
        s.grid(i * n + n - 1) = p_.T_x2;
    }
    return s;
}

HeatState HeatSolver::step(const HeatState& state) const {
    const auto n = static_cast<Eigen::Index>(p_.n);
    const Eigen::Index m = n - 2;
    if (state.grid.size() != n * n) throw std::invalid_argument("heat state does not match grid size");
    const double dx = p_.L / (p_.n - 1);
    const double r = p_.alpha * p_.dt / (dx * dx);

    // Solve for the increment: (I - r L) delta = r L u, zero initial guess.
    const auto& u = state.grid;
    Eigen::VectorXd rhs(m * m);
    for (Eigen::Index i = 1; i <= m; ++i) {
        for (Eigen::Index j = 1; j <= m; ++j) {
            const Eigen::Index k = i * n + j;
            rhs((i - 1) * m + (j - 1)) = r * (u(k - n) + u(k + n) + u(k - 1) + u(k + 1) - 4.0 * u(k));
        }
    }

    HeatState next{u, state.t_index + 1};
    if (rhs.isZero(0.0)) {
        last_iterations_ = 0;
        return next;
    }

    ConjugateGradient solver;
    solver.cg.setTolerance(p_.cg_tolerance);
    solver.cg.setMaxIterations(static_cast<Eigen::Index>(10) * n * n);
    solver.cg.compute(system_);
    const Eigen::VectorXd delta = solver.cg.solve(rhs);
    last_iterations_ = static_cast<int>(solver.cg.iterations());
    if (solver.cg.info() != Eigen::Success)
        throw SolverFailure("heat CG did not converge (residual " + std::to_string(solver.cg.error()) + ")");

    for (Eigen::Index i = 1; i <= m; ++i)
        for (Eigen::Index j = 1; j <= m; ++j) next.grid(i * n + j) += delta((i - 1) * m + (j - 1));
    if (!next.grid.allFinite()) throw Divergence("heat field became non-finite");
    return next;
}

HeatState heat_step(const HeatState& state, const HeatParams& p) {
    return HeatSolver(p).step(state);
}

// ---------------------------------------------------------------- lorenz

Vec3 lorenz_field(const Vec3& pos, const LorenzParams& p) {
    const double x = pos.x(), y = pos.y(), z = pos.z();
    const double dx = p.variant == LorenzVariant::Standard ? p.sigma * (y - x) : p.sigma * (y - z);
    return {dx, x * (p.rho - z) - y, x * y - p.beta * z};
}

Vec3 lorenz_step(const Vec3& pos, const LorenzParams& p) {
    Vec3 next = pos + p.dt * lorenz_field(pos, p);
    if (!next.allFinite()) throw Divergence("lorenz trajectory diverged");
    return next;
}

// ---------------------------------------------------------------- advection

std::vector<double> advection_initial(const AdvectionParams& p) {
    if (!p.u0.empty()) {
        if (p.u0.size() != p.n) throw std::invalid_argument("u0 length differs from n");
        return p.u0;
    }
    std::vector<double> u(p.n);
    for (std::uint32_t i = 0; i < p.n; ++i) {
        const double x = (i + 0.5) * p.dx();
        u[i] = p.amplitude * std::sin(2.0 * std::numbers::pi * p.wavenumber * x / p.L + p.phase);
    }
    return u;
}

std::vector<double> advect_step(std::span<const double> u, const AdvectionParams& p) {
    if (!std::isfinite(p.beta)) throw std::invalid_argument("advection speed must be finite");
    const std::size_t n = u.size();
    std::vector<double> out(n);
    const double c = std::abs(p.beta) * p.dt / (p.L / static_cast<double>(n));
    // Convex form so that c == 1 reproduces the upwind neighbour bit for bit.
    for (std::size_t i = 0; i < n; ++i) {
        const double upwind = p.beta >= 0.0 ? u[(i + n - 1) % n] : u[(i + 1) % n];
        out[i] = (1.0 - c) * u[i] + c * upwind;
    }
    return out;
}

// ---------------------------------------------------------------- common

std::vector<std::string> param_names(Kind kind) {
    switch (kind) {
        case Kind::Heat: return {"T_ic", "T_x1", "T_x2", "T_y1", "T_y2"};
        case Kind::Lorenz: return {"rho", "x0", "y0", "z0"};
        case Kind::Advection: return {"beta", "amplitude", "wavenumber", "phase"};
    }
    return {};
}

namespace {

double param_or(const ParamVector& params, const char* name, double fallback) {
    return params.find(name).value_or(fallback);
}

class HeatSimulation final : public Simulation {
public:
    explicit HeatSimulation(const HeatParams& p)
        : solver_(p), state_(solver_.initial_state()), steps_(emitted_steps(p.t_total, p.dt)) {}

    std::vector<std::uint32_t> field_shape() const override {
        return {solver_.params().n, solver_.params().n};
    }
    std::uint32_t steps_total() const override { return steps_; }
    std::uint32_t t_index() const override { return state_.t_index; }
    std::span<const double> field() const override {
        return {state_.grid.data(), static_cast<std::size_t>(state_.grid.size())};
    }
    void advance() override { state_ = solver_.step(state_); }

private:
    HeatSolver solver_;
    HeatState state_;
    std::uint32_t steps_;
};

class LorenzSimulation final : public Simulation {
public:
    explicit LorenzSimulation(const LorenzParams& p)
        : p_(p), pos_(p.x0, p.y0, p.z0), steps_(emitted_steps(p.t_total, p.dt)) {}

    std::vector<std::uint32_t> field_shape() const override { return {3}; }
    std::uint32_t steps_total() const override { return steps_; }
    std::uint32_t t_index() const override { return t_; }
    std::span<const double> field() const override { return {pos_.data(), 3}; }
    void advance() override {
        pos_ = lorenz_step(pos_, p_);
        ++t_;
    }

private:
    LorenzParams p_;
    Vec3 pos_;
    std::uint32_t t_ = 0;
    std::uint32_t steps_;
};

class AdvectionSimulation final : public Simulation {
public:
    explicit AdvectionSimulation(const AdvectionParams& p)
        : p_(p), u_(advection_initial(p)), steps_(emitted_steps(p.t_total, p.dt)) {}

    std::vector<std::uint32_t> field_shape() const override { return {p_.n}; }
    std::uint32_t steps_total() const override { return steps_; }
    std::uint32_t t_index() const override { return t_; }
    std::span<const double> field() const override { return u_; }
    void advance() override {
        u_ = advect_step(u_, p_);
        ++t_;
    }

private:
    AdvectionParams p_;
    std::vector<double> u_;
    std::uint32_t t_ = 0;
    std::uint32_t steps_;
};

}  // namespace

std::unique_ptr<Simulation> make_simulation(Kind kind, const ParamVector& params,
                                            const SolverSettings& s) {
    switch (kind) {
        case Kind::Heat: {
            HeatParams p;
            p.T_ic = params.at("T_ic");
            p.T_x1 = params.at("T_x1");
            p.T_x2 = params.at("T_x2");
            p.T_y1 = params.at("T_y1");
            p.T_y2 = params.at("T_y2");
            p.alpha = s.heat_alpha;
            p.n = s.heat_n;
            p.dt = s.heat_dt;
            p.t_total = s.heat_t_total;
            p.L = s.heat_L;
            return std::make_unique<HeatSimulation>(p);
        }
        case Kind::Lorenz: {
            LorenzParams p;
            p.rho = params.at("rho");
            p.x0 = params.at("x0");
            p.y0 = params.at("y0");
            p.z0 = params.at("z0");
            p.dt = s.lorenz_dt;
            p.t_total = s.lorenz_t_total;
            p.variant = s.lorenz_variant;
            return std::make_unique<LorenzSimulation>(p);
        }
        case Kind::Advection: {
            AdvectionParams p;
            p.beta = params.at("beta");
            p.amplitude = param_or(params, "amplitude", 1.0);
            p.wavenumber = param_or(params, "wavenumber", 1.0);
            p.phase = param_or(params, "phase", 0.0);
            p.n = s.adv_n;
            p.dt = s.adv_dt;
            p.t_total = s.adv_t_total;
            p.L = s.adv_L;
            return std::make_unique<AdvectionSimulation>(p);
        }
    }
    throw std::invalid_argument("unknown solver kind");
}

TrajectorySummary run_trajectory(Simulation& sim, const TimestepSink& sink) {
    const auto start = std::chrono::steady_clock::now();
    TrajectorySummary summary;
    for (;;) {
        sink(sim.t_index(), sim.field());
        ++summary.steps_emitted;
        if (sim.finished()) break;
        sim.advance();
    }
    summary.wall_time = std::chrono::steady_clock::now() - start;
    return summary;
}

TrajectorySummary run_trajectory(Kind kind, const ParamVector& params, const SolverSettings& settings,
                                 const TimestepSink& sink) {
    auto sim = make_simulation(kind, params, settings);
    return run_trajectory(*sim, sink);
}

}  // namespace olts::solvers
