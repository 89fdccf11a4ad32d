#pragma once

#include <cmath>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "enrf/errors.hpp"
#include "enrf/rng.hpp"

namespace enrf {

struct Lorenz63Params {
    double sigma = 10.0;
    double beta = 8.0 / 3.0;
    double rho = 28.0;
};

struct Lorenz96Params {
    double forcing = 8.0;
    int n = 20;
};

inline void lorenz63_rhs(const Eigen::VectorXd& x, const Lorenz63Params& p,
                         Eigen::VectorXd& dx) {
    dx(0) = p.sigma * (x(1) - x(0));
    dx(1) = x(0) * (p.rho - x(2)) - x(1);
    dx(2) = x(0) * x(1) - p.beta * x(2);
}

inline void lorenz96_rhs(const Eigen::VectorXd& x, double forcing, Eigen::VectorXd& dx) {
    const Eigen::Index n = x.size();
    if (n < 4) throw ArgumentError("lorenz96_rhs: need n >= 4");
    dx(0) = (x(1) - x(n - 2)) * x(n - 1) - x(0) + forcing;
    dx(1) = (x(2) - x(n - 1)) * x(0) - x(1) + forcing;
    for (Eigen::Index i = 2; i < n - 1; ++i)
        dx(i) = (x(i + 1) - x(i - 2)) * x(i - 1) - x(i) + forcing;
    dx(n - 1) = (x(0) - x(n - 3)) * x(n - 2) - x(n - 1) + forcing;
}

/// Embedded Dormand-Prince 5(4) with PI step-size control. The workspace is
/// reusable across calls so ensemble forecast loops stay allocation-free.
class DormandPrince5 {
public:
    DormandPrince5(Eigen::Index dim, double abs_tol, double rel_tol)
        : atol_(abs_tol), rtol_(rel_tol) {
        for (auto* k : {&k1_, &k2_, &k3_, &k4_, &k5_, &k6_, &k7_, &ytmp_, &yerr_})
            k->resize(dim);
    }

    /// Advance x from t0 to t1 in place. rhs(x, dx) evaluates the vector field.
    template <class Rhs>
    void integrate(Rhs&& rhs, Eigen::VectorXd& x, double t0, double t1) {
        if (t1 < t0) throw ArgumentError("integrate: t1 must be >= t0");
        if (t1 == t0) return;
        double t = t0;
        rhs(x, k1_);
        double h = initial_step(rhs, x, t0, t1);
        double err_old = 1e-4;
        bool last = false;
        for (long step = 0; step < kMaxSteps; ++step) {
            if (h < 16.0 * std::numeric_limits<double>::epsilon() * std::max(std::abs(t), 1.0))
                throw StiffnessError("integrate: step size underflow");
            if (t + 1.01 * h >= t1) {
                h = t1 - t;
                last = true;
            }

            ytmp_ = x + h * (kA21 * k1_);
            rhs(ytmp_, k2_);
            ytmp_ = x + h * (kA31 * k1_ + kA32 * k2_);
            rhs(ytmp_, k3_);
            ytmp_ = x + h * (kA41 * k1_ + kA42 * k2_ + kA43 * k3_);
            rhs(ytmp_, k4_);
            ytmp_ = x + h * (kA51 * k1_ + kA52 * k2_ + kA53 * k3_ + kA54 * k4_);
            rhs(ytmp_, k5_);
            ytmp_ = x + h * (kA61 * k1_ + kA62 * k2_ + kA63 * k3_ + kA64 * k4_ + kA65 * k5_);
            rhs(ytmp_, k6_);
            ytmp_ = x + h * (kA71 * k1_ + kA73 * k3_ + kA74 * k4_ + kA75 * k5_ + kA76 * k6_);
            rhs(ytmp_, k7_);  // FSAL: ytmp_ is the 5th-order solution
            yerr_ = h * (kE1 * k1_ + kE3 * k3_ + kE4 * k4_ + kE5 * k5_ + kE6 * k6_ + kE7 * k7_);

            double err = 0.0;
            for (Eigen::Index i = 0; i < x.size(); ++i) {
                const double sk = atol_ + rtol_ * std::max(std::abs(x(i)), std::abs(ytmp_(i)));
                const double e = yerr_(i) / sk;
                err += e * e;
            }
            err = std::sqrt(err / static_cast<double>(x.size()));

            if (err <= 1.0) {
                t += h;
                x.swap(ytmp_);
                k1_.swap(k7_);
                if (last || t >= t1) return;
                const double fac = kSafe * std::pow(err > 0 ? err : 1e-30, -kExpo1) *
                                   std::pow(err_old, kBeta);
                h *= std::min(kFacMax, std::max(kFacMin, fac));
                err_old = std::max(err, 1e-4);
            } else {
                last = false;
                h *= std::max(kFacMin, kSafe * std::pow(err, -0.2));
            }
        }
        throw StiffnessError("integrate: exceeded maximum step count");
    }

private:
    template <class Rhs>
    double initial_step(Rhs&& rhs, const Eigen::VectorXd& x, double t0, double t1) {
        // Hairer-style hinit on the scaled norms, capped at the interval.
        double dnf = 0.0, dny = 0.0;
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            const double sk = atol_ + rtol_ * std::abs(x(i));
            dnf += (k1_(i) / sk) * (k1_(i) / sk);
            dny += (x(i) / sk) * (x(i) / sk);
        }
        double h = (dnf <= 1e-10 || dny <= 1e-10) ? 1e-6 : 0.01 * std::sqrt(dny / dnf);
        h = std::min(h, t1 - t0);
        ytmp_ = x + h * k1_;
        rhs(ytmp_, k2_);
        double der2 = 0.0;
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            const double sk = atol_ + rtol_ * std::abs(x(i));
            const double d = (k2_(i) - k1_(i)) / sk;
            der2 += d * d;
        }
        der2 = std::sqrt(der2) / h;
        const double der12 = std::max(der2, std::sqrt(dnf));
        const double h1 = der12 <= 1e-15 ? std::max(1e-6, h * 1e-3)
                                         : std::pow(0.01 / der12, 0.2);
        return std::min({100.0 * h, h1, t1 - t0});
    }

    static constexpr long kMaxSteps = 100000;
    static constexpr double kSafe = 0.9, kFacMin = 0.2, kFacMax = 10.0;
    static constexpr double kBeta = 0.04, kExpo1 = 0.2 - kBeta * 0.75;
    static constexpr double kA21 = 0.2;
    static constexpr double kA31 = 3.0 / 40.0, kA32 = 9.0 / 40.0;
    static constexpr double kA41 = 44.0 / 45.0, kA42 = -56.0 / 15.0, kA43 = 32.0 / 9.0;
    static constexpr double kA51 = 19372.0 / 6561.0, kA52 = -25360.0 / 2187.0,
                            kA53 = 64448.0 / 6561.0, kA54 = -212.0 / 729.0;
    static constexpr double kA61 = 9017.0 / 3168.0, kA62 = -355.0 / 33.0,
                            kA63 = 46732.0 / 5247.0, kA64 = 49.0 / 176.0,
                            kA65 = -5103.0 / 18656.0;
    static constexpr double kA71 = 35.0 / 384.0, kA73 = 500.0 / 1113.0,
                            kA74 = 125.0 / 192.0, kA75 = -2187.0 / 6784.0,
                            kA76 = 11.0 / 84.0;
    static constexpr double kE1 = 71.0 / 57600.0, kE3 = -71.0 / 16695.0,
                            kE4 = 71.0 / 1920.0, kE5 = -17253.0 / 339200.0,
                            kE6 = 22.0 / 525.0, kE7 = -1.0 / 40.0;

    double atol_, rtol_;
    Eigen::VectorXd k1_, k2_, k3_, k4_, k5_, k6_, k7_, ytmp_, yerr_;
};

/// One-shot integration of a callable vector field.
template <class Rhs>
Eigen::VectorXd integrate(Rhs&& rhs, const Eigen::VectorXd& x0, double t0, double t1,
                          std::pair<double, double> tol = {1e-8, 1e-8}) {
    DormandPrince5 stepper(x0.size(), tol.first, tol.second);
    Eigen::VectorXd x = x0;
    stepper.integrate(rhs, x, t0, t1);
    return x;
}

enum class ObsOperator { Identity, EveryOther };
enum class ObsNoiseKind { Gaussian, StudentT };

/// State-space model: chaotic flow integrated over dt_obs plus Gaussian
/// process noise, observed through a selection operator with Gaussian or
/// multivariate-t noise. obs_noise_scale_sq is sigma_eps^2 (Gaussian) or
/// c_eps^2 (t); zero is the exact-observation sentinel.
struct StateSpaceModel {
    std::variant<Lorenz63Params, Lorenz96Params> rhs = Lorenz63Params{};
    double dt_obs = 0.1;
    double process_noise_var = 1e-4;
    ObsOperator obs_operator = ObsOperator::Identity;
    ObsNoiseKind obs_noise_kind = ObsNoiseKind::Gaussian;
    double obs_noise_scale_sq = 1.0;
    double obs_noise_dof = 3.0;
    double integrator_abs_tol = 1e-8;
    double integrator_rel_tol = 1e-8;

    int state_dim() const {
        if (std::holds_alternative<Lorenz63Params>(rhs)) return 3;
        return std::get<Lorenz96Params>(rhs).n;
    }
    int obs_dim() const {
        const int n = state_dim();
        return obs_operator == ObsOperator::Identity ? n : (n + 1) / 2;
    }
    void validate() const {
        if (dt_obs <= 0.0) throw ArgumentError("StateSpaceModel: dt_obs must be > 0");
        if (process_noise_var < 0.0 || obs_noise_scale_sq < 0.0)
            throw ArgumentError("StateSpaceModel: noise levels must be >= 0");
        if (obs_noise_kind == ObsNoiseKind::StudentT && obs_noise_dof <= 2.0)
            throw ArgumentError("StateSpaceModel: t-noise dof must be > 2");
    }
};

/// Reusable integrator workspace for per-particle forecast loops.
class ForecastWorkspace {
public:
    explicit ForecastWorkspace(const StateSpaceModel& model)
        : stepper_(model.state_dim(), model.integrator_abs_tol, model.integrator_rel_tol) {}
    DormandPrince5& stepper() { return stepper_; }

private:
    DormandPrince5 stepper_;
};

/// X_{t+1} = f(X_t) + W_t: integrate over dt_obs, then add the process noise.
inline Eigen::VectorXd forecast_step(const StateSpaceModel& model, const Eigen::VectorXd& x,
                                     RngStream& rng, ForecastWorkspace* ws = nullptr) {
    Eigen::VectorXd out = x;
    auto run = [&](auto&& f) {
        if (ws != nullptr) {
            ws->stepper().integrate(f, out, 0.0, model.dt_obs);
        } else {
            DormandPrince5 stepper(x.size(), model.integrator_abs_tol, model.integrator_rel_tol);
            stepper.integrate(f, out, 0.0, model.dt_obs);
        }
    };
    std::visit(
        [&](const auto& params) {
            using P = std::decay_t<decltype(params)>;
            if constexpr (std::is_same_v<P, Lorenz63Params>) {
                run([&](const Eigen::VectorXd& y, Eigen::VectorXd& dy) {
                    lorenz63_rhs(y, params, dy);
                });
            } else {
                run([&](const Eigen::VectorXd& y, Eigen::VectorXd& dy) {
                    lorenz96_rhs(y, params.forcing, dy);
                });
            }
        },
        model.rhs);
    if (model.process_noise_var > 0.0) {
        const double sd = std::sqrt(model.process_noise_var);
        for (Eigen::Index i = 0; i < out.size(); ++i) out(i) += sd * rng.normal();
    }
    return out;
}

/// Observation operator h(x) without noise.
inline Eigen::VectorXd observation_operator(const StateSpaceModel& model,
                                            const Eigen::VectorXd& x) {
    if (model.obs_operator == ObsOperator::Identity) return x;
    const int d = model.obs_dim();
    Eigen::VectorXd y(d);
    for (int j = 0; j < d; ++j) y(j) = x(2 * j);
    return y;
}

/// Indices of the observed state components.
inline std::vector<int> observed_indices(const StateSpaceModel& model) {
    std::vector<int> idx;
    const int n = model.state_dim();
    if (model.obs_operator == ObsOperator::Identity) {
        for (int i = 0; i < n; ++i) idx.push_back(i);
    } else {
        for (int i = 0; i < n; i += 2) idx.push_back(i);
    }
    return idx;
}

/// Y = h(x) + noise. Gaussian noise is N(0, sigma^2 I); t noise is the
/// multivariate St(0, c^2 I, nu) through the Gamma mixture (one mixing draw
/// for the whole vector).
inline Eigen::VectorXd observe(const StateSpaceModel& model, const Eigen::VectorXd& x,
                               RngStream& rng) {
    Eigen::VectorXd y = observation_operator(model, x);
    if (model.obs_noise_scale_sq == 0.0) return y;
    const double scale = std::sqrt(model.obs_noise_scale_sq);
    if (model.obs_noise_kind == ObsNoiseKind::Gaussian) {
        for (Eigen::Index i = 0; i < y.size(); ++i) y(i) += scale * rng.normal();
    } else {
        const double half_nu = 0.5 * model.obs_noise_dof;
        const double root_tau = std::sqrt(rng.gamma(half_nu, half_nu));
        for (Eigen::Index i = 0; i < y.size(); ++i) y(i) += scale * rng.normal() / root_tau;
    }
    return y;
}

/// Free run of the state-space model: iterate forecast and observation,
/// returning the paired (y_t, x_t) trajectory.
inline std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>> free_run(
    const StateSpaceModel& model, const Eigen::VectorXd& x0, int steps, RngStream& rng) {
    if (steps < 1) throw ArgumentError("free_run: steps must be >= 1");
    std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>> out;
    out.reserve(steps);
    ForecastWorkspace ws(model);
    Eigen::VectorXd x = x0;
    for (int t = 0; t < steps; ++t) {
        x = forecast_step(model, x, rng, &ws);
        out.emplace_back(observe(model, x, rng), x);
    }
    return out;
}

}  // namespace enrf
