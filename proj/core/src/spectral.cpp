#include "optomech2d/spectral.hpp"

#include "optomech2d/dynamics.hpp"

#include "levenberg_marquardt.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <mutex>
#include <numeric>
#include <optional>
#include <tuple>
#include <sstream>

namespace optomech2d {

double SpectrumEstimate::integrated_power() const {
    return std::accumulate(psd.begin(), psd.end(), 0.0) * frequency_step;
}

namespace {

// FFTW planning is not thread safe; execution on distinct buffers is.
std::mutex& fftw_plan_mutex() {
    static std::mutex m;
    return m;
}

class RealFft {
public:
    explicit RealFft(std::size_t n) : n_(n) {
        in_ = static_cast<double*>(fftw_malloc(sizeof(double) * n));
        out_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)));
        std::lock_guard lock(fftw_plan_mutex());
        plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_, out_, FFTW_ESTIMATE);
    }
    ~RealFft() {
        {
            std::lock_guard lock(fftw_plan_mutex());
            fftw_destroy_plan(plan_);
        }
        fftw_free(in_);
        fftw_free(out_);
    }
    RealFft(const RealFft&) = delete;
    RealFft& operator=(const RealFft&) = delete;

    double* input() { return in_; }
    void execute() { fftw_execute(plan_); }
    double power(std::size_t k) const { return out_[k][0] * out_[k][0] + out_[k][1] * out_[k][1]; }
    std::size_t size() const { return n_; }

private:
    std::size_t n_;
    double* in_{nullptr};
    fftw_complex* out_{nullptr};
    fftw_plan plan_{nullptr};
};

bool is_power_of_two(std::size_t n) { return n >= 2 && (n & (n - 1)) == 0; }

} // namespace

SpectrumEstimate welch_psd(std::span<const double> series, double dt, std::size_t segment_len,
                           double overlap) {
    if (!(dt > 0.0)) throw InvalidArgument("dt must be > 0");
    if (!is_power_of_two(segment_len)) throw InvalidArgument("segment_len must be a power of two");
    if (!(overlap >= 0.0 && overlap < 1.0)) throw InvalidArgument("overlap must be in [0, 1)");
    if (series.size() < segment_len)
        throw InvalidArgument("series is shorter than one segment");

    const std::size_t L = segment_len;
    const auto hop = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(static_cast<double>(L) * (1.0 - overlap))));
    const std::size_t n_seg = 1 + (series.size() - L) / hop;

    std::vector<double> window(L);
    double window_power = 0.0;
    double window_sum = 0.0;
    for (std::size_t n = 0; n < L; ++n) {
        window[n] = 0.5 - 0.5 * std::cos(kTwoPi * static_cast<double>(n) / static_cast<double>(L));
        window_power += window[n] * window[n];
        window_sum += window[n];
    }
    const double fs = 1.0 / dt;

    RealFft fft(L);
    std::vector<double> acc(L / 2 + 1, 0.0);
    double variance = 0.0;
    for (std::size_t s = 0; s < n_seg; ++s) {
        const double* seg = series.data() + s * hop;
        const double mean = std::accumulate(seg, seg + L, 0.0) / static_cast<double>(L);
        double* in = fft.input();
        double seg_var = 0.0;
        for (std::size_t n = 0; n < L; ++n) {
            in[n] = (seg[n] - mean) * window[n];
            seg_var += in[n] * in[n];
        }
        variance += seg_var / window_power;
        fft.execute();
        for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += fft.power(k);
    }

    SpectrumEstimate out;
    out.n_segments = static_cast<int>(n_seg);
    out.frequency_step = fs / static_cast<double>(L);
    out.resolution_bw = out.frequency_step * static_cast<double>(L) * window_power /
                        (window_sum * window_sum);
    out.windowed_variance = variance / static_cast<double>(n_seg);
    out.freqs.resize(acc.size());
    out.psd.resize(acc.size());
    const double scale = 1.0 / (fs * window_power * static_cast<double>(n_seg));
    for (std::size_t k = 0; k < acc.size(); ++k) {
        const bool edge = k == 0 || k == L / 2;
        out.freqs[k] = static_cast<double>(k) * out.frequency_step;
        out.psd[k] = acc[k] * scale * (edge ? 1.0 : 2.0);
    }
    return out;
}

SpectrumEstimate analytic_projected_psd(const ModalParams& params, Vec2 e_beta,
                                        const std::vector<double>& freqs_hz,
                                        const Environment& env) {
    if (std::abs(e_beta.norm() - 1.0) > 1e-9) throw InvalidArgument("e_beta must be a unit vector");
    const double w1 = dot(params.e1(), e_beta) * dot(params.e1(), e_beta);
    const double w2 = dot(params.e2(), e_beta) * dot(params.e2(), e_beta);
    const double sf = thermal_force_psd(params, env);
    SpectrumEstimate out;
    out.freqs = freqs_hz;
    out.psd.resize(freqs_hz.size());
    for (std::size_t k = 0; k < freqs_hz.size(); ++k) {
        const double w = kTwoPi * freqs_hz[k];
        const double s = w1 * std::norm(susceptibility(params, 0, w)) +
                         w2 * std::norm(susceptibility(params, 1, w));
        out.psd[k] = 2.0 * s * sf + env.detection_floor;
    }
    if (freqs_hz.size() > 1)
        out.frequency_step = (freqs_hz.back() - freqs_hz.front()) /
                             static_cast<double>(freqs_hz.size() - 1);
    out.windowed_variance = w1 * equipartition_variance(params, 0, env) +
                            w2 * equipartition_variance(params, 1, env);
    return out;
}

namespace {

struct PeakGuess {
    std::size_t index;
    double omega;
    double height; // above floor, m^2/Hz
};

double lorentzian_term(double a, double omega0, double gamma, double omega) {
    const double d = omega0 * omega0 - omega * omega;
    return a / (d * d + omega * omega * gamma * gamma);
}

} // namespace

DoubletFit fit_doublet(const SpectrumEstimate& spectrum, double mass, const Environment& env,
                       const DoubletFitOptions& options) {
    if (spectrum.convention != SpectrumConvention::one_sided_per_hz)
        throw InvalidArgument("fit_doublet expects a one-sided per-Hz spectrum");
    if (!(mass > 0.0)) throw InvalidArgument("mass must be > 0");
    const auto& f = spectrum.freqs;
    const auto& s = spectrum.psd;
    const std::size_t n = f.size();
    if (n < 8 || s.size() != n) throw InvalidArgument("spectrum needs at least 8 bins");
    const double df = spectrum.frequency_step > 0.0 ? spectrum.frequency_step
                                                    : (f.back() - f.front()) / double(n - 1);
    const double rbw = spectrum.resolution_bw > 0.0 ? spectrum.resolution_bw : df;

    // Five-bin running mean for peak finding only.
    std::vector<double> smooth(n);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t lo = k < 2 ? 0 : k - 2;
        const std::size_t hi = std::min(n - 1, k + 2);
        smooth[k] = std::accumulate(s.begin() + long(lo), s.begin() + long(hi) + 1, 0.0) /
                    static_cast<double>(hi - lo + 1);
    }

    std::vector<double> sorted(s);
    std::nth_element(sorted.begin(), sorted.begin() + long(n / 10), sorted.end());
    const double floor_est = std::max(env.detection_floor, sorted[n / 10]);

    std::size_t i1 = 0;
    for (std::size_t k = 1; k < n; ++k)
        if (f[k] > 0.0 && smooth[k] > smooth[i1]) i1 = k;
    if (!(smooth[i1] > 3.0 * floor_est) || f[i1] <= 0.0) throw NoResonanceError("no resonance found");

    const double half = 0.5 * (smooth[i1] + floor_est);
    std::size_t left = i1, right = i1;
    while (left > 0 && smooth[left] > half) --left;
    while (right + 1 < n && smooth[right] > half) ++right;
    double fwhm = f[right] - f[left];
    if (smooth[left] > half || smooth[right] > half || fwhm <= 0.0) fwhm = 3.0 * df;
    const double gamma0 = kTwoPi * std::max(fwhm - rbw, 0.5 * fwhm);

    PeakGuess p1{i1, kTwoPi * f[i1], smooth[i1] - floor_est};
    const double a1 = p1.height * p1.omega * p1.omega * gamma0 * gamma0;

    std::optional<PeakGuess> p2;
    for (std::size_t k = 1; k + 1 < n; ++k) {
        if (!(smooth[k] >= smooth[k - 1] && smooth[k] >= smooth[k + 1])) continue;
        if (std::abs(f[k] - f[i1]) <= 1.5 * fwhm) continue;
        const double tail = lorentzian_term(a1, p1.omega, gamma0, kTwoPi * f[k]) + floor_est;
        if (!(smooth[k] > 3.0 * tail) || !(smooth[k] > 3.0 * floor_est)) continue;
        if (!p2 || smooth[k] > smooth[p2->index])
            p2 = PeakGuess{k, kTwoPi * f[k], smooth[k] - tail};
    }

    double om_a, om_b, h_a, h_b;
    if (p2) {
        om_a = p1.omega;
        h_a = p1.height;
        om_b = p2->omega;
        h_b = p2->height;
    } else {
        om_a = p1.omega - kTwoPi * rbw;
        om_b = p1.omega + kTwoPi * rbw;
        h_a = h_b = 0.5 * p1.height;
    }

    const double lo_om = std::min(om_a, om_b) - options.window_linewidths * gamma0;
    const double hi_om = std::max(om_a, om_b) + options.window_linewidths * gamma0;
    std::vector<double> wk, lnd;
    for (std::size_t k = 0; k < n; ++k) {
        const double w = kTwoPi * f[k];
        if (w >= lo_om && w <= hi_om && w > 0.0 && s[k] > 0.0) {
            wk.push_back(w);
            lnd.push_back(std::log(s[k]));
        }
    }
    const int n_par = options.fit_floor ? 7 : 6;
    if (static_cast<int>(wk.size()) <= n_par)
        throw InvalidArgument("too few bins in the fit window");

    // Parameters: ln a_a, ln W_a, ln G_a, ln a_b, ln W_b, ln G_b [, sqrt floor].
    Eigen::VectorXd p0(n_par);
    p0 << std::log(h_a * om_a * om_a * gamma0 * gamma0), std::log(om_a), std::log(gamma0),
        std::log(h_b * om_b * om_b * gamma0 * gamma0), std::log(om_b), std::log(gamma0);
    if (options.fit_floor) p0(6) = std::sqrt(floor_est);

    const double fixed_floor = env.detection_floor;
    auto model = [&](const Eigen::VectorXd& p, Eigen::VectorXd& r, Eigen::MatrixXd& J) {
        const Eigen::Index m = static_cast<Eigen::Index>(wk.size());
        r.resize(m);
        J.resize(m, p.size());
        const double fl = options.fit_floor ? p(6) * p(6) : fixed_floor;
        for (Eigen::Index k = 0; k < m; ++k) {
            const double w = wk[static_cast<std::size_t>(k)];
            double total = fl;
            double grad[6];
            for (int j = 0; j < 2; ++j) {
                const double a = std::exp(p(3 * j));
                const double om = std::exp(p(3 * j + 1));
                const double g = std::exp(p(3 * j + 2));
                const double d = om * om - w * w;
                const double den = d * d + w * w * g * g;
                const double t = a / den;
                total += t;
                grad[3 * j] = t;
                grad[3 * j + 1] = -t * 4.0 * om * om * d / den;
                grad[3 * j + 2] = -t * 2.0 * w * w * g * g / den;
            }
            r(k) = lnd[static_cast<std::size_t>(k)] - std::log(total);
            for (int c = 0; c < 6; ++c) J(k, c) = -grad[c] / total;
            if (options.fit_floor) J(k, 6) = -2.0 * p(6) / total;
        }
    };

    const auto lm = detail::levenberg_marquardt(model, p0, options.max_iterations,
                                                options.parameter_tolerance);
    const double dof = static_cast<double>(wk.size()) - n_par;
    const double residual = 2.0 * lm.cost / dof;
    if (!lm.converged) {
        std::ostringstream msg;
        msg << "doublet fit did not converge after " << lm.iterations
            << " iterations; last iterate (ln a, ln Omega, ln Gamma per peak):";
        for (Eigen::Index k = 0; k < lm.params.size(); ++k) msg << ' ' << lm.params(k);
        throw ConvergenceError(msg.str(), residual);
    }

    const Eigen::VectorXd& p = lm.params;
    struct Peak {
        double a, om, g;
    };
    Peak pa{std::exp(p(0)), std::exp(p(1)), std::exp(p(2))};
    Peak pb{std::exp(p(3)), std::exp(p(4)), std::exp(p(5))};
    if (pa.om > pb.om) std::swap(pa, pb);

    DoubletFit out;
    out.omega_minus = pa.om;
    out.omega_plus = pb.om;
    out.gamma_minus = pa.g;
    out.gamma_plus = pb.g;
    // Exact integral of the one-sided per-Hz term over f in (0, inf).
    out.area_minus = pa.a / (4.0 * pa.om * pa.om * pa.g);
    out.area_plus = pb.a / (4.0 * pb.om * pb.om * pb.g);
    out.projected_energy_minus = mass * pa.om * pa.om * out.area_minus;
    out.projected_energy_plus = mass * pb.om * pb.om * out.area_plus;
    out.floor = options.fit_floor ? p(6) * p(6) : fixed_floor;
    out.residual = residual;
    out.merged = (out.omega_plus - out.omega_minus) <= kTwoPi * rbw;
    out.iterations = lm.iterations;
    return out;
}

double equipartition_mass(double variance, double omega, const Environment& env) {
    if (!(variance > 0.0)) throw InvalidArgument("variance must be > 0");
    if (!(omega > 0.0)) throw InvalidArgument("omega must be > 0");
    return kBoltzmann * env.temperature / (variance * omega * omega);
}

OrientationFit orientation_fit(std::span<const double> angles,
                               std::span<const std::pair<double, double>> rms_pairs) {
    if (angles.size() != rms_pairs.size())
        throw InvalidArgument("angles and rms_pairs differ in length");
    std::vector<double> sorted(angles.begin(), angles.end());
    std::sort(sorted.begin(), sorted.end());
    const auto distinct = std::unique(sorted.begin(), sorted.end(),
                                      [](double a, double b) { return std::abs(a - b) < 1e-12; }) -
                          sorted.begin();
    if (distinct < 8) throw InvalidArgument("orientation fit needs at least 8 distinct angles");
    if (!(sorted.back() - sorted.front() > kPi / 2))
        throw InvalidArgument("orientation fit needs angles spanning more than pi/2");

    const auto m = static_cast<Eigen::Index>(angles.size());
    auto fit_mode = [&](int mode) -> std::pair<double, double> {
        auto value = [&](Eigen::Index k) {
            const auto& pr = rms_pairs[static_cast<std::size_t>(k)];
            return mode == 0 ? pr.first : pr.second;
        };
        // Start from the linear fit of rms^2 = c0 + c1 cos 2a + c2 sin 2a.
        Eigen::MatrixXd A(m, 3);
        Eigen::VectorXd b(m);
        for (Eigen::Index k = 0; k < m; ++k) {
            const double a = angles[static_cast<std::size_t>(k)];
            A.row(k) << 1.0, std::cos(2 * a), std::sin(2 * a);
            b(k) = value(k) * value(k);
        }
        const Eigen::Vector3d c = A.colPivHouseholderQr().solve(b);
        Eigen::VectorXd p0(2);
        p0 << std::sqrt(std::max(c(0) + std::hypot(c(1), c(2)), 1e-300)),
            0.5 * std::atan2(c(2), c(1));
        const double scale = p0(0);
        p0(0) = 1.0;
        auto model = [&](const Eigen::VectorXd& p, Eigen::VectorXd& r, Eigen::MatrixXd& J) {
            r.resize(m);
            J.resize(m, 2);
            for (Eigen::Index k = 0; k < m; ++k) {
                const double d = angles[static_cast<std::size_t>(k)] - p(1);
                const double cs = std::cos(d);
                const double sg = cs >= 0.0 ? 1.0 : -1.0;
                r(k) = value(k) / scale - p(0) * std::abs(cs);
                J(k, 0) = -std::abs(cs);
                J(k, 1) = -p(0) * sg * std::sin(d);
            }
        };
        const auto lm = detail::levenberg_marquardt(model, p0, 500, 1e-13);
        double theta = std::fmod(lm.params(1), kPi);
        if (theta < 0.0) theta += kPi;
        return {std::abs(lm.params(0)) * scale, theta};
    };

    OrientationFit out;
    std::tie(out.amplitude1, out.theta1) = fit_mode(0);
    std::tie(out.amplitude2, out.theta2) = fit_mode(1);
    out.angle_between = std::fmod(out.theta2 - out.theta1 + kPi, kPi);
    return out;
}

} // namespace optomech2d
