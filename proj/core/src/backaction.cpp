#include "optomech2d/backaction.hpp"

#include "optomech2d/dynamics.hpp"
#include "optomech2d/parallel.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>

namespace optomech2d {

double EffectiveStiffness::discriminant() const {
    const double d = k(0, 0) - k(1, 1);
    return d * d + 4.0 * k(0, 1) * k(1, 0);
}

EffectiveStiffness effective_stiffness(const ModalParams& params, const GradientMatrix& G,
                                       double power_scale) {
    Eigen::Matrix2d R;
    const Vec2 e1 = params.e1();
    const Vec2 e2 = params.e2();
    R << e1.x, e1.z, e2.x, e2.z;
    Eigen::Matrix2d lab;
    lab << G.d_xFx, G.d_xFz, G.d_zFx, G.d_zFz;

    EffectiveStiffness K;
    K.coupling = R * lab * R.transpose() * (power_scale / params.mass);
    const Eigen::Matrix2d& g = K.coupling;
    K.k << params.omega1 * params.omega1 - g(0, 0), -g(1, 0),
        -g(0, 1), params.omega2 * params.omega2 - g(1, 1);
    return K;
}

std::complex<double> splitting_approx(const ModalParams& params, const EffectiveStiffness& K) {
    return std::sqrt(std::complex<double>(K.discriminant(), 0.0)) / (2.0 * params.mean_omega());
}

namespace {

struct Mode {
    std::complex<double> lambda;
    double omega;
    double gamma;
    ModeEllipse ellipse;
};

ModeEllipse ellipse_of(const ModalParams& params, std::complex<double> v1,
                       std::complex<double> v2) {
    const Vec2 e1 = params.e1();
    const Vec2 e2 = params.e2();
    std::complex<double> vx = v1 * e1.x + v2 * e2.x;
    std::complex<double> vz = v1 * e1.z + v2 * e2.z;
    const double n = std::sqrt(std::norm(vx) + std::norm(vz));
    vx /= n;
    vz /= n;
    Eigen::Matrix2d m;
    m << vx.real(), vx.imag(), vz.real(), vz.imag();
    const Eigen::JacobiSVD<Eigen::Matrix2d> svd(m, Eigen::ComputeFullU);
    const auto sv = svd.singularValues();
    ModeEllipse e;
    e.major = 1.0;
    e.minor = sv(0) > 0.0 ? sv(1) / sv(0) : 0.0;
    double angle = std::atan2(svd.matrixU()(1, 0), svd.matrixU()(0, 0));
    angle = std::fmod(angle + kPi, kPi);
    e.orientation = angle;
    const double h = std::imag(vx * std::conj(vz));
    e.handedness = e.minor > 1e-9 ? (h > 0.0 ? 1 : (h < 0.0 ? -1 : 0)) : 0;
    return e;
}

} // namespace

StabilityReport exact_modes(const ModalParams& params, const EffectiveStiffness& K) {
    const Eigen::Matrix2d& k = K.k;
    const double gamma = params.gamma;
    const double half_trace = 0.5 * (k(0, 0) + k(1, 1));
    const std::complex<double> root = std::sqrt(std::complex<double>(K.discriminant(), 0.0));
    const std::array<std::complex<double>, 2> mu{half_trace + 0.5 * root, half_trace - 0.5 * root};
    const double scale = std::max({std::abs(k(0, 0)), std::abs(k(1, 1)), std::abs(k(0, 1)),
                                   std::abs(k(1, 0)), 1e-300});

    std::array<Mode, 2> modes;
    for (std::size_t m = 0; m < 2; ++m) {
        const std::complex<double> z = mu[m] - 0.25 * gamma * gamma;
        std::complex<double> lambda;
        if (z.imag() == 0.0 && z.real() < 0.0)
            lambda = {-0.5 * gamma + std::sqrt(-z.real()), 0.0}; // least damped real root
        else
            lambda = std::complex<double>(-0.5 * gamma, 0.0) +
                     std::complex<double>(0.0, 1.0) * std::sqrt(z);

        // Eigenvector of K for mu[m] in the e1/e2 frame.
        std::complex<double> a1 = k(0, 1), a2 = mu[m] - k(0, 0);
        const std::complex<double> b1 = mu[m] - k(1, 1), b2 = k(1, 0);
        if (std::norm(b1) + std::norm(b2) > std::norm(a1) + std::norm(a2)) {
            a1 = b1;
            a2 = b2;
        }
        if (std::sqrt(std::norm(a1) + std::norm(a2)) <= 1e-14 * scale) {
            a1 = m == 0 ? 1.0 : 0.0;
            a2 = m == 0 ? 0.0 : 1.0;
            if (k(1, 1) > k(0, 0)) std::swap(a1, a2);
        }
        modes[m] = {lambda, std::abs(lambda.imag()), -2.0 * lambda.real(), ellipse_of(params, a1, a2)};
    }

    const double tie = 1e-12 * std::max(modes[0].omega, modes[1].omega);
    const bool swap = std::abs(modes[0].omega - modes[1].omega) <= tie
                          ? modes[0].gamma > modes[1].gamma
                          : modes[0].omega > modes[1].omega;
    if (swap) std::swap(modes[0], modes[1]);

    StabilityReport out;
    for (std::size_t m = 0; m < 2; ++m) {
        out.lambda[m] = modes[m].lambda;
        out.ellipses[m] = modes[m].ellipse;
    }
    out.omega_minus = modes[0].omega;
    out.omega_plus = modes[1].omega;
    out.gamma_minus = modes[0].gamma;
    out.gamma_plus = modes[1].gamma;
    out.splitting = splitting_approx(params, K);
    out.unstable = std::max(modes[0].lambda.real(), modes[1].lambda.real()) > 0.0;
    return out;
}

GradientMatrix PauliDecomposition::reconstruct() const {
    // [[dxFx, dzFx], [dxFz, dzFz]] = [[c0 + cz, cx + cy], [cx - cy, c0 - cz]]
    return {c0 + cz, cx - cy, cx + cy, c0 - cz};
}

PauliDecomposition pauli_decompose(const GradientMatrix& G) {
    return {0.5 * (G.d_xFx + G.d_zFz), 0.5 * (G.d_zFx + G.d_xFz), 0.5 * (G.d_zFx - G.d_xFz),
            0.5 * (G.d_xFx - G.d_zFz)};
}

double work_per_cycle(const GradientMatrix& G, double a, double b, int sense) {
    if (!(a > 0.0) || !(b > 0.0)) throw InvalidArgument("ellipse semi-axes must be > 0");
    if (sense != 1 && sense != -1) throw InvalidArgument("sense must be +1 or -1");
    return sense * kPi * a * b * G.curl();
}

StabilityReport stability_at(const ModalParams& params, const ForceField& field, Vec2 r,
                             double power) {
    return exact_modes(params, effective_stiffness(params, linearize_field(field, r, power)));
}

std::optional<double> threshold_power(const ModalParams& params, const ForceField& field,
                                      Vec2 r0, double p_max) {
    if (!(p_max > 0.0)) throw InvalidArgument("p_max must be > 0");
    const double ref = field.ref_power();
    const GradientMatrix G = linearize_field(field, r0, ref);
    auto unstable = [&](double p) {
        return exact_modes(params, effective_stiffness(params, G, p / ref)).unstable;
    };
    constexpr int kCoarse = 200;
    double lo = 0.0;
    double hi = -1.0;
    for (int k = 1; k <= kCoarse; ++k) {
        const double p = p_max * k / kCoarse;
        if (unstable(p)) {
            hi = p;
            break;
        }
        lo = p;
    }
    if (hi < 0.0) return std::nullopt;
    while (hi - lo > 1e-5 * hi) {
        const double mid = 0.5 * (lo + hi);
        (unstable(mid) ? hi : lo) = mid;
    }
    return hi;
}

ThresholdSearch minimum_threshold(const ModalParams& params, const ForceField& field,
                                  const RectGrid& grid, double p_max, unsigned threads) {
    grid.validate();
    ThresholdSearch out;
    out.per_node.resize(grid.size());
    parallel_for(grid.size(), threads, [&](std::size_t n) {
        out.per_node[n] = threshold_power(params, field, grid.node(n), p_max);
    });
    for (std::size_t n = 0; n < grid.size(); ++n) {
        const auto& p = out.per_node[n];
        if (p && (!out.power || *p < *out.power)) {
            out.power = p;
            out.location = grid.node(n);
        }
    }
    return out;
}

bool StabilityMap::any_unstable() const {
    return std::any_of(reports.begin(), reports.end(),
                       [](const StabilityReport& r) { return r.unstable; });
}

namespace {

// Area of {v < 0} inside an axis-aligned rectangle, corners counterclockwise
// from (x0, z0), with v linear along each edge.
double negative_area(const std::array<Vec2, 4>& c, const std::array<double, 4>& v) {
    std::vector<Vec2> poly;
    for (std::size_t k = 0; k < 4; ++k) {
        const std::size_t n = (k + 1) % 4;
        if (v[k] < 0.0) poly.push_back(c[k]);
        if ((v[k] < 0.0) != (v[n] < 0.0)) {
            const double t = v[k] / (v[k] - v[n]);
            poly.push_back(c[k] + t * (c[n] - c[k]));
        }
    }
    double area = 0.0;
    for (std::size_t k = 0; k < poly.size(); ++k)
        area += cross(poly[k], poly[(k + 1) % poly.size()]);
    return 0.5 * std::abs(area);
}

} // namespace

StabilityMap stability_map(const ModalParams& params, const ForceField& field,
                           const RectGrid& grid, double power,
                           const StabilityMapOptions& options) {
    grid.validate();
    StabilityMap out;
    out.grid = grid;
    out.reports.resize(grid.size());
    parallel_for(grid.size(), options.threads, [&](std::size_t n) {
        out.reports[n] = stability_at(params, field, grid.node(n), power);
    });
    const std::size_t nx = grid.nx(), nz = grid.nz();
    auto value = [&](std::size_t i, std::size_t j) { return out.reports[grid.index(i, j)].gamma_minus; };
    auto gamma_minus_at = [&](Vec2 r) { return stability_at(params, field, r, power).gamma_minus; };

    // Area.
    const std::size_t n_cells = (nx - 1) * (nz - 1);
    std::vector<double> cell_area(n_cells, 0.0);
    parallel_for(n_cells, options.threads, [&](std::size_t c) {
        const std::size_t i = c / (nz - 1), j = c % (nz - 1);
        const std::array<Vec2, 4> corners{grid.node(i, j), grid.node(i + 1, j),
                                          grid.node(i + 1, j + 1), grid.node(i, j + 1)};
        const std::array<double, 4> v{value(i, j), value(i + 1, j), value(i + 1, j + 1),
                                      value(i, j + 1)};
        const int n_neg = static_cast<int>(std::count_if(v.begin(), v.end(), [](double x) { return x < 0.0; }));
        if (n_neg == 0) return;
        const double full = (corners[2].x - corners[0].x) * (corners[2].z - corners[0].z);
        if (n_neg == 4) {
            cell_area[c] = full;
            return;
        }
        if (!options.refine_boundary) {
            cell_area[c] = negative_area(corners, v);
            return;
        }
        const Vec2 lo = corners[0], hi = corners[2];
        const Vec2 mid = 0.5 * (lo + hi);
        const double xs[3] = {lo.x, mid.x, hi.x};
        const double zs[3] = {lo.z, mid.z, hi.z};
        double sub[3][3];
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) {
                if (a != 1 && b != 1) sub[a][b] = value(i + (a / 2), j + (b / 2));
                else sub[a][b] = gamma_minus_at({xs[a], zs[b]});
            }
        double total = 0.0;
        for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b)
                total += negative_area({Vec2{xs[a], zs[b]}, Vec2{xs[a + 1], zs[b]},
                                        Vec2{xs[a + 1], zs[b + 1]}, Vec2{xs[a], zs[b + 1]}},
                                       {sub[a][b], sub[a + 1][b], sub[a + 1][b + 1], sub[a][b + 1]});
        cell_area[c] = total;
    });
    for (double a : cell_area) out.area += a;

    // Contours: marching squares on the node values, chained through shared edges.
    auto h_edge = [&](std::size_t i, std::size_t j) { return 2 * grid.index(i, j); };
    auto v_edge = [&](std::size_t i, std::size_t j) { return 2 * grid.index(i, j) + 1; };
    std::map<std::size_t, Vec2> crossing;
    auto edge_point = [&](std::size_t id) {
        auto it = crossing.find(id);
        if (it != crossing.end()) return it->second;
        const std::size_t node = id / 2;
        const std::size_t i = node / nz, j = node % nz;
        const std::size_t i2 = (id % 2 == 0) ? i + 1 : i, j2 = (id % 2 == 0) ? j : j + 1;
        const double va = value(i, j), vb = value(i2, j2);
        const double t = va / (va - vb);
        const Vec2 p = grid.node(i, j) + t * (grid.node(i2, j2) - grid.node(i, j));
        crossing.emplace(id, p);
        return p;
    };
    std::vector<std::pair<std::size_t, std::size_t>> segments;
    for (std::size_t i = 0; i + 1 < nx; ++i)
        for (std::size_t j = 0; j + 1 < nz; ++j) {
            const std::array<double, 4> v{value(i, j), value(i + 1, j), value(i + 1, j + 1),
                                          value(i, j + 1)};
            const std::array<std::size_t, 4> e{h_edge(i, j), v_edge(i + 1, j), h_edge(i, j + 1),
                                               v_edge(i, j)};
            // Edge k joins corner k and corner k+1 (edge 3 joins corners 3 and 0).
            std::vector<std::size_t> cut;
            for (std::size_t k = 0; k < 4; ++k)
                if ((v[k] < 0.0) != (v[(k + 1) % 4] < 0.0)) cut.push_back(k);
            if (cut.size() == 2) {
                segments.emplace_back(e[cut[0]], e[cut[1]]);
            } else if (cut.size() == 4) {
                const double centre = 0.25 * (v[0] + v[1] + v[2] + v[3]);
                if ((centre < 0.0) == (v[0] < 0.0)) {
                    segments.emplace_back(e[0], e[1]);
                    segments.emplace_back(e[2], e[3]);
                } else {
                    segments.emplace_back(e[3], e[0]);
                    segments.emplace_back(e[1], e[2]);
                }
            }
        }

    std::map<std::size_t, std::vector<std::size_t>> by_edge;
    for (std::size_t s = 0; s < segments.size(); ++s) {
        by_edge[segments[s].first].push_back(s);
        by_edge[segments[s].second].push_back(s);
    }
    std::vector<bool> used(segments.size(), false);
    auto other_end = [&](std::size_t s, std::size_t edge) {
        return segments[s].first == edge ? segments[s].second : segments[s].first;
    };
    auto next_segment = [&](std::size_t edge) -> std::optional<std::size_t> {
        for (std::size_t s : by_edge[edge])
            if (!used[s]) return s;
        return std::nullopt;
    };
    // Start open chains at boundary edges (one segment) first, then close loops.
    std::vector<std::size_t> starts;
    for (const auto& [edge, segs] : by_edge)
        if (segs.size() == 1) starts.push_back(edge);
    for (const auto& [edge, segs] : by_edge) starts.push_back(edge);
    for (std::size_t start : starts) {
        auto s = next_segment(start);
        if (!s) continue;
        std::vector<Vec2> line{edge_point(start)};
        std::size_t edge = start;
        while (s) {
            used[*s] = true;
            edge = other_end(*s, edge);
            line.push_back(edge_point(edge));
            s = next_segment(edge);
        }
        out.contours.push_back(std::move(line));
    }
    return out;
}

QuadraticAreaEstimate quadratic_area_estimate(const ModalParams& params,
                                              const ForceField& field, Vec2 start,
                                              double power, double step) {
    if (!(step > 0.0)) throw InvalidArgument("step must be > 0");
    auto g = [&](Vec2 r) { return stability_at(params, field, r, power).gamma_minus; };
    QuadraticAreaEstimate out;
    Vec2 r = start;
    const double h = step;
    for (int it = 0; it < 50; ++it) {
        const double g0 = g(r);
        const double gxp = g(r + Vec2{h, 0}), gxm = g(r - Vec2{h, 0});
        const double gzp = g(r + Vec2{0, h}), gzm = g(r - Vec2{0, h});
        const double gpp = g(r + Vec2{h, h}), gpm = g(r + Vec2{h, -h});
        const double gmp = g(r + Vec2{-h, h}), gmm = g(r + Vec2{-h, -h});
        Eigen::Vector2d grad((gxp - gxm) / (2 * h), (gzp - gzm) / (2 * h));
        Eigen::Matrix2d H;
        H(0, 0) = (gxp - 2 * g0 + gxm) / (h * h);
        H(1, 1) = (gzp - 2 * g0 + gzm) / (h * h);
        H(0, 1) = H(1, 0) = (gpp - gpm - gmp + gmm) / (4 * h * h);
        out.minimum = r;
        out.gamma_min = g0;
        out.hessian = H;
        if (!(H(0, 0) > 0.0) || !(H.determinant() > 0.0))
            throw ConvergenceError("Gamma_minus has no local minimum near the start point", grad.norm());
        Eigen::Vector2d d = -H.ldlt().solve(grad);
        const double len = d.norm();
        if (len > 4 * h) d *= 4 * h / len; // trust region
        r = r + Vec2{d(0), d(1)};
        if (len < 1e-4 * h) break;
    }
    if (out.gamma_min < 0.0)
        out.area = kTwoPi * (-out.gamma_min) / std::sqrt(out.hessian.determinant());
    return out;
}

SpectrumEstimate coupled_projected_psd(const ModalParams& params, const EffectiveStiffness& K,
                                       Vec2 e_beta, const std::vector<double>& freqs_hz,
                                       const Environment& env) {
    if (std::abs(e_beta.norm() - 1.0) > 1e-9) throw InvalidArgument("e_beta must be a unit vector");
    const Eigen::Vector2cd c(dot(params.e1(), e_beta), dot(params.e2(), e_beta));
    const double sf = thermal_force_psd(params, env) / (params.mass * params.mass);
    SpectrumEstimate out;
    out.freqs = freqs_hz;
    out.psd.resize(freqs_hz.size());
    for (std::size_t k = 0; k < freqs_hz.size(); ++k) {
        const double w = kTwoPi * freqs_hz[k];
        Eigen::Matrix2cd A = K.k.cast<std::complex<double>>();
        A(0, 0) -= std::complex<double>(w * w, w * params.gamma);
        A(1, 1) -= std::complex<double>(w * w, w * params.gamma);
        // Row vector c^T A^-1 gives the readout response to each modal force.
        const Eigen::Vector2cd y = A.transpose().partialPivLu().solve(c);
        out.psd[k] = 2.0 * sf * y.squaredNorm() + env.detection_floor;
    }
    if (freqs_hz.size() > 1)
        out.frequency_step = (freqs_hz.back() - freqs_hz.front()) /
                             static_cast<double>(freqs_hz.size() - 1);
    return out;
}

} // namespace optomech2d
