#pragma once

// Independent oracles shared by the suites. Nothing here calls into the
// library's numerical code paths.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// cyclic Jacobi rotations; eigenvalues in no particular order
template <class T>
std::vector<T> jacobi_eigenvalues(Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> a, int sweeps = 100)
{
    using std::abs;
    using std::sqrt;
    const auto n = a.rows();
    const T eps = std::numeric_limits<T>::epsilon();
    for (int s = 0; s < sweeps; ++s) {
        T off = 0;
        for (Eigen::Index p = 0; p < n; ++p)
            for (Eigen::Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
        if (off < eps * eps * eps * eps) break;
        for (Eigen::Index p = 0; p < n; ++p)
            for (Eigen::Index q = p + 1; q < n; ++q) {
                if (abs(a(p, q)) < std::numeric_limits<T>::min()) continue;
                const T theta = (a(q, q) - a(p, p)) / (2 * a(p, q));
                const T t = (theta >= 0 ? T(1) : T(-1)) / (abs(theta) + sqrt(theta * theta + 1));
                const T c = 1 / sqrt(t * t + 1), sn = t * c;
                for (Eigen::Index k = 0; k < n; ++k) {
                    const T akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - sn * akq;
                    a(k, q) = sn * akp + c * akq;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const T apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - sn * aqk;
                    a(q, k) = sn * apk + c * aqk;
                }
            }
    }
    std::vector<T> ev(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) ev[static_cast<std::size_t>(i)] = a(i, i);
    return ev;
}

inline std::vector<double> jacobi_eigenvalues(const Mat& a) { return jacobi_eigenvalues<double>(a); }

inline double rbf(const Vec& a, const Vec& b, double h) { return std::exp(-(a - b).squaredNorm() / (2 * h * h)); }

// exp(-sum l log l) of K/n, via Jacobi
inline double vendi(const std::vector<Vec>& xs, double h)
{
    const auto n = static_cast<Eigen::Index>(xs.size());
    Mat k(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) k(i, j) = rbf(xs[std::size_t(i)], xs[std::size_t(j)], h);
    double e = 0.0;
    for (double l : jacobi_eigenvalues(k / double(n)))
        if (l > 0) e -= l * std::log(l);
    return std::exp(e);
}

inline Vec central_difference(const std::function<double(const Vec&)>& f, const Vec& x, double step = 1e-5)
{
    Vec g(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        Vec a = x, b = x;
        a[i] += step;
        b[i] -= step;
        g[i] = (f(a) - f(b)) / (2 * step);
    }
    return g;
}

// d VS / d x of {x} + others by central differences carried out in long double,
// so round-off stays far below the gradient for well-separated sets
inline Vec vendi_gradient_fd(const Vec& x, const std::vector<Vec>& others, bool cosine, double h,
                             long double step = 1e-5L)
{
    using L = long double;
    using LVec = Eigen::Matrix<L, Eigen::Dynamic, 1>;
    using LMat = Eigen::Matrix<L, Eigen::Dynamic, Eigen::Dynamic>;
    std::vector<LVec> pts{x.cast<L>()};
    for (const auto& o : others) pts.push_back(o.cast<L>());
    const auto n = static_cast<Eigen::Index>(pts.size());
    auto score = [&] {
        LMat k(n, n);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j) {
                const auto& a = pts[std::size_t(i)];
                const auto& b = pts[std::size_t(j)];
                if (i == j) k(i, j) = 1;
                else if (cosine) k(i, j) = a.dot(b) / (std::max(a.norm(), L(1e-12)) * std::max(b.norm(), L(1e-12)));
                else k(i, j) = std::exp(-(a - b).squaredNorm() / (2 * L(h) * L(h)));
            }
        L e = 0;
        for (L l : jacobi_eigenvalues<L>(k / L(n)))
            if (l > 0) e -= l * std::log(l);
        return std::exp(e);
    };
    Vec g(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const L x0 = pts[0][i];
        pts[0][i] = x0 + step;
        const L up = score();
        pts[0][i] = x0 - step;
        const L down = score();
        pts[0][i] = x0;
        g[i] = static_cast<double>((up - down) / (2 * step));
    }
    return g;
}

inline double relative_error(const Vec& got, const Vec& want)
{
    const double scale = std::max(want.norm(), 1e-8);
    return (got - want).norm() / scale;
}

// fraction of `cand` inside some ball around `manifold`, radii by full sort
inline double coverage(const std::vector<Vec>& cand, const std::vector<Vec>& manifold, int k)
{
    std::vector<double> radii;
    for (std::size_t i = 0; i < manifold.size(); ++i) {
        std::vector<double> d;
        for (std::size_t j = 0; j < manifold.size(); ++j)
            if (i != j) d.push_back((manifold[i] - manifold[j]).norm());
        std::sort(d.begin(), d.end());
        radii.push_back(d[std::size_t(k - 1)]);
    }
    int in = 0;
    for (const auto& c : cand) {
        bool hit = false;
        for (std::size_t j = 0; j < manifold.size() && !hit; ++j) hit = (c - manifold[j]).norm() <= radii[j];
        in += hit;
    }
    return double(in) / double(cand.size());
}

inline std::vector<Vec> random_points(std::mt19937_64& rng, int n, int d, double spread)
{
    std::uniform_real_distribution<double> u(-spread, spread);
    std::vector<Vec> out;
    for (int i = 0; i < n; ++i) {
        Vec v(d);
        for (int j = 0; j < d; ++j) v[j] = u(rng);
        out.push_back(v);
    }
    return out;
}

} // namespace oracle
