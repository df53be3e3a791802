#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "culturemap/detail/text.hpp"
#include "culturemap/error.hpp"
#include "culturemap/ivs_ingest.hpp"
#include "culturemap/survey_core.hpp"

namespace culturemap {

struct Moments {
    std::vector<double> mu;
    std::vector<double> sigma;
};

// Published linear rescale onto the cultural-map coordinate system.
struct AffineRescale {
    double a1 = 1.81;
    double b1 = 0.38;
    double a2 = 1.61;
    double b2 = -0.01;

    bool operator==(const AffineRescale&) const = default;
};

inline std::array<double, 2> rescale(const std::array<double, 2>& pc, const AffineRescale& affine = {}) {
    return {affine.a1 * pc[0] + affine.b1, affine.a2 * pc[1] + affine.b2};
}

struct PcaResult {
    Eigen::MatrixXd loadings;         // p x 2, unit-norm columns
    Eigen::Vector2d eigenvalues;      // descending
    Eigen::VectorXd all_eigenvalues;  // descending, all p
};

struct VarimaxResult {
    Eigen::MatrixXd rotated;   // loadings * rotation
    Eigen::MatrixXd rotation;  // k x k orthogonal
    std::vector<double> criterion_history;  // [initial, after sweep 1, ...]
    int sweeps = 0;
};

struct CountryReference {
    std::string country;
    std::array<double, 2> nu{};
    std::vector<int> waves_used;
    std::string zone;
};

struct BenchmarkSpace {
    static constexpr int kFormatVersion = 1;

    std::vector<double> mu_raw;
    std::vector<double> sigma_raw;
    std::array<std::vector<double>, 2> w_rot;  // two rows of length p
    AffineRescale affine;
    std::array<std::string, 2> axis_labels{"Survival vs. Self-Expression", "Traditional vs. Secular"};
    std::array<double, 2> eigenvalues{};
    std::array<double, 4> rotation{1, 0, 0, 1};  // row-major 2x2
    int varimax_sweeps = 0;
    std::string dataset_hash;
    std::string registry_hash;
    std::vector<CountryReference> references;

    std::size_t dimension() const { return mu_raw.size(); }
};

namespace detail {

inline std::vector<const RespondentRecord*> complete_cases(const std::vector<RespondentRecord>& records,
                                                           std::size_t p) {
    std::vector<const RespondentRecord*> out;
    for (const auto& r : records)
        if (r.answers.size() == p && r.complete()) out.push_back(&r);
    return out;
}

}  // namespace detail

// Survey-weighted means and population-convention standard deviations over
// complete cases.
inline Moments weighted_moments(const std::vector<RespondentRecord>& records, const IndicatorRegistry& reg) {
    const std::size_t p = reg.size();
    const auto cases = detail::complete_cases(records, p);
    if (cases.size() < 2) throw EmptyGroup("weighted moments need at least 2 complete cases");
    double total = 0.0;
    for (const auto* r : cases) total += r->weight;
    if (!(total > 0.0)) throw EmptyGroup("total survey weight is zero");

    Moments m;
    m.mu.assign(p, 0.0);
    m.sigma.assign(p, 0.0);
    for (const auto* r : cases)
        for (std::size_t j = 0; j < p; ++j) m.mu[j] += r->weight * code_answer(*r->answers[j], reg[j]);
    for (auto& v : m.mu) v /= total;
    for (const auto* r : cases) {
        for (std::size_t j = 0; j < p; ++j) {
            const double d = code_answer(*r->answers[j], reg[j]) - m.mu[j];
            m.sigma[j] += r->weight * d * d;
        }
    }
    for (std::size_t j = 0; j < p; ++j) {
        m.sigma[j] = std::sqrt(m.sigma[j] / total);
        if (!(m.sigma[j] > 1e-12 * (1.0 + std::abs(m.mu[j])))) {
            throw DegenerateIndicator("indicator " + std::to_string(j) + " (" + reg[j].id + ") has zero variance");
        }
    }
    return m;
}

namespace detail {

// Flip column k so that its anchor (or, failing that, its largest entry) is positive.
inline void fix_column_signs(Eigen::MatrixXd& cols, const IndicatorRegistry& reg, Eigen::MatrixXd* rotation = nullptr) {
    for (Eigen::Index k = 0; k < cols.cols(); ++k) {
        const AxisAnchor want = k == 0 ? AxisAnchor::axis1 : AxisAnchor::axis2;
        std::optional<Eigen::Index> anchor;
        for (std::size_t j = 0; j < reg.size(); ++j)
            if (reg[j].axis_anchor == want) anchor = static_cast<Eigen::Index>(j);
        double pivot = 0.0;
        if (anchor) {
            pivot = cols(*anchor, k);
        } else {
            Eigen::Index arg = 0;
            cols.col(k).cwiseAbs().maxCoeff(&arg);
            pivot = cols(arg, k);
        }
        if (pivot < 0.0) {
            cols.col(k) = -cols.col(k);
            if (rotation) rotation->col(k) = -rotation->col(k);
        }
    }
}

}  // namespace detail

// Top-2 eigenvectors of the survey-weighted correlation matrix.
inline PcaResult weighted_pca(const std::vector<RespondentRecord>& records, const IndicatorRegistry& reg,
                              const Moments& moments) {
    const std::size_t p = reg.size();
    const auto cases = detail::complete_cases(records, p);
    if (cases.size() < p + 1) {
        throw RankDeficient("PCA needs at least " + std::to_string(p + 1) + " complete cases, got " +
                            std::to_string(cases.size()));
    }
    Eigen::MatrixXd corr = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
    Eigen::VectorXd z(static_cast<Eigen::Index>(p));
    double total = 0.0;
    for (const auto* r : cases) {
        for (std::size_t j = 0; j < p; ++j)
            z(static_cast<Eigen::Index>(j)) = (code_answer(*r->answers[j], reg[j]) - moments.mu[j]) / moments.sigma[j];
        corr.noalias() += r->weight * (z * z.transpose());
        total += r->weight;
    }
    corr /= total;
    corr = 0.5 * (corr + corr.transpose());

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(corr);
    if (solver.info() != Eigen::Success) throw RankDeficient("eigendecomposition failed");
    const Eigen::Index n = static_cast<Eigen::Index>(p);

    PcaResult out;
    out.all_eigenvalues = solver.eigenvalues().reverse();
    out.eigenvalues = {out.all_eigenvalues(0), out.all_eigenvalues(1)};
    out.loadings.resize(n, 2);
    out.loadings.col(0) = solver.eigenvectors().col(n - 1);
    out.loadings.col(1) = solver.eigenvectors().col(n - 2);
    if (!(out.eigenvalues(1) > 1e-10 * corr.trace())) {
        throw RankDeficient("second eigenvalue " + detail::fmt17(out.eigenvalues(1)) + " is not positive");
    }
    detail::fix_column_signs(out.loadings, reg);
    return out;
}

// Raw varimax criterion on Kaiser-normalized loadings: sum over columns of
// the variance of squared entries.
inline double varimax_criterion(const Eigen::MatrixXd& normalized) {
    const double p = static_cast<double>(normalized.rows());
    double total = 0.0;
    for (Eigen::Index k = 0; k < normalized.cols(); ++k) {
        const Eigen::ArrayXd sq = normalized.col(k).array().square();
        const double mean_sq = sq.sum() / p;
        total += sq.square().sum() / p - mean_sq * mean_sq;
    }
    return total;
}

inline Eigen::MatrixXd kaiser_normalize(const Eigen::MatrixXd& loadings) {
    Eigen::MatrixXd out = loadings;
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        const double h = out.row(i).norm();
        if (h > 0.0) out.row(i) /= h;
    }
    return out;
}

// Kaiser's pairwise varimax: each planar step applies the closed-form
// optimal angle for one column pair, so the criterion never decreases.
inline VarimaxResult varimax_rotate(const Eigen::MatrixXd& loadings, double tol = 1e-8, int max_sweeps = 1000) {
    const Eigen::Index p = loadings.rows();
    const Eigen::Index k = loadings.cols();
    if (k < 1 || p < k) throw RankDeficient("varimax needs a p x k loading matrix with p >= k");
    {
        Eigen::FullPivLU<Eigen::MatrixXd> lu(loadings);
        if (lu.rank() < k) throw RankDeficient("varimax input lacks full column rank");
    }

    Eigen::MatrixXd norm = kaiser_normalize(loadings);
    Eigen::MatrixXd rotation = Eigen::MatrixXd::Identity(k, k);
    VarimaxResult out;
    double current = varimax_criterion(norm);
    out.criterion_history.push_back(current);
    const double pd = static_cast<double>(p);

    bool converged = k == 1;
    for (int sweep = 1; sweep <= max_sweeps && !converged; ++sweep) {
        for (Eigen::Index a = 0; a + 1 < k; ++a) {
            for (Eigen::Index b = a + 1; b < k; ++b) {
                double A = 0, B = 0, C = 0, D = 0;
                for (Eigen::Index i = 0; i < p; ++i) {
                    const double x = norm(i, a);
                    const double y = norm(i, b);
                    const double u = x * x - y * y;
                    const double v = 2.0 * x * y;
                    A += u;
                    B += v;
                    C += u * u - v * v;
                    D += 2.0 * u * v;
                }
                const double num = D - 2.0 * A * B / pd;
                const double den = C - (A * A - B * B) / pd;
                const double phi = 0.25 * std::atan2(num, den);
                const double c = std::cos(phi);
                const double s = std::sin(phi);
                Eigen::MatrixXd plane = Eigen::MatrixXd::Identity(k, k);
                plane(a, a) = c;
                plane(b, a) = s;
                plane(a, b) = -s;
                plane(b, b) = c;
                Eigen::MatrixXd candidate = norm * plane;
                // A planar step must not lose criterion; guard rounding noise at the optimum.
                if (varimax_criterion(candidate) >= varimax_criterion(norm)) {
                    norm = std::move(candidate);
                    rotation = rotation * plane;
                }
            }
        }
        const double next = varimax_criterion(norm);
        out.criterion_history.push_back(next);
        out.sweeps = sweep;
        if (next - current < tol) converged = true;
        current = next;
    }
    if (!converged) throw NoConvergence("varimax did not converge in " + std::to_string(max_sweeps) + " sweeps");
    out.rotation = rotation;
    out.rotated = loadings * rotation;
    return out;
}

// Standardize -> rotated scoring weights -> published rescale.
inline std::array<double, 2> project_raw(const std::vector<double>& x, const BenchmarkSpace& space) {
    std::array<double, 2> s{0.0, 0.0};
    for (std::size_t j = 0; j < space.dimension(); ++j) {
        const double z = (x[j] - space.mu_raw[j]) / space.sigma_raw[j];
        s[0] += space.w_rot[0][j] * z;
        s[1] += space.w_rot[1][j] * z;
    }
    return rescale(s, space.affine);
}

inline BenchmarkSpace build_space(const std::vector<RespondentRecord>& input, const IndicatorRegistry& reg,
                                  const AffineRescale& affine = {}) {
    const auto records = sorted_by_group(input);
    const Moments moments = weighted_moments(records, reg);
    const PcaResult pca = weighted_pca(records, reg, moments);
    VarimaxResult vm = varimax_rotate(pca.loadings);

    // Match rotated columns to the anchored axes, then fix signs.
    Eigen::MatrixXd rotated = vm.rotated;
    Eigen::MatrixXd rotation = vm.rotation;
    std::optional<std::size_t> a1, a2;
    for (std::size_t j = 0; j < reg.size(); ++j) {
        if (reg[j].axis_anchor == AxisAnchor::axis1) a1 = j;
        if (reg[j].axis_anchor == AxisAnchor::axis2) a2 = j;
    }
    const auto fit = [&](Eigen::Index c1, Eigen::Index c2) {
        double v = 0.0;
        if (a1) v += std::abs(rotated(static_cast<Eigen::Index>(*a1), c1));
        if (a2) v += std::abs(rotated(static_cast<Eigen::Index>(*a2), c2));
        return v;
    };
    if ((a1 || a2) && fit(1, 0) > fit(0, 1)) {
        rotated.col(0).swap(rotated.col(1));
        rotation.col(0).swap(rotation.col(1));
    }
    detail::fix_column_signs(rotated, reg, &rotation);

    BenchmarkSpace space;
    space.mu_raw = moments.mu;
    space.sigma_raw = moments.sigma;
    for (int r = 0; r < 2; ++r) {
        space.w_rot[r].resize(reg.size());
        for (std::size_t j = 0; j < reg.size(); ++j) space.w_rot[r][j] = rotated(static_cast<Eigen::Index>(j), r);
    }
    space.affine = affine;
    space.eigenvalues = {pca.eigenvalues(0), pca.eigenvalues(1)};
    space.rotation = {rotation(0, 0), rotation(0, 1), rotation(1, 0), rotation(1, 1)};
    space.varimax_sweeps = vm.sweeps;
    space.dataset_hash = dataset_hash(records, reg);
    space.registry_hash = reg.hash();
    return space;
}

// Projects every country-wave mean and averages per country with equal
// weight per wave.
inline std::vector<CountryReference> country_references(const BenchmarkSpace& space,
                                                        const std::vector<CountryWaveAggregate>& aggregates,
                                                        const std::map<std::string, std::string>& zones = {}) {
    std::map<std::string, std::vector<const CountryWaveAggregate*>> by_country;
    for (const auto& a : aggregates) by_country[a.country].push_back(&a);
    std::vector<CountryReference> out;
    for (const auto& [country, waves] : by_country) {
        CountryReference ref;
        ref.country = country;
        for (const auto* a : waves) {
            const auto pt = project_raw(a->mean_vector, space);
            ref.nu[0] += pt[0];
            ref.nu[1] += pt[1];
            ref.waves_used.push_back(a->wave);
        }
        ref.nu[0] /= static_cast<double>(waves.size());
        ref.nu[1] /= static_cast<double>(waves.size());
        if (const auto it = zones.find(country); it != zones.end()) ref.zone = it->second;
        out.push_back(std::move(ref));
    }
    return out;
}

inline const CountryReference* find_reference(const std::vector<CountryReference>& refs, const std::string& country) {
    for (const auto& r : refs)
        if (r.country == country) return &r;
    return nullptr;
}

// ---------------------------------------------------------------------------
// Space file: versioned line-oriented text, matrices row-major, 17 digits.
// ---------------------------------------------------------------------------

inline std::string serialize_space(const BenchmarkSpace& s) {
    using detail::fmt17;
    std::ostringstream out;
    const auto row = [&](const char* key, const auto& values) {
        out << key << ' ' << values.size();
        for (double v : values) out << ' ' << fmt17(v);
        out << '\n';
    };
    out << "culturemap-benchmark-space " << BenchmarkSpace::kFormatVersion << '\n';
    out << "registry_hash " << s.registry_hash << '\n';
    out << "dataset_hash " << s.dataset_hash << '\n';
    out << "axis_label_1 " << s.axis_labels[0] << '\n';
    out << "axis_label_2 " << s.axis_labels[1] << '\n';
    out << "affine " << fmt17(s.affine.a1) << ' ' << fmt17(s.affine.b1) << ' ' << fmt17(s.affine.a2) << ' '
        << fmt17(s.affine.b2) << '\n';
    row("mu_raw", s.mu_raw);
    row("sigma_raw", s.sigma_raw);
    std::vector<double> w(s.w_rot[0]);
    w.insert(w.end(), s.w_rot[1].begin(), s.w_rot[1].end());
    out << "w_rot 2 " << s.dimension();
    for (double v : w) out << ' ' << fmt17(v);
    out << '\n';
    row("eigenvalues", s.eigenvalues);
    out << "rotation 2 2";
    for (double v : s.rotation) out << ' ' << fmt17(v);
    out << '\n';
    out << "varimax_sweeps " << s.varimax_sweeps << '\n';
    out << "references " << s.references.size() << '\n';
    for (const auto& r : s.references) {
        std::vector<std::string> waves;
        for (int w2 : r.waves_used) waves.push_back(std::to_string(w2));
        out << r.country << '\t' << fmt17(r.nu[0]) << '\t' << fmt17(r.nu[1]) << '\t' << detail::join(waves, ",")
            << '\t' << (r.zone.empty() ? "-" : r.zone) << '\n';
    }
    return out.str();
}

inline BenchmarkSpace parse_space(std::string_view text) {
    BenchmarkSpace s;
    const auto lines = detail::split(text, '\n');
    std::size_t i = 0;
    const auto next = [&]() -> std::string {
        while (i < lines.size() && detail::trim(lines[i]).empty()) ++i;
        if (i == lines.size()) throw SpaceFormatError("unexpected end of file");
        return lines[i++];
    };
    const auto expect_key = [&](const std::string& line, const std::string& key) -> std::string {
        if (line.rfind(key + " ", 0) != 0) throw SpaceFormatError("expected '" + key + "', got '" + line + "'");
        return line.substr(key.size() + 1);
    };
    const auto numbers = [&](const std::string& rest) {
        std::vector<double> v;
        std::istringstream in(rest);
        std::string tok;
        while (in >> tok) {
            try {
                v.push_back(detail::parse_double(tok, "space file"));
            } catch (const SchemaError& e) {
                throw SpaceFormatError(e.what());
            }
        }
        return v;
    };
    const auto vec_field = [&](const std::string& key) {
        auto v = numbers(expect_key(next(), key));
        if (v.empty() || static_cast<std::size_t>(v[0]) + 1 != v.size()) throw SpaceFormatError(key + ": bad length");
        return std::vector<double>(v.begin() + 1, v.end());
    };

    const std::string header = next();
    if (header != "culturemap-benchmark-space " + std::to_string(BenchmarkSpace::kFormatVersion)) {
        throw SpaceFormatError("unsupported header '" + header + "'");
    }
    s.registry_hash = std::string(detail::trim(expect_key(next(), "registry_hash")));
    s.dataset_hash = std::string(detail::trim(expect_key(next(), "dataset_hash")));
    s.axis_labels[0] = expect_key(next(), "axis_label_1");
    s.axis_labels[1] = expect_key(next(), "axis_label_2");
    const auto aff = numbers(expect_key(next(), "affine"));
    if (aff.size() != 4) throw SpaceFormatError("affine needs 4 values");
    s.affine = {aff[0], aff[1], aff[2], aff[3]};
    s.mu_raw = vec_field("mu_raw");
    s.sigma_raw = vec_field("sigma_raw");
    const auto w = numbers(expect_key(next(), "w_rot"));
    const std::size_t p = s.mu_raw.size();
    if (s.sigma_raw.size() != p || w.size() != 2 + 2 * p || w[0] != 2 || w[1] != static_cast<double>(p)) {
        throw SpaceFormatError("inconsistent dimensions");
    }
    s.w_rot[0].assign(w.begin() + 2, w.begin() + 2 + static_cast<long>(p));
    s.w_rot[1].assign(w.begin() + 2 + static_cast<long>(p), w.end());
    const auto ev = vec_field("eigenvalues");
    if (ev.size() != 2) throw SpaceFormatError("eigenvalues needs 2 values");
    s.eigenvalues = {ev[0], ev[1]};
    const auto rot = numbers(expect_key(next(), "rotation"));
    if (rot.size() != 6) throw SpaceFormatError("rotation needs 2x2 values");
    s.rotation = {rot[2], rot[3], rot[4], rot[5]};
    s.varimax_sweeps = static_cast<int>(numbers(expect_key(next(), "varimax_sweeps")).at(0));
    const auto nref = numbers(expect_key(next(), "references"));
    if (nref.size() != 1) throw SpaceFormatError("references count missing");
    for (std::size_t r = 0; r < static_cast<std::size_t>(nref[0]); ++r) {
        const auto cells = detail::split(next(), '\t');
        if (cells.size() != 5) throw SpaceFormatError("reference row needs 5 tab-separated cells");
        CountryReference ref;
        ref.country = cells[0];
        try {
            ref.nu = {detail::parse_double(cells[1], "reference"), detail::parse_double(cells[2], "reference")};
            for (const auto& wv : detail::split(cells[3], ','))
                ref.waves_used.push_back(static_cast<int>(detail::parse_int(wv, "reference wave")));
        } catch (const SchemaError& e) {
            throw SpaceFormatError(e.what());
        }
        ref.zone = cells[4] == "-" ? std::string() : cells[4];
        s.references.push_back(std::move(ref));
    }
    for (double sd : s.sigma_raw)
        if (!(sd > 0.0)) throw SpaceFormatError("sigma_raw entries must be positive");
    return s;
}

inline BenchmarkSpace load_space(const std::string& path) { return parse_space(detail::read_file(path)); }

}  // namespace culturemap
