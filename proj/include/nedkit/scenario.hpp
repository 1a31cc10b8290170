#pragma once

// Scenario files: line-oriented `section.key = value`, `#` starts a comment.
// Numbers accept `x`, `exp(x)` and `x*exp(y)`; matrices are rows separated by
// `;` (e.g. `0 1; 1 0`), vectors are whitespace separated.

#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "nedkit/dichotomy.hpp"
#include "nedkit/error.hpp"
#include "nedkit/evolution.hpp"
#include "nedkit/numerics.hpp"
#include "nedkit/perturbation.hpp"

namespace nedkit {

class ScenarioConfig {
public:
    struct Entry {
        std::string value;
        int line = 0;
    };

    static ScenarioConfig parse(const std::string& text, std::filesystem::path base_dir = {}) {
        ScenarioConfig cfg;
        cfg.base_dir_ = std::move(base_dir);
        std::istringstream in(text);
        std::string raw;
        int line = 0;
        while (std::getline(in, raw)) {
            ++line;
            if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
            const std::string s = trim(raw);
            if (s.empty()) continue;
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw ParseError("expected `section.key = value`", line);
            const std::string key = trim(s.substr(0, eq));
            const std::string value = trim(s.substr(eq + 1));
            const auto dot = key.find('.');
            if (dot == std::string::npos || dot == 0 || dot + 1 == key.size() || key.find('.', dot + 1) != std::string::npos)
                throw ParseError("key `" + key + "` must have the form section.key", line);
            for (char ch : key)
                if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '.'))
                    throw ParseError("invalid character in key `" + key + "`", line);
            if (value.empty()) throw ParseError("empty value for `" + key + "`", line);
            if (cfg.entries_.count(key)) throw ParseError("duplicate key `" + key + "`", line);
            cfg.entries_[key] = {value, line};
        }
        return cfg;
    }

    static ScenarioConfig load(const std::filesystem::path& path) {
        std::ifstream f(path);
        if (!f) throw ConfigurationError("cannot open config file " + path.string());
        std::stringstream ss;
        ss << f.rdbuf();
        return parse(ss.str(), path.parent_path());
    }

    bool has(const std::string& key) const { return entries_.count(key) != 0; }
    bool has_section(const std::string& section) const {
        for (const auto& [k, v] : entries_)
            if (k.compare(0, section.size() + 1, section + ".") == 0) return true;
        return false;
    }
    void set(const std::string& key, const std::string& value) { entries_[key] = {value, 0}; }

    std::string text(const std::string& key) const { return require(key).value; }
    std::string text_or(const std::string& key, const std::string& fallback) const {
        return has(key) ? text(key) : fallback;
    }

    double number(const std::string& key) const {
        const Entry& e = require(key);
        return parse_number(e.value, e.line, key);
    }
    double number_or(const std::string& key, double fallback) const { return has(key) ? number(key) : fallback; }

    std::size_t count_or(const std::string& key, std::size_t fallback) const {
        if (!has(key)) return fallback;
        const double v = number(key);
        if (v < 0.0 || v != std::floor(v) || v > 1e12)
            throw ParseError("`" + key + "` must be a nonnegative integer", require(key).line);
        return static_cast<std::size_t>(v);
    }

    bool flag_or(const std::string& key, bool fallback) const {
        if (!has(key)) return fallback;
        const Entry& e = require(key);
        if (e.value == "true" || e.value == "1" || e.value == "yes") return true;
        if (e.value == "false" || e.value == "0" || e.value == "no") return false;
        throw ParseError("`" + key + "` must be true or false", e.line);
    }

    Vec vector(const std::string& key) const {
        const Entry& e = require(key);
        return parse_vector(e.value, e.line, key);
    }

    Mat matrix(const std::string& key) const {
        const Entry& e = require(key);
        std::vector<Vec> rows;
        std::string row;
        std::istringstream in(e.value);
        while (std::getline(in, row, ';')) rows.push_back(parse_vector(row, e.line, key));
        if (rows.empty()) throw ParseError("empty matrix for `" + key + "`", e.line);
        Mat m(rows.size(), rows.front().size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != m.cols()) throw ParseError("ragged matrix for `" + key + "`", e.line);
            for (std::size_t j = 0; j < m.cols(); ++j) m(i, j) = rows[i][j];
        }
        return m;
    }

    std::filesystem::path path(const std::string& key) const {
        std::filesystem::path p = text(key);
        return p.is_absolute() ? p : base_dir_ / p;
    }

    int line_of(const std::string& key) const { return has(key) ? entries_.at(key).line : 0; }

    static double parse_number(const std::string& s, int line, const std::string& key) {
        const std::string v = trim(s);
        auto plain = [&](const std::string& t) {
            std::size_t used = 0;
            double x = 0.0;
            try {
                x = std::stod(t, &used);
            } catch (const std::exception&) {
                throw ParseError("`" + key + "`: not a number: " + t, line);
            }
            if (used != t.size()) throw ParseError("`" + key + "`: not a number: " + t, line);
            return x;
        };
        auto exp_form = [&](const std::string& t) {
            if (t.size() < 6 || t.compare(0, 4, "exp(") != 0 || t.back() != ')')
                throw ParseError("`" + key + "`: not a number: " + t, line);
            return std::exp(plain(trim(t.substr(4, t.size() - 5))));
        };
        double out;
        if (const auto star = v.find('*'); star != std::string::npos)
            out = plain(trim(v.substr(0, star))) * exp_form(trim(v.substr(star + 1)));
        else if (v.compare(0, 4, "exp(") == 0)
            out = exp_form(v);
        else
            out = plain(v);
        if (!std::isfinite(out)) throw ParseError("`" + key + "`: value must be finite", line);
        return out;
    }

private:
    const Entry& require(const std::string& key) const {
        auto it = entries_.find(key);
        if (it == entries_.end()) throw ConfigurationError("missing config key `" + key + "`");
        return it->second;
    }

    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return {};
        const auto e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }

    static Vec parse_vector(const std::string& s, int line, const std::string& key) {
        Vec out;
        std::istringstream in(s);
        std::string tok;
        while (in >> tok) out.push_back(parse_number(tok, line, key));
        if (out.empty()) throw ParseError("empty vector for `" + key + "`", line);
        return out;
    }

    std::map<std::string, Entry> entries_;
    std::filesystem::path base_dir_;
};

// ---------------------------------------------------------------------------
// Building library objects from a scenario

/// system.flavor = example (omega, a) | ode (A0, A_sin, A_tsin; A(t) = A0 + sin t A_sin + t sin t A_tsin)
///               | exponential (rates)
inline EvolutionFamily scenario_family(const ScenarioConfig& cfg) {
    const std::string flavor = cfg.text_or("system.flavor", "example");
    if (flavor == "example") {
        ExampleParams p{cfg.number_or("system.omega", 3.0), cfg.number_or("system.a", 1.0)};
        try {
            p.validate();
        } catch (const InvalidInput& e) {
            throw ParseError(e.what(), cfg.line_of("system.omega"));
        }
        EvolutionFamily f = example_family(p);
        f.set_ode(example_ode(p));
        return f;
    }
    if (flavor == "exponential") return exponential_family(cfg.vector("system.rates"));
    if (flavor == "ode") {
        const Mat a0 = cfg.matrix("system.A0");
        if (!a0.is_square()) throw ParseError("system.A0 must be square", cfg.line_of("system.A0"));
        const std::size_t d = a0.rows();
        const Mat as = cfg.has("system.A_sin") ? cfg.matrix("system.A_sin") : Mat(d, d);
        const Mat at = cfg.has("system.A_tsin") ? cfg.matrix("system.A_tsin") : Mat(d, d);
        if (as.rows() != d || as.cols() != d || at.rows() != d || at.cols() != d)
            throw ParseError("system coefficient matrices must share the shape of A0", cfg.line_of("system.A_sin"));
        OdeSystem sys{d, [a0, as, at](double t) {
                          Mat m = a0;
                          m.axpy(std::sin(t), as);
                          m.axpy(t * std::sin(t), at);
                          return m;
                      }};
        return ode_family(sys, cfg.number_or("system.ode_h", 1e-3));
    }
    throw ParseError("unknown system.flavor `" + flavor + "`", cfg.line_of("system.flavor"));
}

/// projection.mask (diagonal 0/1 entries) or projection.matrix (constant).
inline ProjectionFamily scenario_projection(const ScenarioConfig& cfg, std::size_t dim) {
    if (cfg.has("projection.mask")) {
        const Vec m = cfg.vector("projection.mask");
        if (m.size() != dim) throw ParseError("projection.mask has the wrong length", cfg.line_of("projection.mask"));
        try {
            return ProjectionFamily::diagonal(m);
        } catch (const InvalidInput& e) {
            throw ParseError(e.what(), cfg.line_of("projection.mask"));
        }
    }
    if (cfg.has("projection.matrix")) {
        const Mat m = cfg.matrix("projection.matrix");
        if (m.rows() != dim || m.cols() != dim)
            throw ParseError("projection.matrix has the wrong shape", cfg.line_of("projection.matrix"));
        try {
            return ProjectionFamily::constant(m);
        } catch (const InvalidInput& e) {
            throw ParseError(e.what(), cfg.line_of("projection.matrix"));
        }
    }
    if (cfg.text_or("system.flavor", "example") == "example") return ProjectionFamily::diagonal({1.0, 0.0});
    throw ConfigurationError("projection block required (projection.mask or projection.matrix)");
}

inline std::optional<DichotomyConstants> scenario_constants(const ScenarioConfig& cfg) {
    if (!cfg.has_section("constants")) {
        if (cfg.text_or("system.flavor", "example") == "example") {
            const double a = cfg.number_or("system.a", 1.0), w = cfg.number_or("system.omega", 3.0);
            return DichotomyConstants{std::exp(2.0 * a), w - a, 2.0 * a};
        }
        return std::nullopt;
    }
    DichotomyConstants c{cfg.number("constants.K"), cfg.number("constants.alpha"), cfg.number("constants.epsilon")};
    try {
        c.validate();
    } catch (const InvalidInput& e) {
        throw ParseError(e.what(), cfg.line_of("constants.K"));
    }
    return c;
}

inline Grid scenario_grid(const ScenarioConfig& cfg) {
    const double lo = cfg.number_or("grid.t_min", -20.0), hi = cfg.number_or("grid.t_max", 20.0),
                 h = cfg.number_or("grid.h", 0.1);
    try {
        return Grid(lo, hi, h);
    } catch (const InvalidInput& e) {
        throw ParseError(e.what(), cfg.line_of("grid.h"));
    }
}

/// Table file: CSV rows `t,b_11,b_12,...` on a uniform t grid (header row allowed).
inline Perturbation load_perturbation_table(const std::filesystem::path& file, std::size_t dim) {
    std::ifstream in(file);
    if (!in) throw ConfigurationError("cannot open perturbation table " + file.string());
    std::vector<double> ts;
    std::vector<Mat> ms;
    std::string row;
    int line = 0;
    while (std::getline(in, row)) {
        ++line;
        if (row.empty() || row[0] == '#' || std::isalpha(static_cast<unsigned char>(row[0]))) continue;
        std::vector<double> vals;
        std::stringstream ss(row);
        std::string cell;
        while (std::getline(ss, cell, ',')) vals.push_back(ScenarioConfig::parse_number(cell, line, file.filename().string()));
        if (vals.size() != 1 + dim * dim) throw ParseError("table row needs t and d*d entries", line);
        ts.push_back(vals[0]);
        Mat m(dim, dim);
        std::copy(vals.begin() + 1, vals.end(), m.data().begin());
        ms.push_back(m);
    }
    if (ts.size() < 2) throw ConfigurationError("perturbation table needs at least two rows");
    const double h = ts[1] - ts[0];
    for (std::size_t i = 1; i < ts.size(); ++i)
        if (std::abs(ts[i] - ts[i - 1] - h) > 1e-9 * std::max(1.0, std::abs(h)))
            throw ConfigurationError("perturbation table must use a uniform t step");
    return Perturbation::table(GridFn<Mat>(Grid(ts.front(), ts.back(), h), std::move(ms)));
}

/// perturbation.profile = none | scaled-exp (delta, decay, matrix) | custom-table (table)
inline Perturbation scenario_perturbation(const ScenarioConfig& cfg, std::size_t dim) {
    const std::string profile = cfg.text_or("perturbation.profile", "none");
    if (profile == "none") return Perturbation::zero(dim);
    if (profile == "scaled-exp") {
        Mat shape = cfg.has("perturbation.matrix") ? cfg.matrix("perturbation.matrix") : Mat::identity(dim);
        if (shape.rows() != dim || shape.cols() != dim)
            throw ParseError("perturbation.matrix has the wrong shape", cfg.line_of("perturbation.matrix"));
        return Perturbation::scaled_exp(cfg.number("perturbation.delta"), cfg.number("perturbation.decay"), shape);
    }
    if (profile == "custom-table") return load_perturbation_table(cfg.path("perturbation.table"), dim);
    throw ParseError("unknown perturbation.profile `" + profile + "`", cfg.line_of("perturbation.profile"));
}

inline std::uint64_t scenario_seed(const ScenarioConfig& cfg) {
    if (!cfg.has("run.seed")) throw ConfigurationError("run.seed is required for random studies");
    const double s = cfg.number("run.seed");
    if (s < 0.0 || s != std::floor(s)) throw ParseError("run.seed must be a nonnegative integer", cfg.line_of("run.seed"));
    return static_cast<std::uint64_t>(s);
}

}  // namespace nedkit
