#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "billiard/domain.hpp"
#include "billiard/trajectory.hpp"

namespace billiard {

// Line-oriented scene files: `[section]` headers and `key = value` pairs,
// vectors as comma-separated decimals in brackets. Unknown keys are rejected
// with the offending line number.
//
//   [domain]
//   kind = disk | annulus | polar-cos3 | ellipse | fourier | sandbox
//   radius = 1.0            # disk
//   r-out = 1.0             # annulus
//   r-in = 0.3
//   amplitude = 0.3         # polar-cos3
//   rx = 2.0                # ellipse
//   ry = 1.0
//   H = 1.0
//
//   [curve]                 # fourier kind, repeatable; role = outer | hole
//   role = outer
//   a0 = [0, 0]
//   cos1 = [1, 0]
//   sin1 = [0, 1]
//
//   [arc]                   # sandbox kind, repeatable polynomial graph
//   poly = [0, 0, 0.5]
//   range = [-4, 4]
//
//   [phase]                 # optional launch phase for trace-like commands
//   x = [1, 0, 0]
//   v = [-1, 0, 0]
//   t = 0
//
//   [trace] direction, eps-grazing, bounce-cap, speed-min, speed-max,
//           horizon-time, horizon-length
//   [tolerances] kappa-tol, sticky-tol
//   [run] seed

struct SceneConfig {
    Domain domain;
    TraceOptions trace;
    double kappa_tol = 1e-10;
    std::optional<double> sticky_tol;  // defaults to 1e-6 * diameter downstream
    std::uint64_t seed = 1;
    std::optional<PhasePoint> phase;
    std::string source_text;
    std::string name;

    double sticky_tolerance() const {
        return sticky_tol ? *sticky_tol : 1e-6 * domain.diameter();
    }
};

namespace detail {

struct SceneLine {
    int number = 0;
    std::string key, value;
};

inline void parse_fail(const std::string& name, int line, const std::string& msg) {
    throw ParseError(name + ":" + std::to_string(line) + ": " + msg);
}

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    const auto b = s.find_last_not_of(" \t\r");
    return (a == std::string::npos) ? "" : s.substr(a, b - a + 1);
}

inline std::vector<double> parse_vector(const std::string& name, int line, const std::string& v) {
    if (v.size() < 2 || v.front() != '[' || v.back() != ']')
        parse_fail(name, line, "expected a bracketed vector, got '" + v + "'");
    std::vector<double> out;
    std::stringstream ss(v.substr(1, v.size() - 2));
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        try {
            out.push_back(std::stod(trim(cell)));
        } catch (...) {
            parse_fail(name, line, "bad number '" + trim(cell) + "'");
        }
    }
    if (out.empty()) parse_fail(name, line, "empty vector");
    return out;
}

inline double parse_number(const std::string& name, int line, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (trim(v.substr(used)).empty()) return d;
    } catch (...) {
    }
    parse_fail(name, line, "bad number '" + v + "'");
    return 0;
}

}  // namespace detail

inline SceneConfig parse_scene_text(const std::string& text, const std::string& name) {
    using detail::parse_fail;
    struct Section {
        std::string kind;
        int line = 0;
        std::map<std::string, detail::SceneLine> kv;
        std::vector<detail::SceneLine> ordered;
    };
    std::vector<Section> sections;
    {
        std::istringstream in(text);
        std::string raw;
        int lineno = 0;
        while (std::getline(in, raw)) {
            ++lineno;
            std::string line = raw;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            line = detail::trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']') parse_fail(name, lineno, "unterminated section header");
                sections.push_back({line.substr(1, line.size() - 2), lineno, {}, {}});
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos) parse_fail(name, lineno, "expected key = value");
            if (sections.empty()) parse_fail(name, lineno, "key outside any section");
            detail::SceneLine sl{lineno, detail::trim(line.substr(0, eq)),
                                 detail::trim(line.substr(eq + 1))};
            sections.back().kv[sl.key] = sl;
            sections.back().ordered.push_back(sl);
        }
    }

    SceneConfig cfg{Domain::sandbox({AnalyticCurve::poly_graph({0.0}, -1, 1)}, 1.0), {}, 1e-10,
                    {}, 1, {}, text, name};

    std::string kind;
    double H = 1.0;
    std::map<std::string, double> dom_num;
    std::vector<AnalyticCurve> fourier_outer, fourier_holes;
    std::vector<AnalyticCurve> arcs;

    const auto known = [&](const Section& s, std::initializer_list<const char*> keys) {
        for (const auto& [key, sl] : s.kv) {
            bool ok = false;
            for (const char* k : keys)
                if (key == k) ok = true;
            if (!ok) parse_fail(name, sl.number, "unknown key '" + key + "' in [" + s.kind + "]");
        }
    };

    bool saw_domain = false;
    for (const Section& s : sections) {
        if (s.kind == "domain") {
            saw_domain = true;
            known(s, {"kind", "radius", "r-out", "r-in", "amplitude", "rx", "ry", "H"});
            for (const auto& [key, sl] : s.kv) {
                if (key == "kind")
                    kind = sl.value;
                else if (key == "H")
                    H = detail::parse_number(name, sl.number, sl.value);
                else
                    dom_num[key] = detail::parse_number(name, sl.number, sl.value);
            }
        } else if (s.kind == "curve") {
            std::string role = "outer";
            Vec2 a0{0, 0};
            std::map<int, Vec2> cosc, sinc;
            for (const auto& sl : s.ordered) {
                if (sl.key == "role") {
                    role = sl.value;
                    if (role != "outer" && role != "hole")
                        parse_fail(name, sl.number, "role must be outer or hole");
                } else if (sl.key == "a0") {
                    const auto v = detail::parse_vector(name, sl.number, sl.value);
                    if (v.size() != 2) parse_fail(name, sl.number, "a0 needs two components");
                    a0 = {v[0], v[1]};
                } else if (sl.key.rfind("cos", 0) == 0 || sl.key.rfind("sin", 0) == 0) {
                    int m = 0;
                    try {
                        m = std::stoi(sl.key.substr(3));
                    } catch (...) {
                        parse_fail(name, sl.number, "unknown key '" + sl.key + "' in [curve]");
                    }
                    if (m < 1) parse_fail(name, sl.number, "harmonic index must be >= 1");
                    const auto v = detail::parse_vector(name, sl.number, sl.value);
                    if (v.size() != 2) parse_fail(name, sl.number, "coefficient needs two components");
                    (sl.key[0] == 'c' ? cosc : sinc)[m] = {v[0], v[1]};
                } else {
                    parse_fail(name, sl.number, "unknown key '" + sl.key + "' in [curve]");
                }
            }
            int mmax = 0;
            for (const auto& [m, c] : cosc) mmax = std::max(mmax, m);
            for (const auto& [m, c] : sinc) mmax = std::max(mmax, m);
            std::vector<Vec2> A(static_cast<std::size_t>(mmax)), B(static_cast<std::size_t>(mmax));
            for (const auto& [m, c] : cosc) A[static_cast<std::size_t>(m - 1)] = c;
            for (const auto& [m, c] : sinc) B[static_cast<std::size_t>(m - 1)] = c;
            try {
                auto curve = AnalyticCurve::fourier(a0, A, B,
                                                    role == "outer" ? Orientation::Counterclockwise
                                                                    : Orientation::Clockwise);
                (role == "outer" ? fourier_outer : fourier_holes).push_back(std::move(curve));
            } catch (const Error& e) {
                parse_fail(name, s.line, std::string("invalid curve: ") + e.what());
            }
        } else if (s.kind == "arc") {
            known(s, {"poly", "range"});
            if (!s.kv.count("poly") || !s.kv.count("range"))
                parse_fail(name, s.line, "[arc] needs poly and range");
            const auto poly = detail::parse_vector(name, s.kv.at("poly").number, s.kv.at("poly").value);
            const auto range =
                detail::parse_vector(name, s.kv.at("range").number, s.kv.at("range").value);
            if (range.size() != 2 || !(range[0] < range[1]))
                parse_fail(name, s.kv.at("range").number, "range needs [lo, hi] with lo < hi");
            arcs.push_back(AnalyticCurve::poly_graph(poly, range[0], range[1]));
        } else if (s.kind == "phase") {
            known(s, {"x", "v", "t"});
            PhasePoint p;
            if (s.kv.count("x")) {
                const auto v = detail::parse_vector(name, s.kv.at("x").number, s.kv.at("x").value);
                if (v.size() != 3) parse_fail(name, s.kv.at("x").number, "x needs three components");
                p.x = {v[0], v[1], v[2]};
            }
            if (s.kv.count("v")) {
                const auto v = detail::parse_vector(name, s.kv.at("v").number, s.kv.at("v").value);
                if (v.size() != 3) parse_fail(name, s.kv.at("v").number, "v needs three components");
                p.v = {v[0], v[1], v[2]};
            }
            if (s.kv.count("t"))
                p.t = detail::parse_number(name, s.kv.at("t").number, s.kv.at("t").value);
            cfg.phase = p;
        } else if (s.kind == "trace") {
            known(s, {"direction", "eps-grazing", "bounce-cap", "speed-min", "speed-max",
                      "horizon-time", "horizon-length"});
            for (const auto& [key, sl] : s.kv) {
                if (key == "direction") {
                    if (sl.value == "forward")
                        cfg.trace.direction = TraceDirection::Forward;
                    else if (sl.value == "backward")
                        cfg.trace.direction = TraceDirection::Backward;
                    else
                        parse_fail(name, sl.number, "direction must be forward or backward");
                } else {
                    const double v = detail::parse_number(name, sl.number, sl.value);
                    if (key == "eps-grazing") cfg.trace.eps_grazing = v;
                    if (key == "bounce-cap") cfg.trace.bounce_cap = static_cast<long>(v);
                    if (key == "speed-min") cfg.trace.speed_min = v;
                    if (key == "speed-max") cfg.trace.speed_max = v;
                    if (key == "horizon-time") cfg.trace.horizon_time = v;
                    if (key == "horizon-length") cfg.trace.horizon_length = v;
                }
            }
        } else if (s.kind == "tolerances") {
            known(s, {"kappa-tol", "sticky-tol"});
            for (const auto& [key, sl] : s.kv) {
                const double v = detail::parse_number(name, sl.number, sl.value);
                if (key == "kappa-tol") cfg.kappa_tol = v;
                if (key == "sticky-tol") cfg.sticky_tol = v;
            }
        } else if (s.kind == "run") {
            known(s, {"seed"});
            if (s.kv.count("seed"))
                cfg.seed = static_cast<std::uint64_t>(
                    detail::parse_number(name, s.kv.at("seed").number, s.kv.at("seed").value));
        } else {
            parse_fail(name, s.line, "unknown section [" + s.kind + "]");
        }
    }
    if (!saw_domain) parse_fail(name, 1, "missing [domain] section");

    if (kind == "disk") {
        if (!dom_num.count("radius")) parse_fail(name, 1, "disk needs radius");
        cfg.domain = Domain::closed(
            AnalyticCurve::circle({0, 0}, dom_num["radius"], Orientation::Counterclockwise), {}, H);
    } else if (kind == "annulus") {
        if (!dom_num.count("r-out") || !dom_num.count("r-in"))
            parse_fail(name, 1, "annulus needs r-out and r-in");
        cfg.domain = Domain::closed(
            AnalyticCurve::circle({0, 0}, dom_num["r-out"], Orientation::Counterclockwise),
            {AnalyticCurve::circle({0, 0}, dom_num["r-in"], Orientation::Clockwise)}, H);
    } else if (kind == "polar-cos3") {
        if (!dom_num.count("amplitude")) parse_fail(name, 1, "polar-cos3 needs amplitude");
        cfg.domain = Domain::closed(AnalyticCurve::polar_cos3(dom_num["amplitude"]), {}, H);
    } else if (kind == "ellipse") {
        if (!dom_num.count("rx") || !dom_num.count("ry"))
            parse_fail(name, 1, "ellipse needs rx and ry");
        cfg.domain = Domain::closed(
            AnalyticCurve::ellipse({0, 0}, dom_num["rx"], dom_num["ry"],
                                   Orientation::Counterclockwise), {}, H);
    } else if (kind == "fourier") {
        if (fourier_outer.size() != 1)
            parse_fail(name, 1, "fourier scene needs exactly one outer [curve]");
        cfg.domain = Domain::closed(fourier_outer[0], fourier_holes, H);
    } else if (kind == "sandbox") {
        if (arcs.empty()) parse_fail(name, 1, "sandbox scene needs at least one [arc]");
        cfg.domain = Domain::sandbox(arcs, H);
    } else {
        parse_fail(name, 1, "unknown domain kind '" + kind + "'");
    }
    return cfg;
}

inline SceneConfig parse_scene(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path + ": cannot open scene file");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_scene_text(ss.str(), path);
}

}  // namespace billiard
