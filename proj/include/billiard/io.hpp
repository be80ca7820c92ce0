#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "billiard/domain.hpp"
#include "billiard/grazing.hpp"
#include "billiard/trajectory.hpp"

namespace billiard {

// Round-trip decimal formatting for every numeric CSV field.
inline std::string fmt_full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

class CsvWriter {
public:
    explicit CsvWriter(const std::filesystem::path& path) : out_(path) {
        if (!out_) throw Error("cannot open " + path.string());
    }

    void header(const std::vector<std::string>& cols) { line(cols); }

    void line(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out_ << ',';
            out_ << cells[i];
        }
        out_ << '\n';
    }

private:
    std::ofstream out_;
};

inline std::uint64_t fnv1a(const std::string& data) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

struct RunManifest {
    std::string command;
    std::uint64_t scene_hash = 0;
    std::vector<std::pair<std::string, std::string>> options;
    std::string version = "billiard 1.0.0";
    double wall_seconds = 0.0;
    std::vector<std::string> outputs;

    void write(const std::filesystem::path& dir) const {
        std::ofstream out(dir / "manifest.txt");
        out << "command = " << command << "\n";
        char hash[32];
        std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(scene_hash));
        out << "scene-hash = " << hash << "\n";
        out << "version = " << version << "\n";
        for (const auto& [k, v] : options) out << k << " = " << v << "\n";
        out << "wall-seconds = " << fmt_full(wall_seconds) << "\n";
        for (const auto& o : outputs) out << "output = " << o << "\n";
    }
};

// ---------------------------------------------------------------------------
// SVG overlay: boundary, chords, grazing events colored by class, marked
// points. Fixed 1024-unit viewport scaled to the scene bounding box.

class SvgScene {
public:
    explicit SvgScene(const Domain& domain) {
        const Vec2 lo = domain.bbox_lo(), hi = domain.bbox_hi();
        const Vec2 span = hi - lo;
        const double margin = 0.05 * std::max(span.x, span.y);
        lo_ = lo - Vec2{margin, margin};
        scale_ = 1024.0 / (std::max(span.x, span.y) + 2 * margin);
        height_ = (span.y + 2 * margin) * scale_;
        body_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 "
              << (span.x + 2 * margin) * scale_ << " " << height_ << "\">\n";
        for (int id = 0; id < domain.curve_count(); ++id) {
            const auto& pl = domain.polyline(id);
            body_ << "<polyline fill=\"none\" stroke=\"#222\" stroke-width=\"2\" points=\"";
            for (const Vec2& p : pl.pts) point(p);
            body_ << "\"/>\n";
        }
    }

    void add_cycle(const SpecularCycle& cyc, const char* color = "#2266cc") {
        body_ << "<polyline fill=\"none\" stroke=\"" << color
              << "\" stroke-width=\"1\" points=\"";
        point(cyc.origin.x.cs());
        for (const auto& ev : cyc.events) point(ev.x.cs());
        body_ << "\"/>\n";
        for (const auto& ev : cyc.events)
            if (ev.grazing != GrazingClass::NonGrazing) add_marker(ev.x.cs(), grazing_color(ev.grazing), 5);
    }

    void add_segment(Vec2 a, Vec2 b, const char* color = "#44aa44") {
        body_ << "<line stroke=\"" << color << "\" stroke-width=\"1\" x1=\"" << sx(a) << "\" y1=\""
              << sy(a) << "\" x2=\"" << sx(b) << "\" y2=\"" << sy(b) << "\"/>\n";
    }

    void add_marker(Vec2 p, const char* color = "#cc2222", double r = 7) {
        body_ << "<circle cx=\"" << sx(p) << "\" cy=\"" << sy(p) << "\" r=\"" << r
              << "\" fill=\"" << color << "\"/>\n";
    }

    static const char* grazing_color(GrazingClass g) {
        switch (g) {
            case GrazingClass::Concave: return "#e69f00";
            case GrazingClass::Convex: return "#cc2222";
            case GrazingClass::InflectionOutward: return "#9955cc";
            case GrazingClass::InflectionInward: return "#552299";
            default: return "#888888";
        }
    }

    void write(const std::filesystem::path& path) {
        std::ofstream out(path);
        out << body_.str() << "</svg>\n";
    }

private:
    double sx(Vec2 p) const { return (p.x - lo_.x) * scale_; }
    double sy(Vec2 p) const { return height_ - (p.y - lo_.y) * scale_; }
    void point(Vec2 p) { body_ << sx(p) << "," << sy(p) << " "; }

    Vec2 lo_;
    double scale_ = 1.0;
    double height_ = 0.0;
    std::ostringstream body_;
};

}  // namespace billiard
