#pragma once

#include <cmath>
#include <ostream>

namespace billiard {

// Cross-section vector. Components map to the cylinder coordinates (x1, x3);
// the axial coordinate x2 is carried separately.
struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    constexpr Vec2() = default;
    constexpr Vec2(double x_, double y_) : x(x_), y(y_) {}

    constexpr Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
    constexpr Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
    constexpr Vec2 operator*(double c) const { return {x * c, y * c}; }
    constexpr Vec2 operator/(double c) const { return {x / c, y / c}; }
    constexpr Vec2 operator-() const { return {-x, -y}; }
    Vec2& operator+=(Vec2 o) { x += o.x; y += o.y; return *this; }
    Vec2& operator-=(Vec2 o) { x -= o.x; y -= o.y; return *this; }

    double norm() const { return std::hypot(x, y); }
    double norm2() const { return x * x + y * y; }
    Vec2 normalized() const { const double n = norm(); return {x / n, y / n}; }
};

constexpr inline Vec2 operator*(double c, Vec2 v) { return {c * v.x, c * v.y}; }

inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
// 2D cross product a1*b3 - a3*b1.
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
// Rotate by +90 degrees: (x, y) -> (-y, x).
inline Vec2 perp(Vec2 v) { return {-v.y, v.x}; }

struct Vec3 {
    double x1 = 0.0;
    double x2 = 0.0;  // axial
    double x3 = 0.0;

    constexpr Vec3() = default;
    constexpr Vec3(double a, double b, double c) : x1(a), x2(b), x3(c) {}
    Vec3(Vec2 cross_section, double axial) : x1(cross_section.x), x2(axial), x3(cross_section.y) {}

    Vec2 cs() const { return {x1, x3}; }  // cross-section projection (underline)

    constexpr Vec3 operator+(Vec3 o) const { return {x1 + o.x1, x2 + o.x2, x3 + o.x3}; }
    constexpr Vec3 operator-(Vec3 o) const { return {x1 - o.x1, x2 - o.x2, x3 - o.x3}; }
    constexpr Vec3 operator*(double c) const { return {x1 * c, x2 * c, x3 * c}; }
    constexpr Vec3 operator-() const { return {-x1, -x2, -x3}; }

    double norm() const { return std::sqrt(x1 * x1 + x2 * x2 + x3 * x3); }
    double norm2() const { return x1 * x1 + x2 * x2 + x3 * x3; }
};

constexpr inline Vec3 operator*(double c, Vec3 v) { return {c * v.x1, c * v.x2, c * v.x3}; }

inline double dot(Vec3 a, Vec3 b) { return a.x1 * b.x1 + a.x2 * b.x2 + a.x3 * b.x3; }

inline Vec3 cross(Vec3 a, Vec3 b) {
    return {a.x2 * b.x3 - a.x3 * b.x2,
            a.x3 * b.x1 - a.x1 * b.x3,
            a.x1 * b.x2 - a.x2 * b.x1};
}

inline std::ostream& operator<<(std::ostream& os, Vec2 v) {
    return os << "(" << v.x << ", " << v.y << ")";
}
inline std::ostream& operator<<(std::ostream& os, Vec3 v) {
    return os << "(" << v.x1 << ", " << v.x2 << ", " << v.x3 << ")";
}

inline double det2(double a, double b, double c, double d) { return a * d - b * c; }

inline double det3(const double m[3][3]) {
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
         - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
         + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

}  // namespace billiard
