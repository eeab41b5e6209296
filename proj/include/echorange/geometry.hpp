#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace echorange::scene {

inline constexpr double kSpeedOfSound = 343.0;       // m/s at 20 C
inline constexpr double kTetrahedronRadius = 0.042;  // m, array circumradius

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    double norm() const { return std::sqrt(x * x + y * y + z * z); }
};

inline double distance(const Vec3& a, const Vec3& b) { return (a - b).norm(); }

// Shoebox room. Absorption is per surface in the order
// x=0, x=Lx, y=0, y=Ly, z=0 (floor), z=Lz (ceiling).
struct RoomSpec {
    Vec3 dims;
    std::array<double, 6> wall_absorption{};
    int max_image_order = 0;
    std::string room_id;

    bool contains(const Vec3& p) const {
        return p.x > 0.0 && p.x < dims.x && p.y > 0.0 && p.y < dims.y && p.z > 0.0 &&
               p.z < dims.z;
    }
    double diagonal() const { return dims.norm(); }
    void validate() const;
};

// Four-capsule regular tetrahedral array.
struct ArrayGeometry {
    Vec3 center;
    std::array<Vec3, 4> mic_offsets;

    // Canonical orientation: two capsules up (front/back on the x axis), two
    // down (left/right on the y axis). This orientation admits the order-8
    // channel-swap symmetry group used for augmentation.
    static ArrayGeometry tetrahedral(const Vec3& center, double radius = kTetrahedronRadius);

    Vec3 mic_position(int i) const { return center + mic_offsets[i]; }
    void validate(const RoomSpec& room) const;
};

struct TrajectoryKeypoint {
    double time = 0.0;  // seconds
    Vec3 position;
};

// Piecewise-linear source path plus the active interval [onset, offset_time].
struct Trajectory {
    std::vector<TrajectoryKeypoint> keypoints;
    double onset = 0.0;
    double offset_time = 0.0;

    Vec3 position_at(double t) const;
    void validate(const RoomSpec& room) const;
};

// Frame-aligned labels: d_t in {0,1} and y_t in meters. y_t is defined only
// where d_t = 1; inactive entries hold 0.0 as a placeholder and must never be
// consumed (every consumer masks on activity).
struct SceneAnnotation {
    double frame_rate = 0.0;
    std::vector<std::uint8_t> activity;
    std::vector<double> distance;

    std::size_t frames() const { return activity.size(); }
};

}  // namespace echorange::scene
