#pragma once

#include "ssm/model.hpp"

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ssm {

class PlyError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

enum class PlyFormat { ascii, binary_little_endian };

/// PLY 1.0 with float x/y/z vertices and uchar-counted int triangle lists.
///
/// Positions are written as float32; ascii mode prints the shortest decimal
/// that reads back to the same float.
std::string export_ply(const TriangleMesh& mesh, PlyFormat format);

/// Reads ascii, binary_little_endian and binary_big_endian files. Extra scalar
/// vertex properties and unknown elements are skipped; non-triangular faces and
/// list-valued vertex properties raise PlyError naming the offending item.
TriangleMesh parse_ply(std::string_view bytes);

/// Index of the vertex closest to `point`; ties go to the lowest index.
/// Throws std::invalid_argument on a mesh without vertices.
int nearest_vertex(const TriangleMesh& mesh, const Eigen::Vector3d& point);

struct RayHit
{
    int triangle = -1;
    double distance = 0.0;
    Eigen::Vector3d point = Eigen::Vector3d::Zero();
};

/// First triangle hit by the ray (both faces count), or nothing.
std::optional<RayHit> intersect_ray(const TriangleMesh& mesh, const Eigen::Vector3d& origin,
                                    const Eigen::Vector3d& direction);

/// Vertex of the first-hit triangle closest to the hit point (lowest id on
/// ties), or nothing on a miss. `direction` must be unit length within 1e-6.
std::optional<int> pick_vertex(const TriangleMesh& mesh, const Eigen::Vector3d& origin,
                               const Eigen::Vector3d& direction);

} // namespace ssm
