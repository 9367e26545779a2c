#include "ssm/mesh_io.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <limits>
#include <cctype>
#include <vector>

namespace ssm {

namespace {

// ---------------------------------------------------------------------------
// Writing

template <typename T>
void append_le(std::string& out, T value)
{
    char raw[sizeof(T)];
    std::memcpy(raw, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(raw, raw + sizeof(T));
    }
    out.append(raw, sizeof(T));
}

void append_float(std::string& out, float value)
{
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), value);
    out.append(buf, res.ptr);
}

// ---------------------------------------------------------------------------
// Reading

enum class ScalarType { int8, uint8, int16, uint16, int32, uint32, float32, float64 };

std::optional<ScalarType> parse_scalar_type(std::string_view name)
{
    if (name == "char" || name == "int8") return ScalarType::int8;
    if (name == "uchar" || name == "uint8") return ScalarType::uint8;
    if (name == "short" || name == "int16") return ScalarType::int16;
    if (name == "ushort" || name == "uint16") return ScalarType::uint16;
    if (name == "int" || name == "int32") return ScalarType::int32;
    if (name == "uint" || name == "uint32") return ScalarType::uint32;
    if (name == "float" || name == "float32") return ScalarType::float32;
    if (name == "double" || name == "float64") return ScalarType::float64;
    return std::nullopt;
}

struct Property
{
    std::string name;
    ScalarType type = ScalarType::float32;
    bool is_list = false;
    ScalarType count_type = ScalarType::uint8;
};

struct Element
{
    std::string name;
    std::size_t count = 0;
    std::vector<Property> properties;
};

enum class Encoding { ascii, binary_le, binary_be };

struct Header
{
    Encoding encoding = Encoding::ascii;
    std::vector<Element> elements;
    std::size_t body_offset = 0;
};

std::vector<std::string_view> split_words(std::string_view line)
{
    std::vector<std::string_view> words;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        const std::size_t start = i;
        while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        if (i > start) words.push_back(line.substr(start, i - start));
    }
    return words;
}

Header parse_header(std::string_view bytes)
{
    Header header;
    std::size_t pos = 0;
    bool saw_format = false;
    bool first = true;
    while (true) {
        const std::size_t eol = bytes.find('\n', pos);
        if (eol == std::string_view::npos) {
            throw PlyError("PLY header is not terminated by end_header");
        }
        const std::string_view line = bytes.substr(pos, eol - pos);
        pos = eol + 1;
        const auto words = split_words(line);
        if (first) {
            if (words.size() != 1 || words[0] != "ply") {
                throw PlyError("missing 'ply' magic line");
            }
            first = false;
            continue;
        }
        if (words.empty() || words[0] == "comment" || words[0] == "obj_info") {
            continue;
        }
        if (words[0] == "end_header") {
            break;
        }
        if (words[0] == "format") {
            if (words.size() != 3) throw PlyError("malformed format line");
            if (words[1] == "ascii") header.encoding = Encoding::ascii;
            else if (words[1] == "binary_little_endian") header.encoding = Encoding::binary_le;
            else if (words[1] == "binary_big_endian") header.encoding = Encoding::binary_be;
            else throw PlyError("unsupported PLY format '" + std::string(words[1]) + "'");
            saw_format = true;
        } else if (words[0] == "element") {
            if (words.size() != 3) throw PlyError("malformed element line");
            Element e;
            e.name = std::string(words[1]);
            const auto res = std::from_chars(words[2].data(), words[2].data() + words[2].size(), e.count);
            if (res.ec != std::errc() || res.ptr != words[2].data() + words[2].size()) {
                throw PlyError("bad count for element '" + e.name + "'");
            }
            header.elements.push_back(std::move(e));
        } else if (words[0] == "property") {
            if (header.elements.empty()) throw PlyError("property declared before any element");
            Property p;
            if (words.size() == 5 && words[1] == "list") {
                const auto ct = parse_scalar_type(words[2]);
                const auto it = parse_scalar_type(words[3]);
                if (!ct || !it) {
                    throw PlyError("unsupported list property type in '" + std::string(line) + "'");
                }
                p.is_list = true;
                p.count_type = *ct;
                p.type = *it;
                p.name = std::string(words[4]);
            } else if (words.size() == 3) {
                const auto t = parse_scalar_type(words[1]);
                if (!t) {
                    throw PlyError("unsupported property type '" + std::string(words[1]) + "' for property '" +
                                   std::string(words[2]) + "'");
                }
                p.type = *t;
                p.name = std::string(words[2]);
            } else {
                throw PlyError("malformed property line '" + std::string(line) + "'");
            }
            header.elements.back().properties.push_back(std::move(p));
        } else {
            throw PlyError("unsupported header keyword '" + std::string(words[0]) + "'");
        }
    }
    if (!saw_format) {
        throw PlyError("PLY header has no format line");
    }
    header.body_offset = pos;
    return header;
}

/// Sequential reader over the PLY body for either encoding.
class BodyReader
{
public:
    BodyReader(std::string_view body, Encoding encoding) : body_(body), encoding_(encoding) {}

    double read(ScalarType type)
    {
        return encoding_ == Encoding::ascii ? read_ascii(type) : read_binary(type);
    }

private:
    double read_ascii(ScalarType type)
    {
        while (pos_ < body_.size() && std::isspace(static_cast<unsigned char>(body_[pos_]))) ++pos_;
        if (pos_ >= body_.size()) {
            throw PlyError("unexpected end of ascii PLY data");
        }
        const char* begin = body_.data() + pos_;
        const char* end = body_.data() + body_.size();
        // float properties round to float, matching what a binary file would hold.
        double value = 0.0;
        std::from_chars_result res;
        if (type == ScalarType::float32) {
            float f = 0.0f;
            res = std::from_chars(begin, end, f);
            value = f;
        } else {
            res = std::from_chars(begin, end, value);
        }
        if (res.ec != std::errc()) {
            throw PlyError("malformed number in ascii PLY data at byte " + std::to_string(pos_));
        }
        pos_ += static_cast<std::size_t>(res.ptr - begin);
        return value;
    }

    template <typename T>
    T take()
    {
        if (pos_ + sizeof(T) > body_.size()) {
            throw PlyError("unexpected end of binary PLY data");
        }
        char raw[sizeof(T)];
        std::memcpy(raw, body_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        const bool file_big = encoding_ == Encoding::binary_be;
        if (file_big != (std::endian::native == std::endian::big)) {
            std::reverse(raw, raw + sizeof(T));
        }
        T value;
        std::memcpy(&value, raw, sizeof(T));
        return value;
    }

    double read_binary(ScalarType type)
    {
        switch (type) {
        case ScalarType::int8: return take<std::int8_t>();
        case ScalarType::uint8: return take<std::uint8_t>();
        case ScalarType::int16: return take<std::int16_t>();
        case ScalarType::uint16: return take<std::uint16_t>();
        case ScalarType::int32: return take<std::int32_t>();
        case ScalarType::uint32: return take<std::uint32_t>();
        case ScalarType::float32: return take<float>();
        case ScalarType::float64: return take<double>();
        }
        return 0.0;
    }

    std::string_view body_;
    Encoding encoding_;
    std::size_t pos_ = 0;
};

std::size_t read_list_count(BodyReader& reader, const Property& p)
{
    const double raw = reader.read(p.count_type);
    if (raw < 0.0 || raw != std::floor(raw)) {
        throw PlyError("invalid list length for property '" + p.name + "'");
    }
    return static_cast<std::size_t>(raw);
}

} // namespace

std::string export_ply(const TriangleMesh& mesh, PlyFormat format)
{
    mesh.validate();
    const Eigen::Index n = mesh.num_vertices();
    std::string out;
    out += "ply\n";
    out += format == PlyFormat::ascii ? "format ascii 1.0\n" : "format binary_little_endian 1.0\n";
    out += "element vertex " + std::to_string(n) + "\n";
    out += "property float x\nproperty float y\nproperty float z\n";
    out += "element face " + std::to_string(mesh.triangles.size()) + "\n";
    out += "property list uchar int vertex_indices\n";
    out += "end_header\n";

    if (format == PlyFormat::ascii) {
        for (Eigen::Index i = 0; i < n; ++i) {
            for (int c = 0; c < 3; ++c) {
                if (c > 0) out += ' ';
                append_float(out, static_cast<float>(mesh.positions(3 * i + c)));
            }
            out += '\n';
        }
        for (const auto& tri : mesh.triangles) {
            out += "3 " + std::to_string(tri[0]) + ' ' + std::to_string(tri[1]) + ' ' + std::to_string(tri[2]) + '\n';
        }
    } else {
        out.reserve(out.size() + static_cast<std::size_t>(n) * 12 + mesh.triangles.size() * 13);
        for (Eigen::Index i = 0; i < 3 * n; ++i) {
            append_le(out, static_cast<float>(mesh.positions(i)));
        }
        for (const auto& tri : mesh.triangles) {
            append_le(out, std::uint8_t{3});
            for (const auto idx : tri) append_le(out, static_cast<std::int32_t>(idx));
        }
    }
    return out;
}

TriangleMesh parse_ply(std::string_view bytes)
{
    const Header header = parse_header(bytes);
    BodyReader reader(bytes.substr(header.body_offset), header.encoding);

    TriangleMesh mesh;
    bool saw_vertex = false;
    for (const auto& element : header.elements) {
        if (element.name == "vertex") {
            saw_vertex = true;
            int ix = -1, iy = -1, iz = -1;
            for (std::size_t k = 0; k < element.properties.size(); ++k) {
                const auto& p = element.properties[k];
                if (p.is_list) {
                    throw PlyError("unsupported list property '" + p.name + "' on element 'vertex'");
                }
                if (p.name == "x") ix = static_cast<int>(k);
                if (p.name == "y") iy = static_cast<int>(k);
                if (p.name == "z") iz = static_cast<int>(k);
            }
            if (ix < 0 || iy < 0 || iz < 0) {
                throw PlyError("element 'vertex' lacks x, y or z property");
            }
            mesh.positions.resize(3 * static_cast<Eigen::Index>(element.count));
            for (std::size_t v = 0; v < element.count; ++v) {
                for (std::size_t k = 0; k < element.properties.size(); ++k) {
                    const double value = reader.read(element.properties[k].type);
                    const auto base = 3 * static_cast<Eigen::Index>(v);
                    if (static_cast<int>(k) == ix) mesh.positions(base) = value;
                    else if (static_cast<int>(k) == iy) mesh.positions(base + 1) = value;
                    else if (static_cast<int>(k) == iz) mesh.positions(base + 2) = value;
                }
            }
        } else if (element.name == "face") {
            mesh.triangles.reserve(element.count);
            for (std::size_t f = 0; f < element.count; ++f) {
                for (const auto& p : element.properties) {
                    if (!p.is_list) {
                        reader.read(p.type);
                        continue;
                    }
                    const std::size_t count = read_list_count(reader, p);
                    const bool indices = p.name == "vertex_indices" || p.name == "vertex_index";
                    if (indices && count != 3) {
                        throw PlyError("unsupported face with " + std::to_string(count) + " vertices (face " +
                                       std::to_string(f) + "); only triangles are supported");
                    }
                    Triangle tri{};
                    for (std::size_t c = 0; c < count; ++c) {
                        const double value = reader.read(p.type);
                        if (indices) {
                            if (value != std::floor(value) || value < std::numeric_limits<std::int32_t>::min() ||
                                value > std::numeric_limits<std::int32_t>::max()) {
                                throw PlyError("face " + std::to_string(f) + " has a non-integer vertex index");
                            }
                            tri[c] = static_cast<std::int32_t>(value);
                        }
                    }
                    if (indices) mesh.triangles.push_back(tri);
                }
            }
        } else {
            // Unknown elements are consumed and dropped.
            for (std::size_t i = 0; i < element.count; ++i) {
                for (const auto& p : element.properties) {
                    const std::size_t count = p.is_list ? read_list_count(reader, p) : 1;
                    for (std::size_t c = 0; c < count; ++c) reader.read(p.type);
                }
            }
        }
    }
    if (!saw_vertex) {
        throw PlyError("PLY file has no 'vertex' element");
    }
    try {
        mesh.validate();
    } catch (const std::exception& e) {
        throw PlyError(std::string("invalid PLY mesh: ") + e.what());
    }
    return mesh;
}

int nearest_vertex(const TriangleMesh& mesh, const Eigen::Vector3d& point)
{
    const Eigen::Index n = mesh.num_vertices();
    if (n == 0) {
        throw std::invalid_argument("nearest_vertex: mesh has no vertices");
    }
    int best = 0;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < n; ++i) {
        const double d2 = (mesh.vertex(i) - point).squaredNorm();
        if (d2 < best_d2) {
            best_d2 = d2;
            best = static_cast<int>(i);
        }
    }
    return best;
}

std::optional<RayHit> intersect_ray(const TriangleMesh& mesh, const Eigen::Vector3d& origin,
                                    const Eigen::Vector3d& direction)
{
    if (mesh.triangles.empty()) {
        return std::nullopt;
    }

    // Slab test against the bounding box first.
    const auto pts = mesh.positions.reshaped(3, mesh.num_vertices());
    const Eigen::Vector3d lo = pts.rowwise().minCoeff();
    const Eigen::Vector3d hi = pts.rowwise().maxCoeff();
    double t_near = 0.0;
    double t_far = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        if (std::abs(direction(a)) < 1e-300) {
            if (origin(a) < lo(a) || origin(a) > hi(a)) return std::nullopt;
            continue;
        }
        double t0 = (lo(a) - origin(a)) / direction(a);
        double t1 = (hi(a) - origin(a)) / direction(a);
        if (t0 > t1) std::swap(t0, t1);
        t_near = std::max(t_near, t0);
        t_far = std::min(t_far, t1);
        if (t_near > t_far) return std::nullopt;
    }

    // Moller-Trumbore, no back-face culling.
    constexpr double kParallel = 1e-14;
    std::optional<RayHit> best;
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
        const auto& tri = mesh.triangles[t];
        const Eigen::Vector3d v0 = mesh.vertex(tri[0]);
        const Eigen::Vector3d e1 = mesh.vertex(tri[1]) - v0;
        const Eigen::Vector3d e2 = mesh.vertex(tri[2]) - v0;
        const Eigen::Vector3d p = direction.cross(e2);
        const double det = e1.dot(p);
        if (std::abs(det) < kParallel * e1.norm() * e2.norm()) continue;
        const double inv_det = 1.0 / det;
        const Eigen::Vector3d s = origin - v0;
        const double u = s.dot(p) * inv_det;
        if (u < 0.0 || u > 1.0) continue;
        const Eigen::Vector3d q = s.cross(e1);
        const double v = direction.dot(q) * inv_det;
        if (v < 0.0 || u + v > 1.0) continue;
        const double dist = e2.dot(q) * inv_det;
        if (dist <= 0.0) continue;
        if (!best || dist < best->distance) {
            best = RayHit{static_cast<int>(t), dist, origin + dist * direction};
        }
    }
    return best;
}

std::optional<int> pick_vertex(const TriangleMesh& mesh, const Eigen::Vector3d& origin,
                               const Eigen::Vector3d& direction)
{
    if (std::abs(direction.norm() - 1.0) > 1e-6) {
        throw std::invalid_argument("pick_vertex: ray direction must be unit length");
    }
    const auto hit = intersect_ray(mesh, origin, direction);
    if (!hit) {
        return std::nullopt;
    }
    auto corners = mesh.triangles[static_cast<std::size_t>(hit->triangle)];
    std::sort(corners.begin(), corners.end());
    int best = corners[0];
    double best_d2 = (mesh.vertex(corners[0]) - hit->point).squaredNorm();
    for (int c = 1; c < 3; ++c) {
        const double d2 = (mesh.vertex(corners[c]) - hit->point).squaredNorm();
        if (d2 < best_d2) {
            best_d2 = d2;
            best = corners[c];
        }
    }
    return best;
}

} // namespace ssm
