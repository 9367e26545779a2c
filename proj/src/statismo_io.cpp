#include "ssm/statismo_io.hpp"

#include "ssm/errors.hpp"

#include <hdf5.h>
#include <hdf5_hl.h>

#include <algorithm>
#include <cstring>
#include <utility>
#include <cmath>
#include <mutex>
#include <optional>

namespace ssm {

namespace {

// The system HDF5 is built without thread safety; every library call goes
// through this lock.
std::mutex& hdf5_mutex()
{
    static std::mutex m;
    return m;
}

class H5Handle
{
public:
    using Closer = herr_t (*)(hid_t);

    H5Handle() = default;
    H5Handle(hid_t id, Closer closer) : id_(id), closer_(closer) {}
    H5Handle(const H5Handle&) = delete;
    H5Handle& operator=(const H5Handle&) = delete;
    H5Handle(H5Handle&& other) noexcept : id_(std::exchange(other.id_, -1)), closer_(other.closer_) {}
    H5Handle& operator=(H5Handle&& other) noexcept
    {
        if (this != &other) {
            reset();
            id_ = std::exchange(other.id_, -1);
            closer_ = other.closer_;
        }
        return *this;
    }
    ~H5Handle() { reset(); }

    hid_t get() const { return id_; }
    explicit operator bool() const { return id_ >= 0; }

    void reset()
    {
        if (id_ >= 0 && closer_) {
            closer_(id_);
        }
        id_ = -1;
    }

private:
    hid_t id_ = -1;
    Closer closer_ = nullptr;
};

constexpr const char* kMeshDatasetType = "POLYGON_MESH";

void fail(const std::string& what)
{
    throw std::runtime_error("HDF5 write failed: " + what);
}

void check(herr_t status, const std::string& what)
{
    if (status < 0) fail(what);
}

hid_t checked(hid_t id, const std::string& what)
{
    if (id < 0) fail(what);
    return id;
}

std::vector<std::string> split_path(const std::string& path)
{
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (start <= path.size()) {
        const std::size_t slash = path.find('/', start);
        const std::size_t end = slash == std::string::npos ? path.size() : slash;
        if (end > start) parts.push_back(path.substr(start, end - start));
        if (slash == std::string::npos) break;
        start = slash + 1;
    }
    return parts;
}

bool exists(hid_t loc, const std::string& path)
{
    std::string prefix = path.starts_with('/') ? "/" : "";
    for (const auto& part : split_path(path)) {
        prefix += (prefix.empty() || prefix == "/" ? "" : "/") + part;
        if (H5Lexists(loc, prefix.c_str(), H5P_DEFAULT) <= 0) return false;
        if (H5Oexists_by_name(loc, prefix.c_str(), H5P_DEFAULT) <= 0) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Reading

template <typename T>
struct Array
{
    std::vector<hsize_t> dims;
    std::vector<T> data;

    std::size_t size() const { return data.size(); }
    // Length of a vector stored as rank 1 or as rank 2 with a unit dimension.
    std::optional<std::size_t> vector_length() const
    {
        if (dims.size() == 1) return dims[0];
        if (dims.size() == 2 && (dims[0] == 1 || dims[1] == 1)) return dims[0] * dims[1];
        return std::nullopt;
    }
};

class Reader
{
public:
    Reader(hid_t file, ValidationReport& report) : file_(file), report_(report) {}

    void add(std::string code, std::string path, std::string message)
    {
        report_.push_back({std::move(code), std::move(path), std::move(message)});
    }

    template <typename T>
    std::optional<Array<T>> read(const std::string& path, hid_t mem_type, H5T_class_t expected_class)
    {
        if (!exists(file_, path)) {
            add("missing_dataset", path, "required dataset " + path + " is missing");
            return std::nullopt;
        }
        H5Handle ds(H5Dopen2(file_, path.c_str(), H5P_DEFAULT), H5Dclose);
        if (!ds) {
            add("unreadable_dataset", path, path + " is not a dataset");
            return std::nullopt;
        }
        H5Handle type(H5Dget_type(ds.get()), H5Tclose);
        const H5T_class_t cls = type ? H5Tget_class(type.get()) : H5T_NO_CLASS;
        if (cls != expected_class && !(expected_class == H5T_FLOAT && cls == H5T_INTEGER)) {
            add("type_mismatch", path, path + " has an unexpected element type");
            return std::nullopt;
        }
        H5Handle space(H5Dget_space(ds.get()), H5Sclose);
        const int rank = space ? H5Sget_simple_extent_ndims(space.get()) : -1;
        if (rank < 0) {
            add("unreadable_dataset", path, "cannot read the shape of " + path);
            return std::nullopt;
        }
        Array<T> out;
        out.dims.resize(static_cast<std::size_t>(rank));
        if (rank > 0) H5Sget_simple_extent_dims(space.get(), out.dims.data(), nullptr);
        hsize_t total = 1;
        for (const auto d : out.dims) total *= d;
        out.data.resize(total);
        if (total > 0 && H5Dread(ds.get(), mem_type, H5S_ALL, H5S_ALL, H5P_DEFAULT, out.data.data()) < 0) {
            add("unreadable_dataset", path, "reading " + path + " failed (corrupt or truncated file)");
            return std::nullopt;
        }
        return out;
    }

private:
    hid_t file_;
    ValidationReport& report_;
};

std::optional<std::string> read_string(hid_t obj, bool is_attribute)
{
    H5Handle type(is_attribute ? H5Aget_type(obj) : H5Dget_type(obj), H5Tclose);
    if (!type || H5Tget_class(type.get()) != H5T_STRING) return std::nullopt;
    H5Handle space(is_attribute ? H5Aget_space(obj) : H5Dget_space(obj), H5Sclose);
    if (!space || H5Sget_simple_extent_npoints(space.get()) != 1) return std::nullopt;

    if (H5Tis_variable_str(type.get()) > 0) {
        H5Handle mem(H5Tcopy(H5T_C_S1), H5Tclose);
        H5Tset_size(mem.get(), H5T_VARIABLE);
        char* raw = nullptr;
        const herr_t st = is_attribute ? H5Aread(obj, mem.get(), &raw)
                                       : H5Dread(obj, mem.get(), H5S_ALL, H5S_ALL, H5P_DEFAULT, &raw);
        if (st < 0) return std::nullopt;
        std::string value = raw ? raw : "";
        H5free_memory(raw);
        return value;
    }
    const std::size_t size = H5Tget_size(type.get());
    H5Handle mem(H5Tcopy(H5T_C_S1), H5Tclose);
    H5Tset_size(mem.get(), size + 1);
    H5Tset_strpad(mem.get(), H5T_STR_NULLTERM);
    std::string buf(size + 1, '\0');
    const herr_t st = is_attribute ? H5Aread(obj, mem.get(), buf.data())
                                   : H5Dread(obj, mem.get(), H5S_ALL, H5S_ALL, H5P_DEFAULT, buf.data());
    if (st < 0) return std::nullopt;
    buf.resize(std::strlen(buf.c_str()));
    return buf;
}

std::optional<std::string> read_string_attribute(hid_t file, const std::string& object, const std::string& name)
{
    if (!exists(file, object)) return std::nullopt;
    if (H5Aexists_by_name(file, object.c_str(), name.c_str(), H5P_DEFAULT) <= 0) return std::nullopt;
    H5Handle attr(H5Aopen_by_name(file, object.c_str(), name.c_str(), H5P_DEFAULT, H5P_DEFAULT), H5Aclose);
    if (!attr) return std::nullopt;
    return read_string(attr.get(), true);
}

struct MetadataVisitor
{
    hid_t root;
    Metadata* out;
};

herr_t collect_attribute(hid_t obj, const char* name, const H5A_info_t*, void* data)
{
    auto* ctx = static_cast<std::pair<std::string, Metadata*>*>(data);
    H5Handle attr(H5Aopen(obj, name, H5P_DEFAULT), H5Aclose);
    if (attr) {
        if (auto value = read_string(attr.get(), true)) {
            (*ctx->second)[ctx->first + "@" + name] = *value;
        }
    }
    return 0;
}

herr_t collect_object(hid_t root, const char* name, const H5O_info_t* info, void* data)
{
    auto* visitor = static_cast<MetadataVisitor*>(data);
    const std::string path = std::string(name) == "." ? "" : name;
    H5Handle obj(H5Oopen(root, name, H5P_DEFAULT), H5Oclose);
    if (!obj) return 0;
    if (info->type == H5O_TYPE_DATASET) {
        if (auto value = read_string(obj.get(), false)) {
            (*visitor->out)[path] = *value;
        }
    }
    std::pair<std::string, Metadata*> ctx{path, visitor->out};
    hsize_t idx = 0;
    H5Aiterate2(obj.get(), H5_INDEX_NAME, H5_ITER_NATIVE, &idx, collect_attribute, &ctx);
    return 0;
}

Metadata read_modelinfo(hid_t file)
{
    Metadata meta;
    if (!exists(file, "/modelinfo")) return meta;
    H5Handle group(H5Gopen2(file, "/modelinfo", H5P_DEFAULT), H5Gclose);
    if (!group) return meta;
    MetadataVisitor visitor{group.get(), &meta};
    H5Ovisit(group.get(), H5_INDEX_NAME, H5_ITER_NATIVE, collect_object, &visitor);
    return meta;
}

std::string describe_dims(const std::vector<hsize_t>& dims)
{
    std::string s = "[";
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) s += " x ";
        s += std::to_string(dims[i]);
    }
    return s + "]";
}

bool all_finite(const std::vector<double>& v)
{
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

std::optional<LoadedModel> decode(std::string_view bytes, BasisConvention convention, ValidationReport& report)
{
    std::lock_guard lock(hdf5_mutex());
    H5Eset_auto2(H5E_DEFAULT, nullptr, nullptr);

    if (bytes.empty()) {
        report.push_back({"container", "/", "empty input is not an HDF5 file"});
        return std::nullopt;
    }
    // Flag 0: the library copies the buffer and opens it read-only.
    H5Handle file(H5LTopen_file_image(const_cast<char*>(bytes.data()), bytes.size(), 0), H5Fclose);
    if (!file) {
        report.push_back({"container", "/", "not a readable HDF5 file (corrupt or truncated)"});
        return std::nullopt;
    }
    Reader reader(file.get(), report);
    const std::size_t errors_before = report.size();

    LoadedModel loaded;
    const auto major = reader.read<int>("/version/majorVersion", H5T_NATIVE_INT, H5T_INTEGER);
    const auto minor = reader.read<int>("/version/minorVersion", H5T_NATIVE_INT, H5T_INTEGER);
    if (major && major->size() == 1) loaded.major_version = major->data[0];
    if (minor && minor->size() == 1) loaded.minor_version = minor->data[0];

    // Multi-model containers keep the shape model under /shape.
    std::string prefix;
    if (!exists(file.get(), "/model") && exists(file.get(), "/shape/model")) {
        prefix = "/shape";
    }
    const std::string mean_path = prefix + "/model/mean";
    const std::string basis_path = prefix + "/model/pcaBasis";
    const std::string variance_path = prefix + "/model/pcaVariance";
    const std::string noise_path = prefix + "/model/noiseVariance";
    const std::string representer = prefix + "/representer";
    const std::string points_path = representer + "/points";
    const std::string cells_path = representer + "/cells";

    const auto mean = reader.read<double>(mean_path, H5T_NATIVE_DOUBLE, H5T_FLOAT);
    const auto basis = reader.read<double>(basis_path, H5T_NATIVE_DOUBLE, H5T_FLOAT);
    const auto variance = reader.read<double>(variance_path, H5T_NATIVE_DOUBLE, H5T_FLOAT);
    const auto noise = reader.read<double>(noise_path, H5T_NATIVE_DOUBLE, H5T_FLOAT);
    const auto points = reader.read<double>(points_path, H5T_NATIVE_DOUBLE, H5T_FLOAT);
    const auto cells = reader.read<long long>(cells_path, H5T_NATIVE_LLONG, H5T_INTEGER);

    if (exists(file.get(), representer)) {
        const auto type = read_string_attribute(file.get(), representer, "datasetType");
        if (!type) {
            reader.add("missing_attribute", representer + "@datasetType",
                       "representer attribute datasetType is missing");
        } else if (*type != kMeshDatasetType) {
            reader.add("non_mesh_representer", representer + "@datasetType",
                       "datasetType is \"" + *type + "\", expected \"" + kMeshDatasetType + "\"");
        }
    }

    // Dimensional consistency.
    std::optional<std::size_t> dim;
    std::optional<std::size_t> components;
    if (mean) {
        dim = mean->vector_length();
        if (!dim || *dim % 3 != 0) {
            reader.add("dimension_mismatch", mean_path,
                       "mean must be a vector of length 3N, got " + describe_dims(mean->dims));
            dim.reset();
        }
    }
    if (basis) {
        if (basis->dims.size() != 2) {
            reader.add("dimension_mismatch", basis_path, "pcaBasis must be 2-D, got " + describe_dims(basis->dims));
        } else {
            components = basis->dims[1];
            if (dim && basis->dims[0] != *dim) {
                reader.add("dimension_mismatch", basis_path,
                           "pcaBasis has " + std::to_string(basis->dims[0]) + " rows, mean has " +
                               std::to_string(*dim) + " entries");
            }
        }
    }
    if (variance) {
        const auto len = variance->vector_length();
        if (!len && variance->size() != 0) {
            reader.add("dimension_mismatch", variance_path,
                       "pcaVariance must be a vector, got " + describe_dims(variance->dims));
        } else if (components && variance->size() != *components) {
            reader.add("dimension_mismatch", variance_path,
                       "pcaVariance has " + std::to_string(variance->size()) + " entries, pcaBasis has " +
                           std::to_string(*components) + " columns");
        }
        if (!all_finite(variance->data)) {
            reader.add("non_finite", variance_path, "pcaVariance contains non-finite values");
        }
        for (std::size_t i = 0; i < variance->size(); ++i) {
            if (variance->data[i] < 0.0) {
                reader.add("negative_variance", variance_path,
                           "pcaVariance[" + std::to_string(i) + "] is negative");
                break;
            }
        }
        for (std::size_t i = 1; i < variance->size(); ++i) {
            if (variance->data[i] > variance->data[i - 1]) {
                reader.add("variance_order", variance_path,
                           "pcaVariance is not nonincreasing at index " + std::to_string(i));
                break;
            }
        }
    }
    if (noise && noise->size() != 1) {
        reader.add("dimension_mismatch", noise_path, "noiseVariance must hold a single value");
    }
    if (noise && noise->size() == 1 && !(noise->data[0] >= 0.0 && std::isfinite(noise->data[0]))) {
        reader.add("negative_variance", noise_path, "noiseVariance must be finite and >= 0");
    }
    if (mean && !all_finite(mean->data)) reader.add("non_finite", mean_path, "mean contains non-finite values");
    if (basis && !all_finite(basis->data)) reader.add("non_finite", basis_path, "pcaBasis contains non-finite values");
    if (points && !all_finite(points->data)) {
        reader.add("non_finite", points_path, "points contain non-finite values");
    }

    const std::size_t num_vertices = dim ? *dim / 3 : 0;
    bool points_transposed = false;
    if (points && dim) {
        const auto& d = points->dims;
        if (d.size() == 2 && d[0] == 3 && d[1] == num_vertices) {
            points_transposed = false;
        } else if (d.size() == 2 && d[1] == 3 && d[0] == num_vertices) {
            points_transposed = true;
        } else {
            reader.add("dimension_mismatch", points_path,
                       "points must be 3 x " + std::to_string(num_vertices) + ", got " + describe_dims(d));
        }
    }

    Triangulation triangles;
    if (cells) {
        const auto& d = cells->dims;
        if (d.size() != 2 || (d[0] != 3 && d[1] != 3)) {
            reader.add("dimension_mismatch", cells_path, "cells must be 3 x C or C x 3, got " + describe_dims(d));
        } else {
            const bool canonical = d[0] == 3;
            const std::size_t count = canonical ? d[1] : d[0];
            triangles.resize(count);
            for (std::size_t t = 0; t < count; ++t) {
                bool bad = false;
                for (std::size_t c = 0; c < 3; ++c) {
                    const long long idx = canonical ? cells->data[c * count + t] : cells->data[t * 3 + c];
                    if (dim && (idx < 0 || static_cast<std::size_t>(idx) >= num_vertices)) bad = true;
                    triangles[t][c] = static_cast<std::int32_t>(idx);
                }
                if (bad) {
                    reader.add("cell_index_out_of_range", cells_path,
                               "cell " + std::to_string(t) + " references a vertex outside [0, " +
                                   std::to_string(num_vertices) + ")");
                }
            }
        }
    }

    if (report.size() != errors_before || !mean || !basis || !variance || !noise || !points || !cells || !dim) {
        return std::nullopt;
    }

    const auto rows = static_cast<Eigen::Index>(*dim);
    const auto cols = static_cast<Eigen::Index>(basis->dims[1]);
    Vector mean_v = Eigen::Map<const Vector>(mean->data.data(), rows);
    Matrix basis_m = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        basis->data.data(), rows, cols);
    Vector variance_v = Eigen::Map<const Vector>(variance->data.data(), cols);
    Vector reference(rows);
    for (std::size_t i = 0; i < num_vertices; ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
            reference(static_cast<Eigen::Index>(3 * i + c)) =
                points_transposed ? points->data[i * 3 + c] : points->data[c * num_vertices + i];
        }
    }

    auto [kept_basis, kept_var] = drop_negligible_components(basis_m, variance_v);
    const double err_orthonormal = orthonormality_error(kept_basis);
    Matrix unscaled = kept_basis * kept_var.cwiseSqrt().cwiseInverse().asDiagonal();
    const double err_prescaled = orthonormality_error(unscaled);

    switch (convention) {
    case BasisConvention::automatic:
        if (err_orthonormal <= kOrthonormalityTolerance) {
            loaded.stored_convention = BasisConvention::orthonormal;
        } else if (err_prescaled <= kOrthonormalityTolerance) {
            loaded.stored_convention = BasisConvention::prescaled;
        } else {
            reader.add("non_orthonormal_basis", basis_path,
                       "pcaBasis is neither orthonormal (max error " + std::to_string(err_orthonormal) +
                           ") nor orthonormal after dividing by sqrt(pcaVariance) (max error " +
                           std::to_string(err_prescaled) + ")");
        }
        break;
    case BasisConvention::orthonormal:
        loaded.stored_convention = BasisConvention::orthonormal;
        if (err_orthonormal > kOrthonormalityTolerance) {
            reader.add("non_orthonormal_basis", basis_path,
                       "pcaBasis is not orthonormal (max error " + std::to_string(err_orthonormal) + ")");
        }
        break;
    case BasisConvention::prescaled:
        loaded.stored_convention = BasisConvention::prescaled;
        if (err_prescaled > kOrthonormalityTolerance) {
            reader.add("non_orthonormal_basis", basis_path,
                       "pcaBasis is not orthonormal after dividing by sqrt(pcaVariance) (max error " +
                           std::to_string(err_prescaled) + ")");
        }
        break;
    }
    if (report.size() != errors_before) {
        return std::nullopt;
    }
    if (loaded.stored_convention == BasisConvention::prescaled) {
        kept_basis = std::move(unscaled);
    }

    try {
        loaded.model = ShapeModel(std::move(mean_v), std::move(kept_basis), std::move(kept_var), std::move(triangles),
                                  std::move(reference), noise->data[0], read_modelinfo(file.get()));
    } catch (const std::exception& e) {
        reader.add("invalid_model", "/", e.what());
        return std::nullopt;
    }
    return loaded;
}

// ---------------------------------------------------------------------------
// Writing

class Writer
{
public:
    explicit Writer(hid_t file) : file_(file) {}

    void group(const std::string& path)
    {
        H5Handle g(checked(H5Gcreate2(file_, path.c_str(), H5P_DEFAULT, H5P_DEFAULT, H5P_DEFAULT), path), H5Gclose);
    }

    void floats(const std::string& path, const std::vector<hsize_t>& dims, const std::vector<float>& data)
    {
        write(path, dims, H5T_IEEE_F32LE, H5T_NATIVE_FLOAT, data.data());
    }

    void ints(const std::string& path, const std::vector<hsize_t>& dims, const std::vector<std::int32_t>& data)
    {
        write(path, dims, H5T_STD_I32LE, H5T_NATIVE_INT32, data.data());
    }

    void string_dataset(const std::string& path, const std::string& value)
    {
        H5Handle type = string_type(value);
        H5Handle space(checked(H5Screate(H5S_SCALAR), path), H5Sclose);
        H5Handle lcpl(H5Pcreate(H5P_LINK_CREATE), H5Pclose);
        H5Pset_create_intermediate_group(lcpl.get(), 1);
        H5Handle ds(checked(H5Dcreate2(file_, path.c_str(), type.get(), space.get(), lcpl.get(), H5P_DEFAULT,
                                       H5P_DEFAULT),
                            path),
                    H5Dclose);
        check(H5Dwrite(ds.get(), type.get(), H5S_ALL, H5S_ALL, H5P_DEFAULT, value.c_str()), path);
    }

    void string_attribute(const std::string& object, const std::string& name, const std::string& value)
    {
        if (!exists(file_, object)) {
            H5Handle lcpl(H5Pcreate(H5P_LINK_CREATE), H5Pclose);
            H5Pset_create_intermediate_group(lcpl.get(), 1);
            H5Handle g(checked(H5Gcreate2(file_, object.c_str(), lcpl.get(), H5P_DEFAULT, H5P_DEFAULT), object),
                       H5Gclose);
        }
        H5Handle obj(checked(H5Oopen(file_, object.c_str(), H5P_DEFAULT), object), H5Oclose);
        H5Handle type = string_type(value);
        H5Handle space(checked(H5Screate(H5S_SCALAR), name), H5Sclose);
        H5Handle attr(checked(H5Acreate2(obj.get(), name.c_str(), type.get(), space.get(), H5P_DEFAULT, H5P_DEFAULT),
                              object + "@" + name),
                      H5Aclose);
        check(H5Awrite(attr.get(), type.get(), value.c_str()), object + "@" + name);
    }

private:
    static H5Handle string_type(const std::string& value)
    {
        H5Handle type(checked(H5Tcopy(H5T_C_S1), "string type"), H5Tclose);
        H5Tset_size(type.get(), value.size() + 1);
        H5Tset_strpad(type.get(), H5T_STR_NULLTERM);
        return type;
    }

    void write(const std::string& path, const std::vector<hsize_t>& dims, hid_t file_type, hid_t mem_type,
               const void* data)
    {
        H5Handle space(checked(dims.empty() ? H5Screate(H5S_SCALAR)
                                            : H5Screate_simple(static_cast<int>(dims.size()), dims.data(), nullptr),
                               path),
                       H5Sclose);
        H5Handle ds(checked(H5Dcreate2(file_, path.c_str(), file_type, space.get(), H5P_DEFAULT, H5P_DEFAULT,
                                       H5P_DEFAULT),
                            path),
                    H5Dclose);
        hsize_t total = 1;
        for (const auto d : dims) total *= d;
        if (total > 0) {
            check(H5Dwrite(ds.get(), mem_type, H5S_ALL, H5S_ALL, H5P_DEFAULT, data), path);
        }
    }

    hid_t file_;
};

} // namespace

std::string_view to_string(BasisConvention c)
{
    switch (c) {
    case BasisConvention::automatic: return "auto";
    case BasisConvention::orthonormal: return "orthonormal";
    case BasisConvention::prescaled: return "prescaled";
    }
    return "auto";
}

StatismoError::StatismoError(ValidationReport report)
    : std::runtime_error([&report] {
          std::string msg = "invalid Statismo file";
          for (const auto& v : report) msg += "\n  " + v.code + " (" + v.path + "): " + v.message;
          return msg;
      }()),
      report_(std::move(report))
{
}

LoadedModel load_statismo_detailed(std::string_view bytes, BasisConvention convention)
{
    ValidationReport report;
    auto loaded = decode(bytes, convention, report);
    if (!loaded) {
        throw StatismoError(std::move(report));
    }
    return std::move(*loaded);
}

ShapeModel load_statismo(std::string_view bytes, BasisConvention convention)
{
    return load_statismo_detailed(bytes, convention).model;
}

ValidationReport validate_statismo(std::string_view bytes, BasisConvention convention)
{
    ValidationReport report;
    try {
        decode(bytes, convention, report);
    } catch (const std::exception& e) {
        report.push_back({"internal", "/", e.what()});
    }
    return report;
}

std::string save_statismo(const ShapeModel& model)
{
    std::lock_guard lock(hdf5_mutex());
    H5Eset_auto2(H5E_DEFAULT, nullptr, nullptr);

    H5Handle fapl(checked(H5Pcreate(H5P_FILE_ACCESS), "file access list"), H5Pclose);
    check(H5Pset_fapl_core(fapl.get(), 1 << 20, 0), "core driver");
    H5Handle file(checked(H5Fcreate("ssm-model-image.h5", H5F_ACC_TRUNC, H5P_DEFAULT, fapl.get()), "create image"),
                  H5Fclose);
    Writer w(file.get());

    const auto n = static_cast<std::size_t>(model.num_vertices());
    const auto rows = static_cast<std::size_t>(model.mean().size());
    const auto cols = static_cast<std::size_t>(model.num_components());

    w.group("/version");
    w.ints("/version/majorVersion", {}, {0});
    w.ints("/version/minorVersion", {}, {9});

    w.group("/model");
    std::vector<float> buf(rows);
    for (std::size_t i = 0; i < rows; ++i) buf[i] = static_cast<float>(model.mean()(static_cast<Eigen::Index>(i)));
    w.floats("/model/mean", {rows}, buf);

    buf.assign(rows * cols, 0.0f);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            buf[r * cols + c] = static_cast<float>(model.basis()(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)));
        }
    }
    w.floats("/model/pcaBasis", {rows, cols}, buf);

    buf.resize(cols);
    for (std::size_t c = 0; c < cols; ++c) buf[c] = static_cast<float>(model.variances()(static_cast<Eigen::Index>(c)));
    w.floats("/model/pcaVariance", {cols}, buf);
    w.floats("/model/noiseVariance", {}, {static_cast<float>(model.noise_variance())});

    w.group("/representer");
    w.string_attribute("/representer", "name", "vtkStandardMeshRepresenter");
    w.string_attribute("/representer", "datasetType", kMeshDatasetType);
    buf.resize(3 * n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
            buf[c * n + i] = static_cast<float>(model.reference_points()(static_cast<Eigen::Index>(3 * i + c)));
        }
    }
    w.floats("/representer/points", {3, n}, buf);

    const std::size_t count = model.triangles().size();
    std::vector<std::int32_t> cells(3 * count);
    for (std::size_t t = 0; t < count; ++t) {
        for (std::size_t c = 0; c < 3; ++c) cells[c * count + t] = model.triangles()[t][c];
    }
    w.ints("/representer/cells", {3, count}, cells);

    w.group("/modelinfo");
    for (const auto& [key, value] : model.metadata()) {
        if (key.find('@') == std::string::npos && !key.empty()) {
            w.string_dataset("/modelinfo/" + key, value);
        }
    }
    for (const auto& [key, value] : model.metadata()) {
        const auto at = key.find('@');
        if (at != std::string::npos) {
            const std::string object = key.substr(0, at);
            w.string_attribute(object.empty() ? "/modelinfo" : "/modelinfo/" + object, key.substr(at + 1), value);
        }
    }

    check(H5Fflush(file.get(), H5F_SCOPE_GLOBAL), "flush");
    const ssize_t size = H5Fget_file_image(file.get(), nullptr, 0);
    if (size < 0) fail("file image size");
    std::string image(static_cast<std::size_t>(size), '\0');
    if (H5Fget_file_image(file.get(), image.data(), image.size()) < 0) fail("file image");
    return image;
}

} // namespace ssm
