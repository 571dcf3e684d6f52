#include "ucan/tensor_file.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ucan/errors.hpp"

namespace ucan {

namespace {

constexpr char kMagic[8] = {'U', 'C', 'A', 'N', 'T', 'N', 'S', 'R'};

template <class T>
void put_le(std::vector<std::uint8_t>& out, T v) {
    static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
}

template <class T>
T get_le(const std::vector<std::uint8_t>& in, std::size_t& off) {
    if (off + sizeof(T) > in.size()) throw FormatError("truncated tensor file");
    T v;
    std::memcpy(&v, in.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

std::size_t element_count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

}  // namespace

void TensorFile::add(std::string name, const Matrix& m) {
    tensors.push_back({std::move(name), {m.rows, m.cols}, m.data});
}

void TensorFile::add(std::string name, std::vector<float> v) {
    const std::size_t n = v.size();
    tensors.push_back({std::move(name), {n}, std::move(v)});
}

const NamedTensor& TensorFile::get(std::string_view name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return t;
    }
    throw FormatError("tensor not found: " + std::string(name));
}

Matrix TensorFile::matrix(std::string_view name) const {
    const auto& t = get(name);
    if (t.shape.size() != 2) throw FormatError("tensor " + t.name + " is not a matrix");
    Matrix m;
    m.rows = t.shape[0];
    m.cols = t.shape[1];
    m.data = t.values;
    return m;
}

std::vector<std::uint8_t> TensorFile::serialize() const {
    nlohmann::json header;
    header["meta"] = meta;
    header["tensors"] = nlohmann::json::array();
    for (const auto& t : tensors) {
        if (element_count(t.shape) != t.values.size()) throw DimensionError("tensor " + t.name + " shape/size mismatch");
        header["tensors"].push_back({{"name", t.name}, {"shape", t.shape}, {"dtype", "f32"}});
    }
    const std::string text = header.dump();

    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    put_le<std::uint32_t>(out, kVersion);
    put_le<std::uint64_t>(out, text.size());
    out.insert(out.end(), text.begin(), text.end());
    for (const auto& t : tensors) {
        for (float v : t.values) put_le<float>(out, v);
    }
    return out;
}

TensorFile TensorFile::deserialize(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw FormatError("bad magic: not a tensor file");
    }
    std::size_t off = sizeof(kMagic);
    const auto version = get_le<std::uint32_t>(bytes, off);
    if (version != kVersion) {
        throw FormatError("unsupported tensor file version " + std::to_string(version) + " (expected " +
                          std::to_string(kVersion) + ")");
    }
    const auto header_len = get_le<std::uint64_t>(bytes, off);
    if (header_len > bytes.size() - off) throw FormatError("truncated tensor file header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(off),
                                       bytes.begin() + static_cast<std::ptrdiff_t>(off + header_len));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("corrupt tensor file header: ") + e.what());
    }
    off += header_len;

    TensorFile tf;
    try {
        tf.meta = header.at("meta");
        for (const auto& entry : header.at("tensors")) {
            if (entry.at("dtype") != "f32") throw FormatError("unsupported dtype");
            NamedTensor t;
            t.name = entry.at("name").get<std::string>();
            t.shape = entry.at("shape").get<std::vector<std::size_t>>();
            const std::size_t n = element_count(t.shape);
            if (n > (bytes.size() - off) / sizeof(float)) throw FormatError("truncated tensor payload: " + t.name);
            t.values.resize(n);
            std::memcpy(t.values.data(), bytes.data() + off, n * sizeof(float));
            off += n * sizeof(float);
            tf.tensors.push_back(std::move(t));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("corrupt tensor file header: ") + e.what());
    }
    if (off != bytes.size()) throw FormatError("trailing bytes after tensor payload");
    return tf;
}

void TensorFile::save(const std::filesystem::path& path) const { write_bytes(path, serialize()); }

TensorFile TensorFile::load(const std::filesystem::path& path) { return deserialize(read_bytes(path)); }

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace ucan
