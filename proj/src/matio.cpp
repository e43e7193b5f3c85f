#include "hvpl/matio.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace hvpl {

namespace {

constexpr char kMagic[8] = {'H', 'V', 'P', 'L', 'M', 'A', 'T', '1'};

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(b), 8);
}

uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw IoError("HVPL-MAT: truncated header");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}

uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw IoError("HVPL-MAT: truncated header");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

void write_payload(std::ostream& os, const double* data, size_t n, MatDType dtype) {
    if (dtype == MatDType::F64) {
        for (size_t i = 0; i < n; ++i) {
            uint64_t bits;
            std::memcpy(&bits, &data[i], 8);
            put_u64(os, bits);
        }
    } else {
        for (size_t i = 0; i < n; ++i) {
            const float f = static_cast<float>(data[i]);
            uint32_t bits;
            std::memcpy(&bits, &f, 4);
            put_u32(os, bits);
        }
    }
}

void write_header(std::ostream& os, MatDType dtype, const std::vector<uint64_t>& dims) {
    os.write(kMagic, 8);
    put_u32(os, static_cast<uint32_t>(dtype));
    put_u32(os, static_cast<uint32_t>(dims.size()));
    for (uint64_t d : dims) put_u64(os, d);
}

}  // namespace

Matrix MatRecord::as_matrix() const {
    if (dims.size() != 2) throw IoError("HVPL-MAT: record is not rank 2");
    return Matrix::from_rows(static_cast<int>(dims[0]), static_cast<int>(dims[1]), values);
}

Tensor3 MatRecord::as_tensor3() const {
    if (dims.size() != 3) throw IoError("HVPL-MAT: record is not rank 3");
    Tensor3 t(static_cast<int>(dims[0]), static_cast<int>(dims[1]), static_cast<int>(dims[2]));
    std::copy(values.begin(), values.end(), t.data());
    return t;
}

std::vector<double> MatRecord::as_vector() const {
    if (dims.size() != 1) throw IoError("HVPL-MAT: record is not rank 1");
    return values;
}

void write_record(std::ostream& os, const Matrix& m, MatDType dtype) {
    write_header(os, dtype, {static_cast<uint64_t>(m.rows()), static_cast<uint64_t>(m.cols())});
    write_payload(os, m.data(), m.size(), dtype);
}

void write_record(std::ostream& os, const Tensor3& t, MatDType dtype) {
    write_header(os, dtype,
                 {static_cast<uint64_t>(t.d0()), static_cast<uint64_t>(t.d1()),
                  static_cast<uint64_t>(t.d2())});
    write_payload(os, t.data(), t.size(), dtype);
}

void write_record(std::ostream& os, const std::vector<double>& v, MatDType dtype) {
    write_header(os, dtype, {static_cast<uint64_t>(v.size())});
    write_payload(os, v.data(), v.size(), dtype);
}

MatRecord read_record(std::istream& is) {
    char magic[8];
    is.read(magic, 8);
    if (!is) throw IoError("HVPL-MAT: missing magic");
    if (std::memcmp(magic, kMagic, 8) != 0) throw IoError("HVPL-MAT: bad magic bytes");

    MatRecord rec;
    const uint32_t dt = get_u32(is);
    if (dt > 1) throw IoError("HVPL-MAT: unknown dtype code " + std::to_string(dt));
    rec.dtype = static_cast<MatDType>(dt);
    const uint32_t rank = get_u32(is);
    if (rank > 3) throw IoError("HVPL-MAT: unsupported rank " + std::to_string(rank));
    uint64_t count = 1;
    for (uint32_t i = 0; i < rank; ++i) {
        rec.dims.push_back(get_u64(is));
        count *= rec.dims.back();
    }
    rec.values.resize(count);
    if (rec.dtype == MatDType::F64) {
        for (uint64_t i = 0; i < count; ++i) {
            const uint64_t bits = get_u64(is);
            std::memcpy(&rec.values[i], &bits, 8);
        }
    } else {
        for (uint64_t i = 0; i < count; ++i) {
            const uint32_t bits = get_u32(is);
            float f;
            std::memcpy(&f, &bits, 4);
            rec.values[i] = static_cast<double>(f);
        }
    }
    return rec;
}

bool at_end(std::istream& is) {
    return is.peek() == std::char_traits<char>::eof();
}

std::vector<MatRecord> read_all_records(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    std::vector<MatRecord> recs;
    while (!at_end(is)) recs.push_back(read_record(is));
    return recs;
}

void write_matrix_file(const std::string& path, const Matrix& m, MatDType dtype) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + path);
    write_record(os, m, dtype);
}

Matrix read_matrix_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    return read_record(is).as_matrix();
}

std::string describe_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    std::ostringstream out;
    int idx = 0;
    while (!at_end(is)) {
        const MatRecord rec = read_record(is);
        out << "record " << idx++ << ": dtype=" << (rec.dtype == MatDType::F32 ? "f32" : "f64")
            << " rank=" << rec.dims.size() << " dims=[";
        for (size_t i = 0; i < rec.dims.size(); ++i) {
            if (i) out << ", ";
            out << rec.dims[i];
        }
        out << "] values=" << rec.values.size() << "\n";
    }
    return out.str();
}

}  // namespace hvpl
