#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "hvpl/matrix.hpp"

namespace hvpl {

// HVPL-MAT v1: magic "HVPLMAT1", little-endian u32 dtype (0 = f32, 1 = f64),
// u32 rank, rank x u64 dims, then the row-major payload. Multiple records may
// be concatenated in one file. Round trips are bit-exact per dtype.
enum class MatDType : uint32_t { F32 = 0, F64 = 1 };

struct MatRecord {
    MatDType dtype = MatDType::F64;
    std::vector<uint64_t> dims;
    std::vector<double> values;  // f32 payloads are widened on read

    Matrix as_matrix() const;
    Tensor3 as_tensor3() const;
    std::vector<double> as_vector() const;
};

void write_record(std::ostream& os, const Matrix& m, MatDType dtype = MatDType::F64);
void write_record(std::ostream& os, const Tensor3& t, MatDType dtype = MatDType::F64);
void write_record(std::ostream& os, const std::vector<double>& v, MatDType dtype = MatDType::F64);

// Reads one record. Throws IoError on truncated/corrupt input.
MatRecord read_record(std::istream& is);
bool at_end(std::istream& is);

std::vector<MatRecord> read_all_records(const std::string& path);
void write_matrix_file(const std::string& path, const Matrix& m, MatDType dtype = MatDType::F64);
Matrix read_matrix_file(const std::string& path);

// Human-readable header summary of every record in a file (fmt-dump).
std::string describe_file(const std::string& path);

}  // namespace hvpl
