#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <fstream>

#include "cbald/errors.hpp"

namespace cbald::detail {

inline void write_matrix(std::ofstream& out, const Eigen::MatrixXd& m) {
    std::int64_t rows = m.rows(), cols = m.cols();
    out.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
    out.write(reinterpret_cast<const char*>(&cols), sizeof(cols));
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
}

inline Eigen::MatrixXd read_matrix(std::ifstream& in) {
    std::int64_t rows = 0, cols = 0;
    in.read(reinterpret_cast<char*>(&rows), sizeof(rows));
    in.read(reinterpret_cast<char*>(&cols), sizeof(cols));
    if (!in || rows < 0 || cols < 0) throw parse_error("corrupt checkpoint matrix header");
    Eigen::MatrixXd m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
    if (!in) throw parse_error("corrupt checkpoint matrix payload");
    return m;
}

inline void write_scalar(std::ofstream& out, double v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline double read_scalar(std::ifstream& in) {
    double v = 0.0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw parse_error("corrupt checkpoint scalar");
    return v;
}

inline void write_i64(std::ofstream& out, std::int64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline std::int64_t read_i64(std::ifstream& in) {
    std::int64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw parse_error("corrupt checkpoint integer");
    return v;
}

inline void write_u64(std::ofstream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline std::uint64_t read_u64(std::ifstream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw parse_error("corrupt checkpoint integer");
    return v;
}

}  // namespace cbald::detail
