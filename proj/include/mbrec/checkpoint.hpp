#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mbrec/common.hpp"

namespace mbrec {

// Binary container for named arrays plus a JSON metadata block. Doubles are
// stored raw (IEEE 754 little-endian), so save/load round-trips bitwise.
class Checkpoint {
public:
    enum class DType : std::uint8_t { f64 = 0, i64 = 1 };

    struct Array {
        std::string name;
        DType dtype = DType::f64;
        std::vector<std::size_t> dims;
        std::vector<double> f64;
        std::vector<std::int64_t> i64;

        std::size_t numel() const {
            std::size_t n = 1;
            for (auto d : dims) n *= d;
            return n;
        }
    };

    nlohmann::json meta = nlohmann::json::object();

    void add_f64(const std::string& name, std::vector<std::size_t> dims,
                 std::vector<double> data);
    void add_i64(const std::string& name, std::vector<std::size_t> dims,
                 std::vector<std::int64_t> data);

    const Array* find(const std::string& name) const;
    const Array& require(const std::string& name) const;
    const std::vector<Array>& arrays() const { return arrays_; }

    void save(const std::filesystem::path& path) const;
    static Checkpoint load(const std::filesystem::path& path);

private:
    std::vector<Array> arrays_;
};

}  // namespace mbrec
