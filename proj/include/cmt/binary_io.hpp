#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "cmt/error.hpp"

namespace cmt::io {

/// Little-endian binary writer for checkpoint and index files.
class BinaryWriter {
  public:
    explicit BinaryWriter(const std::filesystem::path& path) : out_(path, std::ios::binary | std::ios::trunc)
    {
        if (!out_) {
            throw Error("cannot open for writing: " + path.string());
        }
    }

    void magic(std::string_view tag) { out_.write(tag.data(), static_cast<std::streamsize>(tag.size())); }

    template <typename T>
    requires std::is_arithmetic_v<T>
    void put(T value)
    {
        out_.write(reinterpret_cast<const char*>(&value), sizeof(T));
    }

    void put_string(std::string_view s)
    {
        put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
        out_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }

    template <typename T>
    requires std::is_arithmetic_v<T>
    void put_array(const T* data, std::size_t n)
    {
        out_.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(T)));
    }

    void finish()
    {
        out_.flush();
        if (!out_) {
            throw Error("write failed");
        }
    }

  private:
    std::ofstream out_;
};

class BinaryReader {
  public:
    explicit BinaryReader(const std::filesystem::path& path) : in_(path, std::ios::binary), path_(path.string())
    {
        if (!in_) {
            throw DependencyError("cannot open: " + path_);
        }
    }

    void expect_magic(std::string_view tag)
    {
        std::string got(tag.size(), '\0');
        in_.read(got.data(), static_cast<std::streamsize>(got.size()));
        if (!in_ || got != tag) {
            throw ParseError(path_ + ": bad header, expected " + std::string(tag));
        }
    }

    template <typename T>
    requires std::is_arithmetic_v<T>
    T get()
    {
        T value{};
        in_.read(reinterpret_cast<char*>(&value), sizeof(T));
        check();
        return value;
    }

    std::string get_string()
    {
        auto n = get<std::uint32_t>();
        std::string s(n, '\0');
        in_.read(s.data(), n);
        check();
        return s;
    }

    template <typename T>
    requires std::is_arithmetic_v<T>
    void get_array(T* data, std::size_t n)
    {
        in_.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(T)));
        check();
    }

  private:
    void check()
    {
        if (!in_) {
            throw ParseError(path_ + ": truncated file");
        }
    }

    std::ifstream in_;
    std::string path_;
};

}  // namespace cmt::io
