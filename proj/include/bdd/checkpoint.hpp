#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>

#include <Eigen/Core>
#include <json.hpp>

#include "error.hpp"

namespace bdd {

// Named dense tensors with shape headers. The binary form stores raw IEEE
// doubles and round-trips bit-exactly; the JSON form uses shortest
// round-trip decimal output.
//
// Binary layout (little-endian):
//   magic "BDDTENS\0", u32 version, u32 count,
//   then per tensor: u32 name_len, name bytes, u64 rows, u64 cols,
//   rows*cols doubles in column-major order.
class TensorArchive {
  public:
    static constexpr std::uint32_t kVersion = 1;

    void put(const std::string &name, const Eigen::MatrixXd &m) { tensors_[name] = m; }

    const Eigen::MatrixXd &get(const std::string &name) const {
        auto it = tensors_.find(name);
        if (it == tensors_.end())
            throw MissingArtifactError("checkpoint has no tensor '" + name + "'");
        return it->second;
    }

    bool contains(const std::string &name) const { return tensors_.count(name) != 0; }
    const std::map<std::string, Eigen::MatrixXd> &tensors() const { return tensors_; }

    void write_binary(const std::string &path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out)
            throw ArgumentError("cannot write '" + path + "'");
        out.write("BDDTENS", 8);
        write_pod(out, kVersion);
        write_pod(out, static_cast<std::uint32_t>(tensors_.size()));
        for (const auto &[name, m] : tensors_) {
            write_pod(out, static_cast<std::uint32_t>(name.size()));
            out.write(name.data(), static_cast<std::streamsize>(name.size()));
            write_pod(out, static_cast<std::uint64_t>(m.rows()));
            write_pod(out, static_cast<std::uint64_t>(m.cols()));
            out.write(reinterpret_cast<const char *>(m.data()),
                      static_cast<std::streamsize>(sizeof(double) * m.size()));
        }
    }

    static TensorArchive read_binary(const std::string &path) {
        std::ifstream in(path, std::ios::binary);
        if (!in)
            throw MissingArtifactError("cannot open '" + path + "'");
        char magic[8];
        in.read(magic, 8);
        if (!in || std::memcmp(magic, "BDDTENS", 8) != 0)
            throw ArgumentError("'" + path + "' is not a tensor archive");
        const auto version = read_pod<std::uint32_t>(in);
        if (version != kVersion)
            throw ArgumentError("unsupported tensor archive version " + std::to_string(version));
        const auto count = read_pod<std::uint32_t>(in);
        TensorArchive ar;
        for (std::uint32_t i = 0; i < count; ++i) {
            const auto len = read_pod<std::uint32_t>(in);
            std::string name(len, '\0');
            in.read(name.data(), len);
            const auto rows = read_pod<std::uint64_t>(in);
            const auto cols = read_pod<std::uint64_t>(in);
            Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
            in.read(reinterpret_cast<char *>(m.data()),
                    static_cast<std::streamsize>(sizeof(double) * m.size()));
            if (!in)
                throw ArgumentError("truncated tensor archive '" + path + "'");
            ar.tensors_.emplace(std::move(name), std::move(m));
        }
        return ar;
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["version"] = kVersion;
        auto &ts = j["tensors"] = nlohmann::json::object();
        for (const auto &[name, m] : tensors_) {
            std::vector<double> data(m.data(), m.data() + m.size());
            ts[name] = {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
        }
        return j;
    }

    static TensorArchive from_json(const nlohmann::json &j) {
        if (j.at("version").get<std::uint32_t>() != kVersion)
            throw ArgumentError("unsupported tensor archive version");
        TensorArchive ar;
        for (const auto &[name, t] : j.at("tensors").items()) {
            const auto rows = t.at("rows").get<Eigen::Index>();
            const auto cols = t.at("cols").get<Eigen::Index>();
            const auto data = t.at("data").get<std::vector<double>>();
            if (static_cast<Eigen::Index>(data.size()) != rows * cols)
                throw ArgumentError("tensor '" + name + "' has inconsistent shape");
            ar.tensors_.emplace(name, Eigen::Map<const Eigen::MatrixXd>(data.data(), rows, cols));
        }
        return ar;
    }

  private:
    template <class T> static void write_pod(std::ostream &out, T v) {
        out.write(reinterpret_cast<const char *>(&v), sizeof(T));
    }
    template <class T> static T read_pod(std::istream &in) {
        T v{};
        in.read(reinterpret_cast<char *>(&v), sizeof(T));
        if (!in)
            throw ArgumentError("truncated tensor archive");
        return v;
    }

    std::map<std::string, Eigen::MatrixXd> tensors_;
};

} // namespace bdd
