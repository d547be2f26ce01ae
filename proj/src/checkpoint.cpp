#include "savehr/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace savehr {

inline constexpr const char* kModelSchemaTag = "savehr-model/1";

const Matrix& CheckpointData::array(const std::string& name) const {
    for (const auto& [n, m] : arrays)
        if (n == name) return m;
    throw std::runtime_error("checkpoint: missing array '" + name + "'");
}

int CheckpointData::config_int(const std::string& key) const {
    auto it = config.find(key);
    if (it == config.end()) throw std::runtime_error("checkpoint: missing config key '" + key + "'");
    return std::stoi(it->second);
}

void save_checkpoint(const std::string& path, const CheckpointData& data) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f << kModelSchemaTag << "\n";
    f << "kind " << data.kind << "\n";
    for (const auto& [k, v] : data.config) f << "config " << k << ' ' << v << "\n";
    f << "vocab_hash " << data.vocab_hash << "\n";
    char buf[64];
    for (const auto& [name, m] : data.arrays) {
        f << "array " << name << ' ' << m.rows << ' ' << m.cols << "\n";
        for (int i = 0; i < m.rows; ++i) {
            for (int j = 0; j < m.cols; ++j) {
                std::snprintf(buf, sizeof buf, "%.17g", m.at(i, j));
                f << (j ? " " : "") << buf;
            }
            f << "\n";
        }
    }
}

CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open for reading: " + path);
    std::string line;
    if (!std::getline(f, line) || line != kModelSchemaTag)
        throw std::runtime_error(path + ": missing or unknown checkpoint version");
    CheckpointData data;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string tag;
        ss >> tag;
        if (tag == "kind") {
            ss >> data.kind;
        } else if (tag == "config") {
            std::string k, v;
            ss >> k >> v;
            data.config[k] = v;
        } else if (tag == "vocab_hash") {
            ss >> data.vocab_hash;
        } else if (tag == "array") {
            std::string name;
            int rows, cols;
            if (!(ss >> name >> rows >> cols))
                throw std::runtime_error(path + ": malformed array header");
            Matrix m(rows, cols);
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < cols; ++j)
                    if (!(f >> m.at(i, j)))
                        throw std::runtime_error(path + ": truncated array '" + name + "'");
            f.ignore();  // trailing newline
            data.arrays.emplace_back(name, std::move(m));
        } else {
            throw std::runtime_error(path + ": unknown checkpoint line '" + line + "'");
        }
    }
    return data;
}

}  // namespace savehr
