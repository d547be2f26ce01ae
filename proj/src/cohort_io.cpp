#include "savehr/cohort_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace savehr {

namespace {

std::ofstream open_out(const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    return f;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open for reading: " + path);
    return f;
}

void expect_version(std::ifstream& f, const std::string& path) {
    std::string line;
    if (!std::getline(f, line) || line != kCohortSchemaVersion)
        throw std::runtime_error(path + ": missing or unknown schema version (expected " +
                                 std::string(kCohortSchemaVersion) + ")");
}

}  // namespace

void write_population(const std::string& path, const std::vector<EncounterStream>& streams) {
    std::ofstream f = open_out(path);
    f << kCohortSchemaVersion << "\n";
    for (const EncounterStream& s : streams) {
        f << s.patient_id << ' ' << s.gender << ' ' << s.race << ' ' << s.birth_offset;
        for (const Encounter& e : s.encounters) {
            f << ' ' << e.day << ':';
            for (std::size_t i = 0; i < e.codes.size(); ++i) {
                if (i) f << ',';
                f << e.codes[i];
            }
        }
        f << '\n';
    }
}

std::vector<EncounterStream> read_population(const std::string& path) {
    std::ifstream f = open_in(path);
    expect_version(f, path);
    std::vector<EncounterStream> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        EncounterStream s;
        if (!(ss >> s.patient_id >> s.gender >> s.race >> s.birth_offset))
            throw std::runtime_error(path + ": malformed patient line");
        std::string tok;
        while (ss >> tok) {
            const auto colon = tok.find(':');
            if (colon == std::string::npos)
                throw std::runtime_error(path + ": malformed encounter token '" + tok + "'");
            Encounter e;
            e.day = std::stoi(tok.substr(0, colon));
            std::string codes = tok.substr(colon + 1);
            std::istringstream cs(codes);
            std::string c;
            while (std::getline(cs, c, ',')) e.codes.push_back(std::stoi(c));
            if (e.codes.empty())
                throw std::runtime_error(path + ": encounter without codes");
            s.encounters.push_back(std::move(e));
        }
        out.push_back(std::move(s));
    }
    return out;
}

void write_cohort(const std::string& path, const std::vector<int>& vocab,
                  const std::vector<PatientTensor>& tensors) {
    std::ofstream f = open_out(path);
    f << kCohortSchemaVersion << "\n";
    f << "vocab";
    for (int c : vocab) f << ' ' << c;
    f << '\n';
    for (const PatientTensor& t : tensors) {
        f << t.patient_id << ' ' << t.label << ' ' << t.gender << ',' << t.race << ','
          << t.age_bin;
        for (int q = 0; q < kNumQuarters; ++q) {
            f << ' ';
            if (t.quarter_counts[q].empty()) {
                f << '-';
                continue;
            }
            bool first = true;
            for (const auto& [idx, cnt] : t.quarter_counts[q]) {
                if (!first) f << ',';
                first = false;
                f << idx << ':' << cnt;
            }
        }
        f << '\n';
    }
}

CohortFile read_cohort(const std::string& path) {
    std::ifstream f = open_in(path);
    expect_version(f, path);
    CohortFile out;
    std::string line;
    if (!std::getline(f, line)) throw std::runtime_error(path + ": missing vocabulary header");
    {
        std::istringstream ss(line);
        std::string tag;
        ss >> tag;
        if (tag != "vocab") throw std::runtime_error(path + ": expected vocab header");
        int c;
        while (ss >> c) out.vocab.push_back(c);
    }
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        PatientTensor t;
        std::string demo;
        if (!(ss >> t.patient_id >> t.label >> demo))
            throw std::runtime_error(path + ": malformed tensor line");
        if (std::sscanf(demo.c_str(), "%d,%d,%d", &t.gender, &t.race, &t.age_bin) != 3)
            throw std::runtime_error(path + ": malformed demographics '" + demo + "'");
        for (int q = 0; q < kNumQuarters; ++q) {
            std::string group;
            if (!(ss >> group)) throw std::runtime_error(path + ": missing quarter group");
            if (group == "-") continue;
            std::istringstream gs(group);
            std::string item;
            while (std::getline(gs, item, ',')) {
                const auto colon = item.find(':');
                if (colon == std::string::npos)
                    throw std::runtime_error(path + ": malformed count '" + item + "'");
                t.quarter_counts[q][std::stoi(item.substr(0, colon))] =
                    std::stoi(item.substr(colon + 1));
            }
        }
        out.tensors.push_back(std::move(t));
    }
    return out;
}

}  // namespace savehr
