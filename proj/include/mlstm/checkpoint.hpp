#pragma once

// Parameter checkpoint, a versioned text container:
//
//   mlstm-checkpoint 1
//   input_width <N>
//   width <M>
//   strategy <masked|mean|forward>      (optional)
//   <name> <rows> <cols>                (x15, fixed order W_f ... b_o)
//   <row-major values, one row per line, space separated>
//
// Values use shortest round-trip formatting, so save -> load is bit-exact.

#include <fstream>
#include <iosfwd>
#include <optional>
#include <sstream>
#include <string>

#include "mlstm/errors.hpp"
#include "mlstm/lstm.hpp"
#include "mlstm/numeric_io.hpp"

namespace mlstm {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    LstmParameters params;
    std::optional<std::string> strategy;
};

inline void write_checkpoint(std::ostream& out, const LstmParameters& params,
                             const std::optional<std::string>& strategy = std::nullopt) {
    out << "mlstm-checkpoint " << kCheckpointVersion << '\n';
    out << "input_width " << params.input_width() << '\n';
    out << "width " << params.width() << '\n';
    if (strategy) out << "strategy " << *strategy << '\n';
    for_each_array([&](std::string_view name, const auto& a) {
        out << name << ' ' << a.rows() << ' ' << a.cols() << '\n';
        for (Eigen::Index r = 0; r < a.rows(); ++r) {
            for (Eigen::Index c = 0; c < a.cols(); ++c) out << (c ? " " : "") << format_double(a(r, c));
            out << '\n';
        }
    }, params);
}

inline Checkpoint read_checkpoint(std::istream& in) {
    auto fail = [](const std::string& what) -> DataError { return DataError("checkpoint: " + what); };

    std::string magic;
    int version = 0;
    if (!(in >> magic >> version) || magic != "mlstm-checkpoint") throw fail("missing header");
    if (version != kCheckpointVersion) throw fail("unsupported version " + std::to_string(version));

    std::string key;
    Eigen::Index input_width = 0, width = 0;
    if (!(in >> key >> input_width) || key != "input_width") throw fail("expected input_width");
    if (!(in >> key >> width) || key != "width") throw fail("expected width");
    if (input_width < 1 || width < 1) throw fail("invalid dimensions");

    Checkpoint cp{LstmParameters::zeros(input_width, width), std::nullopt};
    const auto pos = in.tellg();
    if (in >> key && key == "strategy") {
        std::string s;
        in >> s;
        cp.strategy = s;
    } else {
        in.clear();
        in.seekg(pos);
    }

    for_each_array([&](std::string_view name, auto& a) {
        std::string got;
        Eigen::Index rows = 0, cols = 0;
        if (!(in >> got >> rows >> cols) || got != name) throw fail("expected array " + std::string(name));
        if (rows != a.rows() || cols != a.cols()) throw fail("array " + std::string(name) + " has wrong shape");
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c) {
                std::string tok;
                if (!(in >> tok)) throw fail("truncated array " + std::string(name));
                const auto v = parse_double(tok);
                if (!v || !std::isfinite(*v)) throw fail("bad value '" + tok + "' in " + std::string(name));
                a(r, c) = *v;
            }
    }, cp.params);
    return cp;
}

inline void save_checkpoint(const std::string& path, const LstmParameters& params,
                            const std::optional<std::string>& strategy = std::nullopt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    write_checkpoint(out, params, strategy);
    if (!out) throw DataError("failed writing '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint '" + path + "'");
    return read_checkpoint(in);
}

}  // namespace mlstm
