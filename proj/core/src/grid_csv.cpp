#include "optomech2d/grid_csv.hpp"

#include "optomech2d/errors.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string_view>

namespace optomech2d {

namespace {

constexpr double kMicron = 1e-6;
constexpr double kFemtoNewton = 1e-15;

std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        out.push_back(line.substr(start, pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    for (auto& f : out) {
        while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
        while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r'))
            f.remove_suffix(1);
    }
    return out;
}

double parse_number(std::string_view s, std::size_t line) {
    double v = 0.0;
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size() || !std::isfinite(v))
        throw ParseError("cannot parse number '" + std::string(s) + "'", line);
    return v;
}

bool is_comment_or_blank(std::string_view line) {
    for (char c : line) {
        if (c == '#') return true;
        if (c != ' ' && c != '\t' && c != '\r') return false;
    }
    return true;
}

} // namespace

GridTable read_grid_table(std::istream& in) {
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::string_view> header;
    std::string header_line;
    while (std::getline(in, line)) {
        ++line_no;
        if (is_comment_or_blank(line)) continue;
        header_line = line;
        header = split_commas(header_line);
        break;
    }
    if (header.empty()) throw ParseError("missing header row", line_no);
    if (header.size() < 3 || header[0] != "x_um" || header[1] != "z_um")
        throw ParseError("header must start with x_um,z_um and name at least one value column",
                         line_no);

    GridTable table;
    for (std::size_t c = 2; c < header.size(); ++c) table.value_columns.emplace_back(header[c]);
    table.columns.resize(table.value_columns.size());

    std::vector<double> xs, zs;
    std::size_t row = 0;
    std::size_t nz = 0; // determined by the first run of constant x
    while (std::getline(in, line)) {
        ++line_no;
        if (is_comment_or_blank(line)) continue;
        const auto fields = split_commas(line);
        if (fields.size() != header.size())
            throw ParseError("expected " + std::to_string(header.size()) + " columns, got " +
                                 std::to_string(fields.size()),
                             line_no);
        const double x = parse_number(fields[0], line_no) * kMicron;
        const double z = parse_number(fields[1], line_no) * kMicron;

        if (row == 0) {
            xs.push_back(x);
            zs.push_back(z);
        } else if (nz == 0) {
            if (x == xs.back()) {
                if (z <= zs.back()) throw ParseError("z must be strictly increasing", line_no);
                zs.push_back(z);
            } else {
                if (x <= xs.back()) throw ParseError("x must be strictly increasing", line_no);
                nz = zs.size();
                if (nz < 2) throw ParseError("grid needs at least 2 z nodes", line_no);
                if (z != zs[0]) throw ParseError("z coordinates differ between x rows", line_no);
                xs.push_back(x);
            }
        } else {
            const std::size_t j = row % nz;
            if (j == 0) {
                if (x <= xs.back()) throw ParseError("x must be strictly increasing", line_no);
                xs.push_back(x);
            } else if (x != xs.back()) {
                throw ParseError("x changed before completing a z row", line_no);
            }
            if (z != zs[j]) throw ParseError("z coordinates differ between x rows", line_no);
        }
        for (std::size_t c = 0; c < table.columns.size(); ++c)
            table.columns[c].push_back(parse_number(fields[c + 2], line_no));
        ++row;
    }
    if (nz == 0) nz = zs.size();
    if (xs.size() < 2 || nz < 2)
        throw ParseError("grid needs at least 2 nodes per axis", line_no);
    if (row != xs.size() * nz) throw ParseError("incomplete final z row", line_no);

    table.grid.x = std::move(xs);
    table.grid.z = std::move(zs);
    return table;
}

TabulatedField read_force_map(std::istream& in, double ref_power) {
    GridTable t = read_grid_table(in);
    if (t.value_columns.size() != 2 || t.value_columns[0] != "Fx_fN" ||
        t.value_columns[1] != "Fz_fN")
        throw ParseError("force map columns must be x_um,z_um,Fx_fN,Fz_fN", 1);
    TabulatedField f;
    f.grid = std::move(t.grid);
    f.ref_power = ref_power;
    f.values.resize(f.grid.size());
    for (std::size_t k = 0; k < f.values.size(); ++k)
        f.values[k] = {t.columns[0][k] * kFemtoNewton, t.columns[1][k] * kFemtoNewton};
    f.validate();
    return f;
}

TransmissionMap read_transmission_map(std::istream& in) {
    GridTable t = read_grid_table(in);
    if (t.value_columns.size() != 1 || t.value_columns[0] != "V_V")
        throw ParseError("transmission map columns must be x_um,z_um,V_V", 1);
    TransmissionMap m;
    m.grid = std::move(t.grid);
    m.values = std::move(t.columns[0]);
    m.validate();
    return m;
}

namespace {
std::ifstream open_or_throw(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open '" + path + "'");
    return in;
}
} // namespace

TabulatedField load_force_map(const std::string& path, double ref_power) {
    auto in = open_or_throw(path);
    return read_force_map(in, ref_power);
}

TransmissionMap load_transmission_map(const std::string& path) {
    auto in = open_or_throw(path);
    return read_transmission_map(in);
}

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

void write_force_map(std::ostream& out, const TabulatedField& field) {
    out << "x_um,z_um,Fx_fN,Fz_fN\n";
    for (std::size_t k = 0; k < field.grid.size(); ++k) {
        const Vec2 r = field.grid.node(k);
        out << format_double(r.x / kMicron) << ',' << format_double(r.z / kMicron) << ','
            << format_double(field.values[k].x / kFemtoNewton) << ','
            << format_double(field.values[k].z / kFemtoNewton) << '\n';
    }
}

void write_transmission_map(std::ostream& out, const TransmissionMap& map) {
    out << "x_um,z_um,V_V\n";
    for (std::size_t k = 0; k < map.grid.size(); ++k) {
        const Vec2 r = map.grid.node(k);
        out << format_double(r.x / kMicron) << ',' << format_double(r.z / kMicron) << ','
            << format_double(map.values[k]) << '\n';
    }
}

} // namespace optomech2d
