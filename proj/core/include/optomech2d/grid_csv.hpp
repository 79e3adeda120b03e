#pragma once

// CSV carriers for gridded maps.
//
// Layout: a header row `x_um,z_um,<value columns>` followed by one row per
// node, x as the slow index and z as the fast one, both strictly increasing.
// Lines starting with '#' are comments (used for provenance headers).
//
//   force map:         x_um,z_um,Fx_fN,Fz_fN
//   transmission map:  x_um,z_um,V_V

#include "optomech2d/model.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace optomech2d {

/// Raw parsed grid: coordinates in metres plus one vector per value column.
struct GridTable {
    RectGrid grid;
    std::vector<std::string> value_columns;
    std::vector<std::vector<double>> columns; // columns[c][node]
};

/// Parses and validates the grid structure. Throws ParseError with the line
/// number on malformed input.
GridTable read_grid_table(std::istream& in);

TabulatedField read_force_map(std::istream& in, double ref_power);
TransmissionMap read_transmission_map(std::istream& in);
TabulatedField load_force_map(const std::string& path, double ref_power);
TransmissionMap load_transmission_map(const std::string& path);

void write_force_map(std::ostream& out, const TabulatedField& field);
void write_transmission_map(std::ostream& out, const TransmissionMap& map);

/// Shortest round-trip decimal representation.
std::string format_double(double v);

} // namespace optomech2d
