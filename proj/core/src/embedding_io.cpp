#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "protofuse/data_model.hpp"
#include "protofuse/errors.hpp"

namespace protofuse {

static_assert(std::endian::native == std::endian::little, "embedding I/O assumes a little-endian host");

namespace {

constexpr std::array<char, 4> kMagic = {'P', 'F', 'E', '1'};

Matrix read_text_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open embedding file: " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    for (const auto& cell : split_delimited(line)) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw SchemaError("non-numeric value '" + cell + "' in " + path.string());
      }
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw SchemaError("ragged embedding rows in " + path.string());
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty() || rows.front().empty()) throw SchemaError("empty embedding file: " + path.string());
  Matrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) out(r, c) = rows[r][c];
  }
  return out;
}

}  // namespace

std::vector<std::string> split_delimited(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  for (char ch : line) {
    if (ch == '\t' || ch == ',') {
      cells.push_back(cell);
      cell.clear();
    } else if (ch != '\r') {
      cell.push_back(ch);
    }
  }
  cells.push_back(cell);
  return cells;
}

Matrix read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open embedding file: " + path.string());
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) return read_text_embeddings(path);

  std::uint64_t n = 0, d = 0;
  in.read(reinterpret_cast<char*>(&n), sizeof n);
  in.read(reinterpret_cast<char*>(&d), sizeof d);
  if (!in) throw SchemaError("truncated embedding header: " + path.string());
  if (n == 0 || d == 0) throw SchemaError("embedding file has an empty shape: " + path.string());
  std::vector<float> buf(n * d);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!in) throw SchemaError("truncated embedding payload: " + path.string());
  Matrix out(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::uint64_t r = 0; r < n; ++r) {
    for (std::uint64_t c = 0; c < d; ++c) out(r, c) = buf[r * d + c];
  }
  return out;
}

void write_embeddings(const std::filesystem::path& path, const Matrix& embeddings) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write embedding file: " + path.string());
  const std::uint64_t n = static_cast<std::uint64_t>(embeddings.rows());
  const std::uint64_t d = static_cast<std::uint64_t>(embeddings.cols());
  out.write(kMagic.data(), kMagic.size());
  out.write(reinterpret_cast<const char*>(&n), sizeof n);
  out.write(reinterpret_cast<const char*>(&d), sizeof d);
  std::vector<float> buf(n * d);
  for (std::uint64_t r = 0; r < n; ++r) {
    for (std::uint64_t c = 0; c < d; ++c) buf[r * d + c] = static_cast<float>(embeddings(r, c));
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

}  // namespace protofuse
