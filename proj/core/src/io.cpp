#include "namedemand/io.hpp"

#include <fstream>
#include <sstream>

namespace namedemand {

namespace {

nlohmann::json vec_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

nlohmann::json mat_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vec_json(m.row(r).transpose()));
  return rows;
}

const nlohmann::json& field(const nlohmann::json& j, const std::string& name, const std::string& where) {
  if (!j.is_object()) throw DataError(where + ": expected an object");
  if (!j.contains(name)) throw DataError(where + "." + name + ": missing field");
  return j.at(name);
}

Vector parse_vector(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array()) throw DataError(where + ": expected an array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw DataError(where + "[" + std::to_string(i) + "]: expected a number");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

Matrix parse_matrix(const nlohmann::json& j, const std::string& where, Eigen::Index rows_hint) {
  if (!j.is_array()) throw DataError(where + ": expected an array of rows");
  if (j.empty()) return Matrix(rows_hint, 0);
  std::vector<Vector> rows;
  for (std::size_t r = 0; r < j.size(); ++r) {
    rows.push_back(parse_vector(j[r], where + "[" + std::to_string(r) + "]"));
    if (rows.back().size() != rows.front().size()) {
      throw DataError(where + "[" + std::to_string(r) + "]: ragged matrix row");
    }
  }
  Matrix m(static_cast<Eigen::Index>(rows.size()), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) m.row(static_cast<Eigen::Index>(r)) = rows[r].transpose();
  return m;
}

int parse_int(const nlohmann::json& j, const std::string& where) {
  if (!j.is_number_integer()) throw DataError(where + ": expected an integer");
  return j.get<int>();
}

}  // namespace

nlohmann::json dataset_to_json(const Dataset& dataset) {
  nlohmann::json out;
  out["markets"] = nlohmann::json::array();
  for (const auto& mk : dataset.markets()) {
    nlohmann::json m;
    m["id"] = mk.market_id;
    m["X"] = mat_json(mk.X);
    m["P"] = vec_json(mk.P);
    if (mk.W.cols() > 0) m["W"] = mat_json(mk.W);
    m["shares"] = vec_json(mk.observed_shares.probs());
    out["markets"].push_back(std::move(m));
  }
  out["individuals"] = nlohmann::json::array();
  for (std::size_t m = 0; m < dataset.num_markets(); ++m) {
    const auto& s = dataset.sample(m);
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      out["individuals"].push_back({{"market", dataset.market(m).market_id},
                                    {"Z", vec_json(s.Z.row(i).transpose())},
                                    {"d", s.choices[static_cast<std::size_t>(i)]}});
    }
  }
  return out;
}

Dataset dataset_from_json(const nlohmann::json& j, const ValidateOptions& options) {
  const auto& markets_j = field(j, "markets", "dataset");
  if (!markets_j.is_array()) throw DataError("dataset.markets: expected an array");
  std::vector<MarketData> markets;
  for (std::size_t m = 0; m < markets_j.size(); ++m) {
    const std::string where = "markets[" + std::to_string(m) + "]";
    const auto& mj = markets_j[m];
    const int id = parse_int(field(mj, "id", where), where + ".id");
    const Matrix X = parse_matrix(field(mj, "X", where), where + ".X", 0);
    const Vector P = parse_vector(field(mj, "P", where), where + ".P");
    const Matrix W = mj.contains("W") ? parse_matrix(mj.at("W"), where + ".W", X.rows())
                                      : Matrix(X.rows(), 0);
    const Vector shares = parse_vector(field(mj, "shares", where), where + ".shares");
    try {
      markets.emplace_back(id, X, P, W, SimplexVector(shares));
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
  }
  std::vector<IndividualData> people;
  if (j.contains("individuals")) {
    const auto& ij = j.at("individuals");
    if (!ij.is_array()) throw DataError("dataset.individuals: expected an array");
    people.reserve(ij.size());
    for (std::size_t i = 0; i < ij.size(); ++i) {
      const std::string where = "individuals[" + std::to_string(i) + "]";
      people.push_back({parse_int(field(ij[i], "market", where), where + ".market"),
                        parse_vector(field(ij[i], "Z", where), where + ".Z"),
                        parse_int(field(ij[i], "d", where), where + ".d")});
    }
  }
  return validate_dataset(std::move(markets), std::move(people), options);
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

Dataset read_dataset(const std::filesystem::path& path, const ValidateOptions& options) {
  return dataset_from_json(read_json_file(path), options);
}

void write_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  write_json_file(path, dataset_to_json(dataset));
}

}  // namespace namedemand
