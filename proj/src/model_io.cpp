#include <fstream>
#include <string>

#include <json.hpp>

#include "quadfit/body_model.hpp"
#include "quadfit/error.hpp"

namespace quadfit {

namespace {

using nlohmann::json;

constexpr const char* kFormat = "quadfit-model/1";

template <typename T>
json array_entry(const std::vector<T>& data, std::vector<size_t> shape) {
  return json{{"shape", std::move(shape)}, {"data", data}};
}

// Reads arrays.<name>, checking that the data length matches the product of
// the declared shape and, where given, the expected rank.
template <typename T>
std::vector<T> read_array(const json& arrays, const std::string& name, size_t rank, std::vector<size_t>* shape_out = nullptr) {
  if (!arrays.contains(name)) throw Error(Errc::malformed_model, "missing array " + name);
  const json& entry = arrays.at(name);
  if (!entry.is_object() || !entry.contains("shape") || !entry.contains("data"))
    throw Error(Errc::malformed_model, "array " + name + " needs shape and data");
  const auto shape = entry.at("shape").get<std::vector<size_t>>();
  if (shape.size() != rank) throw Error(Errc::malformed_model, "array " + name + " has wrong rank");
  size_t count = 1;
  for (size_t d : shape) count *= d;
  auto data = entry.at("data").get<std::vector<T>>();
  if (data.size() != count) throw Error(Errc::malformed_model, "array " + name + " data does not match shape");
  if (shape_out) *shape_out = shape;
  return data;
}

}  // namespace

MeshModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
  MeshModel m;
  try {
    const json doc = json::parse(in);
    if (!doc.is_object() || doc.value("format", std::string()) != kFormat)
      throw Error(Errc::malformed_model, std::string("format must be ") + kFormat);
    const json& arrays = doc.at("arrays");

    std::vector<size_t> tshape, dshape, fshape;
    m.template_vertices = read_array<double>(arrays, "template", 2, &tshape);
    if (tshape[1] != 3) throw Error(Errc::malformed_model, "template must be V x 3");
    m.shape_dirs = read_array<double>(arrays, "shape_dirs", 3, &dshape);
    if (dshape[0] != tshape[0] || dshape[1] != 3) throw Error(Errc::malformed_model, "shape_dirs must be V x 3 x S");
    m.shape_mean = read_array<double>(arrays, "shape_mean", 1);
    m.shape_cov = read_array<double>(arrays, "shape_cov", 2);
    m.joint_regressor = read_array<double>(arrays, "joint_regressor", 2);
    m.skin_weights = read_array<double>(arrays, "skin_weights", 2);
    m.pose_mean = read_array<double>(arrays, "pose_mean", 1);
    m.pose_cov = read_array<double>(arrays, "pose_cov", 2);
    const auto faces = read_array<int>(arrays, "faces", 2, &fshape);
    if (fshape[1] != 3) throw Error(Errc::malformed_model, "faces must be F x 3");
    for (size_t f = 0; f < fshape[0]; ++f) m.faces.push_back({faces[3 * f], faces[3 * f + 1], faces[3 * f + 2]});

    m.parents = doc.at("kinematic_tree").get<std::vector<int>>();
    if (doc.contains("joint_names")) m.joint_names = doc.at("joint_names").get<std::vector<std::string>>();
    for (const json& k : doc.at("keypoints")) {
      KeypointDef def;
      def.name = k.at("name").get<std::string>();
      def.region = k.value("region", std::string());
      def.vertices = k.at("vertices").get<std::vector<int>>();
      def.weights = k.at("weights").get<std::vector<double>>();
      m.keypoints.push_back(std::move(def));
    }
  } catch (const json::exception& e) {
    throw Error(Errc::malformed_model, e.what());
  }
  validate_model(m);
  return m;
}

void save_model(const MeshModel& m, const std::filesystem::path& path) {
  validate_model(m);
  const size_t nv = static_cast<size_t>(m.num_vertices());
  const size_t nj = static_cast<size_t>(m.num_joints());
  const size_t ns = static_cast<size_t>(m.num_shape());
  const size_t pd = static_cast<size_t>(m.pose_dim());
  std::vector<int> faces;
  faces.reserve(3 * m.faces.size());
  for (const auto& f : m.faces) faces.insert(faces.end(), f.begin(), f.end());

  json keypoints = json::array();
  for (const auto& k : m.keypoints)
    keypoints.push_back({{"name", k.name}, {"region", k.region}, {"vertices", k.vertices}, {"weights", k.weights}});

  json doc;
  doc["format"] = kFormat;
  doc["arrays"] = {
      {"template", array_entry(m.template_vertices, {nv, 3})},
      {"shape_dirs", array_entry(m.shape_dirs, {nv, 3, ns})},
      {"shape_mean", array_entry(m.shape_mean, {ns})},
      {"shape_cov", array_entry(m.shape_cov, {ns, ns})},
      {"joint_regressor", array_entry(m.joint_regressor, {nj, nv})},
      {"skin_weights", array_entry(m.skin_weights, {nv, nj})},
      {"pose_mean", array_entry(m.pose_mean, {pd})},
      {"pose_cov", array_entry(m.pose_cov, {pd, pd})},
      {"faces", array_entry(faces, {m.faces.size(), 3})},
  };
  doc["kinematic_tree"] = m.parents;
  doc["joint_names"] = m.joint_names;
  doc["keypoints"] = keypoints;

  std::ofstream out(path);
  if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
  out << doc.dump(1) << '\n';
}

}  // namespace quadfit
