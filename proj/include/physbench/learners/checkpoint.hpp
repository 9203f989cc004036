#pragma once

// Model checkpoints: model.json (kind, task, seed, architecture) next to
// params.npz holding every parameter array in row-major order.

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>

#include "json.hpp"
#include "physbench/io/zip.hpp"
#include "physbench/learners/knn.hpp"
#include "physbench/learners/mlp.hpp"
#include "physbench/learners/random_features.hpp"

namespace physbench {

inline io::NdArray matrix_to_array(const Matrix& m) {
  std::vector<double> data(static_cast<std::size_t>(m.size()));
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      data.data(), m.rows(), m.cols()) = m;
  return io::NdArray::f64({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                          std::move(data));
}

inline Matrix array_to_matrix(const io::NdArray& a) {
  if (a.dtype() != io::DType::Float64 || a.shape.size() != 2) {
    throw io::FormatError(io::FormatErrorKind::ShapeMismatch, "checkpoint: expected a 2-D float64 array");
  }
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      a.as_f64().data(), static_cast<Index>(a.shape[0]), static_cast<Index>(a.shape[1]));
}

inline constexpr std::string_view kModelFile = "model.json";
inline constexpr std::string_view kParamsFile = "params.npz";

inline void save_model(const Model& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json doc;
  doc["kind"] = model.kind();
  doc["task"] = std::string(to_string(model.task()));
  doc["input_dim"] = model.input_dim();
  doc["output_dim"] = model.output_dim();
  std::map<std::string, io::NdArray> arrays;

  if (const auto* knn = dynamic_cast<const KnnModel*>(&model)) {
    doc["state_dim"] = knn->training_set().state_dim;
    arrays.emplace("inputs", matrix_to_array(knn->training_set().inputs));
    arrays.emplace("targets", matrix_to_array(knn->training_set().targets));
  } else if (const auto* rf = dynamic_cast<const RandomFeatureModel*>(&model)) {
    doc["seed"] = rf->seed();
    doc["num_features"] = rf->num_features();
    doc["lambda"] = rf->lambda();
    arrays.emplace("projections", matrix_to_array(rf->projections()));
    arrays.emplace("weights", matrix_to_array(rf->weights()));
  } else if (const auto* mlp = dynamic_cast<const Mlp*>(&model)) {
    doc["seed"] = mlp->seed();
    doc["sizes"] = mlp->sizes();
    for (std::size_t l = 0; l < mlp->layers(); ++l) {
      arrays.emplace("layer_" + std::to_string(l) + "_weight", matrix_to_array(mlp->weight(l)));
      arrays.emplace("layer_" + std::to_string(l) + "_bias", matrix_to_array(mlp->bias(l)));
    }
  } else {
    throw UnsupportedError("save_model: unknown model kind '" + model.kind() + "'");
  }

  std::map<std::string, const io::NdArray*> ptrs;
  for (const auto& [k, v] : arrays) ptrs[k] = &v;
  io::write_npz(dir / kParamsFile, ptrs);
  std::ofstream(dir / kModelFile) << doc.dump(2) << "\n";
}

inline std::unique_ptr<Model> load_model(const std::filesystem::path& dir) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(io::read_file(dir / kModelFile));
  } catch (const nlohmann::json::exception& e) {
    throw io::FormatError(io::FormatErrorKind::MalformedHeader, std::string("checkpoint: ") + e.what());
  }
  const auto arrays = io::read_npz(dir / kParamsFile);
  auto get = [&](const std::string& name) -> Matrix {
    auto it = arrays.find(name);
    if (it == arrays.end()) {
      throw io::FormatError(io::FormatErrorKind::DanglingReference, "checkpoint: missing array '" + name + "'");
    }
    return array_to_matrix(it->second);
  };
  try {
    const std::string kind = doc.at("kind").get<std::string>();
    const TaskKind task = parse_task(doc.at("task").get<std::string>());
    if (kind == "knn") {
      TrainingSet set{get("inputs"), get("targets"), doc.at("state_dim").get<Index>(), task};
      return std::make_unique<KnnModel>(std::move(set));
    }
    if (kind == "random-features") {
      return std::make_unique<RandomFeatureModel>(get("projections"), get("weights"),
                                                  doc.at("seed").get<std::uint64_t>(), task,
                                                  doc.at("lambda").get<double>());
    }
    if (kind == "mlp") {
      auto mlp = std::make_unique<Mlp>(doc.at("sizes").get<std::vector<Index>>(),
                                       doc.at("seed").get<std::uint64_t>(), task);
      for (std::size_t l = 0; l < mlp->layers(); ++l) {
        const Matrix w = get("layer_" + std::to_string(l) + "_weight");
        const Matrix b = get("layer_" + std::to_string(l) + "_bias");
        if (w.rows() != mlp->weight(l).rows() || w.cols() != mlp->weight(l).cols() ||
            b.rows() != mlp->bias(l).size() || b.cols() != 1) {
          throw io::FormatError(io::FormatErrorKind::ShapeMismatch, "checkpoint: layer shape mismatch");
        }
        mlp->weight(l) = w;
        mlp->bias(l) = b.col(0);
      }
      return mlp;
    }
    throw UnsupportedError("checkpoint: unknown model kind '" + kind + "'");
  } catch (const nlohmann::json::exception& e) {
    throw io::FormatError(io::FormatErrorKind::MalformedHeader, std::string("checkpoint: ") + e.what());
  }
}

}  // namespace physbench
