#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace pcell {

using T = double;
using TV = Eigen::Matrix<T, 2, 1>;
using TM = Eigen::Matrix<T, 2, 2>;
using VectorXT = Eigen::Matrix<T, Eigen::Dynamic, 1>;
using MatrixXT = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
using StiffnessMatrix = Eigen::SparseMatrix<T>;
using Triplet = Eigen::Triplet<T>;

// z-component of the 3D cross product of (a,0) and (b,0)
inline T cross2(const TV& a, const TV& b) { return a.x() * b.y() - a.y() * b.x(); }

// +90 degree rotation
inline TV perp(const TV& v) { return TV(-v.y(), v.x()); }

// Max scalar inputs a diagram vertex can depend on (BE: 2 sites x 3 + 2 boundary verts x 2)
constexpr int kMaxVertexInputs = 10;

using InputVec = Eigen::Matrix<T, Eigen::Dynamic, 1, 0, kMaxVertexInputs, 1>;
using InputMat =
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxVertexInputs, kMaxVertexInputs>;
using VertexJac = Eigen::Matrix<T, 2, Eigen::Dynamic, 0, 2, kMaxVertexInputs>;

// Primitive scalar inputs the energies depend on: site dofs (including the rest
// area, which no vertex references but energies do) and boundary vertex coordinates.
enum class Prim : std::uint8_t { SiteX, SiteY, SiteW, SiteA, BVertX, BVertY };

struct PrimSlot {
  Prim kind;
  int owner;  // site id for Site*, boundary vertex id for BVert*

  bool operator==(const PrimSlot&) const = default;
};

struct DiagramError : std::runtime_error {
  enum class Code { CoincidentSites, DegenerateIntersection, InvalidBoundary };
  Code code;
  DiagramError(Code c, const std::string& msg) : std::runtime_error(msg), code(c) {}
};

}  // namespace pcell
