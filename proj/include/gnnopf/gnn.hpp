#pragma once

// Graph convolutional network mapping per-bus demand (augmented with the
// generator and voltage boxes) to a bus state. Each layer is a polynomial
// graph filter sum_k A^k Z H_k; the last layer feeds a bounded-sigmoid head
// so generator and voltage limits hold by construction.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gnnopf/grid_model.hpp"
#include "gnnopf/loss.hpp"
#include "gnnopf/tape.hpp"

namespace gnnopf {

enum class Nonlinearity { relu, tanh };

Nonlinearity parse_nonlinearity(const std::string& name);
const char* nonlinearity_name(Nonlinearity n);

inline constexpr std::size_t kInputFeatures = 8;
inline constexpr std::size_t kOutputFeatures = 4;

struct GnnConfig {
  std::size_t layers = 2;    // L
  std::size_t taps = 8;      // K (filter order; K + 1 tap matrices per layer)
  std::size_t features = 32; // F, hidden width
  Nonlinearity hidden = Nonlinearity::relu;
  std::uint64_t seed = 0;

  bool operator==(const GnnConfig&) const = default;
};

void validate(const GnnConfig& cfg);

struct GnnLayer {
  std::size_t in = 0, out = 0;
  std::vector<Matrix> taps; // K + 1 matrices, in x out

  bool operator==(const GnnLayer&) const = default;
};

struct GnnParams {
  GnnConfig config;
  std::vector<GnnLayer> layers;

  std::size_t count() const;
  std::vector<double> flatten() const;
  void assign(std::span<const double> flat);

  bool operator==(const GnnParams&) const = default;
};

// Layer widths F_0 = 8, F_1..F_{L-1} = F, F_L = 4.
std::vector<std::size_t> layer_widths(const GnnConfig& cfg);

// Taps ~ Uniform(-c, c), c = sqrt(6 / ((K + 1)(F_in + F_out))), per layer.
GnnParams init_params(const GnnConfig& cfg);
double init_bound(std::size_t taps, std::size_t in, std::size_t out);

// U = [S^d | S^g_min | S^g_max | V_min | V_max], N x 8.
Matrix build_input(const GridModel& model, const DemandMatrix& demand);

// Plain evaluation of sum_k A^k Z H_k with k applications of A.
Matrix graph_filter(const SparseMatrix& a, const Matrix& z, std::span<const Matrix> taps);

// (b - a) / (1 + e^{-x}) + a
double bounded_sigmoid(double x, double a, double b);

// Records the network and head on a tape. Parameter leaves are appended to
// `param_vars` in flatten() order when it is non-null.
StateVars record_forward(ad::Tape& tape, const GnnParams& params, const GridModel& model, const LossContext& ctx,
                         const DemandMatrix& demand, std::vector<ad::Var>* param_vars = nullptr);

// Maps an N x 4 pre-activation to the state: bounded sigmoids for
// generation and voltage, reference-gauged angle.
StateVars record_head(ad::Tape& tape, const LossContext& ctx, ad::Var z, const DemandMatrix& demand);
// Net injections are nudged by at most a few ulps so that p + demand lands
// inside the generation box exactly as the metrics recompute it.
BusState state_from_vars(const ad::Tape& tape, const StateVars& s, const LossContext& ctx, const DemandMatrix& demand);

BusState gnn_forward(const GnnParams& params, const GridModel& model, const DemandMatrix& demand);

// Loss and its gradient with respect to the flattened parameters for one
// demand sample. `tape` is reset and reused.
double loss_and_gradient(ad::Tape& tape, const GnnParams& params, const GridModel& model, const LossContext& ctx,
                         const DemandMatrix& demand, const PenaltyConfig& penalty, std::vector<double>* grad);

// Checkpoint: config, GSO fingerprint and row-major taps with shapes.
struct GsoFingerprint {
  std::string case_name;
  double alpha = 0.0;
  double beta = 0.0;
  bool normalize = true;

  bool operator==(const GsoFingerprint&) const = default;
};

GsoFingerprint fingerprint(const GridModel& model);

struct Checkpoint {
  GnnParams params;
  GsoFingerprint gso;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace gnnopf
