#include "s3pr/baseline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "binary_io.hpp"
#include "s3pr/metrics.hpp"

namespace s3pr {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

struct Assignment {
  std::vector<Index> atom;
  std::vector<double> coefficient;
  std::vector<double> error;  // ||y_i||^2 - c_i^2
  double objective = 0.0;
};

Assignment assign_one_hot(const MatrixXd& atoms, const MatrixXd& training) {
  const MatrixXd corr = atoms.transpose() * training;
  Assignment a;
  const Index n = training.cols();
  a.atom.resize(static_cast<std::size_t>(n));
  a.coefficient.resize(static_cast<std::size_t>(n));
  a.error.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    Index best = 0;
    corr.col(i).cwiseAbs().maxCoeff(&best);
    const double c = corr(best, i);
    const auto k = static_cast<std::size_t>(i);
    a.atom[k] = best;
    a.coefficient[k] = c;
    a.error[k] = std::max(0.0, training.col(i).squaredNorm() - c * c);
    a.objective += a.error[k];
  }
  return a;
}

// Leading left singular vector of block, by power iteration on block block^T
// started from start. The Rayleigh quotient never decreases along the
// iteration, so the block error never increases relative to start.
VectorXd leading_direction(const MatrixXd& block, const VectorXd& start, std::size_t iterations) {
  VectorXd u = start;
  if ((block.transpose() * u).norm() < 1e-300) {
    Index col = 0;
    block.colwise().norm().maxCoeff(&col);
    u = block.col(col).normalized();
  }
  double rayleigh = (block.transpose() * u).squaredNorm();
  for (std::size_t it = 0; it < iterations; ++it) {
    VectorXd w = block * (block.transpose() * u);
    const double norm = w.norm();
    if (norm == 0.0) break;
    w /= norm;
    const double next = (block.transpose() * w).squaredNorm();
    if (next < rayleigh) break;
    const bool converged = next - rayleigh <= 1e-14 * next;
    u = std::move(w);
    rayleigh = next;
    if (converged) break;
  }
  if (u.sum() < 0) u = -u;
  return u;
}

}  // namespace

double one_hot_objective(const DictionaryModel& dict, const MatrixXd& training) {
  return assign_one_hot(dict.atoms, training).objective;
}

KsvdResult learn_dictionary_ksvd(const MatrixXd& training, const KsvdOptions& opts, RngStream& stream) {
  const Index n = training.cols();
  const Index dim = training.rows();
  const auto k_atoms = static_cast<Index>(opts.atoms);
  if (n == 0 || dim == 0) throw Error("learn_dictionary_ksvd: empty training set");
  if (k_atoms < 1) throw Error("learn_dictionary_ksvd: need at least one atom");
  if (k_atoms > n) throw Error("learn_dictionary_ksvd: more atoms than training vectors");

  // Initialise with K distinct training vectors.
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  MatrixXd atoms(dim, k_atoms);
  for (Index k = 0; k < k_atoms; ++k) {
    const auto j = static_cast<std::size_t>(k) + static_cast<std::size_t>(stream.below(static_cast<std::uint64_t>(n - k)));
    std::swap(order[static_cast<std::size_t>(k)], order[j]);
    VectorXd v = training.col(order[static_cast<std::size_t>(k)]);
    if (v.norm() == 0.0) {
      for (Index i = 0; i < dim; ++i) v(i) = stream.normal();
    }
    atoms.col(k) = v.normalized();
  }

  KsvdResult result;
  Assignment assignment = assign_one_hot(atoms, training);
  result.objective.push_back(assignment.objective);

  for (std::size_t sweep = 0; sweep < opts.sweeps; ++sweep) {
    if (sweep > 0) assignment = assign_one_hot(atoms, training);

    std::vector<std::vector<Index>> members(static_cast<std::size_t>(k_atoms));
    for (Index i = 0; i < n; ++i) members[static_cast<std::size_t>(assignment.atom[static_cast<std::size_t>(i)])].push_back(i);

    double objective = 0.0;
    std::vector<Index> empty;
    for (Index k = 0; k < k_atoms; ++k) {
      const auto& cols = members[static_cast<std::size_t>(k)];
      if (cols.empty()) {
        empty.push_back(k);
        continue;
      }
      MatrixXd block(dim, static_cast<Index>(cols.size()));
      for (std::size_t c = 0; c < cols.size(); ++c) block.col(static_cast<Index>(c)) = training.col(cols[c]);
      const VectorXd atom = leading_direction(block, atoms.col(k), opts.power_iterations);
      atoms.col(k) = atom;
      const VectorXd coeffs = block.transpose() * atom;
      for (std::size_t c = 0; c < cols.size(); ++c) {
        const double e = std::max(0.0, block.col(static_cast<Index>(c)).squaredNorm() - coeffs(static_cast<Index>(c)) * coeffs(static_cast<Index>(c)));
        assignment.error[static_cast<std::size_t>(cols[c])] = e;
        objective += e;
      }
    }
    result.objective.push_back(objective);

    // Unused atoms move to the worst-represented training vectors. They carry
    // no assignments, so the recorded objective is unaffected.
    if (!empty.empty()) {
      std::vector<Index> worst(static_cast<std::size_t>(n));
      std::iota(worst.begin(), worst.end(), Index{0});
      std::stable_sort(worst.begin(), worst.end(), [&](Index a, Index b) {
        return assignment.error[static_cast<std::size_t>(a)] > assignment.error[static_cast<std::size_t>(b)];
      });
      std::size_t next = 0;
      for (Index k : empty) {
        while (next < worst.size() && training.col(worst[next]).norm() == 0.0) ++next;
        if (next >= worst.size()) break;
        atoms.col(k) = training.col(worst[next++]).normalized();
      }
    }
  }
  result.model.atoms = std::move(atoms);
  return result;
}

SparseCode omp_lhot(const DictionaryModel& dict, std::span<const double> y, std::size_t sources) {
  if (sources < 1) throw Error("omp_lhot: need at least one selection");
  if (sources > dict.size()) throw Error("omp_lhot: more selections than atoms");
  if (y.size() != dict.dim()) throw Error("omp_lhot: measurement length does not match dictionary");
  const Eigen::Map<const VectorXd> target(y.data(), static_cast<Index>(y.size()));

  SparseCode code;
  VectorXd residual = target;
  std::vector<bool> used(dict.size(), false);
  VectorXd alpha;
  for (std::size_t step = 0; step < sources; ++step) {
    VectorXd corr = (dict.atoms.transpose() * residual).cwiseAbs();
    for (std::size_t k = 0; k < used.size(); ++k)
      if (used[k]) corr(static_cast<Index>(k)) = -1.0;
    Index best = 0;
    corr.maxCoeff(&best);
    used[static_cast<std::size_t>(best)] = true;
    code.support.push_back(static_cast<std::size_t>(best));

    MatrixXd sub(dict.atoms.rows(), static_cast<Index>(code.support.size()));
    for (std::size_t j = 0; j < code.support.size(); ++j) sub.col(static_cast<Index>(j)) = dict.atoms.col(static_cast<Index>(code.support[j]));
    Eigen::ColPivHouseholderQR<MatrixXd> qr(sub);
    if (qr.rank() < sub.cols()) {
      code.rank_deficient = true;
      alpha = Eigen::CompleteOrthogonalDecomposition<MatrixXd>(sub).solve(target);
    } else {
      alpha = qr.solve(target);
    }
    residual = target - sub * alpha;
    code.residual_norms.push_back(residual.norm());
  }
  code.coefficients.assign(alpha.data(), alpha.data() + alpha.size());
  return code;
}

double phase_retrieval_objective(const MeasurementOperator& a, std::span<const double> b, const RealImage& x) {
  if (b.size() != a.m()) throw Error("phase retrieval: measurement length does not match operator");
  const auto inten = a.intensity(x);
  double s = 0.0;
  for (std::size_t i = 0; i < inten.size(); ++i) s += (b[i] - inten[i]) * (b[i] - inten[i]);
  return s;
}

RealImage phase_retrieval_gradient(const MeasurementOperator& a, std::span<const double> b, const RealImage& x) {
  if (b.size() != a.m()) throw Error("phase retrieval: measurement length does not match operator");
  const auto ax = a.apply(x);
  std::vector<double> r(ax.size());
  for (std::size_t i = 0; i < ax.size(); ++i) r[i] = b[i] - std::norm(ax[i]);
  return residual_gradient(a, r, ax);
}

PhaseRetrievalResult phase_retrieve_gd(std::span<const double> b, const MeasurementOperator& a,
                                       const PhaseRetrievalOptions& opts, std::uint64_t seed) {
  if (opts.iterations < 1 || opts.restarts < 1) throw Error("phase_retrieve_gd: iterations and restarts must be positive");
  if (opts.initial.size() > opts.restarts) throw Error("phase_retrieve_gd: more initial images than restarts");
  if (b.size() != a.m()) throw Error("phase_retrieve_gd: measurement length does not match operator");

  PhaseRetrievalResult result;
  result.objective = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < opts.restarts; ++k) {
    RealImage x;
    if (k < opts.initial.size()) {
      x = opts.initial[k];
    } else {
      RngStream stream(derive_seed(seed, k));
      x = randn(stream, a.side(), a.side());
    }
    AdamState adam(x.size());
    std::vector<double> trace;
    bool diverged = false;
    for (std::size_t it = 0; it < opts.iterations; ++it) {
      const auto ax = a.apply(x);
      std::vector<double> r(ax.size());
      for (std::size_t i = 0; i < ax.size(); ++i) r[i] = b[i] - std::norm(ax[i]);
      const double obj = squared_norm(r);
      if (!std::isfinite(obj)) {
        diverged = true;
        break;
      }
      trace.push_back(obj);
      const RealImage grad = residual_gradient(a, r, ax);
      adam.step(x.values(), grad.values(), opts.adam);
    }
    const double final_obj = diverged ? std::numeric_limits<double>::infinity() : phase_retrieval_objective(a, b, x);
    result.restart_objectives.push_back(std::isfinite(final_obj) ? final_obj : std::numeric_limits<double>::infinity());
    result.traces.push_back(std::move(trace));
    if (result.restart_objectives.back() < result.objective) {
      result.objective = result.restart_objectives.back();
      result.estimate = x;
      result.selected_restart = k;
    }
  }
  if (!std::isfinite(result.objective)) throw Error("phase_retrieve_gd: every restart diverged");
  return result;
}

namespace {

std::vector<double> refine_coefficients(const DictionaryModel& dict, std::span<const double> y,
                                        const std::vector<std::size_t>& support, std::size_t iterations,
                                        const AdamOptions& adam_opts, RngStream& stream) {
  MatrixXd sub(dict.atoms.rows(), static_cast<Index>(support.size()));
  for (std::size_t j = 0; j < support.size(); ++j) sub.col(static_cast<Index>(j)) = dict.atoms.col(static_cast<Index>(support[j]));
  const Eigen::Map<const VectorXd> target(y.data(), static_cast<Index>(y.size()));
  const MatrixXd gram = sub.transpose() * sub;
  const VectorXd rhs = sub.transpose() * target;
  std::vector<double> alpha = randn(stream, support.size());
  AdamState adam(alpha.size());
  for (std::size_t it = 0; it < iterations; ++it) {
    const Eigen::Map<const VectorXd> av(alpha.data(), static_cast<Index>(alpha.size()));
    const VectorXd grad = 2.0 * (gram * av - rhs);
    adam.step(alpha, std::span<const double>(grad.data(), static_cast<std::size_t>(grad.size())), adam_opts);
  }
  return alpha;
}

}  // namespace

UssPrResult solve_uss_pr(const MeasurementOperator& a, std::span<const double> y, const DictionaryModel& dict,
                         std::size_t sources, const UssPrOptions& opts, std::uint64_t seed) {
  if (dict.dim() != a.m()) throw Error("solve_uss_pr: dictionary atoms do not match the operator's measurement length");
  UssPrResult result;
  result.code = omp_lhot(dict, y, sources);
  std::vector<double> alpha = result.code.coefficients;
  if (opts.refine_coefficients) {
    RngStream stream(derive_seed(seed, 0xa1fa));
    alpha = refine_coefficients(dict, y, result.code.support, opts.refine_iterations, opts.phase_retrieval.adam, stream);
    result.code.coefficients = alpha;
  }
  for (std::size_t l = 0; l < sources; ++l) {
    const auto atom = dict.atoms.col(static_cast<Index>(result.code.support[l]));
    std::vector<double> b(static_cast<std::size_t>(atom.size()));
    for (Index i = 0; i < atom.size(); ++i) b[static_cast<std::size_t>(i)] = alpha[l] * atom(i);
    result.per_source.push_back(phase_retrieve_gd(b, a, opts.phase_retrieval, derive_seed(seed, 1000 + l)));
    result.intensity_estimates.push_back(std::move(b));
    result.reconstruction.estimates.push_back(result.per_source.back().estimate);
  }
  result.reconstruction.final_residual = measurement_residual(a, y, result.reconstruction.estimates);
  return result;
}

void write_phase_retrieval_trace_csv(const UssPrResult& result, std::ostream& out) {
  out << "iteration,restart,source,objective\n";
  char buf[64];
  for (std::size_t l = 0; l < result.per_source.size(); ++l) {
    const auto& pr = result.per_source[l];
    for (std::size_t k = 0; k < pr.traces.size(); ++k) {
      for (std::size_t it = 0; it < pr.traces[k].size(); ++it) {
        std::snprintf(buf, sizeof(buf), "%.17g", pr.traces[k][it]);
        out << it << ',' << k << ',' << (l + 1) << ',' << buf << '\n';
      }
    }
  }
}

namespace {

constexpr char kDictMagic[8] = {'D', 'S', '3', 'P', 'R', 'D', '1', '\0'};
constexpr char kDictKind[4] = {'D', 'I', 'C', 'T'};

}  // namespace

void save_dictionary(const DictionaryModel& dict, std::ostream& out) {
  io::Writer w(out);
  w.bytes(kDictMagic, sizeof(kDictMagic));
  w.put<std::uint32_t>(1);
  w.bytes(kDictKind, sizeof(kDictKind));
  w.str(dict.provenance.dataset);
  w.str(dict.provenance.operator_mode);
  w.put<std::uint64_t>(dict.provenance.operator_seed);
  w.put<std::uint64_t>(dict.provenance.training_seed);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(dict.dim()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(dict.size()));
  for (Index k = 0; k < dict.atoms.cols(); ++k)
    for (Index i = 0; i < dict.atoms.rows(); ++i) w.put<float>(static_cast<float>(dict.atoms(i, k)));
  if (!out) throw Error("save_dictionary: write failed");
}

void save_dictionary(const DictionaryModel& dict, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("save_dictionary: cannot open " + path.string());
  save_dictionary(dict, out);
}

DictionaryModel load_dictionary(std::istream& in) {
  io::Reader r(in, "load_dictionary");
  char magic[8];
  r.bytes(magic, sizeof(magic));
  if (!std::equal(magic, magic + 8, kDictMagic)) throw Error("load_dictionary: bad magic");
  if (r.get<std::uint32_t>() != 1) throw Error("load_dictionary: unsupported version");
  char kind[4];
  r.bytes(kind, sizeof(kind));
  if (!std::equal(kind, kind + 4, kDictKind)) throw Error("load_dictionary: not a DICT container");
  DictionaryModel dict;
  dict.provenance.dataset = r.str();
  dict.provenance.operator_mode = r.str();
  dict.provenance.operator_seed = r.get<std::uint64_t>();
  dict.provenance.training_seed = r.get<std::uint64_t>();
  const std::size_t dim = r.get<std::uint32_t>();
  const std::size_t count = r.get<std::uint32_t>();
  if (dim == 0 || count == 0 || dim * count > (std::size_t{1} << 28)) throw Error("load_dictionary: implausible shape");
  dict.atoms.resize(static_cast<Index>(dim), static_cast<Index>(count));
  for (Index k = 0; k < dict.atoms.cols(); ++k) {
    for (Index i = 0; i < dict.atoms.rows(); ++i) dict.atoms(i, k) = r.get<float>();
    const double norm = dict.atoms.col(k).norm();
    if (norm == 0.0) throw Error("load_dictionary: atom " + std::to_string(k) + " is zero");
    dict.atoms.col(k) /= norm;
  }
  return dict;
}

DictionaryModel load_dictionary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("load_dictionary: cannot open " + path.string());
  return load_dictionary(in);
}

}  // namespace s3pr
