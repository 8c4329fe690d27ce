#pragma once

#include <map>
#include <string>
#include <vector>

#include "heman/graph.hpp"

namespace heman {

struct EdgeStats {
    double min = 0.0;
    double max = 0.0;
    double mean = 0.0;
    double m2 = 0.0;  // running sum of squared deviations (Welford)
    std::int64_t count = 0;

    void observe(double x);
    // Associative combine of two partial aggregates (Chan et al. update).
    static EdgeStats merge(const EdgeStats& a, const EdgeStats& b);
    double variance() const { return count > 0 ? m2 / static_cast<double>(count) : 0.0; }
    double stddev() const;
};

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
    double width() const { return hi - lo; }
};

struct DomainMethod {
    enum Kind { MinMax, MeanStd } kind = MinMax;
    double k = 3.0;  // MeanStd only

    static DomainMethod min_max() { return {MinMax, 0.0}; }
    static DomainMethod mean_std(double k = 3.0) { return {MeanStd, k}; }
};

struct CalibratedModel {
    ModelGraph graph;
    std::map<std::string, EdgeStats> stats;  // keyed by non-initializer edge id
    std::int64_t sample_count = 0;
    std::string dataset_digest;
};

// Exact real-arithmetic reference semantics for every supported operator.
// The trace holds every non-initializer edge value; this is the oracle all
// backend-agreement tests compare against.
Tensor cleartext_forward(const ModelGraph& g, const Tensor& x,
                         std::map<std::string, Tensor>* trace = nullptr);

// Single-node reference application, used by lowering soundness tests.
Tensor apply_node_reference(const ModelGraph& g, const Node& n,
                            const std::map<std::string, Tensor>& inputs);

CalibratedModel calibrate(const ModelGraph& g, const std::vector<Tensor>& data,
                          const std::string& dataset_digest = "");

Interval edge_interval(const CalibratedModel& cm, const std::string& edge,
                       const DomainMethod& m);

// Widening applied when an interval degenerates to a point.
constexpr double kDegenerateEpsScale = 1.0 / (1 << 20);

}  // namespace heman
