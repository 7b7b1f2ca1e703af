#pragma once

#include <span>
#include <string>

#include "pcilt/conv_fn.hpp"
#include "pcilt/types.hpp"

namespace pcilt {

/// Which entries move together under a gradient update, coarsest first.
enum class Granularity : std::uint8_t {
    FilterWide = 0, // one scale over every table, the input-weight analogue
    PerTable = 1,   // one scale per table, the filter-weight analogue
    PerOffset = 2,  // one additive delta per offset, shared across tables
    PerValue = 3    // every entry free
};

const char* granularity_name(Granularity g);
Granularity parse_granularity(const std::string& name);

/// Tables as trainable parameters. `base` is fixed; the parameter block for
/// the chosen granularity shapes the effective entries:
///   FilterWide  s * base[t][o]          (1 parameter)
///   PerTable    s_t * base[t][o]        (T parameters)
///   PerOffset   base[t][o] + d_o        (L parameters)
///   PerValue    theta[t][o]             (T*L parameters)
/// Layer-wide table tying is expressed by training one bank against the
/// samples of every consumer that shares it.
struct LearnedBank {
    std::size_t kh = 0;
    std::size_t kw = 0;
    Cardinality act_card;
    Granularity gran = Granularity::FilterWide;
    std::vector<std::vector<double>> base;
    double scale = 1.0;
    std::vector<double> table_scales;
    std::vector<double> offset_deltas;
    std::vector<std::vector<double>> theta;
    std::vector<std::vector<std::uint64_t>> hits;
    std::uint64_t revision = 0;

    std::size_t table_count() const noexcept { return kh * kw; }
    std::uint32_t levels() const noexcept { return act_card.levels(); }
    std::size_t param_count() const noexcept;
    double effective(std::size_t t, std::uint32_t o) const;
    void reset_hits();

    static LearnedBank from_filter(const Filter& f, Cardinality card, const ConvFn& fn,
                                   Granularity g);
    static LearnedBank from_tables(std::size_t kh, std::size_t kw, Cardinality card,
                                   std::vector<std::vector<double>> base, Granularity g);
    static LearnedBank random(std::size_t kh, std::size_t kw, Cardinality card, Granularity g,
                              std::uint64_t seed);
};

/// What backward needs from a forward pass: the looked-up input and the
/// parameter revision the outputs were produced under.
struct ForwardTrace {
    QTensor input;
    std::uint64_t revision = 0;
    std::size_t out_rows = 0;
    std::size_t out_cols = 0;
};

/// out[p] = sum_t effective(t, a_t(p)); hit counters advance per lookup.
RealTensor learned_forward(const QTensor& input, LearnedBank& bank, ForwardTrace* trace = nullptr,
                           int threads = 1);

struct LearnedGradients {
    Granularity gran = Granularity::FilterWide;
    double scale = 0.0;
    std::vector<double> table_scales;
    std::vector<double> offset_deltas;
    std::vector<std::vector<double>> theta;
};

/// Accumulate dL/dparam from dL/dout. Throws StateError when the bank has
/// stepped past the trace.
LearnedGradients learned_backward(const LearnedBank& bank, const ForwardTrace& trace,
                                  const RealTensor& upstream);

void apply_step(LearnedBank& bank, const LearnedGradients& grads, double lr);

struct Sample {
    QTensor input;
    RealTensor target;
};

struct TrainConfig {
    double lr = 0.01;
    unsigned steps = 100;
    double divergence_limit = 1e12;
    int threads = 1;
};

struct TrainResult {
    std::vector<double> loss_trace; // loss_trace[0] is the pre-training loss
    bool diverged = false;
};

/// Plain gradient descent at a fixed learning rate on the mean squared error
/// (halved) over every output position in the dataset.
TrainResult train(LearnedBank& bank, std::span<const Sample> dataset, const TrainConfig& cfg);

double dataset_loss(LearnedBank& bank, std::span<const Sample> dataset, int threads = 1);

/// Fixed learning rate from a power-iteration estimate of the loss curvature.
/// The loss is quadratic in the parameters at every granularity, so the
/// Hessian is constant and 1 / (1.1 * lambda_max) descends safely.
double choose_lr(const LearnedBank& bank, std::span<const Sample> dataset,
                 unsigned power_iters = 16, std::uint64_t seed = 7);

/// Least-squares fit of a product-style weight per table; residual_t is
/// max_o |effective[t][o] - w_t * o|. Zero residual means direct convolution
/// with the returned filter reproduces learned inference.
struct Reconstruction {
    Filter filter;
    std::vector<double> residuals;
};

Reconstruction reconstruct_filter(const LearnedBank& bank);

/// Toy regression task: targets come from a hidden convolution over the same
/// geometry. `ScaledBase` scales the bank's own base outputs; `SquareLaw`
/// replaces each base table with w_t * o^2.
enum class HiddenTarget : std::uint8_t { ScaledBase = 0, SquareLaw = 1 };

struct HiddenConvTask {
    LearnedBank bank;
    std::vector<Sample> data;
};

HiddenConvTask make_hidden_conv_task(std::uint64_t seed, std::size_t kh, std::size_t kw,
                                     unsigned act_bits, std::size_t samples, std::size_t in_rows,
                                     std::size_t in_cols, HiddenTarget target,
                                     double target_scale, Granularity g);

} // namespace pcilt
