#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace pkinet {

struct ModelConfig;

enum class LayerKind {
    Conv,
    Pointwise,
    Depthwise,
    Strip,
    Pool,
    Norm,
    Activation,
    Elementwise,
};

const char* layer_kind_name(LayerKind k);

// Static description of one layer, the unit of parameter/FLOP accounting.
// res_div: output spatial dims are input_hw / res_div (all layers here sit on
// power-of-two grids for inputs divisible by 32).
struct LayerSpec {
    std::string name;
    LayerKind kind = LayerKind::Conv;
    int in_ch = 0;
    int out_ch = 0;
    int kh = 1;
    int kw = 1;
    int stride = 1;
    int dilation = 1;
    int groups = 1;
    bool has_bias = false;
    int res_div = 1;
    int elt_ops = 1; // ops per output element for Elementwise rows
};

// Cost conventions:
//   conv-like params = (in_ch/groups) * out_ch * kh * kw + (has_bias ? out_ch : 0)
//   norm params      = 2 * out_ch
//   conv-like flops  = out_h * out_w * out_ch * (in_ch/groups) * kh * kw
//                      (one multiply-accumulate = one FLOP; bias not counted)
//   norm/act/pool    = 1 op per output element
//   elementwise      = elt_ops per output element
std::int64_t layer_params(const LayerSpec& s);
std::int64_t layer_flops(const LayerSpec& s, int input_hw);

struct CostRow {
    std::string name;
    LayerKind kind = LayerKind::Conv;
    std::int64_t params = 0;
    std::int64_t flops = 0;
};

struct CostReport {
    std::vector<CostRow> rows;
    std::int64_t total_params = 0;
    std::int64_t total_flops = 0;
    int input_hw = 0; // 0 when FLOPs were not evaluated

    void write_text(std::ostream& os) const;
    void write_csv(std::ostream& os) const;
};

CostReport count_params(const std::vector<LayerSpec>& graph);
// input_hw must be divisible by 32.
CostReport count_flops(const std::vector<LayerSpec>& graph, int input_hw);

// Max receptive field of one PKI module: the local k_s conv followed by the
// largest parallel kernel, composed by the standard law
//   RF = 1 + sum (effective_k - 1) * prod(earlier strides),
// all strides 1 inside the module, effective_k = d*(k-1)+1.
int receptive_field(const ModelConfig& cfg);

struct AblationRow {
    std::string label;
    std::int64_t params = 0;
    std::int64_t flops = 0;
    std::int64_t dparams = 0; // vs the suite's base row
    std::int64_t dflops = 0;
    double paper_params_m = 0.0; // 0 when the paper gives none
    double paper_flops_g = 0.0;
    int max_rf = 0;       // dilation suite only
    int paper_rf = 0;     // dilation suite only
    bool is_base = false;
};

struct AblationSuite {
    std::string title;
    std::vector<AblationRow> rows;
    std::string note;
};

// The six diagnostic suites (multi-scale kernel design, kernel number, CAA
// location, kernel dilations, cross-stage partial, CAA kernel size) evaluated
// for the given base config at 1024x1024.
std::vector<AblationSuite> table8_report(const ModelConfig& base);

void write_ablation(std::ostream& os, const std::vector<AblationSuite>& suites);

} // namespace pkinet
