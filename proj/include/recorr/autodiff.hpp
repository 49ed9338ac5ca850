#pragma once

// Tape-based reverse-mode differentiation over a fixed set of volume ops.
//
// Every node holds a Volume. Parameters live in a ParamStore; Tape::param()
// makes a leaf that mirrors one entry, and backward() folds the leaf's
// gradient back into the entry. Node ids are assigned in creation order, so
// a reverse sweep over ids is a valid topological order.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "recorr/volume.hpp"

namespace recorr::ad {

struct Param {
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;
    std::vector<double> m;
    std::vector<double> v;

    std::size_t numel() const { return value.size(); }
};

class ParamStore {
  public:
    // Zero-initialized entry. Names must be unique and must not collide with
    // the checkpoint's reserved "step" / "*.m" / "*.v" keys.
    Param& add(const std::string& name, std::vector<int> shape);
    Param& get(const std::string& name);
    const Param& get(const std::string& name) const;
    bool contains(const std::string& name) const { return entries_.count(name) != 0; }

    std::map<std::string, Param>& entries() { return entries_; }
    const std::map<std::string, Param>& entries() const { return entries_; }

    std::int64_t step() const { return step_; }
    void set_step(std::int64_t s) { step_ = s; }

    void zero_grad();
    double grad_norm() const;
    void scale_grad(double factor);
    std::size_t parameter_count() const;

    // Round values and moments to f32 so a checkpoint round-trip is lossless.
    void round_to_storage();

    friend bool operator==(const ParamStore& a, const ParamStore& b);

  private:
    std::map<std::string, Param> entries_;
    std::int64_t step_ = 0;
};

struct AdamWConfig {
    double lr = 7e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 4e-4;
};

// Decoupled weight decay, then the bias-corrected Adam update. Clears grads.
void adamw_step(ParamStore& store, const AdamWConfig& cfg);

void save_checkpoint(const std::filesystem::path& path, const ParamStore& store);
ParamStore load_checkpoint(const std::filesystem::path& path);

struct Var {
    static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
    std::size_t id = npos;
    bool valid() const { return id != npos; }
};

class Tape;
using BackwardFn = std::function<void(Tape&, const Volume& grad_out)>;

class Tape {
  public:
    Var constant(Volume value);
    Var input(Volume value, bool requires_grad = true);
    Var param(Param& p);

    const Volume& value(Var v) const { return nodes_.at(v.id).value; }
    bool requires_grad(Var v) const { return v.valid() && nodes_.at(v.id).requires_grad; }
    const std::string& op(Var v) const { return nodes_.at(v.id).op; }
    std::size_t size() const { return nodes_.size(); }

    // Zero volume of the right shape if no gradient reached this node.
    Volume grad(Var v) const;

    // Mutable gradient buffer, allocated on first use. Only call for nodes
    // with requires_grad().
    Volume& grad_buffer(Var v);

    Var record(std::string op, Volume value, const std::vector<Var>& inputs, BackwardFn backward);

    // Seeds d(loss)/d(loss) = 1 and sweeps the tape. loss must be 1x1x1x1.
    void backward(Var loss);

  private:
    struct Node {
        std::string op;
        Volume value;
        Volume grad;
        bool has_grad = false;
        bool requires_grad = false;
        BackwardFn backward;
        Param* param = nullptr;
    };
    std::vector<Node> nodes_;
    std::map<const Param*, std::size_t> param_nodes_;
};

// ---- forward ops ---------------------------------------------------------

// Zero-padded 3-D convolution, "same" padding k/2. weight is a param leaf with
// out*in*kd*kh*kw values; bias may be an invalid Var.
Var conv3d(Tape& t, Var x, Var weight, Var bias, int out_channels, std::array<int, 3> kernel, int stride = 1);

// 1x1xk then 1xkx1 then kx1x1, one (weight, bias) pair per stage.
Var separable_conv3d(Tape& t, Var x, const std::array<Var, 3>& weights, const std::array<Var, 3>& biases,
                     int mid_channels, int out_channels, int k);

Var leaky_relu(Tape& t, Var x, double slope = 0.2);
Var sigmoid(Tape& t, Var x);
Var tanh(Tape& t, Var x);
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var x, double factor);
// (1 - z) * a + z * b, exact at z = 0 and z = 1.
Var blend(Tape& t, Var z, Var a, Var b);
Var concat(Tape& t, const std::vector<Var>& parts);
// Channels [begin, end).
Var split(Tape& t, Var x, int begin, int end);
// Half-voxel aligned trilinear x2 upsampling (values unchanged).
Var upsample2(Tape& t, Var x);
// Differentiable w.r.t. image and field (3 channels, voxel units).
Var warp(Tape& t, Var image, Var field);
// r^3-channel normalized dot products against zero-padded shifts of `moving`.
Var correlation(Tape& t, Var fixed, Var moving, int r);

// Scalar reductions.
Var sum(Tape& t, Var x);
Var mean(Tape& t, Var x);

// Scalar (1x1x1x1) helper volume.
Volume scalar_volume(double v);

} // namespace recorr::ad
