#pragma once

#include <deque>
#include <string>
#include <vector>

#include "flowrec/image.hpp"
#include "flowrec/rng.hpp"

namespace flowrec {

/// Planar feature map [channel][y][x].
struct Tensor3 {
    int ch = 0, h = 0, w = 0;
    std::vector<double> data;

    Tensor3() = default;
    Tensor3(int c, int h_, int w_, double fill = 0.0)
        : ch(c), h(h_), w(w_), data(static_cast<size_t>(c) * h_ * w_, fill) {}
    std::size_t index(int c, int y, int x) const {
        return (static_cast<std::size_t>(c) * h + y) * w + x;
    }
    double& at(int c, int y, int x) { return data[index(c, y, x)]; }
    double at(int c, int y, int x) const { return data[index(c, y, x)]; }
};

struct ConvLayerSpec {
    int out_channels = 1;
    int stride = 1;
};

/// One 4x4 convolution with SAME geometry, mirrored (symmetric) padding and
/// a trailing LReLU.
struct ConvLayer {
    int in_ch = 0, out_ch = 0, stride = 1;
    std::vector<double> weights;  // [out][in][4][4]
    std::vector<double> bias;     // [out]

    std::size_t weight_index(int o, int i, int ky, int kx) const {
        return ((static_cast<std::size_t>(o) * in_ch + i) * 4 + ky) * 4 + kx;
    }
};

struct LayerGrads {
    std::vector<double> weights, bias;
};

/// Fully convolutional critic with LReLU(0.2) after every layer; the final
/// 1-channel map is averaged into a scalar score per image.
class DiscriminatorNet {
  public:
    std::vector<ConvLayer> layers;
    int in_channels = 3;
    double leak = 0.2;

    /// 14 layers of (channels, stride):
    /// (8,1)(16,2)(16,1)(24,2)(24,1)(32,2)(32,1)(32,1)(64,2)(64,1)(64,1)(16,1)(4,1)(1,1)
    static std::vector<ConvLayerSpec> default_arch();

    DiscriminatorNet() = default;
    DiscriminatorNet(const std::vector<ConvLayerSpec>& arch, int input_channels, Rng& init_rng);

    int stride_product() const;
    std::size_t parameter_count() const;

    struct Trace {
        std::vector<Tensor3> acts;  // acts[0] = input, acts[i] = layer i output
        double score = 0.0;
    };

    Tensor3 to_input(const Image& img) const;  // broadcasts gray to in_channels
    Trace forward(const Image& img) const;
    double score(const Image& img) const { return forward(img).score; }

    /// Backprop of g_score * d(score)/d(parameters); accumulates into grads
    /// and optionally returns the input-image gradient.
    void backward(const Trace& trace, double g_score, std::vector<LayerGrads>& grads,
                  Tensor3* input_grad) const;

    std::vector<LayerGrads> zero_grads() const;

    void save(const std::string& path) const;
    static DiscriminatorNet load(const std::string& path);
};

/// Relativistic average least-squares loss:
/// E_r[(D_r - E_f[D_f] - l)^2] + E_f[(D_f - E_r[D_r] + l)^2].
double ralsgan_loss(const std::vector<double>& real_scores, const std::vector<double>& fake_scores,
                    double label);

/// d(ralsgan_loss)/d(score) for every score.
void ralsgan_score_grads(const std::vector<double>& real_scores,
                         const std::vector<double>& fake_scores, double label,
                         std::vector<double>& real_grads, std::vector<double>& fake_grads);

/// FIFO pool of previously rendered fake images, sampled without replacement.
class HistoryBuffer {
  public:
    explicit HistoryBuffer(std::size_t capacity = 64) : capacity_(capacity) {}

    void push(const Image& img);
    std::vector<Image> sample(std::size_t count, Rng& rng) const;
    std::size_t size() const { return items_.size(); }
    std::size_t capacity() const { return capacity_; }

  private:
    std::size_t capacity_;
    std::deque<Image> items_;
};

struct AugmentParams {
    double crop_min = 0.8, crop_max = 1.0;
    double scale_min = 0.85, scale_max = 1.15;
    double rotate_deg = 10.0;
    double intensity_min = 0.9, intensity_max = 1.1;
    double gamma_min = 0.9, gamma_max = 1.1;

    void validate() const {
        if (scale_min <= 0.0 || crop_min <= 0.0 || gamma_min <= 0.0)
            throw InvalidInput("augment: ranges must be positive");
    }
};

/// Random crop/scale/rotation window resampled to out_res, then intensity and
/// gamma jitter. Draws a fixed number of uniforms so streams stay aligned.
Image augment_image(const Image& img, int out_res, const AugmentParams& params, Rng& rng);

/// Per-layer Adam moments for the critic.
struct DiscAdamState {
    std::vector<LayerGrads> m, v;
    std::int64_t step = 0;
    double lr = 2e-4;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double weight_l2 = 2e-3;

    static DiscAdamState for_net(const DiscriminatorNet& net);
};

struct DiscTrainStats {
    double loss = 0.0;
    double mean_real = 0.0, mean_fake = 0.0;
};

/// One critic update: augments 8 reals and 4 fresh + up to 4 history fakes,
/// takes an Adam step on ralsgan(l=+1) plus the L2 penalty, then pushes the
/// fresh fakes into the history.
DiscTrainStats disc_train_step(DiscriminatorNet& net, DiscAdamState& opt,
                               const std::vector<Image>& real_images,
                               const std::vector<Image>& fake_images, HistoryBuffer& history,
                               const AugmentParams& aug, int input_res, Rng& rng);

/// Gradients of ralsgan(l=-1) w.r.t. the fake images' pixels (the learned
/// self-supervision signal chained into the renderer by the caller). Returns
/// the loss value; grads[i] matches fake_images[i].
double disc_density_image_grads(const DiscriminatorNet& net, const std::vector<Image>& real_images,
                                const std::vector<Image>& fake_images,
                                std::vector<Image>& image_grads);

}  // namespace flowrec
