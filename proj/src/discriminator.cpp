#include "flowrec/discriminator.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "flowrec/parallel.hpp"

namespace flowrec {

namespace {

// symmetric reflection (edge included), valid for any pad depth
inline int mirror_index(int idx, int n) {
    while (idx < 0 || idx >= n) {
        if (idx < 0) idx = -idx - 1;
        if (idx >= n) idx = 2 * n - 1 - idx;
    }
    return idx;
}

inline int same_out(int in, int stride) { return (in + stride - 1) / stride; }

inline int same_pad_begin(int in, int stride) {
    const int out = same_out(in, stride);
    const int pad_total = std::max((out - 1) * stride + 4 - in, 0);
    return pad_total / 2;
}

}  // namespace

std::vector<ConvLayerSpec> DiscriminatorNet::default_arch() {
    return {{8, 1},  {16, 2}, {16, 1}, {24, 2}, {24, 1}, {32, 2}, {32, 1},
            {32, 1}, {64, 2}, {64, 1}, {64, 1}, {16, 1}, {4, 1},  {1, 1}};
}

DiscriminatorNet::DiscriminatorNet(const std::vector<ConvLayerSpec>& arch, int input_channels,
                                   Rng& init_rng)
    : in_channels(input_channels) {
    if (arch.empty()) throw InvalidInput("discriminator: empty architecture");
    if (arch.back().out_channels != 1)
        throw InvalidInput("discriminator: final layer must have 1 channel");
    int in_ch = input_channels;
    for (const ConvLayerSpec& spec : arch) {
        if (spec.stride != 1 && spec.stride != 2)
            throw InvalidInput("discriminator: strides must be 1 or 2");
        ConvLayer layer;
        layer.in_ch = in_ch;
        layer.out_ch = spec.out_channels;
        layer.stride = spec.stride;
        layer.weights.resize(static_cast<size_t>(spec.out_channels) * in_ch * 16);
        layer.bias.assign(static_cast<size_t>(spec.out_channels), 0.0);
        const double limit = std::sqrt(6.0 / (in_ch * 16.0));
        for (double& w : layer.weights) w = init_rng.uniform(-limit, limit);
        layers.push_back(std::move(layer));
        in_ch = spec.out_channels;
    }
}

int DiscriminatorNet::stride_product() const {
    int p = 1;
    for (const auto& l : layers) p *= l.stride;
    return p;
}

std::size_t DiscriminatorNet::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weights.size() + l.bias.size();
    return n;
}

Tensor3 DiscriminatorNet::to_input(const Image& img) const {
    Tensor3 t(in_channels, img.height, img.width);
    for (int c = 0; c < in_channels; ++c) {
        const int src = img.channels == 3 ? std::min(c, 2) : 0;
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) t.at(c, y, x) = img.at(x, y, src);
    }
    return t;
}

DiscriminatorNet::Trace DiscriminatorNet::forward(const Image& img) const {
    if (img.width < stride_product() || img.height < stride_product())
        throw InvalidInput("discriminator: input smaller than the stride chain footprint");
    Trace trace;
    trace.acts.reserve(layers.size() + 1);
    trace.acts.push_back(to_input(img));
    for (const ConvLayer& layer : layers) {
        const Tensor3& in = trace.acts.back();
        const int oh = same_out(in.h, layer.stride);
        const int ow = same_out(in.w, layer.stride);
        const int pby = same_pad_begin(in.h, layer.stride);
        const int pbx = same_pad_begin(in.w, layer.stride);
        Tensor3 out(layer.out_ch, oh, ow);
        parallel_chunks(layer.out_ch, [&](std::int64_t ob, std::int64_t oe) {
            for (int o = static_cast<int>(ob); o < oe; ++o)
                for (int y = 0; y < oh; ++y)
                    for (int x = 0; x < ow; ++x) {
                        double acc = layer.bias[static_cast<size_t>(o)];
                        for (int ci = 0; ci < layer.in_ch; ++ci)
                            for (int ky = 0; ky < 4; ++ky) {
                                const int sy = mirror_index(y * layer.stride - pby + ky, in.h);
                                for (int kx = 0; kx < 4; ++kx) {
                                    const int sx =
                                        mirror_index(x * layer.stride - pbx + kx, in.w);
                                    acc += layer.weights[layer.weight_index(o, ci, ky, kx)] *
                                           in.at(ci, sy, sx);
                                }
                            }
                        out.at(o, y, x) = acc < 0.0 ? leak * acc : acc;
                    }
        });
        trace.acts.push_back(std::move(out));
    }
    const Tensor3& last = trace.acts.back();
    double sum = 0.0;
    for (double v : last.data) sum += v;
    trace.score = sum / static_cast<double>(last.data.size());
    return trace;
}

void DiscriminatorNet::backward(const Trace& trace, double g_score,
                                std::vector<LayerGrads>& grads, Tensor3* input_grad) const {
    if (trace.acts.size() != layers.size() + 1)
        throw InvalidInput("discriminator: trace does not match the network");
    const Tensor3& last = trace.acts.back();
    Tensor3 g(last.ch, last.h, last.w, g_score / static_cast<double>(last.data.size()));
    for (int li = static_cast<int>(layers.size()) - 1; li >= 0; --li) {
        const ConvLayer& layer = layers[static_cast<size_t>(li)];
        const Tensor3& in = trace.acts[static_cast<size_t>(li)];
        const Tensor3& out = trace.acts[static_cast<size_t>(li) + 1];
        LayerGrads& lg = grads[static_cast<size_t>(li)];
        const int pby = same_pad_begin(in.h, layer.stride);
        const int pbx = same_pad_begin(in.w, layer.stride);
        Tensor3 gin(in.ch, in.h, in.w, 0.0);
        for (int o = 0; o < layer.out_ch; ++o)
            for (int y = 0; y < out.h; ++y)
                for (int x = 0; x < out.w; ++x) {
                    double gv = g.at(o, y, x);
                    if (gv == 0.0) continue;
                    if (out.at(o, y, x) < 0.0) gv *= leak;  // LReLU branch from the sign
                    lg.bias[static_cast<size_t>(o)] += gv;
                    for (int ci = 0; ci < layer.in_ch; ++ci)
                        for (int ky = 0; ky < 4; ++ky) {
                            const int sy = mirror_index(y * layer.stride - pby + ky, in.h);
                            for (int kx = 0; kx < 4; ++kx) {
                                const int sx = mirror_index(x * layer.stride - pbx + kx, in.w);
                                lg.weights[layer.weight_index(o, ci, ky, kx)] +=
                                    gv * in.at(ci, sy, sx);
                                gin.at(ci, sy, sx) +=
                                    gv * layer.weights[layer.weight_index(o, ci, ky, kx)];
                            }
                        }
                }
        g = std::move(gin);
    }
    if (input_grad) *input_grad = std::move(g);
}

std::vector<LayerGrads> DiscriminatorNet::zero_grads() const {
    std::vector<LayerGrads> grads(layers.size());
    for (size_t i = 0; i < layers.size(); ++i) {
        grads[i].weights.assign(layers[i].weights.size(), 0.0);
        grads[i].bias.assign(layers[i].bias.size(), 0.0);
    }
    return grads;
}

// --- checkpoint io ----------------------------------------------------------

namespace {

void write_u32(std::ofstream& f, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                          static_cast<unsigned char>((v >> 8) & 0xFF),
                          static_cast<unsigned char>((v >> 16) & 0xFF),
                          static_cast<unsigned char>((v >> 24) & 0xFF)};
    f.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::ifstream& f) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f64_block(std::ofstream& f, const std::vector<double>& v) {
    f.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void read_f64_block(std::ifstream& f, std::vector<double>& v) {
    f.read(reinterpret_cast<char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(double)));
}

}  // namespace

void DiscriminatorNet::save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write("GTDN", 4);
    write_u32(f, 1);
    write_u32(f, static_cast<std::uint32_t>(layers.size()));
    write_u32(f, static_cast<std::uint32_t>(in_channels));
    for (const ConvLayer& l : layers) {
        write_u32(f, static_cast<std::uint32_t>(l.out_ch));
        write_u32(f, static_cast<std::uint32_t>(l.in_ch));
        write_u32(f, static_cast<std::uint32_t>(l.stride));
        write_f64_block(f, l.weights);
        write_f64_block(f, l.bias);
    }
    if (!f) throw IoError("write failed: " + path);
}

DiscriminatorNet DiscriminatorNet::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "GTDN", 4) != 0)
        throw IoError("not a discriminator checkpoint: " + path);
    if (read_u32(f) != 1) throw IoError("unsupported checkpoint version: " + path);
    const std::uint32_t n_layers = read_u32(f);
    DiscriminatorNet net;
    net.in_channels = static_cast<int>(read_u32(f));
    for (std::uint32_t i = 0; i < n_layers; ++i) {
        ConvLayer l;
        l.out_ch = static_cast<int>(read_u32(f));
        l.in_ch = static_cast<int>(read_u32(f));
        l.stride = static_cast<int>(read_u32(f));
        l.weights.resize(static_cast<size_t>(l.out_ch) * l.in_ch * 16);
        l.bias.resize(static_cast<size_t>(l.out_ch));
        read_f64_block(f, l.weights);
        read_f64_block(f, l.bias);
        net.layers.push_back(std::move(l));
    }
    if (!f) throw IoError("truncated checkpoint: " + path);
    return net;
}

// --- RaLSGAN ------------------------------------------------------------------

double ralsgan_loss(const std::vector<double>& real_scores, const std::vector<double>& fake_scores,
                    double label) {
    if (real_scores.empty() || fake_scores.empty())
        throw InvalidInput("ralsgan: empty score set");
    const double nr = static_cast<double>(real_scores.size());
    const double nf = static_cast<double>(fake_scores.size());
    double mean_r = 0.0, mean_f = 0.0;
    for (double v : real_scores) mean_r += v;
    for (double v : fake_scores) mean_f += v;
    mean_r /= nr;
    mean_f /= nf;
    double loss = 0.0;
    for (double v : real_scores) {
        const double r = v - mean_f - label;
        loss += r * r / nr;
    }
    for (double v : fake_scores) {
        const double r = v - mean_r + label;
        loss += r * r / nf;
    }
    return loss;
}

void ralsgan_score_grads(const std::vector<double>& real_scores,
                         const std::vector<double>& fake_scores, double label,
                         std::vector<double>& real_grads, std::vector<double>& fake_grads) {
    if (real_scores.empty() || fake_scores.empty())
        throw InvalidInput("ralsgan: empty score set");
    const double nr = static_cast<double>(real_scores.size());
    const double nf = static_cast<double>(fake_scores.size());
    double mean_r = 0.0, mean_f = 0.0;
    for (double v : real_scores) mean_r += v;
    for (double v : fake_scores) mean_f += v;
    mean_r /= nr;
    mean_f /= nf;
    double mean_res_r = 0.0;  // E_r[D_r - mean_f - l]
    for (double v : real_scores) mean_res_r += (v - mean_f - label) / nr;
    double mean_res_f = 0.0;  // E_f[D_f - mean_r + l]
    for (double v : fake_scores) mean_res_f += (v - mean_r + label) / nf;

    real_grads.resize(real_scores.size());
    fake_grads.resize(fake_scores.size());
    for (size_t i = 0; i < real_scores.size(); ++i)
        real_grads[i] = 2.0 * (real_scores[i] - mean_f - label) / nr - 2.0 * mean_res_f / nr;
    for (size_t i = 0; i < fake_scores.size(); ++i)
        fake_grads[i] = 2.0 * (fake_scores[i] - mean_r + label) / nf - 2.0 * mean_res_r / nf;
}

// --- history -------------------------------------------------------------------

void HistoryBuffer::push(const Image& img) {
    items_.push_back(img);
    while (items_.size() > capacity_) items_.pop_front();
}

std::vector<Image> HistoryBuffer::sample(std::size_t count, Rng& rng) const {
    count = std::min(count, items_.size());
    std::vector<std::size_t> idx(items_.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    // partial Fisher-Yates
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t j =
            i + static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(idx.size() - i) - 1));
        std::swap(idx[i], idx[j]);
    }
    std::vector<Image> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(items_[idx[i]]);
    return out;
}

// --- augmentation ---------------------------------------------------------------

Image augment_image(const Image& img, int out_res, const AugmentParams& params, Rng& rng) {
    params.validate();
    const double crop = rng.uniform(params.crop_min, params.crop_max);
    const double cx_frac = rng.uniform();
    const double cy_frac = rng.uniform();
    const double scale = rng.uniform(params.scale_min, params.scale_max);
    const double rot = deg_to_rad(rng.uniform(-params.rotate_deg, params.rotate_deg));
    const double intensity = rng.uniform(params.intensity_min, params.intensity_max);
    const double gamma = rng.uniform(params.gamma_min, params.gamma_max);

    const double win = crop * std::min(img.width, img.height) / scale;
    const double half = 0.5 * win;
    const double cx = half + cx_frac * std::max(0.0, img.width - win);
    const double cy = half + cy_frac * std::max(0.0, img.height - win);
    const double cr = std::cos(rot), sr = std::sin(rot);

    Image out(out_res, out_res, img.channels);
    for (int y = 0; y < out_res; ++y)
        for (int x = 0; x < out_res; ++x) {
            const double u = ((x + 0.5) / out_res - 0.5) * win;
            const double v = ((y + 0.5) / out_res - 0.5) * win;
            const double sx = cx + cr * u - sr * v;
            const double sy = cy + sr * u + cr * v;
            for (int c = 0; c < img.channels; ++c) {
                const double raw = std::max(0.0, img.sample(sx, sy, c));
                out.at(x, y, c) = intensity * std::pow(raw, gamma);
            }
        }
    return out;
}

// --- training -----------------------------------------------------------------

DiscAdamState DiscAdamState::for_net(const DiscriminatorNet& net) {
    DiscAdamState s;
    s.m = net.zero_grads();
    s.v = net.zero_grads();
    return s;
}

namespace {

void adam_update(std::vector<double>& param, const std::vector<double>& grad,
                 std::vector<double>& m, std::vector<double>& v, double lr, double b1, double b2,
                 double eps, double bias1, double bias2) {
    for (std::size_t i = 0; i < param.size(); ++i) {
        m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
        v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
        const double mh = m[i] / bias1;
        const double vh = v[i] / bias2;
        param[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
}

}  // namespace

DiscTrainStats disc_train_step(DiscriminatorNet& net, DiscAdamState& opt,
                               const std::vector<Image>& real_images,
                               const std::vector<Image>& fake_images, HistoryBuffer& history,
                               const AugmentParams& aug, int input_res, Rng& rng) {
    if (real_images.empty() || fake_images.empty())
        throw InvalidInput("disc_train_step: empty batch");
    std::vector<Image> reals, fakes;
    for (const Image& img : real_images) reals.push_back(augment_image(img, input_res, aug, rng));
    const std::vector<Image> old_fakes = history.sample(fake_images.size(), rng);
    for (const Image& img : fake_images) history.push(img);
    for (const Image& img : fake_images) fakes.push_back(augment_image(img, input_res, aug, rng));
    for (const Image& img : old_fakes) fakes.push_back(augment_image(img, input_res, aug, rng));

    std::vector<DiscriminatorNet::Trace> traces;
    std::vector<double> real_scores, fake_scores;
    for (const Image& img : reals) {
        traces.push_back(net.forward(img));
        real_scores.push_back(traces.back().score);
    }
    for (const Image& img : fakes) {
        traces.push_back(net.forward(img));
        fake_scores.push_back(traces.back().score);
    }

    DiscTrainStats stats;
    stats.loss = ralsgan_loss(real_scores, fake_scores, 1.0);
    for (double v : real_scores) stats.mean_real += v / static_cast<double>(real_scores.size());
    for (double v : fake_scores) stats.mean_fake += v / static_cast<double>(fake_scores.size());

    std::vector<double> g_real, g_fake;
    ralsgan_score_grads(real_scores, fake_scores, 1.0, g_real, g_fake);
    std::vector<LayerGrads> grads = net.zero_grads();
    for (size_t i = 0; i < reals.size(); ++i) net.backward(traces[i], g_real[i], grads, nullptr);
    for (size_t i = 0; i < fakes.size(); ++i)
        net.backward(traces[reals.size() + i], g_fake[i], grads, nullptr);

    // L2 penalty weight_l2 * |theta|^2
    for (size_t li = 0; li < net.layers.size(); ++li) {
        for (std::size_t i = 0; i < grads[li].weights.size(); ++i)
            grads[li].weights[i] += 2.0 * opt.weight_l2 * net.layers[li].weights[i];
        for (std::size_t i = 0; i < grads[li].bias.size(); ++i)
            grads[li].bias[i] += 2.0 * opt.weight_l2 * net.layers[li].bias[i];
    }

    opt.step += 1;
    const double bias1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
    const double bias2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
    for (size_t li = 0; li < net.layers.size(); ++li) {
        adam_update(net.layers[li].weights, grads[li].weights, opt.m[li].weights,
                    opt.v[li].weights, opt.lr, opt.beta1, opt.beta2, opt.eps, bias1, bias2);
        adam_update(net.layers[li].bias, grads[li].bias, opt.m[li].bias, opt.v[li].bias, opt.lr,
                    opt.beta1, opt.beta2, opt.eps, bias1, bias2);
    }
    return stats;
}

double disc_density_image_grads(const DiscriminatorNet& net, const std::vector<Image>& real_images,
                                const std::vector<Image>& fake_images,
                                std::vector<Image>& image_grads) {
    if (real_images.empty() || fake_images.empty())
        throw InvalidInput("disc_density_image_grads: empty batch");
    std::vector<double> real_scores, fake_scores;
    std::vector<DiscriminatorNet::Trace> fake_traces;
    for (const Image& img : real_images) real_scores.push_back(net.score(img));
    for (const Image& img : fake_images) {
        fake_traces.push_back(net.forward(img));
        fake_scores.push_back(fake_traces.back().score);
    }
    const double loss = ralsgan_loss(real_scores, fake_scores, -1.0);
    std::vector<double> g_real, g_fake;
    ralsgan_score_grads(real_scores, fake_scores, -1.0, g_real, g_fake);

    image_grads.clear();
    std::vector<LayerGrads> scratch = net.zero_grads();
    for (size_t i = 0; i < fake_images.size(); ++i) {
        Tensor3 gin;
        net.backward(fake_traces[i], g_fake[i], scratch, &gin);
        Image g(fake_images[i].width, fake_images[i].height, 1);
        // channels were broadcast on the way in; fold them back
        for (int y = 0; y < g.height; ++y)
            for (int x = 0; x < g.width; ++x) {
                double sum = 0.0;
                for (int c = 0; c < gin.ch; ++c) sum += gin.at(c, y, x);
                g.at(x, y) = sum;
            }
        image_grads.push_back(std::move(g));
    }
    return loss;
}

}  // namespace flowrec
