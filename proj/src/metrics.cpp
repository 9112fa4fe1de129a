#include "flowrec/metrics.hpp"

#include <cmath>

namespace flowrec {

namespace {

double masked_rmse(const std::vector<double>& a, const std::vector<double>& b, int channels,
                   const ScalarGrid* mask) {
    double sum = 0.0;
    std::int64_t count = 0;
    const std::size_t cells = a.size() / static_cast<std::size_t>(channels);
    for (std::size_t c = 0; c < cells; ++c) {
        if (mask && mask->data[c] <= 0.5) continue;
        for (int ch = 0; ch < channels; ++ch) {
            const double d = a[c * channels + ch] - b[c * channels + ch];
            sum += d * d;
        }
        count += channels;
    }
    if (count == 0) throw InvalidInput("rmse: empty mask");
    return std::sqrt(sum / static_cast<double>(count));
}

}  // namespace

double rmse(const ScalarGrid& a, const ScalarGrid& b, const ScalarGrid* mask) {
    if (a.dims != b.dims) throw InvalidInput("rmse: shape mismatch");
    if (mask && mask->dims != a.dims) throw InvalidInput("rmse: mask shape mismatch");
    return masked_rmse(a.data, b.data, 1, mask);
}

double rmse(const VectorGrid& a, const VectorGrid& b, const ScalarGrid* mask) {
    if (a.dims != b.dims) throw InvalidInput("rmse: shape mismatch");
    if (mask && mask->dims != a.dims) throw InvalidInput("rmse: mask shape mismatch");
    return masked_rmse(a.data, b.data, 3, mask);
}

double rmse(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw InvalidInput("rmse: image shape mismatch");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        sum += d * d;
    }
    return std::sqrt(sum / static_cast<double>(a.data.size()));
}

double psnr(const Image& img, const Image& ref, double peak) {
    if (!img.same_shape(ref)) throw InvalidInput("psnr: shape mismatch");
    double mse = 0.0;
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        const double d = img.data[i] - ref.data[i];
        mse += d * d;
    }
    mse /= static_cast<double>(img.data.size());
    if (mse == 0.0) return 99.0;
    return std::min(99.0, 10.0 * std::log10(peak * peak / mse));
}

double ssim(const Image& img, const Image& ref) {
    if (!img.same_shape(ref)) throw InvalidInput("ssim: shape mismatch");
    const Image a = img.to_gray();
    const Image b = ref.to_gray();
    constexpr int kWindow = 11;
    constexpr int kRadius = kWindow / 2;
    if (a.width < kWindow || a.height < kWindow)
        throw InvalidInput("ssim: image smaller than the 11x11 window");
    constexpr double kSigma = 1.5;
    constexpr double k1 = 0.01, k2 = 0.03, L = 1.0;
    const double c1 = (k1 * L) * (k1 * L);
    const double c2 = (k2 * L) * (k2 * L);

    double window[kWindow][kWindow];
    double wsum = 0.0;
    for (int y = 0; y < kWindow; ++y)
        for (int x = 0; x < kWindow; ++x) {
            const double dx = x - kRadius, dy = y - kRadius;
            window[y][x] = std::exp(-(dx * dx + dy * dy) / (2.0 * kSigma * kSigma));
            wsum += window[y][x];
        }
    for (int y = 0; y < kWindow; ++y)
        for (int x = 0; x < kWindow; ++x) window[y][x] /= wsum;

    double total = 0.0;
    std::int64_t count = 0;
    for (int cy = kRadius; cy < a.height - kRadius; ++cy)
        for (int cx = kRadius; cx < a.width - kRadius; ++cx) {
            double mu_a = 0.0, mu_b = 0.0;
            for (int y = 0; y < kWindow; ++y)
                for (int x = 0; x < kWindow; ++x) {
                    mu_a += window[y][x] * a.at(cx + x - kRadius, cy + y - kRadius);
                    mu_b += window[y][x] * b.at(cx + x - kRadius, cy + y - kRadius);
                }
            double var_a = 0.0, var_b = 0.0, cov = 0.0;
            for (int y = 0; y < kWindow; ++y)
                for (int x = 0; x < kWindow; ++x) {
                    const double da = a.at(cx + x - kRadius, cy + y - kRadius) - mu_a;
                    const double db = b.at(cx + x - kRadius, cy + y - kRadius) - mu_b;
                    var_a += window[y][x] * da * da;
                    var_b += window[y][x] * db * db;
                    cov += window[y][x] * da * db;
                }
            const double num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
            const double den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
            total += num / den;
            ++count;
        }
    return total / static_cast<double>(count);
}

std::vector<double> transport_error(const std::vector<ScalarGrid>& rho_seq,
                                    const std::vector<VectorGrid>& u_seq,
                                    const std::vector<ScalarGrid>& hulls,
                                    const std::vector<ScalarGrid>* inflows,
                                    AdvectionScheme scheme) {
    if (rho_seq.size() < 2) throw InvalidInput("transport_error: need at least two frames");
    if (u_seq.size() + 1 < rho_seq.size())
        throw InvalidInput("transport_error: velocity sequence too short");
    if (hulls.size() != rho_seq.size()) throw InvalidInput("transport_error: hull count mismatch");
    if (inflows && inflows->size() + 1 < rho_seq.size())
        throw InvalidInput("transport_error: inflow count mismatch");
    std::vector<double> errs;
    errs.reserve(rho_seq.size() - 1);
    for (std::size_t t = 1; t < rho_seq.size(); ++t) {
        ScalarGrid source = rho_seq[t - 1];
        if (inflows)
            for (std::size_t i = 0; i < source.data.size(); ++i)
                source.data[i] += (*inflows)[t - 1].data[i];
        ScalarGrid adv = advect(source, u_seq[t - 1], scheme);
        // the hull is part of the transport model: it is applied after every
        // advection step during reconstruction
        bool any = false;
        for (std::size_t i = 0; i < adv.data.size(); ++i) {
            adv.data[i] *= clamp(hulls[t].data[i], 0.0, 1.0);
            any = any || hulls[t].data[i] > 0.5;
        }
        errs.push_back(any ? rmse(adv, rho_seq[t], &hulls[t]) : 0.0);
    }
    return errs;
}

ScalarGrid warp_test(const ScalarGrid& rho_init, const std::vector<VectorGrid>& u_seq,
                     AdvectionScheme scheme) {
    ScalarGrid state = rho_init;
    for (const VectorGrid& u : u_seq) state = advect(state, u, scheme);
    return state;
}

}  // namespace flowrec
