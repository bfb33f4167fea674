#include "cdi/training.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <thread>

#include "cdi/diffusion.hpp"
#include "cdi/errors.hpp"
#include "cdi/rng.hpp"

namespace cdi {

namespace {

int resolve_threads(int requested) {
    if (requested > 0) return requested;
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

struct BatchItem {
    int sample_index;
    int t;
    Tensor eps;
    Tensor x_t;
};

}  // namespace

TrainReport train(const std::vector<ImageSample>& dataset, ConvDenoiser& f,
                  const NoiseSchedule& sched, const TrainConfig& cfg) {
    if (dataset.empty()) throw std::invalid_argument("train: dataset is empty");
    if (cfg.batch_size <= 0) throw std::invalid_argument("train: batch_size must be positive");
    if (cfg.steps < 0) throw std::invalid_argument("train: steps must be >= 0");

    TrainReport report;
    if (cfg.steps == 0) return report;

    const int n_threads = resolve_threads(cfg.threads);
    const size_t n_params = f.param_count();
    Rng rng = derive_rng(cfg.seed, "train");

    std::vector<double> m(n_params, 0.0), v(n_params, 0.0);
    std::vector<double> grad(n_params, 0.0);
    // One gradient buffer per batch slot, reduced in sample order afterwards,
    // so the result is bit-identical for any thread count.
    std::vector<std::vector<double>> sample_grads(
        static_cast<size_t>(cfg.batch_size), std::vector<double>(n_params, 0.0));
    std::vector<double> sample_loss(static_cast<size_t>(cfg.batch_size), 0.0);

    const int C = f.config().channels, H = f.config().height, W = f.config().width;
    double running = 0.0;
    int window = 0;
    const int win_size = std::max(1, std::min(100, cfg.steps / 4));

    for (int step = 1; step <= cfg.steps; ++step) {
        // All randomness drawn before the parallel section.
        std::vector<BatchItem> batch(static_cast<size_t>(cfg.batch_size));
        for (auto& item : batch) {
            item.sample_index = static_cast<int>(rng.below(dataset.size()));
            item.t = rng.uniform_int(1, sched.T());
            item.eps = rng.normal_tensor(C, H, W);
            item.x_t = forward_noise(dataset[static_cast<size_t>(item.sample_index)].pixels,
                                     item.t, item.eps, sched);
        }

        auto worker = [&](int wi) {
            for (int i = wi; i < cfg.batch_size; i += n_threads) {
                auto& g = sample_grads[static_cast<size_t>(i)];
                std::fill(g.begin(), g.end(), 0.0);
                const auto& item = batch[static_cast<size_t>(i)];
                const auto& sample = dataset[static_cast<size_t>(item.sample_index)];
                std::optional<int> cond = cfg.use_labels ? sample.label : std::nullopt;
                sample_loss[static_cast<size_t>(i)] =
                    f.loss_backward_params(item.x_t, item.t, cond, item.eps, g);
            }
        };
        if (n_threads == 1) {
            worker(0);
        } else {
            std::vector<std::thread> pool;
            pool.reserve(static_cast<size_t>(n_threads));
            for (int wi = 0; wi < n_threads; ++wi) pool.emplace_back(worker, wi);
            for (auto& th : pool) th.join();
        }

        std::fill(grad.begin(), grad.end(), 0.0);
        double batch_loss = 0.0;
        for (int i = 0; i < cfg.batch_size; ++i) {
            const auto& g = sample_grads[static_cast<size_t>(i)];
            for (size_t j = 0; j < n_params; ++j) grad[j] += g[j];
            batch_loss += sample_loss[static_cast<size_t>(i)];
        }
        batch_loss /= cfg.batch_size;
        const double scale = 1.0 / cfg.batch_size;

        if (!std::isfinite(batch_loss))
            throw TrainingDiverged("train: loss became non-finite at step " +
                                   std::to_string(step));

        // Adam
        const double b1t = 1.0 - std::pow(cfg.adam_beta1, step);
        const double b2t = 1.0 - std::pow(cfg.adam_beta2, step);
        auto& params = f.params();
        for (size_t i = 0; i < n_params; ++i) {
            const double g = grad[i] * scale;
            m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * g;
            v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * g * g;
            params[i] -= cfg.lr * (m[i] / b1t) / (std::sqrt(v[i] / b2t) + cfg.adam_eps);
        }

        report.loss_curve.push_back(batch_loss);
        running += batch_loss;
        if (++window == win_size) {
            const double avg = running / window;
            if (report.running_loss_first == 0.0 && step <= win_size)
                report.running_loss_first = avg;
            report.running_loss_last = avg;
            running = 0.0;
            window = 0;
        }
        if (cfg.log_every > 0 && step % cfg.log_every == 0)
            std::fprintf(stderr, "train step %d/%d  loss %.4f\n", step, cfg.steps,
                         batch_loss);
    }
    if (report.running_loss_first == 0.0 && !report.loss_curve.empty())
        report.running_loss_first = report.loss_curve.front();
    if (report.running_loss_last == 0.0 && !report.loss_curve.empty())
        report.running_loss_last = report.loss_curve.back();
    return report;
}

double mean_loss_at(const std::vector<ImageSample>& samples, const ConvDenoiser& f,
                    const NoiseSchedule& sched, int t, uint64_t seed,
                    bool use_labels, int threads) {
    if (samples.empty()) throw std::invalid_argument("mean_loss_at: empty sample set");
    const int n_threads = resolve_threads(threads);
    std::vector<double> losses(samples.size(), 0.0);
    auto worker = [&](int wi) {
        for (size_t i = static_cast<size_t>(wi); i < samples.size();
             i += static_cast<size_t>(n_threads)) {
            const auto& s = samples[i];
            Rng rng = derive_rng(seed, "mean_loss:" + s.sample_id);
            Tensor eps = rng.normal_tensor(s.pixels.channels(), s.pixels.height(),
                                           s.pixels.width());
            std::optional<int> cond = use_labels ? s.label : std::nullopt;
            losses[i] = denoising_loss(s.pixels, t, eps, f, sched, cond);
        }
    };
    if (n_threads == 1) {
        worker(0);
    } else {
        std::vector<std::thread> pool;
        for (int wi = 0; wi < n_threads; ++wi) pool.emplace_back(worker, wi);
        for (auto& th : pool) th.join();
    }
    double sum = 0.0;
    for (double l : losses) sum += l;
    return sum / static_cast<double>(samples.size());
}

}  // namespace cdi
