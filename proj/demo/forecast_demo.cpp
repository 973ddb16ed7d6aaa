// Simulates one building, fits the gray-box model and a small LSTM+BNN on the
// first 80% of the season, then prints a 48-hour forecast from the first test
// hour next to the measured temperature.

#include <cstdio>
#include <random>

#include "thermocast/experiment.hpp"
#include "thermocast/graybox.hpp"
#include "thermocast/neural.hpp"
#include "thermocast/simulator.hpp"

using namespace thermocast;

int main() {
    const SiteMeta site{47.4, 8.5, 1, {}};
    auto cfg = sim::default_config(7);
    cfg.envelope_capacitance_factor = 6.0;  // something the gray-box cannot represent
    const auto data = sim::simulate_building(cfg, site, 24 * 120);

    experiment::EvalSettings settings;
    settings.test_instants = 1;
    const auto b = experiment::prepare_building("demo", data, settings);
    std::printf("%zu hourly records, %zu training windows, forecast origin %zu\n", data.size(), b.train.size(),
                b.origins.front());

    const auto post = graybox::fit_variational(b.train_data);
    std::printf("gray-box: theta1 %.4f (true %.4f)  theta2 %.4f (true %.4f)  %zu VMP iterations\n", post.coeffs[0].mean,
                cfg.theta1, post.coeffs[1].mean, cfg.theta2, post.iterations);

    nn::TrainConfig tc;
    tc.hidden = 16;
    tc.epochs = 80;
    tc.learning_rate = 5e-3;
    tc.seed = 1;
    const auto bnn = nn::train(nn::ModelKind::lstm_bnn, b.train, b.val, tc);
    std::printf("lstm-bnn: best validation MAE %.4f at epoch %zu\n\n", bnn.best_val_loss, bnn.best_epoch);

    std::mt19937_64 rng(3);
    const auto gb = experiment::forecast_graybox(post, b, settings.horizon).front();
    const auto nn_fc = experiment::forecast_neural(bnn, b, settings.horizon, 50, rng).front();

    std::printf("step  measured  gray-box (+-std)   lstm-bnn (+-cum std)\n");
    for (std::size_t j = 0; j < settings.horizon; j += 3)
        std::printf("%4zu  %8.2f  %8.2f (%.2f)  %8.2f (%.2f)\n", j + 1, b.truth(0, static_cast<Eigen::Index>(j)), gb.mean[j],
                    gb.step_std[j], nn_fc.mean[j], nn_fc.cum_std[j]);
}
