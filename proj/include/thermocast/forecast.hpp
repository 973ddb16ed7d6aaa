#pragma once

#include <cstddef>
#include <vector>

namespace thermocast {

/// H-step indoor temperature forecast. step_std is zero for deterministic
/// models; cum_std is the running sum of step_std.
struct ForecastResult {
    std::vector<double> mean;
    std::vector<double> step_std;
    std::vector<double> cum_std;
    std::size_t n_samples = 1;

    std::size_t horizon() const { return mean.size(); }

    void accumulate() {
        cum_std.resize(step_std.size());
        double run = 0.0;
        for (std::size_t k = 0; k < step_std.size(); ++k) {
            run += step_std[k];
            cum_std[k] = run;
        }
    }
};

}  // namespace thermocast
