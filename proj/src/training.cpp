#include "olts/training.hpp"

#include "olts/sampler.hpp"
#include "olts/solvers.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>

namespace olts::training {

namespace {

std::string num(double v) {
    if (std::isnan(v)) return "nan";
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

trainer::Scheme scheme_for(const sampler::Distribution& d) {
    return std::visit(
        [](const auto& e) -> trainer::Scheme {
            using T = std::decay_t<decltype(e)>;
            if constexpr (std::is_same_v<T, sampler::UniformReal>) {
                return trainer::MinMax{e.lo, e.hi};
            } else if constexpr (std::is_same_v<T, sampler::Normal>) {
                return trainer::Standardize{e.mean, e.std};
            } else if constexpr (std::is_same_v<T, sampler::DiscreteSet>) {
                const auto [lo, hi] = std::minmax_element(e.values.begin(), e.values.end());
                if (*hi > *lo) return trainer::MinMax{*lo, *hi};
                return trainer::Standardize{*lo, 1.0};
            } else {
                return trainer::Standardize{e.value, 1.0};
            }
        },
        d);
}

std::vector<trainer::Scheme> standardize_rows(const trainer::Matrix& data, Eigen::Index first_row) {
    const auto fitted = trainer::Normalizer::fit_standardize(data.bottomRows(data.rows() - first_row));
    return fitted.schemes();
}

}  // namespace

std::vector<Sample> validation_trajectories(const config::RunConfig& cfg, std::uint32_t count) {
    const sampler::Strategy held_out = sampler::MonteCarlo{cfg.seeds.validation};
    std::vector<Sample> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        Sample s;
        s.sim_id = i;
        s.params = sampler::next_params(cfg.space, held_out, i, count);
        FullTrajectory traj;
        solvers::run_trajectory(cfg.kind, s.params, cfg.solver, [&](std::uint32_t, std::span<const double> f) {
            traj.fields.emplace_back(f.begin(), f.end());
        });
        s.unit = std::move(traj);
        out.push_back(std::move(s));
    }
    return out;
}

TrainingSetup make_training_setup(const config::RunConfig& cfg) {
    TrainingSetup setup;
    const auto probe = solvers::make_simulation(
        cfg.kind, sampler::next_params(cfg.space, sampler::MonteCarlo{cfg.seeds.validation}, 0, 1), cfg.solver);
    setup.field_shape = probe->field_shape();
    std::uint32_t field_dim = 1;
    for (auto d : setup.field_shape) field_dim *= d;

    auto& spec = setup.spec;
    spec.mode = cfg.trainer.model.mode;
    spec.input_params = cfg.input_params();
    spec.field_dim = field_dim;
    spec.t_last = probe->steps_total() - 1;

    setup.validation = trainer::make_pairs(validation_trajectories(cfg, cfg.trainer.validation_trajectories), spec);

    std::vector<trainer::Scheme> inputs;
    for (const auto& name : spec.input_params) {
        inputs.push_back(scheme_for(cfg.space.find(name)->dist));
        setup.feature_names.push_back(name);
    }
    if (spec.mode == trainer::Mode::Direct) {
        inputs.push_back(trainer::MinMax{0.0, 1.0});
        setup.feature_names.push_back("t");
    } else {
        const auto fields = standardize_rows(setup.validation.inputs, static_cast<Eigen::Index>(inputs.size()));
        inputs.insert(inputs.end(), fields.begin(), fields.end());
        for (std::uint32_t i = 0; i < field_dim; ++i) setup.feature_names.push_back("u" + std::to_string(i));
    }
    setup.input_norm = trainer::Normalizer(std::move(inputs));
    setup.target_norm = trainer::Normalizer::fit_standardize(setup.validation.targets);

    setup.dims.push_back(static_cast<int>(spec.input_dim()));
    for (int h : cfg.trainer.model.hidden) setup.dims.push_back(h);
    setup.dims.push_back(static_cast<int>(spec.output_dim()));
    setup.activation = cfg.trainer.model.activation;
    return setup;
}

std::uint64_t model_seed(const config::RunConfig& cfg, std::uint32_t shard) {
    return sampler::splitmix64(cfg.seeds.master ^ (0x6d6f64656cull + shard));
}
std::uint64_t batch_seed(const config::RunConfig& cfg, std::uint32_t shard) {
    return sampler::splitmix64(cfg.seeds.master ^ (0x6261746368ull + shard));
}
std::uint64_t buffer_seed(const config::RunConfig& cfg, std::uint32_t shard) {
    return sampler::splitmix64(cfg.seeds.master ^ (0x6275666665ull + shard));
}

std::string metrics_file(std::uint32_t shard) { return "metrics_shard" + std::to_string(shard) + ".csv"; }
std::string checkpoint_file(std::uint32_t shard) { return "checkpoint_shard" + std::to_string(shard) + ".bin"; }
std::string batch_stats_file(std::uint32_t shard) { return "batch_stats_shard" + std::to_string(shard) + ".csv"; }
std::string loss_trace_file(std::uint32_t shard) { return "loss_trace_shard" + std::to_string(shard) + ".csv"; }

ShardTrainer::ShardTrainer(const TrainingSetup& setup, const config::RunConfig& cfg, std::uint32_t shard,
                           const std::filesystem::path& out_dir)
    : setup_(setup),
      cfg_(cfg),
      shard_(shard),
      dir_(out_dir),
      model_(setup.dims, setup.activation, model_seed(cfg, shard)),
      rng_(batch_seed(cfg, shard)) {
    std::filesystem::create_directories(dir_);
    auto open = [&](std::ofstream& f, const std::string& name) {
        f.open(dir_ / name, std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write " + (dir_ / name).string());
    };
    open(metrics_, metrics_file(shard));
    metrics_ << "step,lr,train_loss,val_rmse,epoch,epoch_end\n";
    if (cfg.trainer.log_batch_stats) {
        open(stats_, batch_stats_file(shard));
        stats_ << "step";
        for (const auto& n : setup.feature_names) stats_ << ",mean_" << n;
        for (const auto& n : setup.feature_names) stats_ << ",std_" << n;
        stats_ << '\n';
    }
    if (cfg.trainer.loss_trace) {
        open(trace_, loss_trace_file(shard));
        trace_ << "step,loss\n";
    }
}

template <typename F>
trainer::StepResult ShardTrainer::guarded(F&& step_fn) {
    try {
        return record(step_fn());
    } catch (const trainer::TrainingDiverged&) {
        if (model_.all_finite()) checkpoint();
        throw;
    }
}

trainer::StepResult ShardTrainer::train(const buffer::Batch& batch) {
    return guarded([&] {
        return trainer::train_on_batch(model_, batch, setup_.spec, setup_.input_norm, setup_.target_norm,
                                       cfg_.trainer.sgd, step_);
    });
}

trainer::StepResult ShardTrainer::train(const trainer::PairSet& pairs) {
    return guarded([&] {
        return trainer::train_on_pairs(model_, pairs, setup_.input_norm, setup_.target_norm, cfg_.trainer.sgd,
                                       step_);
    });
}

trainer::StepResult ShardTrainer::record(trainer::StepResult r) {
    if (r.pairs > 0) {
        window_sum_ += r.loss;
        ++window_count_;
        losses_.push_back(r.loss);
        if (trace_.is_open()) trace_ << step_ << ',' << num(r.loss) << '\n';
        if (stats_.is_open()) {
            stats_ << step_;
            for (double m : r.stats.mean) stats_ << ',' << num(m);
            for (double s : r.stats.std) stats_ << ',' << num(s);
            stats_ << '\n';
        }
    }
    ++step_;
    if (auto it = epoch_ends_.find(step_); it != epoch_ends_.end()) {
        epoch_ = it->second;
        write_row(true);
    } else if (step_ % cfg_.trainer.validate_every == 0) {
        write_row(false);
    }
    if (step_ % cfg_.trainer.checkpoint_every == 0) checkpoint();
    return r;
}

void ShardTrainer::write_row(bool epoch_end) {
    const double train_loss = window_count_ > 0 ? window_sum_ / static_cast<double>(window_count_)
                                                : std::numeric_limits<double>::quiet_NaN();
    const double rmse = trainer::validate(model_, setup_.validation, setup_.input_norm, setup_.target_norm);
    const double lr = cfg_.trainer.sgd.lr(step_ > 0 ? step_ - 1 : 0);
    metrics_ << step_ << ',' << num(lr) << ',' << num(train_loss) << ',' << num(rmse) << ',' << epoch_ << ','
             << (epoch_end ? 1 : 0) << '\n';
    metrics_.flush();
    window_sum_ = 0.0;
    window_count_ = 0;
    last_row_step_ = step_;
    wrote_any_row_ = true;
}

void ShardTrainer::schedule_epoch_end(std::uint64_t step, std::uint32_t epoch) { epoch_ends_[step] = epoch; }

void ShardTrainer::checkpoint() {
    trainer::checkpoint_save(model_, cfg_.trainer.sgd, step_, dir_ / checkpoint_file(shard_));
}

void ShardTrainer::finish() {
    if (finished_) return;
    finished_ = true;
    if (!wrote_any_row_ || last_row_step_ != step_) write_row(false);
    checkpoint();
    stats_.close();
    trace_.close();
    metrics_.close();
}

}  // namespace olts::training
