#include "olts/config.hpp"
#include "olts/dataset.hpp"
#include "olts/harness.hpp"
#include "olts/training.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

using namespace olts;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / "olts_test_harness" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::vector<double> column(const fs::path& csv, std::size_t col) {
    std::ifstream f(csv);
    std::string line;
    std::getline(f, line);
    std::vector<double> out;
    while (std::getline(f, line)) {
        std::stringstream ss(line);
        std::string cell;
        for (std::size_t i = 0; i <= col; ++i) std::getline(ss, cell, ',');
        out.push_back(std::stod(cell));
    }
    return out;
}

dataset::Manifest lorenz_manifest(std::uint64_t count) {
    return {"e2_lorenz", "lorenz", solvers::param_names(solvers::Kind::Lorenz), {}, "monte_carlo", count, {3}, 0, 1};
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() && (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

config::RunConfig tiny_lorenz() {
    auto cfg = config::preset(config::Preset::E2Lorenz);
    cfg.offline.trajectories = 3;
    cfg.trainer.model.hidden = {8};
    cfg.trainer.sgd.batch_size = 16;
    cfg.trainer.sgd.max_batches = 1000;
    cfg.trainer.validation_trajectories = 2;
    cfg.trainer.validate_every = 400;
    return cfg;
}

}  // namespace

TEST_CASE("dataset round trip preserves every double bitwise") {
    const auto dir = fresh_dir("roundtrip");
    std::vector<double> awkward{0.1,
                                -0.0,
                                std::numeric_limits<double>::denorm_min(),
                                std::numeric_limits<double>::max(),
                                std::nextafter(1.0, 2.0),
                                -1e-300};
    dataset::Record a{7, {28.0, 1.0 / 3.0, -2.5, 1e17}, 2, 3, awkward};
    dataset::Record b{9, {0.0, 0.0, 0.0, 0.0}, 0, 3, {}};
    {
        dataset::Writer w(dir, lorenz_manifest(0));
        w.append(a);
        w.append(b);
        w.close();
    }
    const auto ds = dataset::read(dir);
    CHECK(ds.manifest.count == 2);
    REQUIRE(ds.records.size() == 2);
    CHECK(ds.records[0].sim_id == 7);
    CHECK(same_bits(ds.records[0].params, a.params));
    CHECK(same_bits(ds.records[0].fields, a.fields));
    CHECK(ds.records[1] == b);
}

TEST_CASE("dataset reader rejects damaged files") {
    const auto dir = fresh_dir("damaged");
    {
        dataset::Writer w(dir, lorenz_manifest(0));
        w.append({1, {28, 1, 1, 1}, 2, 3, {1, 2, 3, 4, 5, 6}});
        w.close();
    }
    const auto data = dir / dataset::kDataFile;
    const auto bytes = slurp(data);

    SUBCASE("truncated record") {
        std::ofstream(data, std::ios::binary | std::ios::trunc).write(bytes.data(), bytes.size() - 5);
        CHECK_THROWS_AS(dataset::read(dir), dataset::DatasetError);
    }
    SUBCASE("trailing bytes") {
        std::ofstream(data, std::ios::binary | std::ios::app) << "x";
        CHECK_THROWS_AS(dataset::read(dir), dataset::DatasetError);
    }
    SUBCASE("bad magic") {
        auto copy = bytes;
        copy[0] = 'X';
        std::ofstream(data, std::ios::binary | std::ios::trunc) << copy;
        CHECK_THROWS_AS(dataset::read(dir), dataset::DatasetError);
    }
    SUBCASE("manifest count disagrees") {
        auto text = slurp(dir / dataset::kManifestFile);
        const auto at = text.find("\"count\": 1");
        REQUIRE(at != std::string::npos);
        text.replace(at, 10, "\"count\": 2");
        std::ofstream(dir / dataset::kManifestFile, std::ios::trunc) << text;
        CHECK_THROWS_AS(dataset::read(dir), dataset::DatasetError);
    }
}

TEST_CASE("writer rejects a record whose fields do not fill t_count rows") {
    dataset::Writer w(fresh_dir("ragged"), lorenz_manifest(0));
    CHECK_THROWS_AS(w.append({1, {28, 1, 1, 1}, 2, 3, {1, 2, 3}}), dataset::DatasetError);
}

TEST_CASE("offline generation of the heat preset") {
    auto cfg = config::preset(config::Preset::E1Heat);
    cfg.offline.trajectories = 100;
    const auto dir = fresh_dir("heat100");
    const auto m = harness::offline_generate(cfg, dir);
    CHECK(m.count == 100);
    CHECK(m.field_shape == std::vector<std::uint32_t>{32, 32});
    const auto ds = dataset::read(dir);
    REQUIRE(ds.records.size() == 100);
    for (const auto& r : ds.records) {
        CHECK(r.t_count == 101);
        CHECK(r.field_dim == 1024);
    }
}

TEST_CASE("offline generation of the lorenz preset is reproducible") {
    auto cfg = config::preset(config::Preset::E2Lorenz);
    cfg.offline.trajectories = 10;
    const auto a = fresh_dir("lorenz_a"), b = fresh_dir("lorenz_b");
    harness::offline_generate(cfg, a);
    harness::offline_generate(cfg, b);
    const auto ds = dataset::read(a);
    REQUIRE(ds.records.size() == 10);
    for (const auto& r : ds.records) CHECK(r.t_count == 2001);
    CHECK(slurp(a / dataset::kDataFile) == slurp(b / dataset::kDataFile));
    CHECK(slurp(a / dataset::kManifestFile) == slurp(b / dataset::kManifestFile));

    cfg.seeds.master = 5;
    cfg.strategy = sampler::MonteCarlo{5};
    const auto c = fresh_dir("lorenz_c");
    harness::offline_generate(cfg, c);
    CHECK(slurp(a / dataset::kDataFile) != slurp(c / dataset::kDataFile));
}

TEST_CASE("subsample") {
    const auto in = fresh_dir("sub_in");
    auto cfg = config::preset(config::Preset::E2Lorenz);
    cfg.offline.trajectories = 3;
    harness::offline_generate(cfg, in);
    const auto original = dataset::read(in);

    SUBCASE("every 1 is the identity") {
        const auto out = fresh_dir("sub_1");
        harness::subsample_dataset(in, out, 1);
        CHECK(slurp(out / dataset::kDataFile) == slurp(in / dataset::kDataFile));
        CHECK(dataset::read(out).manifest == original.manifest);
    }
    SUBCASE("every 100 keeps 21 of 2001 rows") {
        const auto out = fresh_dir("sub_100");
        harness::subsample_dataset(in, out, 100);
        const auto ds = dataset::read(out);
        CHECK(ds.manifest.count == original.manifest.count);
        CHECK(ds.manifest.stride == 100);
        REQUIRE(ds.records.size() == original.records.size());
        for (std::size_t i = 0; i < ds.records.size(); ++i) {
            const auto& r = ds.records[i];
            CHECK(r.t_count == 21);
            for (std::uint32_t row = 0; row < r.t_count; ++row)
                for (std::uint32_t k = 0; k < 3; ++k)
                    CHECK(r.fields[row * 3 + k] == original.records[i].fields[row * 100 * 3 + k]);
        }
    }
    SUBCASE("repeated subsampling keeps solver timesteps on both grids") {
        const auto mid = fresh_dir("sub_4"), out = fresh_dir("sub_4_6");
        harness::subsample_dataset(in, mid, 4);
        harness::subsample_dataset(mid, out, 6);
        const auto ds = dataset::read(out);
        CHECK(ds.manifest.stride == 12);
        CHECK(ds.records[0].t_count == 2000 / 12 + 1);
        CHECK(ds.records[0].fields[3 * 5] == original.records[0].fields[3 * 60]);
    }
    CHECK_THROWS(harness::subsample_dataset(in, fresh_dir("sub_0"), 0));
}

TEST_CASE("offline training marks every epoch end") {
    auto cfg = tiny_lorenz();
    const auto ds_dir = fresh_dir("epochs_ds");
    harness::offline_generate(cfg, ds_dir);
    const auto sub = fresh_dir("epochs_sub");
    harness::subsample_dataset(ds_dir, sub, 100);

    // Autoregressive pairs: each of 3 records holds 21 rows, so 20 pairs.
    const auto out = fresh_dir("epochs_out");
    cfg.trainer.sgd.max_batches = 20;
    const auto r = harness::offline_train(cfg, sub, out);
    CHECK(r.pairs == 60);
    CHECK(r.batches_per_epoch == 4);
    CHECK(r.batches == 20);
    CHECK(r.epoch_ends == std::vector<std::uint64_t>{4, 8, 12, 16, 20});

    const auto csv = out / training::metrics_file(0);
    const auto steps = column(csv, 0), epoch_end = column(csv, 5), epoch = column(csv, 4);
    std::vector<double> marked, marked_epoch;
    for (std::size_t i = 0; i < steps.size(); ++i)
        if (epoch_end[i] == 1) {
            marked.push_back(steps[i]);
            marked_epoch.push_back(epoch[i]);
        }
    CHECK(marked == std::vector<double>{4, 8, 12, 16, 20});
    CHECK(marked_epoch == std::vector<double>{1, 2, 3, 4, 5});
}

TEST_CASE("offline training in direct mode memorizes a single sample") {
    auto cfg = config::preset(config::Preset::E2Lorenz);
    cfg.trainer.model = {{32}, nn::Activation::SiLU, trainer::Mode::Direct, {}};
    cfg.trainer.sgd.batch_size = 1;
    cfg.trainer.sgd.max_batches = 10;
    cfg.trainer.sgd.lr0 = 0.2;
    cfg.trainer.loss_trace = true;
    const auto ds = fresh_dir("one_ds");
    {
        dataset::Writer w(ds, lorenz_manifest(0));
        w.append({0, {20, 14, 15, 16}, 1, 3, {14, 15, 16}});
        w.close();
    }
    const auto out = fresh_dir("one_out");
    const auto r = harness::offline_train(cfg, ds, out);
    CHECK(r.pairs == 1);
    CHECK(r.epoch_ends.size() == 10);
    const auto loss = column(out / training::loss_trace_file(0), 1);
    REQUIRE(loss.size() == 10);
    for (std::size_t i = 1; i < loss.size(); ++i) CHECK(loss[i] <= loss[i - 1]);
    CHECK(loss.back() < 1e-3 * loss.front());
}

TEST_CASE("offline training with a fixed shuffle seed repeats its loss trace") {
    auto cfg = tiny_lorenz();
    cfg.trainer.loss_trace = true;
    cfg.trainer.sgd.max_batches = 300;
    const auto ds = fresh_dir("repeat_ds");
    harness::offline_generate(cfg, ds);
    const auto a = fresh_dir("repeat_a"), b = fresh_dir("repeat_b");
    harness::offline_train(cfg, ds, a);
    harness::offline_train(cfg, ds, b);
    const auto trace = slurp(a / training::loss_trace_file(0));
    CHECK(trace.size() > 300 * 4);
    CHECK(trace == slurp(b / training::loss_trace_file(0)));
    CHECK(slurp(a / training::checkpoint_file(0)) == slurp(b / training::checkpoint_file(0)));
}

TEST_CASE("offline training rejects a dataset built for another model") {
    auto cfg = tiny_lorenz();
    const auto ds = fresh_dir("mismatch_ds");
    harness::offline_generate(cfg, ds);
    auto heat = config::preset(config::Preset::E1Heat);
    CHECK_THROWS_AS(harness::offline_train(heat, ds, fresh_dir("mismatch_out")), trainer::DimensionMismatch);
}

TEST_CASE("gain percent") {
    // Published gains carry one decimal.
    CHECK(std::abs(harness::gain_percent(0.766, 2.46) - 68.9) <= 0.05);
    CHECK(std::abs(harness::gain_percent(0.0739, 0.0876) - 15.6) <= 0.05);
    CHECK(harness::gain_percent(0.5, 0.5) == 0.0);
    CHECK(harness::gain_percent(0.6, 0.5) < 0.0);
}

TEST_CASE("comparison table and metrics reader") {
    const auto dir = fresh_dir("compare");
    std::ofstream(dir / "off.csv") << "step,lr,train_loss,val_rmse,epoch,epoch_end\n"
                                      "10,0.1,3.0,3.5,0,0\n"
                                      "20,0.1,2.0,2.46,1,1\n";
    std::ofstream(dir / "on.csv") << "step,lr,train_loss,val_rmse,epoch,epoch_end\n"
                                     "20,0.1,0.5,0.766,0,0\n";
    std::ofstream(dir / "bad.csv") << "step,lr,train_loss\n20,0.1,0.5\n";

    const auto off = harness::read_final_metrics(dir / "off.csv", "offline");
    CHECK(off.final_step == 20);
    CHECK(off.final_val_rmse == 2.46);
    CHECK(off.final_train_loss == 2.0);
    const auto on = harness::read_final_metrics(dir / "on.csv", "online");
    CHECK_THROWS_AS(harness::read_final_metrics(dir / "bad.csv", "bad"), std::runtime_error);

    std::ostringstream md, csv;
    harness::write_comparison({off, on}, md, csv);
    CHECK(md.str().find("| online | 20 | 0.766 | 68.9 |") != std::string::npos);
    CHECK(md.str().find("| offline | 20 | 2.46 | 0.0 |") != std::string::npos);
    CHECK(csv.str().rfind("run,final_step,val_rmse,gain_percent\n", 0) == 0);
    CHECK_THROWS(harness::write_comparison({off}, md, csv));
}

TEST_CASE("batch statistics summary matches a two-pass computation") {
    const auto dir = fresh_dir("stats");
    const std::vector<std::vector<double>> means{{0.1, 0.5}, {0.4, 0.5}, {0.7, 0.5}, {0.2, 0.5}};
    const std::vector<std::vector<double>> stds{{0.3, 0.0}, {0.2, 0.0}, {0.1, 0.0}, {0.2, 0.0}};
    {
        std::ofstream f(dir / "stats.csv");
        f << "step,mean_rho,mean_t,std_rho,std_t\n";
        f.precision(17);
        for (std::size_t i = 0; i < means.size(); ++i)
            f << i + 1 << ',' << means[i][0] << ',' << means[i][1] << ',' << stds[i][0] << ',' << stds[i][1] << '\n';
    }
    const auto s = harness::summarize_batch_stats(dir / "stats.csv");
    REQUIRE(s.size() == 2);
    CHECK(s[0].feature == "rho");
    CHECK(s[1].feature == "t");

    double m = 0, ss = 0, sd = 0;
    for (const auto& row : means) m += row[0];
    m /= 4;
    for (const auto& row : means) ss += (row[0] - m) * (row[0] - m);
    for (const auto& row : stds) sd += row[0];
    CHECK(s[0].mean_of_means == doctest::Approx(m).epsilon(1e-12));
    CHECK(s[0].std_of_means == doctest::Approx(std::sqrt(ss / 4)).epsilon(1e-12));
    CHECK(s[0].mean_of_stds == doctest::Approx(sd / 4).epsilon(1e-12));
    CHECK(s[1].std_of_means == 0.0);
    CHECK(s[1].mean_of_stds == 0.0);
}

TEST_CASE("client parameter parsing") {
    const auto cfg = config::preset(config::Preset::E2Lorenz);
    const auto p = harness::parse_params(cfg, "rho=20,x0=1.5,y0=-2,z0=3e1", 0);
    CHECK(p.values == std::vector<double>{20, 1.5, -2, 30});

    const auto a = harness::parse_params(cfg, "rho=40", 11);
    const auto b = harness::parse_params(cfg, "rho=40", 11);
    CHECK(a.values == b.values);
    CHECK(a.at("rho") == 40);

    CHECK_THROWS_AS(harness::parse_params(cfg, "rho=40,w=1", 0), config::ConfigError);
    CHECK_THROWS_AS(harness::parse_params(cfg, "x0=1", 0), config::ConfigError);
    CHECK_THROWS_AS(harness::parse_params(cfg, "rho=forty", 0), config::ConfigError);
    CHECK_THROWS_AS(harness::parse_params(cfg, "rho", 0), config::ConfigError);
}

TEST_CASE("serialized runs are fully determined by the config") {
    auto cfg = tiny_lorenz();
    cfg.ensemble_size = 5;
    cfg.concurrency = 2;
    cfg.shards = 2;
    cfg.trainer.sgd.max_batches = 150;
    cfg.trainer.validate_every = 25;
    cfg.trainer.log_batch_stats = true;
    cfg.buffer = {buffer::ReadOnceRandom{32}, 512};
    const auto a = fresh_dir("serial_a"), b = fresh_dir("serial_b");
    const auto ra = harness::run_serialized(cfg, a);
    const auto rb = harness::run_serialized(cfg, b);
    CHECK(ra.batches_per_shard == std::vector<std::uint64_t>{150, 150});
    CHECK(ra.counters.samples_received == rb.counters.samples_received);
    CHECK(ra.clients_per_shard == rb.clients_per_shard);
    for (std::uint32_t k = 0; k < 2; ++k) {
        CHECK(slurp(a / training::metrics_file(k)) == slurp(b / training::metrics_file(k)));
        CHECK(slurp(a / training::checkpoint_file(k)) == slurp(b / training::checkpoint_file(k)));
        CHECK(slurp(a / training::batch_stats_file(k)) == slurp(b / training::batch_stats_file(k)));
    }
    CHECK(fs::exists(a / "server_report.json"));
}

TEST_CASE("serialized run with the ensemble stop condition sees every sim complete") {
    auto cfg = tiny_lorenz();
    cfg.ensemble_size = 4;
    cfg.concurrency = 3;
    cfg.server.stop = config::StopCondition::Ensemble;
    cfg.buffer = {buffer::ReadOnceRandom{32}, 512};
    const auto r = harness::run_serialized(cfg, fresh_dir("serial_ensemble"));
    CHECK(r.completed.size() == 4);
    CHECK(r.counters.unique_timesteps == 4 * 2001);
    CHECK(r.counters.buffer_insertions == 4 * 2001);
    CHECK(r.counters.trajectory_gaps == 0);
    CHECK(r.stop_reason == "ensemble");
    CHECK(r.batches_trained() > 0);
}
