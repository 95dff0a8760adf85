#include "udream/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"
#include "udream/autodiff.hpp"
#include "udream/baselines.hpp"
#include "udream/data.hpp"
#include "udream/metrics.hpp"
#include "udream/training.hpp"

namespace udream::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kRunConfig = "run.json";

struct Globals {
    uint64_t seed = 0;
    std::string out = ".";
    int threads = 1;
    std::string precision = "f64";
};

struct GenArgs {
    int64_t n = 60;
    int64_t size = 64;
    double sigma = 2.5;
    double rate = 0.25;
    double center = 0.08;
    std::string snr = "40";
    std::optional<int64_t> points;
    std::optional<double> delta;
    bool peak_normalize = false;
    std::string images;
};

struct TrainArgs {
    std::string data;
    std::string method = "udream";
    train::TrainConfig cfg;
    nets::NetworkConfig net;
};

struct BaselineArgs {
    std::string data;
    std::string method = "tv";
    std::optional<double> tau;
    std::vector<double> grid;
    std::string split = "test";
};

struct EvalArgs {
    std::string data;
    std::string checkpoint;
    std::string split = "test";
};

struct ReportArgs {
    std::vector<std::string> runs;
    std::string data;
    std::vector<double> grid;
    int64_t panels = 3;
};

double parse_snr(const std::string& s) {
    if (s == "inf" || s == "none") return mri::kNoiseDisabled;
    size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("bad --snr value '" + s + "'");
    return v;
}

data::Split split_arg(const std::string& s) { return data::parse_split(s); }

void write_json(const fs::path& path, const json& j) {
    const std::string text = j.dump(2) + "\n";
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    data::write_file(path, std::vector<uint8_t>(text.begin(), text.end()));
}

json read_json(const fs::path& path) {
    const auto bytes = data::read_file(path);
    try {
        return json::parse(bytes.begin(), bytes.end());
    } catch (const json::exception& e) {
        throw data::FormatError(path.string() + ": " + e.what());
    }
}

// ---- subcommands ----

int cmd_gen_data(const Globals& g, const GenArgs& a, std::ostream& out) {
    data::DatasetConfig cfg;
    cfg.size = a.size;
    cfg.seed = g.seed;
    cfg.deform.sigma = a.sigma;
    // Seed-point density and displacement bound scale with the image side (2000 points and 10 px at 256).
    const double scale = static_cast<double>(a.size) / 256.0;
    cfg.deform.points = a.points.value_or(static_cast<int64_t>(std::lround(2000.0 * scale * scale)));
    const double delta = a.delta.value_or(10.0 * scale);
    cfg.deform.delta_min = -delta;
    cfg.deform.delta_max = delta;
    cfg.deform.peak_normalize = a.peak_normalize;
    cfg.mask.rate = a.rate;
    cfg.mask.center_fraction = a.center;
    cfg.snr_db = parse_snr(a.snr);

    std::vector<mri::ComplexImage> images;
    int64_t n = a.n;
    if (!a.images.empty()) {
        images = data::ingest_images(a.images);
        if (images.empty()) throw std::runtime_error(a.images + ": no images found");
        n = static_cast<int64_t>(images.size());
        cfg.source = "ingested";
    }
    if (n < 3) throw std::invalid_argument("need at least 3 samples for train/val/test");
    cfg.n_val = std::max<int64_t>(1, std::lround(0.1 * static_cast<double>(n)));
    cfg.n_test = cfg.n_val;
    cfg.n_train = n - cfg.n_val - cfg.n_test;
    const data::Dataset ds = images.empty() ? data::Dataset::build_phantoms(cfg) : data::Dataset::build(images, cfg);
    ds.save(g.out);
    out << "wrote " << cfg.total() << " samples (" << cfg.n_train << "/" << cfg.n_val << "/" << cfg.n_test << ") to "
        << g.out << "\n";
    return kExitOk;
}

json net_json(const nets::NetworkConfig& n) {
    return json{{"channels", n.channels}, {"blocks", n.blocks}, {"levels", n.levels},
                {"reg_channels", n.reg_channels}, {"seed", n.seed}};
}

int cmd_train(const Globals& g, TrainArgs a, std::ostream& out) {
    a.cfg.method = train::parse_method(a.method);
    a.cfg.seed = g.seed;
    a.net.seed = g.seed;
    const auto train_set = data::Dataset::load(a.data, data::Dataset::Access::Training);
    const auto eval_set = data::Dataset::load(a.data, data::Dataset::Access::Evaluation);
    const PairBatch pairs = train_set.pairs(data::Split::Train);
    const auto validation = eval_set.evaluation(data::Split::Val);

    const fs::path dir = g.out;
    fs::create_directories(dir);
    write_json(dir / kRunConfig, json{{"method", a.method},
                                      {"data", a.data},
                                      {"dataset_checksum", train_set.checksum()},
                                      {"steps", a.cfg.steps},
                                      {"batch_size", a.cfg.batch_size},
                                      {"alternation_period", a.cfg.alternation_period},
                                      {"warmup_steps", a.cfg.warmup_steps},
                                      {"lr_rec", a.cfg.lr_rec},
                                      {"lr_reg", a.cfg.lr_reg},
                                      {"lambda", a.cfg.lambda},
                                      {"reverse_augment", a.cfg.reverse_augment},
                                      {"precision", g.precision},
                                      {"seed", g.seed},
                                      {"network", net_json(a.net)}});

    train::MetricLog partial;
    auto sink = [&](const train::Checkpoint& ck, const train::MetricRow& row) {
        data::save_checkpoint(ck, dir / data::kCheckpointFile);
        partial.append(row);
        data::write_metrics(partial, dir / data::kMetricsFile);
        out << "step " << row.step << "  L_rec " << data::format_number(row.l_rec) << "  L_reg "
            << data::format_number(row.l_reg) << "  psnr " << data::format_number(row.psnr) << "  ssim "
            << data::format_number(row.ssim) << "\n";
    };
    const auto result = train::train(a.cfg, a.net, pairs, validation, sink);
    data::save_checkpoint(result.checkpoint, dir / data::kCheckpointFile);
    data::write_metrics(result.log, dir / data::kMetricsFile);
    return kExitOk;
}

int cmd_baseline(const Globals& g, const BaselineArgs& a, std::ostream& out) {
    const auto ds = data::Dataset::load(a.data, data::Dataset::Access::Evaluation);
    const auto samples = ds.evaluation(split_arg(a.split));
    if (samples.empty()) throw std::runtime_error("split '" + a.split + "' is empty");
    json summary{{"method", a.method}, {"split", a.split}};
    std::vector<mri::ComplexImage> recon;
    if (a.method == "zf") {
        for (const auto& s : samples) recon.push_back(baselines::zero_filled_sample(s));
    } else if (a.method == "tv") {
        double tau;
        if (a.tau) {
            tau = *a.tau;
        } else {
            const auto val = ds.evaluation(data::Split::Val);
            const auto search = baselines::grid_search_tau(
                val, a.grid.empty() ? baselines::default_tau_grid() : a.grid, {}, g.threads);
            tau = search.best_tau;
            std::vector<std::vector<double>> rows;
            for (size_t i = 0; i < search.taus.size(); ++i) rows.push_back({search.taus[i], search.mean_psnr[i]});
            data::export_csv({"tau", "mean_psnr"}, rows, fs::path(g.out) / "tau_search.csv");
        }
        summary["tau"] = tau;
        baselines::TVSolverConfig cfg;
        cfg.tau = tau;
        for (const auto& s : samples) recon.push_back(baselines::tv_reconstruct_sample(s, cfg));
    } else {
        throw std::invalid_argument("unknown baseline method '" + a.method + "' (expected zf or tv)");
    }
    std::vector<std::vector<std::string>> rows;
    double mp = 0.0, ms = 0.0;
    for (size_t i = 0; i < samples.size(); ++i) {
        const double p = metrics::psnr(recon[i], samples[i].x_ref), s = metrics::ssim(recon[i], samples[i].x_ref);
        mp += p;
        ms += s;
        rows.push_back({samples[i].pair.id, data::format_number(p), data::format_number(s)});
    }
    mp /= static_cast<double>(samples.size());
    ms /= static_cast<double>(samples.size());
    summary["mean_psnr"] = mp;
    summary["mean_ssim"] = ms;
    data::export_csv({"id", "psnr", "ssim"}, rows, fs::path(g.out) / ("baseline_" + a.method + ".csv"));
    write_json(fs::path(g.out) / ("baseline_" + a.method + ".json"), summary);
    out << a.method << ": psnr " << data::format_number(mp) << "  ssim " << data::format_number(ms) << "\n";
    return kExitOk;
}

int cmd_eval(const Globals& g, const EvalArgs& a, std::ostream& out) {
    const auto ds = data::Dataset::load(a.data, data::Dataset::Access::Evaluation);
    const auto samples = ds.evaluation(split_arg(a.split));
    if (samples.empty()) throw std::runtime_error("split '" + a.split + "' is empty");
    fs::path ckpath = a.checkpoint;
    if (fs::is_directory(ckpath)) ckpath /= data::kCheckpointFile;
    const auto ck = data::load_checkpoint(ckpath);
    const auto e = train::evaluate(ck.net, ck.theta, samples);
    std::vector<std::vector<std::string>> rows;
    for (size_t i = 0; i < samples.size(); ++i) {
        rows.push_back({samples[i].pair.id, data::format_number(e.samples[i].psnr), data::format_number(e.samples[i].ssim)});
    }
    rows.push_back({"mean", data::format_number(e.mean_psnr), data::format_number(e.mean_ssim)});
    data::export_csv({"id", "psnr", "ssim"}, rows, fs::path(g.out) / "eval.csv");
    out << "psnr " << data::format_number(e.mean_psnr) << "  ssim " << data::format_number(e.mean_ssim) << "\n";
    return kExitOk;
}

int cmd_report(const Globals& g, const ReportArgs& a, std::ostream& out) {
    if (a.runs.empty()) throw std::invalid_argument("report needs at least one --runs directory");
    std::string data_dir = a.data;
    struct Run {
        std::string method;
        train::Checkpoint ck;
    };
    std::vector<Run> runs;
    for (const auto& r : a.runs) {
        const json cfg = read_json(fs::path(r) / kRunConfig);
        if (data_dir.empty()) data_dir = cfg.at("data").get<std::string>();
        runs.push_back(Run{cfg.at("method").get<std::string>(), data::load_checkpoint(fs::path(r) / data::kCheckpointFile)});
    }
    const auto ds = data::Dataset::load(data_dir, data::Dataset::Access::Evaluation);
    const auto test = ds.evaluation(data::Split::Test);
    const auto val = ds.evaluation(data::Split::Val);
    if (test.empty()) throw std::runtime_error("test split is empty");

    // method -> per-run reconstructions of the test split
    const std::vector<std::string> order{"zf", "tv", "n2n", "udream"};
    std::map<std::string, std::vector<std::vector<mri::ComplexImage>>> recon;
    std::vector<mri::ComplexImage> zf, tv;
    const auto search = baselines::grid_search_tau(val, a.grid.empty() ? baselines::default_tau_grid() : a.grid, {},
                                                   g.threads);
    baselines::TVSolverConfig tcfg;
    tcfg.tau = search.best_tau;
    for (const auto& s : test) {
        zf.push_back(baselines::zero_filled_sample(s));
        tv.push_back(baselines::tv_reconstruct_sample(s, tcfg));
    }
    recon["zf"].push_back(std::move(zf));
    recon["tv"].push_back(std::move(tv));
    for (const auto& r : runs) recon[r.method].push_back(train::reconstruct(r.ck.net, r.ck.theta, test));

    std::vector<std::vector<std::string>> table, panel_rows;
    for (const auto& m : order) {
        auto it = recon.find(m);
        if (it == recon.end()) continue;
        double mp = 0.0, ms = 0.0;
        size_t count = 0;
        for (const auto& run : it->second)
            for (size_t i = 0; i < test.size(); ++i) {
                mp += metrics::psnr(run[i], test[i].x_ref);
                ms += metrics::ssim(run[i], test[i].x_ref);
                ++count;
            }
        table.push_back({m, std::to_string(it->second.size()), data::format_number(mp / static_cast<double>(count)),
                         data::format_number(ms / static_cast<double>(count))});
        out << m << ": psnr " << table.back()[2] << "  ssim " << table.back()[3] << "\n";
    }
    data::export_csv({"method", "runs", "psnr", "ssim"}, table, fs::path(g.out) / "table.csv");

    // Side-by-side panels: ZF | TV | N2N | U-Dream | GT, all scaled by the groundtruth peak.
    const int64_t count = std::min<int64_t>(a.panels, static_cast<int64_t>(test.size()));
    for (int64_t i = 0; i < count; ++i) {
        const auto& gt = test[static_cast<size_t>(i)].x_ref;
        const int64_t h = gt.height, w = gt.width, cols = 5;
        std::vector<double> canvas(static_cast<size_t>(h * w * cols), 0.0);
        const auto gt_mag = gt.magnitude();
        const double peak = *std::max_element(gt_mag.begin(), gt_mag.end());
        auto place = [&](int64_t col, const std::vector<double>& mag) {
            for (int64_t r = 0; r < h; ++r)
                for (int64_t c = 0; c < w; ++c)
                    canvas[static_cast<size_t>(r * w * cols + col * w + c)] = mag[static_cast<size_t>(r * w + c)];
        };
        for (size_t m = 0; m < order.size(); ++m) {
            auto it = recon.find(order[m]);
            if (it == recon.end()) continue;
            const auto& img = it->second.front()[static_cast<size_t>(i)];
            place(static_cast<int64_t>(m), img.magnitude());
            panel_rows.push_back({test[static_cast<size_t>(i)].pair.id, order[m],
                                  data::format_number(metrics::psnr(img, gt)), data::format_number(metrics::ssim(img, gt))});
        }
        place(4, gt_mag);
        data::export_pgm(canvas, h, w * cols, fs::path(g.out) / ("panel_" + test[static_cast<size_t>(i)].pair.id + ".pgm"), 8,
                         peak);
    }
    data::export_csv({"sample", "method", "psnr", "ssim"}, panel_rows, fs::path(g.out) / "panels.csv");
    write_json(fs::path(g.out) / "tv_tau.json", json{{"best_tau", search.best_tau}, {"taus", search.taus},
                                                      {"mean_psnr", search.mean_psnr}});
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"U-Dream: joint reconstruction and registration from unregistered k-space pairs", "udream"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--seed", g.seed, "Random seed");
    app.add_option("--out", g.out, "Output directory");
    app.add_option("--threads", g.threads, "Worker threads for grid search")->check(CLI::PositiveNumber);
    app.add_option("--precision", g.precision, "Convolution arithmetic")->check(CLI::IsMember({"f32", "f64"}));

    GenArgs gen;
    auto* c_gen = app.add_subcommand("gen-data", "Synthesize a paired measurement dataset");
    c_gen->add_option("--n", gen.n, "Number of samples (split 80/10/10)");
    c_gen->add_option("--size", gen.size, "Image side length");
    c_gen->add_option("--sigma", gen.sigma, "Deformation smoothing std (pixels)");
    c_gen->add_option("--rate", gen.rate, "Sampling rate");
    c_gen->add_option("--center", gen.center, "Fully sampled central fraction");
    c_gen->add_option("--snr", gen.snr, "Measurement SNR in dB, or inf");
    c_gen->add_option("--points", gen.points, "Deformation seed points (default scales with size)");
    c_gen->add_option("--delta", gen.delta, "Seed displacement bound in pixels (default scales with size)");
    c_gen->add_flag("--peak-normalize", gen.peak_normalize, "Rescale each field to peak |displacement| = delta");
    c_gen->add_option("--images", gen.images, "Ingest PGM/raw images from this directory instead of phantoms");

    TrainArgs tr;
    auto* c_train = app.add_subcommand("train", "Train U-Dream or the unregistered N2N baseline");
    c_train->add_option("--data", tr.data, "Dataset directory")->required();
    c_train->add_option("--method", tr.method, "udream or n2n")->check(CLI::IsMember({"udream", "n2n"}));
    c_train->add_option("--steps", tr.cfg.steps, "Training steps");
    c_train->add_option("--batch", tr.cfg.batch_size, "Pairs per step");
    c_train->add_option("--lr-rec", tr.cfg.lr_rec, "Reconstruction learning rate");
    c_train->add_option("--lr-reg", tr.cfg.lr_reg, "Registration learning rate");
    c_train->add_option("--lambda", tr.cfg.lambda, "Field smoothness weight");
    c_train->add_option("--period", tr.cfg.alternation_period, "Batches per network before switching");
    c_train->add_option("--warmup", tr.cfg.warmup_steps, "Initial steps updating only the reconstruction net");
    c_train->add_option("--eval-every", tr.cfg.eval_every, "Validation interval in steps (0: start and end)");
    c_train->add_option("--channels", tr.net.channels, "Reconstruction width");
    c_train->add_option("--blocks", tr.net.blocks, "Residual blocks");
    c_train->add_option("--levels", tr.net.levels, "Registration UNet levels");
    c_train->add_option("--reg-channels", tr.net.reg_channels, "Registration base width (0: same as --channels)");
    bool no_reverse = false;
    c_train->add_flag("--no-reverse", no_reverse, "N2N: train on the given pair order only");

    BaselineArgs bl;
    auto* c_base = app.add_subcommand("baseline", "Zero-filled or TV reconstruction");
    c_base->add_option("--data", bl.data, "Dataset directory")->required();
    c_base->add_option("--method", bl.method, "zf or tv")->check(CLI::IsMember({"zf", "tv"}));
    auto* tau_opt = c_base->add_option("--tau", bl.tau, "TV weight");
    c_base->add_option("--tau-grid", bl.grid, "TV weights to search on the validation split")->delimiter(',')->excludes(tau_opt);
    c_base->add_option("--split", bl.split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));

    EvalArgs ev;
    auto* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint");
    c_eval->add_option("--data", ev.data, "Dataset directory")->required();
    c_eval->add_option("--checkpoint", ev.checkpoint, "Checkpoint file or run directory")->required();
    c_eval->add_option("--split", ev.split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));

    ReportArgs rp;
    auto* c_report = app.add_subcommand("report", "Comparison table and image panels");
    c_report->add_option("--runs", rp.runs, "Training run directories")->required();
    c_report->add_option("--data", rp.data, "Dataset directory (default: from the first run)");
    c_report->add_option("--tau-grid", rp.grid, "TV weights to search")->delimiter(',');
    c_report->add_option("--panels", rp.panels, "Number of test samples to render");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n" << app.help();
        return kExitUsage;
    }
    tr.cfg.reverse_augment = !no_reverse;

    try {
        ad::PrecisionGuard precision(g.precision == "f32" ? ad::Precision::F32 : ad::Precision::F64);
        if (*c_gen) return cmd_gen_data(g, gen, out);
        if (*c_train) return cmd_train(g, tr, out);
        if (*c_base) return cmd_baseline(g, bl, out);
        if (*c_eval) return cmd_eval(g, ev, out);
        if (*c_report) return cmd_report(g, rp, out);
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}

int run(int argc, const char* const* argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args, std::cout, std::cerr);
}

}  // namespace udream::cli
