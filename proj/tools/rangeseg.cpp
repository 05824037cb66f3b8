// Command-line frontend: spherical projection, network inference, prediction
// scoring against ground truth, gradient verification, and parameter
// accounting. Every output file gets a sibling .manifest.json recording the
// command, inputs, seed, per-stage wall-clock timings, and counts.
// Exit codes: 0 success, 1 failed check, 2 bad input or usage.
#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "rangeseg/config.hpp"
#include "rangeseg/gradcheck.hpp"
#include "rangeseg/kitti_io.hpp"
#include "rangeseg/metrics.hpp"
#include "rangeseg/model.hpp"
#include "rangeseg/projection.hpp"
#include "rangeseg/tensor.hpp"
#include "rangeseg/weights.hpp"

namespace fs = std::filesystem;

namespace {

constexpr const char* kToolVersion = "1.0.0";
constexpr double kReferenceParams = 4.74e6;

int env_threads() {
    const char* env = std::getenv("RANGESEG_THREADS");
    if (!env) return 1;
    try {
        std::size_t used = 0;
        const int v = std::stoi(env, &used);
        if (used != std::string(env).size() || v < 1) throw std::invalid_argument(env);
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error(std::string("RANGESEG_THREADS=\"") + env +
                                 "\" is not a positive integer");
    }
}

class StageClock {
public:
    void lap(const std::string& stage) {
        timings_[stage] = std::chrono::duration<double>(Clock::now() - last_).count();
        last_ = Clock::now();
    }
    nlohmann::ordered_json json() const {
        nlohmann::ordered_json t;
        for (const auto& [stage, sec] : timings_) t[stage] = sec;
        return t;
    }

private:
    using Clock = std::chrono::steady_clock;
    Clock::time_point last_ = Clock::now();
    std::map<std::string, double> timings_;
};

void write_manifest(const std::string& out_path, const std::string& subcommand,
                    nlohmann::ordered_json details, const StageClock& clock) {
    nlohmann::ordered_json m;
    m["tool"] = "rangeseg";
    m["tool_version"] = kToolVersion;
    m["subcommand"] = subcommand;
    m["threads"] = rangeseg::num_threads();
    m.update(details);
    m["timings_sec"] = clock.json();
    const std::string path = out_path + ".manifest.json";
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write manifest " + path);
    out << m.dump(2) << "\n";
}

std::vector<std::int32_t> argmax_labels(const rangeseg::Tensor4& logits) {
    const int C = logits.c();
    const std::size_t plane = static_cast<std::size_t>(logits.h()) * logits.w();
    std::vector<std::int32_t> out(plane);
    for (std::size_t px = 0; px < plane; ++px) {
        int best = 0;
        for (int c = 1; c < C; ++c)
            if (logits.data()[c * plane + px] > logits.data()[best * plane + px]) best = c;
        out[px] = best;
    }
    return out;
}

rangeseg::TensorStore resolve_weights(const std::string& arg, const rangeseg::ModelConfig& cfg,
                                      std::string& descriptor, std::int64_t& seed_out) {
    seed_out = -1;
    if (arg.rfind("random:", 0) == 0) {
        const std::string num = arg.substr(7);
        std::uint32_t seed = 0;
        try {
            std::size_t used = 0;
            const unsigned long v = std::stoul(num, &used);
            if (used != num.size() || v > 0xffffffffu) throw std::invalid_argument(num);
            seed = static_cast<std::uint32_t>(v);
        } catch (const std::exception&) {
            throw std::runtime_error("--weights random:SEED needs an unsigned integer seed, got \"" +
                                     num + "\"");
        }
        descriptor = "random:" + std::to_string(seed);
        seed_out = seed;
        return rangeseg::init_random(cfg, seed);
    }
    descriptor = arg;
    rangeseg::TensorStore store = rangeseg::load_weights(arg);
    rangeseg::validate_weights(cfg, store);
    return store;
}

// With several scans --out names a directory and each output file takes the
// scan's stem; with one scan --out is the output file itself.
std::string output_path(const std::string& out, bool dir_mode, const std::string& scan,
                        const char* extension) {
    if (!dir_mode) return out;
    return (fs::path(out) / (fs::path(scan).stem().string() + extension)).string();
}

struct ProjectArgs {
    std::string config, out;
    std::vector<std::string> scans;
};

int run_project(const ProjectArgs& a) {
    const rangeseg::ConfigBundle bundle = rangeseg::load_config(a.config);
    const bool dir_mode = a.scans.size() > 1;
    if (dir_mode) fs::create_directories(a.out);

    for (const std::string& scan_path : a.scans) {
        StageClock clock;
        const rangeseg::ScanData scan = rangeseg::read_scan(scan_path);
        clock.lap("read");
        if (scan.cloud.size() >= (1u << 24))
            throw std::runtime_error("scan has " + std::to_string(scan.cloud.size()) +
                                     " points; indices above 2^24 do not fit float32 storage");
        const rangeseg::RangeImage img = rangeseg::project(scan.cloud, bundle.projection);
        clock.lap("project");

        rangeseg::TensorStore store;
        store["channels"] = {{1, 5, img.h, img.w}, img.channels.data()};
        store["mask"] = {{img.h, img.w}, std::vector<float>(img.mask.begin(), img.mask.end())};
        store["ranges"] = {{img.h, img.w}, img.ranges};
        store["point_of_pixel"] = {{img.h, img.w},
                                   std::vector<float>(img.point_of_pixel.begin(),
                                                      img.point_of_pixel.end())};
        std::vector<float> per_point;
        per_point.reserve(img.pixel_of_point.size() * 2);
        for (const auto& rc : img.pixel_of_point) {
            per_point.push_back(static_cast<float>(rc[0]));
            per_point.push_back(static_cast<float>(rc[1]));
        }
        store["pixel_of_point"] = {{static_cast<int>(img.pixel_of_point.size()), 2}, per_point};
        const std::string out_path = output_path(a.out, dir_mode, scan_path, ".lenw");
        rangeseg::save_weights(store, out_path);
        clock.lap("write");

        write_manifest(out_path, "project",
                       {{"config", a.config},
                        {"scan", scan_path},
                        {"out", out_path},
                        {"scans", a.scans.size()},
                        {"points", scan.cloud.size()},
                        {"rejected_nonfinite", scan.rejected_nonfinite},
                        {"rejected_zero_range", img.rejected_points.size()}},
                       clock);
        std::cout << "projected " << scan.cloud.size() << " points to " << img.h << "x" << img.w
                  << " -> " << out_path << " (" << scan.rejected_nonfinite << " non-finite, "
                  << img.rejected_points.size() << " zero-range rejected)\n";
    }
    return 0;
}

struct InferArgs {
    std::string config, weights, out, knn = "on", logits_out;
    std::vector<std::string> scans;
};

int run_infer(const InferArgs& a) {
    const rangeseg::ConfigBundle bundle = rangeseg::load_config(a.config);
    const bool dir_mode = a.scans.size() > 1;
    if (dir_mode && !a.logits_out.empty())
        throw std::runtime_error("--logits only works with a single --scan");
    if (dir_mode) fs::create_directories(a.out);

    std::string weights_descriptor;
    std::int64_t seed = -1;
    const rangeseg::TensorStore weights =
        resolve_weights(a.weights, bundle.model, weights_descriptor, seed);

    for (const std::string& scan_path : a.scans) {
        StageClock clock;
        const rangeseg::ScanData scan = rangeseg::read_scan(scan_path);
        clock.lap("read");
        const rangeseg::RangeImage img = rangeseg::project(scan.cloud, bundle.projection);
        clock.lap("project");
        const rangeseg::ModelOutput out =
            rangeseg::model_forward(img.channels, weights, bundle.model);
        clock.lap("forward");

        const std::vector<std::int32_t> label_image = argmax_labels(out.main_logits);
        const std::vector<std::int32_t> train_ids =
            a.knn == "on" ? rangeseg::knn_refine(label_image, img, scan.cloud, bundle.knn)
                          : rangeseg::unproject(label_image, img);
        clock.lap("postprocess");

        const std::string out_path = output_path(a.out, dir_mode, scan_path, ".label");
        rangeseg::write_predictions(out_path, train_ids, bundle.labels);
        if (!a.logits_out.empty()) {
            rangeseg::TensorStore logits;
            logits["main_logits"] = {{1, out.main_logits.c(), out.main_logits.h(),
                                      out.main_logits.w()},
                                     out.main_logits.data()};
            for (int i = 0; i < 3; ++i) {
                const rangeseg::Tensor4& aux = out.aux_logits[i];
                logits["aux" + std::to_string(i + 1)] = {{1, aux.c(), aux.h(), aux.w()},
                                                         aux.data()};
            }
            rangeseg::save_weights(logits, a.logits_out);
        }
        clock.lap("write");

        nlohmann::ordered_json details{{"config", a.config},
                                       {"scan", scan_path},
                                       {"out", out_path},
                                       {"scans", a.scans.size()},
                                       {"weights", weights_descriptor},
                                       {"knn", a.knn},
                                       {"points", scan.cloud.size()},
                                       {"rejected_nonfinite", scan.rejected_nonfinite},
                                       {"rejected_zero_range", img.rejected_points.size()}};
        if (seed >= 0) details["seed"] = seed;
        write_manifest(out_path, "infer", details, clock);
        std::cout << "wrote " << train_ids.size() << " predictions to " << out_path << " (knn "
                  << a.knn << ", weights " << weights_descriptor << ")\n";
    }
    return 0;
}

struct EvalArgs {
    std::string config, pred, gt, out_json;
};

std::map<std::string, fs::path> label_files(const fs::path& dir) {
    std::map<std::string, fs::path> out;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".label")
            out[entry.path().filename().string()] = entry.path();
    return out;
}

int run_eval(const EvalArgs& a) {
    StageClock clock;
    const rangeseg::ConfigBundle bundle = rangeseg::load_config(a.config);

    std::vector<std::pair<fs::path, fs::path>> pairs;  // (pred, gt)
    if (fs::is_directory(a.pred) && fs::is_directory(a.gt)) {
        const auto preds = label_files(a.pred);
        const auto gts = label_files(a.gt);
        bool unpaired = false;
        for (const auto& [name, path] : preds)
            if (!gts.count(name)) {
                std::cerr << "no ground truth for prediction " << path.string() << "\n";
                unpaired = true;
            }
        for (const auto& [name, path] : gts)
            if (!preds.count(name)) {
                std::cerr << "no prediction for ground truth " << path.string() << "\n";
                unpaired = true;
            }
        if (unpaired) return 2;
        if (preds.empty()) {
            std::cerr << "no .label files under " << a.pred << "\n";
            return 2;
        }
        for (const auto& [name, path] : preds) pairs.emplace_back(path, gts.at(name));
    } else if (fs::is_regular_file(a.pred) && fs::is_regular_file(a.gt)) {
        pairs.emplace_back(a.pred, a.gt);
    } else {
        std::cerr << "--pred and --gt must both be label files or both be directories\n";
        return 2;
    }
    clock.lap("pair");

    rangeseg::ConfusionMatrix cm(bundle.model.num_classes, bundle.loss.ignore_class);
    std::size_t unmapped = 0, points = 0;
    for (const auto& [pred_path, gt_path] : pairs) {
        const std::vector<std::uint32_t> pred_raw = rangeseg::read_labels(pred_path.string());
        const std::vector<std::uint32_t> gt_raw = rangeseg::read_labels(gt_path.string());
        if (pred_raw.size() != gt_raw.size())
            throw std::runtime_error("label count mismatch: " + pred_path.string() + " has " +
                                     std::to_string(pred_raw.size()) + ", " + gt_path.string() +
                                     " has " + std::to_string(gt_raw.size()));
        const rangeseg::RemapResult pred = bundle.labels.remap(pred_raw);
        const rangeseg::RemapResult gt = bundle.labels.remap(gt_raw);
        unmapped += pred.unmapped + gt.unmapped;
        points += gt_raw.size();
        cm.add(gt.train_ids, pred.train_ids);
    }
    clock.lap("accumulate");

    const rangeseg::MiouReport report = cm.miou();
    std::cout << cm.format_report(bundle.labels.class_names);
    std::cout << "evaluated " << pairs.size() << " scan(s)";
    if (unmapped) std::cout << ", " << unmapped << " labels fell outside the map";
    std::cout << "\n";

    if (!a.out_json.empty()) {
        nlohmann::ordered_json per_class = nlohmann::ordered_json::object();
        for (int c = 0; c < bundle.model.num_classes; ++c) {
            if (c == bundle.loss.ignore_class) continue;
            if (report.per_class[c] < 0.0) per_class[bundle.labels.class_names[c]] = nullptr;
            else per_class[bundle.labels.class_names[c]] = report.per_class[c];
        }
        nlohmann::ordered_json j{{"miou", report.mean},
                                 {"contributing_classes", report.contributing},
                                 {"scans", pairs.size()},
                                 {"per_class", per_class}};
        std::ofstream out(a.out_json);
        if (!out) throw std::runtime_error("cannot write report " + a.out_json);
        out << j.dump(2) << "\n";
        clock.lap("write");
        write_manifest(a.out_json, "eval",
                       {{"config", a.config},
                        {"pred", a.pred},
                        {"gt", a.gt},
                        {"out", a.out_json},
                        {"scans", pairs.size()},
                        {"points", points},
                        {"unmapped_labels", unmapped}},
                       clock);
    }
    return 0;
}

struct GradcheckArgs {
    std::string config, sizes, out_json;
    std::uint32_t seed = 1;
    int trials = 5;
    std::int64_t corrupt = -1;
};

void apply_sizes(const std::string& text, rangeseg::GradCheckOptions& opt) {
    auto parse_one = [&](const std::string& s) {
        const auto x = s.find('x');
        if (x == std::string::npos || x == 0 || x + 1 >= s.size())
            throw std::runtime_error("--sizes expects HxW entries, got \"" + s + "\"");
        try {
            std::size_t used_h = 0, used_w = 0;
            const int h = std::stoi(s.substr(0, x), &used_h);
            const int w = std::stoi(s.substr(x + 1), &used_w);
            if (used_h != x || used_w != s.size() - x - 1) throw std::invalid_argument(s);
            return std::pair<int, int>{h, w};
        } catch (const std::exception&) {
            throw std::runtime_error("--sizes expects HxW entries, got \"" + s + "\"");
        }
    };
    std::vector<std::pair<int, int>> entries;
    std::size_t begin = 0;
    while (begin <= text.size()) {
        const auto comma = text.find(',', begin);
        const std::string part =
            text.substr(begin, comma == std::string::npos ? std::string::npos : comma - begin);
        entries.push_back(parse_one(part));
        if (comma == std::string::npos) break;
        begin = comma + 1;
    }
    if (entries.size() == 1) entries.assign(3, entries[0]);
    if (entries.size() != 3)
        throw std::runtime_error("--sizes takes one HxW or three comma-separated (wce,lovasz,boundary)");
    opt.wce_h = entries[0].first;
    opt.wce_w = entries[0].second;
    opt.lovasz_h = entries[1].first;
    opt.lovasz_w = entries[1].second;
    opt.boundary_h = entries[2].first;
    opt.boundary_w = entries[2].second;
}

int run_gradcheck_cmd(const GradcheckArgs& a) {
    StageClock clock;
    const rangeseg::ConfigBundle bundle = rangeseg::load_config(a.config);
    rangeseg::GradCheckOptions opt;
    opt.seed = a.seed;
    opt.instances = a.trials;
    opt.corrupt_index = a.corrupt;
    if (!a.sizes.empty()) apply_sizes(a.sizes, opt);

    const rangeseg::LossConfig& loss = bundle.loss;
    std::cout << "gradcheck seed=" << a.seed << " theta0=" << loss.boundary_theta0
              << " eps=" << loss.eps << " weights wce=" << loss.w_wce
              << " lovasz=" << loss.w_lovasz << " boundary=" << loss.w_boundary << " aux=["
              << loss.aux_weights[0] << "," << loss.aux_weights[1] << "," << loss.aux_weights[2]
              << "]\n";

    const std::vector<rangeseg::GradCheckResult> results = rangeseg::run_gradcheck(loss, opt);
    clock.lap("check");
    bool all_passed = true;
    nlohmann::ordered_json table = nlohmann::ordered_json::array();
    for (const rangeseg::GradCheckResult& r : results) {
        std::cout << "  " << r.name << ": instances=" << r.instances << " max_rel_error="
                  << std::scientific << r.max_rel_error << " tolerance=" << r.tolerance
                  << std::defaultfloat << (r.passed() ? " PASS" : " FAIL") << "\n";
        table.push_back({{"loss", r.name},
                         {"instances", r.instances},
                         {"max_rel_error", r.max_rel_error},
                         {"tolerance", r.tolerance},
                         {"passed", r.passed()}});
        all_passed = all_passed && r.passed();
    }
    std::cout << (all_passed ? "gradcheck passed" : "gradcheck FAILED") << "\n";

    if (!a.out_json.empty()) {
        nlohmann::ordered_json j{{"passed", all_passed},
                                 {"theta0", loss.boundary_theta0},
                                 {"eps", loss.eps},
                                 {"loss_weights",
                                  {{"wce", loss.w_wce},
                                   {"lovasz", loss.w_lovasz},
                                   {"boundary", loss.w_boundary}}},
                                 {"aux_weights", loss.aux_weights},
                                 {"results", table}};
        std::ofstream out(a.out_json);
        if (!out) throw std::runtime_error("cannot write report " + a.out_json);
        out << j.dump(2) << "\n";
        clock.lap("write");
        write_manifest(a.out_json, "gradcheck",
                       {{"config", a.config}, {"out", a.out_json}, {"seed", a.seed},
                        {"trials", a.trials}},
                       clock);
    }
    return all_passed ? 0 : 1;
}

struct ParamcountArgs {
    std::string config, out_json;
};

int run_paramcount(const ParamcountArgs& a) {
    StageClock clock;
    const rangeseg::ConfigBundle bundle = rangeseg::load_config(a.config);
    nlohmann::ordered_json per_module = nlohmann::ordered_json::object();
    std::int64_t total = 0;
    for (const auto& [group, count] : rangeseg::param_breakdown(bundle.model)) {
        std::cout << "  " << group << " " << count << "\n";
        per_module[group] = count;
        total += count;
    }
    const double ratio = static_cast<double>(total) / kReferenceParams;
    std::cout << "total " << total << " parameters (" << ratio
              << "x of the 4.74M reference)\n";
    clock.lap("count");

    if (!a.out_json.empty()) {
        nlohmann::ordered_json j{
            {"per_module", per_module}, {"total", total}, {"reference", kReferenceParams},
            {"ratio", ratio}};
        std::ofstream out(a.out_json);
        if (!out) throw std::runtime_error("cannot write report " + a.out_json);
        out << j.dump(2) << "\n";
        clock.lap("write");
        write_manifest(a.out_json, "paramcount",
                       {{"config", a.config}, {"out", a.out_json}, {"total_params", total},
                        {"ratio", ratio}},
                       clock);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"LiDAR range-image semantic segmentation toolkit"};
    app.require_subcommand(1);

    int threads = 0;  // resolved after parsing so a bad env var reports cleanly
    app.add_option("--threads", threads, "worker threads (default RANGESEG_THREADS or 1)")
        ->check(CLI::PositiveNumber);

    ProjectArgs project_args;
    CLI::App* project = app.add_subcommand("project", "project scans to range-image containers");
    project->add_option("--config", project_args.config, "pipeline config json")->required();
    project->add_option("--scan", project_args.scans, "input scan .bin (repeatable)")->required();
    project->add_option("--out", project_args.out,
                        "output container path (directory with several scans)")
        ->required();

    InferArgs infer_args;
    CLI::App* infer = app.add_subcommand("infer", "run the network on scans");
    infer->add_option("--config", infer_args.config, "pipeline config json")->required();
    infer->add_option("--scan", infer_args.scans, "input scan .bin (repeatable)")->required();
    infer->add_option("--weights", infer_args.weights, "weight file path or random:SEED")
        ->required();
    infer->add_option("--out", infer_args.out,
                      "output predictions .label (directory with several scans)")
        ->required();
    infer->add_option("--knn", infer_args.knn, "post-processing, on or off")
        ->check(CLI::IsMember({"on", "off"}));
    infer->add_option("--logits", infer_args.logits_out, "also save logits (single scan only)");

    EvalArgs eval_args;
    CLI::App* eval = app.add_subcommand("eval", "score predictions against ground truth");
    eval->add_option("--config", eval_args.config, "pipeline config json")->required();
    eval->add_option("--pred", eval_args.pred, "prediction .label file or directory")->required();
    eval->add_option("--gt", eval_args.gt, "ground-truth .label file or directory")->required();
    eval->add_option("--out", eval_args.out_json, "write the report as json");

    GradcheckArgs gc_args;
    CLI::App* gradcheck = app.add_subcommand("gradcheck", "verify loss gradients numerically");
    gradcheck->add_option("--config", gc_args.config, "pipeline config json")->required();
    gradcheck->add_option("--seed", gc_args.seed, "instance generator seed");
    gradcheck->add_option("--trials", gc_args.trials, "instances per loss")
        ->check(CLI::PositiveNumber);
    gradcheck->add_option("--sizes", gc_args.sizes,
                          "instance sizes, HxW or wceHxW,lovaszHxW,boundaryHxW");
    gradcheck->add_option("--out", gc_args.out_json, "write the pass/fail table as json");
    gradcheck->add_option("--corrupt", gc_args.corrupt, "spoil one gradient entry (self-test)")
        ->group("");  // hidden

    ParamcountArgs pc_args;
    CLI::App* paramcount = app.add_subcommand("paramcount", "report parameter counts");
    paramcount->add_option("--config", pc_args.config, "pipeline config json")->required();
    paramcount->add_option("--out", pc_args.out_json, "write the counts as json");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (threads == 0) threads = env_threads();
        rangeseg::set_num_threads(threads);
        if (app.got_subcommand(project)) return run_project(project_args);
        if (app.got_subcommand(infer)) return run_infer(infer_args);
        if (app.got_subcommand(eval)) return run_eval(eval_args);
        if (app.got_subcommand(gradcheck)) return run_gradcheck_cmd(gc_args);
        if (app.got_subcommand(paramcount)) return run_paramcount(pc_args);
    } catch (const std::exception& e) {
        std::cerr << "rangeseg: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
