#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "relfuse/crf_prior.hpp"
#include "relfuse/fusion.hpp"
#include "relfuse/io.hpp"
#include "relfuse/metrics.hpp"
#include "relfuse/parallel.hpp"
#include "relfuse/synthgen.hpp"

// Library-level implementations of the command-line subcommands. Each
// returns normally when all outputs are written and throws Error otherwise.

namespace relfuse::cmd {

namespace fs = std::filesystem;
using io::Json;

inline constexpr const char* kManifest = "manifest.json";
inline constexpr const char* kCodebooks = "codebooks.json";

inline std::vector<std::string> split_list(const std::string& text, char sep = ',') {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, sep))
        if (!item.empty()) out.push_back(item);
    return out;
}

inline std::vector<CriteriaMask> parse_criteria(const std::string& list) {
    if (list.empty()) return default_criteria();
    std::vector<CriteriaMask> out;
    for (const auto& s : split_list(list)) out.push_back(CriteriaMask::parse(s));
    return out;
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

struct GenOptions {
    std::size_t scenes = 100;
    std::uint64_t seed = 0;
    std::string layout_file;  // empty: built-in benchmark layout
    std::string noise_file;   // empty: built-in benchmark noise
    FusionMode mode = FusionMode::gt_box;
    fs::path out;
    unsigned jobs = 1;
};

/// Writes scenes/scene_NNNNN.json, shapes/*.rle, codebooks.json, and last
/// manifest.json. With zero scenes only the manifest is written.
inline Json cmd_gen(const GenOptions& o) {
    const LayoutConfig layout = o.layout_file.empty() ? LayoutConfig::benchmark() : io::layout_from(io::read_json(o.layout_file));
    const NoiseProfile noise = o.noise_file.empty() ? NoiseProfile::benchmark() : io::noise_from(io::read_json(o.noise_file));
    const Codebooks tables = Codebooks::defaults();
    fs::create_directories(o.out);

    const std::string layout_text = io::dump_json(io::to_json(layout));
    const std::string noise_text = io::dump_json(io::to_json(noise));
    const std::string codebook_text = io::dump_json(io::to_json(tables));

    std::vector<std::string> names(o.scenes), hashes(o.scenes);
    parallel_for(o.scenes, o.jobs, [&](std::size_t i) {
        SceneInstance s = make_scene(layout, noise, tables, scene_seed(o.seed, i), o.mode);
        s.scene_id = scene_name(i);
        const std::string text = io::dump_json(io::to_json(s));
        names[i] = "scenes/" + s.scene_id + ".json";
        hashes[i] = io::fnv1a_hex(text);
        io::write_text(o.out / names[i], text);
    });

    Json files = Json::array();
    if (o.scenes > 0) {
        io::write_text(o.out / kCodebooks, codebook_text);
        files.push_back({{"path", kCodebooks}, {"fnv1a", io::fnv1a_hex(codebook_text)}});
        for (PrimitiveKind k : {PrimitiveKind::box, PrimitiveKind::ellipsoid}) {
            const std::string bytes = io::encode_voxels(*primitive_grid(k));
            io::write_text(o.out / primitive_ref(k), bytes);
            files.push_back({{"path", primitive_ref(k)}, {"fnv1a", io::fnv1a_hex(bytes)}});
        }
        for (std::size_t i = 0; i < o.scenes; ++i) files.push_back({{"path", names[i]}, {"fnv1a", hashes[i]}});
    }

    Json m;
    m["kind"] = "dataset";
    m["mode"] = to_string(o.mode);
    m["seed"] = o.seed;
    m["n_scenes"] = o.scenes;
    m["layout_hash"] = io::fnv1a_hex(layout_text);
    m["noise_hash"] = io::fnv1a_hex(noise_text);
    m["codebooks_hash"] = io::fnv1a_hex(codebook_text);
    m["layout"] = io::to_json(layout);
    m["noise"] = io::to_json(noise);
    m["scenes"] = Json::array();
    for (const auto& n : names) m["scenes"].push_back(n);
    m["files"] = std::move(files);
    io::write_text(o.out / kManifest, io::dump_json(m));
    return m;
}

// ---------------------------------------------------------------------------
// Dataset loading
// ---------------------------------------------------------------------------

struct Dataset {
    Json manifest;
    FusionMode mode = FusionMode::gt_box;
    std::vector<SceneInstance> scenes;
};

inline Json read_manifest(const fs::path& dir) {
    const fs::path p = dir / kManifest;
    if (!fs::exists(p)) throw Error("no manifest in " + dir.string());
    return io::read_json(p);
}

inline Dataset load_dataset(const fs::path& dir, unsigned jobs = 1) {
    Dataset d;
    d.manifest = read_manifest(dir);
    if (d.manifest.value("kind", std::string()) != "dataset") throw Error(dir.string() + " is not a dataset");
    d.mode = parse_mode(d.manifest.at("mode").get<std::string>());
    const auto& list = d.manifest.at("scenes");
    d.scenes.resize(list.size());
    io::ShapeStore shapes(dir);
    parallel_for(list.size(), jobs, [&](std::size_t i) {
        d.scenes[i] = io::scene_from_json(io::read_json(dir / list[i].get<std::string>()), &shapes);
    });
    return d;
}

inline void check_codebooks(const Codebooks& tables, std::span<const SceneInstance> scenes) {
    for (const auto& s : scenes) validate(s, tables.rotation.size(), tables.direction.size());
}

// ---------------------------------------------------------------------------
// fuse
// ---------------------------------------------------------------------------

struct FuseOptions {
    fs::path in;
    double lambda = 1.0;
    double score_threshold = 0.3;
    std::string codebooks;  // empty: <in>/codebooks.json
    fs::path out;
    unsigned jobs = 1;
};

inline std::vector<FusedScene> fuse_all(std::span<const SceneInstance> scenes, const FusionConfig& config,
                                        const Codebooks& tables, unsigned jobs = 1) {
    config.validate();
    std::vector<FusedScene> out(scenes.size());
    parallel_for(scenes.size(), jobs, [&](std::size_t i) { out[i] = fuse_scene(scenes[i], config, tables); });
    return out;
}

inline std::vector<FusedScene> unary_all(std::span<const SceneInstance> scenes, const Codebooks& tables) {
    std::vector<FusedScene> out;
    for (const auto& s : scenes) out.push_back(unary_only(s, tables.rotation));
    return out;
}

inline std::vector<FusedScene> crf_all(std::span<const SceneInstance> scenes, const PairPrior& prior,
                                       const Codebooks& tables, const CrfConfig& config = {}, unsigned jobs = 1) {
    std::vector<FusedScene> out(scenes.size());
    parallel_for(scenes.size(), jobs,
                 [&](std::size_t i) { out[i] = crf_refine_scene(scenes[i], prior, tables.rotation, config); });
    return out;
}

/// Writes scenes/<id>.json per fused scene and a manifest listing them.
inline Json write_predictions(const fs::path& out, std::span<const FusedScene> fused, Json header) {
    fs::create_directories(out);
    std::vector<std::string> names(fused.size()), hashes(fused.size());
    for (std::size_t i = 0; i < fused.size(); ++i) {
        const std::string text = io::dump_json(io::to_json(fused[i]));
        names[i] = "scenes/" + fused[i].scene_id + ".json";
        hashes[i] = io::fnv1a_hex(text);
        io::write_text(out / names[i], text);
    }
    header["kind"] = "predictions";
    header["scenes"] = Json::array();
    header["files"] = Json::array();
    for (std::size_t i = 0; i < fused.size(); ++i) {
        header["scenes"].push_back(names[i]);
        header["files"].push_back({{"path", names[i]}, {"fnv1a", hashes[i]}});
    }
    io::write_text(out / kManifest, io::dump_json(header));
    return header;
}

inline Codebooks resolve_codebooks(const fs::path& dataset, const std::string& file) {
    return io::read_codebooks(file.empty() ? dataset / kCodebooks : fs::path(file));
}

inline Json cmd_fuse(const FuseOptions& o) {
    const Json manifest = read_manifest(o.in);
    const Codebooks tables = resolve_codebooks(o.in, o.codebooks);
    const Dataset d = load_dataset(o.in, o.jobs);
    check_codebooks(tables, d.scenes);
    FusionConfig config;
    config.lambda = o.lambda;
    config.score_threshold = o.score_threshold;
    config.mode = d.mode;
    const auto fused = fuse_all(d.scenes, config, tables, o.jobs);
    Json header;
    header["method"] = "fused";
    header["mode"] = to_string(d.mode);
    header["lambda"] = o.lambda;
    header["score_threshold"] = o.score_threshold;
    header["source_manifest"] = io::fnv1a_hex(io::dump_json(manifest));
    return write_predictions(o.out, fused, std::move(header));
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalOptions {
    fs::path pred;
    fs::path gt;
    std::string thresholds;  // empty: defaults
    std::string criteria;    // empty: the four default sets
    fs::path out;            // report.json; CSVs are written next to it
    std::string method = "pred";
    unsigned jobs = 1;
};

/// Reads predictions from a fused-output directory, or from a dataset
/// directory (its unary predictions).
inline std::vector<FusedScene> load_predictions(const fs::path& dir, unsigned jobs = 1) {
    const Json m = read_manifest(dir);
    if (m.value("kind", std::string()) == "dataset") {
        const Dataset d = load_dataset(dir, jobs);
        return unary_all(d.scenes, resolve_codebooks(dir, ""));
    }
    const auto& list = m.at("scenes");
    std::vector<FusedScene> out(list.size());
    parallel_for(list.size(), jobs, [&](std::size_t i) {
        out[i] = io::fused_from_json(io::read_json(dir / list[i].get<std::string>()));
    });
    return out;
}

/// Attaches ground-truth-directory shapes to predictions by shape_ref.
inline void attach_shapes(std::vector<FusedScene>& fused, const fs::path& gt_dir) {
    io::ShapeStore shapes(gt_dir);
    for (auto& s : fused)
        for (auto& o : s.objects)
            if (!o.shape && !o.shape_ref.empty()) o.shape = shapes.get(o.shape_ref);
}

/// Empty when scenes and object ids line up; otherwise a readable summary.
/// Extra prediction ids are allowed only in detection mode.
inline std::string alignment_diff(std::span<const FusedScene> pred, std::span<const SceneInstance> gt,
                                  FusionMode mode) {
    std::ostringstream out;
    std::set<std::string> ps, gs;
    for (const auto& s : pred) ps.insert(s.scene_id);
    for (const auto& s : gt) gs.insert(s.scene_id);
    for (const auto& s : gs)
        if (!ps.count(s)) out << "missing prediction scene " << s << "\n";
    for (const auto& s : ps)
        if (!gs.count(s)) out << "unexpected prediction scene " << s << "\n";
    if (pred.size() != gt.size() || !out.str().empty()) return out.str();
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (pred[i].scene_id != gt[i].scene_id) {
            out << "scene order differs at " << i << "\n";
            continue;
        }
        std::set<int> pid, gid;
        for (const auto& o : pred[i].objects) pid.insert(o.id);
        for (const auto& g : gt[i].gt_objects) gid.insert(g.id);
        for (int id : gid)
            if (!pid.count(id)) out << gt[i].scene_id << ": missing prediction for id " << id << "\n";
        if (mode == FusionMode::gt_box)
            for (int id : pid)
                if (!gid.count(id)) out << gt[i].scene_id << ": unexpected prediction id " << id << "\n";
    }
    return out.str();
}

struct EvalOutputs {
    EvalReport report;
    std::string json;
    std::string csv;
};

inline EvalOutputs evaluate_outputs(std::span<const FusedScene> fused, std::span<const SceneInstance> scenes,
                                    const Thresholds& th, const std::vector<CriteriaMask>& criteria,
                                    const std::string& method) {
    EvalOutputs out;
    out.report = evaluate(fused, scenes, th, criteria);
    out.json = io::dump_json(io::to_json(out.report));
    out.csv = io::csv_header(th, out.report) + io::csv_row(method, out.report);
    return out;
}

inline fs::path sibling(const fs::path& p, const std::string& suffix) {
    return p.parent_path() / (p.stem().string() + suffix);
}

inline EvalReport cmd_eval(const EvalOptions& o) {
    const Thresholds th = o.thresholds.empty() ? Thresholds{} : io::thresholds_from(io::read_json(o.thresholds));
    const auto criteria = parse_criteria(o.criteria);
    const Dataset d = load_dataset(o.gt, o.jobs);
    auto fused = load_predictions(o.pred, o.jobs);
    if (const auto diff = alignment_diff(fused, d.scenes, d.mode); !diff.empty())
        throw Error("prediction/ground-truth id mismatch:\n" + diff);
    attach_shapes(fused, o.gt);
    const EvalOutputs r = evaluate_outputs(fused, d.scenes, th, criteria, o.method);
    io::write_text(o.out, r.json);
    io::write_text(sibling(o.out, ".csv"), r.csv);
    for (const auto& [name, ap] : r.report.detection) io::write_text(sibling(o.out, "_pr_" + name + ".csv"), io::pr_csv(ap));
    return r.report;
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

struct CompareOptions {
    fs::path in;
    std::string methods = "unary,fused,crf";
    std::string priors;
    std::string thresholds;
    std::string criteria;
    double lambda = 1.0;
    double score_threshold = 0.3;
    fs::path out;
    unsigned jobs = 1;
};

/// One Table-1-style row per requested method, in request order.
inline std::string compare_table(std::span<const SceneInstance> scenes, const Codebooks& tables,
                                 const std::vector<std::string>& methods, const PairPrior* prior,
                                 const Thresholds& th, const std::vector<CriteriaMask>& criteria,
                                 const FusionConfig& fusion, unsigned jobs = 1) {
    for (const auto& m : methods) {
        if (m != "unary" && m != "fused" && m != "crf") throw Error("unknown method: " + m);
        if (m == "crf" && !prior) throw Error("method crf needs --priors");
    }
    std::string header, rows;
    for (const auto& m : methods) {
        std::vector<FusedScene> pred;
        if (m == "unary") pred = unary_all(scenes, tables);
        else if (m == "fused") pred = fuse_all(scenes, fusion, tables, jobs);
        else pred = crf_all(scenes, *prior, tables, {}, jobs);
        const EvalReport r = evaluate(pred, scenes, th, criteria);
        if (header.empty()) header = io::csv_header(th, r);
        rows += io::csv_row(m, r);
    }
    return header + rows;
}

inline std::string cmd_compare(const CompareOptions& o) {
    const auto methods = split_list(o.methods);
    if (methods.empty()) throw Error("no methods given");
    const Thresholds th = o.thresholds.empty() ? Thresholds{} : io::thresholds_from(io::read_json(o.thresholds));
    std::optional<PairPrior> prior;
    if (std::find(methods.begin(), methods.end(), "crf") != methods.end()) {
        if (o.priors.empty()) throw Error("method crf needs --priors");
        prior = io::prior_from(io::read_json(o.priors));
    }
    const Dataset d = load_dataset(o.in, o.jobs);
    const Codebooks tables = resolve_codebooks(o.in, "");
    check_codebooks(tables, d.scenes);
    FusionConfig fusion;
    fusion.lambda = o.lambda;
    fusion.score_threshold = o.score_threshold;
    fusion.mode = d.mode;
    const std::string table = compare_table(d.scenes, tables, methods, prior ? &*prior : nullptr, th,
                                            parse_criteria(o.criteria), fusion, o.jobs);
    io::write_text(o.out, table);
    return table;
}

// ---------------------------------------------------------------------------
// fit-prior
// ---------------------------------------------------------------------------

struct FitPriorOptions {
    fs::path in;
    std::size_t components = 10;
    std::uint64_t seed = 0;
    fs::path out;
    unsigned jobs = 1;
};

inline PairPrior cmd_fit_prior(const FitPriorOptions& o) {
    const Dataset d = load_dataset(o.in, o.jobs);
    PairPrior p = fit_pairwise_prior(d.scenes, o.components, o.seed);
    io::write_text(o.out, io::dump_json(io::to_json(p)));
    return p;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

struct SweepOptions {
    fs::path in;
    std::string param = "lambda";
    std::string values;
    std::string thresholds;
    std::string criteria;
    double lambda = 1.0;
    double score_threshold = 0.3;
    fs::path out;
    unsigned jobs = 1;
};

/// Mean over objects of ||t* - u||, the pull of fusion away from the unaries.
inline double mean_unary_displacement(std::span<const FusedScene> fused, std::span<const SceneInstance> scenes) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < fused.size(); ++i)
        for (std::size_t k = 0; k < fused[i].objects.size(); ++k) {
            sum += (fused[i].objects[k].translation - scenes[i].unary[k].translation).norm();
            ++n;
        }
    return n ? sum / static_cast<double>(n) : 0.0;
}

/// Re-runs fuse+eval for every value. Noise parameters regenerate the
/// dataset from the manifest's layout, noise and seed.
inline std::string cmd_sweep(const SweepOptions& o) {
    if (o.param != "lambda" && o.param != "kappa" && o.param != "sigma_t_rel")
        throw Error("unknown sweep parameter: " + o.param);
    std::vector<double> values;
    for (const auto& v : split_list(o.values)) {
        try {
            values.push_back(v == "inf" ? std::numeric_limits<double>::infinity() : std::stod(v));
        } catch (const std::exception&) {
            throw Error("bad sweep value: " + v);
        }
    }
    if (values.empty()) throw Error("no sweep values");
    const Thresholds th = o.thresholds.empty() ? Thresholds{} : io::thresholds_from(io::read_json(o.thresholds));
    const auto criteria = parse_criteria(o.criteria);
    const Dataset d = load_dataset(o.in, o.jobs);
    const Codebooks tables = resolve_codebooks(o.in, "");
    check_codebooks(tables, d.scenes);

    std::string header, rows;
    for (double v : values) {
        FusionConfig config;
        config.lambda = o.lambda;
        config.score_threshold = o.score_threshold;
        config.mode = d.mode;
        std::vector<SceneInstance> regenerated;
        std::span<const SceneInstance> scenes = d.scenes;
        if (o.param == "lambda") {
            config.lambda = v;
        } else {
            NoiseProfile noise = io::noise_from(d.manifest.at("noise"));
            (o.param == "kappa" ? noise.direction_kappa : noise.sigma_t_rel) = v;
            regenerated = make_dataset(io::layout_from(d.manifest.at("layout")), noise,
                                       d.manifest.at("n_scenes").get<std::size_t>(),
                                       d.manifest.at("seed").get<std::uint64_t>(), d.mode, tables, o.jobs);
            scenes = regenerated;
        }
        const auto fused = fuse_all(scenes, config, tables, o.jobs);
        const EvalReport r = evaluate(fused, scenes, th, criteria);
        if (header.empty()) header = "param,value,mean_unary_displacement," + io::csv_header(th, r).substr(7);
        std::string row = io::csv_row("", r);
        rows += o.param + "," + (std::isinf(v) ? std::string("inf") : io::format_double(v)) + "," +
                io::format_double(mean_unary_displacement(fused, scenes)) + row;
    }
    const std::string table = header + rows;
    io::write_text(o.out, table);
    return table;
}

}  // namespace relfuse::cmd
