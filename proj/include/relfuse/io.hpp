#pragma once

#include <cinttypes>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "relfuse/crf_prior.hpp"
#include "relfuse/fusion.hpp"
#include "relfuse/metrics.hpp"
#include "relfuse/scene_model.hpp"
#include "relfuse/synthgen.hpp"

namespace relfuse::io {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Text output
// ---------------------------------------------------------------------------

/// Decimal with 17 significant digits; round-trips every finite double.
/// Negative zero is written as 0 (the parser would read "-0" as an integer).
inline std::string format_double(double v) {
    if (!std::isfinite(v)) throw Error("cannot serialize non-finite number");
    if (v == 0.0) v = 0.0;
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace detail {

inline void dump(const Json& j, std::string& out, int indent, int depth) {
    const auto newline = [&](int d) {
        if (indent < 0) return;
        out += '\n';
        out.append(static_cast<std::size_t>(indent * d), ' ');
    };
    switch (j.type()) {
        case Json::value_t::object: {
            if (j.empty()) {
                out += "{}";
                return;
            }
            out += '{';
            bool first = true;
            for (auto it = j.begin(); it != j.end(); ++it) {
                if (!first) out += ',';
                first = false;
                newline(depth + 1);
                out += Json(it.key()).dump();
                out += indent < 0 ? ":" : ": ";
                dump(it.value(), out, indent, depth + 1);
            }
            newline(depth);
            out += '}';
            return;
        }
        case Json::value_t::array: {
            if (j.empty()) {
                out += "[]";
                return;
            }
            // Arrays of scalars stay on one line.
            const bool flat = std::none_of(j.begin(), j.end(), [](const Json& e) { return e.is_structured(); });
            out += '[';
            bool first = true;
            for (const auto& e : j) {
                if (!first) out += flat ? ", " : ",";
                first = false;
                if (!flat) newline(depth + 1);
                dump(e, out, indent, depth + 1);
            }
            if (!flat) newline(depth);
            out += ']';
            return;
        }
        case Json::value_t::number_float:
            out += format_double(j.get<double>());
            return;
        default:
            out += j.dump();
    }
}

}  // namespace detail

inline std::string dump_json(const Json& j, int indent = 2) {
    std::string out;
    detail::dump(j, out, indent, 0);
    out += '\n';
    return out;
}

inline void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot write " + path.string());
    f << text;
    if (!f) throw Error("cannot write " + path.string());
}

inline std::string read_text(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot read " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

inline Json read_json(const fs::path& path) {
    try {
        return Json::parse(read_text(path));
    } catch (const nlohmann::json::exception& e) {
        throw Error("invalid JSON in " + path.string() + ": " + e.what());
    }
}

/// 64-bit FNV-1a, printed as 16 hex digits.
inline std::string fnv1a_hex(const std::string& data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
    return buf;
}

// ---------------------------------------------------------------------------
// Small value helpers
// ---------------------------------------------------------------------------

inline Json vec_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }
inline Json quat_json(const Quat& q) { return Json::array({q.w(), q.x(), q.y(), q.z()}); }
inline Json box_json(const Box2d& b) { return Json::array({b.xmin, b.ymin, b.xmax, b.ymax}); }
inline Json vector_json(const std::vector<double>& v) {
    Json a = Json::array();
    for (double x : v) a.push_back(x);
    return a;
}

inline double num(const Json& j) {
    if (!j.is_number()) throw Error("expected number");
    return j.get<double>();
}

inline std::vector<double> doubles(const Json& j, std::size_t expected = 0) {
    if (!j.is_array()) throw Error("expected array");
    if (expected && j.size() != expected) throw Error("array length mismatch");
    std::vector<double> out;
    for (const auto& e : j) out.push_back(num(e));
    return out;
}

inline Vec3 vec_from(const Json& j) {
    const auto v = doubles(j, 3);
    return {v[0], v[1], v[2]};
}

inline Quat quat_from(const Json& j) {
    const auto v = doubles(j, 4);
    return Quat(v[0], v[1], v[2], v[3]);
}

inline Box2d box_from(const Json& j) {
    const auto v = doubles(j, 4);
    return {v[0], v[1], v[2], v[3]};
}

/// Doubles that may be infinite are written as the string "inf".
inline Json maybe_inf(double v) { return std::isinf(v) ? Json("inf") : Json(v); }
inline double maybe_inf_from(const Json& j) {
    if (j.is_string() && j.get<std::string>() == "inf") return std::numeric_limits<double>::infinity();
    return num(j);
}

// ---------------------------------------------------------------------------
// Voxel grids: run-length-encoded occupancy bits
// ---------------------------------------------------------------------------
//
// Layout (little endian): "RFVX", u32 resolution, u32 run count, then run
// lengths as u32. Runs alternate empty/occupied, starting with empty.

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out += static_cast<char>((v >> (8 * i)) & 0xff);
}

inline std::uint32_t get_u32(const std::string& in, std::size_t& pos) {
    if (pos + 4 > in.size()) throw Error("truncated voxel file");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    pos += 4;
    return v;
}

}  // namespace detail

inline std::string encode_voxels(const VoxelGrid& g) {
    std::vector<std::uint32_t> runs;
    bool current = false;
    std::uint32_t run = 0;
    for (std::size_t i = 0; i < g.occupancy.size(); ++i) {
        if (g.occupied(i) != current) {
            runs.push_back(run);
            run = 0;
            current = !current;
        }
        ++run;
    }
    runs.push_back(run);
    std::string out = "RFVX";
    detail::put_u32(out, static_cast<std::uint32_t>(g.resolution));
    detail::put_u32(out, static_cast<std::uint32_t>(runs.size()));
    for (auto r : runs) detail::put_u32(out, r);
    return out;
}

inline VoxelGrid decode_voxels(const std::string& data) {
    if (data.size() < 12 || data.compare(0, 4, "RFVX") != 0) throw Error("not a voxel file");
    std::size_t pos = 4;
    const auto res = detail::get_u32(data, pos);
    const auto count = detail::get_u32(data, pos);
    if (res == 0 || res > 512) throw Error("invalid voxel resolution");
    VoxelGrid g(static_cast<int>(res));
    std::size_t cell = 0;
    bool value = false;
    for (std::uint32_t r = 0; r < count; ++r) {
        const auto len = detail::get_u32(data, pos);
        if (cell + len > g.occupancy.size()) throw Error("voxel runs overflow grid");
        for (std::uint32_t k = 0; k < len; ++k) g.occupancy[cell++] = value ? 1.0 : 0.0;
        value = !value;
    }
    if (cell != g.occupancy.size()) throw Error("voxel runs do not fill grid");
    return g;
}

/// Loads voxel files relative to a dataset root, sharing one grid per path.
class ShapeStore {
public:
    explicit ShapeStore(fs::path root) : root_(std::move(root)) {}

    VoxelPtr get(const std::string& ref) {
        if (ref.empty()) return nullptr;
        std::lock_guard<std::mutex> lock(mu_);
        if (auto it = cache_.find(ref); it != cache_.end()) return it->second;
        auto grid = std::make_shared<const VoxelGrid>(decode_voxels(read_text(root_ / ref)));
        cache_.emplace(ref, grid);
        return grid;
    }

private:
    fs::path root_;
    std::mutex mu_;
    std::map<std::string, VoxelPtr> cache_;
};

// ---------------------------------------------------------------------------
// Scenes
// ---------------------------------------------------------------------------

inline Json to_json(const SceneInstance& s) {
    Json j;
    j["scene_id"] = s.scene_id;
    j["camera"] = {{"fx", s.camera.fx}, {"fy", s.camera.fy}, {"cx", s.camera.cx},
                   {"cy", s.camera.cy}, {"width", s.camera.width}, {"height", s.camera.height}};
    Json gts = Json::array();
    for (const auto& g : s.gt_objects) {
        gts.push_back({{"id", g.id},
                       {"category", g.category},
                       {"translation", vec_json(g.pose.translation)},
                       {"log_scale", vec_json(g.pose.log_scale)},
                       {"rotation_quat", quat_json(g.pose.rotation)},
                       {"symmetry_order", g.symmetry_order},
                       {"box2d", box_json(g.box2d)},
                       {"shape_ref", g.shape_ref}});
    }
    j["gt_objects"] = std::move(gts);
    Json un = Json::array();
    for (const auto& u : s.unary) {
        Json o = {{"id", u.id},
                  {"category", u.category},
                  {"translation", vec_json(u.translation)},
                  {"log_scale", vec_json(u.log_scale)},
                  {"rotation_prob", vector_json(u.rotation_prob)},
                  {"score", u.score}};
        if (u.box2d) o["box2d"] = box_json(*u.box2d);
        if (!u.shape_ref.empty()) o["shape_ref"] = u.shape_ref;
        un.push_back(std::move(o));
    }
    j["unary"] = std::move(un);
    Json rel = Json::array();
    for (const auto& r : s.relative) {
        rel.push_back({{"source", r.source_id},
                       {"target", r.target_id},
                       {"rel_translation", vec_json(r.rel_translation)},
                       {"rel_log_scale", vec_json(r.rel_log_scale)},
                       {"direction_prob", vector_json(r.direction_prob)}});
    }
    j["relative"] = std::move(rel);
    return j;
}

/// Structural check of a scene document: required fields, types and array
/// lengths. Returns an empty string when valid, otherwise the first problem.
inline std::string schema_error(const Json& j) {
    auto need = [](const Json& o, const char* key, auto pred, const char* what) -> std::string {
        if (!o.is_object() || !o.contains(key)) return std::string("missing ") + key;
        if (!pred(o.at(key))) return std::string(key) + " must be " + what;
        return {};
    };
    auto is_num = [](const Json& v) { return v.is_number(); };
    auto is_int = [](const Json& v) { return v.is_number_integer(); };
    auto is_str = [](const Json& v) { return v.is_string(); };
    auto num_array = [](std::size_t n) {
        return [n](const Json& v) {
            return v.is_array() && (n == 0 ? !v.empty() : v.size() == n) &&
                   std::all_of(v.begin(), v.end(), [](const Json& e) { return e.is_number(); });
        };
    };
    std::string err;
    if (!(err = need(j, "scene_id", is_str, "a string")).empty()) return err;
    if (!(err = need(j, "camera", [](const Json& v) { return v.is_object(); }, "an object")).empty()) return err;
    for (const char* k : {"fx", "fy", "cx", "cy"})
        if (!(err = need(j["camera"], k, is_num, "a number")).empty()) return "camera." + err;
    for (const char* k : {"width", "height"})
        if (!(err = need(j["camera"], k, is_int, "an integer")).empty()) return "camera." + err;
    for (const char* list : {"gt_objects", "unary", "relative"})
        if (!(err = need(j, list, [](const Json& v) { return v.is_array(); }, "an array")).empty()) return err;
    for (const auto& g : j["gt_objects"]) {
        if (!(err = need(g, "id", is_int, "an integer")).empty() ||
            !(err = need(g, "category", is_str, "a string")).empty() ||
            !(err = need(g, "translation", num_array(3), "3 numbers")).empty() ||
            !(err = need(g, "log_scale", num_array(3), "3 numbers")).empty() ||
            !(err = need(g, "rotation_quat", num_array(4), "4 numbers")).empty() ||
            !(err = need(g, "symmetry_order", is_int, "an integer")).empty() ||
            !(err = need(g, "box2d", num_array(4), "4 numbers")).empty() ||
            !(err = need(g, "shape_ref", is_str, "a string")).empty())
            return "gt_objects[]." + err;
    }
    std::size_t k_rot = 0, k_dir = 0;
    for (const auto& u : j["unary"]) {
        if (!(err = need(u, "id", is_int, "an integer")).empty() ||
            !(err = need(u, "category", is_str, "a string")).empty() ||
            !(err = need(u, "translation", num_array(3), "3 numbers")).empty() ||
            !(err = need(u, "log_scale", num_array(3), "3 numbers")).empty() ||
            !(err = need(u, "rotation_prob", num_array(0), "a non-empty number array")).empty() ||
            !(err = need(u, "score", is_num, "a number")).empty())
            return "unary[]." + err;
        if (u.contains("box2d") && !num_array(4)(u["box2d"])) return "unary[].box2d must be 4 numbers";
        if (k_rot && u["rotation_prob"].size() != k_rot) return "unary[].rotation_prob length differs";
        k_rot = u["rotation_prob"].size();
    }
    for (const auto& r : j["relative"]) {
        if (!(err = need(r, "source", is_int, "an integer")).empty() ||
            !(err = need(r, "target", is_int, "an integer")).empty() ||
            !(err = need(r, "rel_translation", num_array(3), "3 numbers")).empty() ||
            !(err = need(r, "rel_log_scale", num_array(3), "3 numbers")).empty() ||
            !(err = need(r, "direction_prob", num_array(0), "a non-empty number array")).empty())
            return "relative[]." + err;
        if (k_dir && r["direction_prob"].size() != k_dir) return "relative[].direction_prob length differs";
        k_dir = r["direction_prob"].size();
    }
    return {};
}

inline SceneInstance scene_from_json(const Json& j, ShapeStore* shapes = nullptr) {
    if (const auto err = schema_error(j); !err.empty()) throw Error("invalid scene: " + err);
    SceneInstance s;
    s.scene_id = j["scene_id"].get<std::string>();
    const auto& c = j["camera"];
    s.camera = {num(c["fx"]), num(c["fy"]), num(c["cx"]), num(c["cy"]), c["width"].get<int>(), c["height"].get<int>()};
    for (const auto& g : j["gt_objects"]) {
        GroundTruthObject o;
        o.id = g["id"].get<int>();
        o.category = g["category"].get<std::string>();
        o.pose = Pose(vec_from(g["translation"]), vec_from(g["log_scale"]), quat_from(g["rotation_quat"]));
        o.symmetry_order = g["symmetry_order"].get<int>();
        o.box2d = box_from(g["box2d"]);
        o.shape_ref = g["shape_ref"].get<std::string>();
        if (shapes) o.shape = shapes->get(o.shape_ref);
        validate(o);
        s.gt_objects.push_back(std::move(o));
    }
    for (const auto& u : j["unary"]) {
        UnaryPrediction p;
        p.id = u["id"].get<int>();
        p.category = u["category"].get<std::string>();
        p.translation = vec_from(u["translation"]);
        p.log_scale = vec_from(u["log_scale"]);
        p.rotation_prob = doubles(u["rotation_prob"]);
        p.score = num(u["score"]);
        if (u.contains("box2d")) p.box2d = box_from(u["box2d"]);
        if (u.contains("shape_ref")) {
            p.shape_ref = u["shape_ref"].get<std::string>();
            if (shapes) p.shape = shapes->get(p.shape_ref);
        }
        s.unary.push_back(std::move(p));
    }
    for (const auto& r : j["relative"]) {
        RelativePrediction p;
        p.source_id = r["source"].get<int>();
        p.target_id = r["target"].get<int>();
        p.rel_translation = vec_from(r["rel_translation"]);
        p.rel_log_scale = vec_from(r["rel_log_scale"]);
        p.direction_prob = doubles(r["direction_prob"]);
        s.relative.push_back(std::move(p));
    }
    return s;
}

// ---------------------------------------------------------------------------
// Codebooks
// ---------------------------------------------------------------------------

inline Json to_json(const RotationBinTable& t) {
    Json a = Json::array();
    for (const auto& q : t.bins()) a.push_back(quat_json(q));
    return a;
}

inline Json to_json(const DirectionBinTable& t) {
    Json a = Json::array();
    for (const auto& v : t.bins()) a.push_back(vec_json(v));
    return a;
}

inline RotationBinTable rotation_table_from(const Json& j, CodebookSource src = CodebookSource::clustered) {
    if (!j.is_array() || j.empty()) throw Error("rotation codebook must be a non-empty array");
    std::vector<Quat> bins;
    for (const auto& e : j) bins.push_back(quat_from(e));
    return RotationBinTable(std::move(bins), src);
}

inline DirectionBinTable direction_table_from(const Json& j, CodebookSource src = CodebookSource::clustered) {
    if (!j.is_array() || j.empty()) throw Error("direction codebook must be a non-empty array");
    std::vector<Vec3> bins;
    for (const auto& e : j) bins.push_back(vec_from(e));
    return DirectionBinTable(std::move(bins), src);
}

/// {"rotation": [[w,x,y,z], ...], "direction": [[x,y,z], ...]}
inline Json to_json(const Codebooks& c) {
    Json j;
    j["rotation"] = to_json(c.rotation);
    j["direction"] = to_json(c.direction);
    return j;
}

inline Codebooks codebooks_from(const Json& j) {
    if (!j.is_object() || !j.contains("rotation") || !j.contains("direction"))
        throw Error("codebooks file needs 'rotation' and 'direction'");
    return {rotation_table_from(j["rotation"]), direction_table_from(j["direction"])};
}

inline Codebooks read_codebooks(const fs::path& path) {
    if (!fs::exists(path)) throw Error("missing codebook: " + path.string());
    return codebooks_from(read_json(path));
}

// ---------------------------------------------------------------------------
// Configs
// ---------------------------------------------------------------------------

inline Json to_json(const LayoutConfig& l) {
    Json cats = Json::array();
    for (const auto& c : l.categories)
        cats.push_back({{"name", c.name},
                        {"extent_min", vec_json(c.extent_min)},
                        {"extent_max", vec_json(c.extent_max)},
                        {"symmetry_order", c.symmetry_order},
                        {"primitive", to_string(c.primitive)},
                        {"weight", c.weight},
                        {"max_per_scene", c.max_per_scene}});
    Json rules = Json::array();
    for (const auto& r : l.rules)
        rules.push_back({{"anchor", r.anchor},
                         {"dependent", r.dependent},
                         {"min_dist", r.min_dist},
                         {"max_dist", r.max_dist},
                         {"facing", r.facing}});
    Json j;
    j["categories"] = std::move(cats);
    j["rules"] = std::move(rules);
    j["min_objects"] = l.min_objects;
    j["max_objects"] = l.max_objects;
    j["room"] = {{"x_min", l.room_x_min}, {"x_max", l.room_x_max}, {"z_min", l.room_z_min}, {"z_max", l.room_z_max}};
    j["camera_height"] = Json::array({l.camera_height_min, l.camera_height_max});
    j["camera"] = {{"fx", l.camera.fx}, {"fy", l.camera.fy}, {"cx", l.camera.cx},
                   {"cy", l.camera.cy}, {"width", l.camera.width}, {"height", l.camera.height}};
    return j;
}

/// Missing keys keep their defaults.
inline LayoutConfig layout_from(const Json& j) {
    LayoutConfig l = LayoutConfig::defaults();
    if (j.contains("categories")) {
        l.categories.clear();
        for (const auto& c : j["categories"]) {
            CategorySpec s;
            s.name = c.at("name").get<std::string>();
            s.extent_min = vec_from(c.at("extent_min"));
            s.extent_max = vec_from(c.at("extent_max"));
            s.symmetry_order = c.value("symmetry_order", 1);
            s.primitive = parse_primitive(c.value("primitive", std::string("box")));
            s.weight = c.value("weight", 1.0);
            s.max_per_scene = c.value("max_per_scene", 100);
            l.categories.push_back(std::move(s));
        }
    }
    if (j.contains("rules")) {
        l.rules.clear();
        for (const auto& r : j["rules"])
            l.rules.push_back({r.at("anchor").get<std::string>(), r.at("dependent").get<std::string>(),
                               r.value("min_dist", 0.4), r.value("max_dist", 1.0), r.value("facing", true)});
    }
    l.min_objects = j.value("min_objects", l.min_objects);
    l.max_objects = j.value("max_objects", l.max_objects);
    if (j.contains("room")) {
        const auto& r = j["room"];
        l.room_x_min = r.value("x_min", l.room_x_min);
        l.room_x_max = r.value("x_max", l.room_x_max);
        l.room_z_min = r.value("z_min", l.room_z_min);
        l.room_z_max = r.value("z_max", l.room_z_max);
    }
    if (j.contains("camera_height")) {
        const auto h = doubles(j["camera_height"], 2);
        l.camera_height_min = h[0];
        l.camera_height_max = h[1];
    }
    if (j.contains("camera")) {
        const auto& c = j["camera"];
        l.camera.fx = c.value("fx", l.camera.fx);
        l.camera.fy = c.value("fy", l.camera.fy);
        l.camera.cx = c.value("cx", l.camera.cx);
        l.camera.cy = c.value("cy", l.camera.cy);
        l.camera.width = c.value("width", l.camera.width);
        l.camera.height = c.value("height", l.camera.height);
    }
    l.validate();
    return l;
}

inline Json to_json(const NoiseProfile& n) {
    return {{"sigma_t_unary", n.sigma_t_unary},
            {"sigma_s_unary", n.sigma_s_unary},
            {"rotation_unary_temp", n.rotation_unary_temp},
            {"rotation_flip_prob", n.rotation_flip_prob},
            {"sigma_t_rel", n.sigma_t_rel},
            {"sigma_s_rel", n.sigma_s_rel},
            {"direction_kappa", maybe_inf(n.direction_kappa)},
            {"score_alpha_beta", Json::array({n.score_alpha, n.score_beta})},
            {"fp_score_alpha_beta", Json::array({n.fp_score_alpha, n.fp_score_beta})},
            {"fp_rate", n.fp_rate},
            {"box_jitter", n.box_jitter}};
}

inline NoiseProfile noise_from(const Json& j) {
    NoiseProfile n;
    n.sigma_t_unary = j.value("sigma_t_unary", n.sigma_t_unary);
    n.sigma_s_unary = j.value("sigma_s_unary", n.sigma_s_unary);
    n.rotation_unary_temp = j.value("rotation_unary_temp", n.rotation_unary_temp);
    n.rotation_flip_prob = j.value("rotation_flip_prob", n.rotation_flip_prob);
    n.sigma_t_rel = j.value("sigma_t_rel", n.sigma_t_rel);
    n.sigma_s_rel = j.value("sigma_s_rel", n.sigma_s_rel);
    if (j.contains("direction_kappa")) n.direction_kappa = maybe_inf_from(j["direction_kappa"]);
    if (j.contains("score_alpha_beta")) {
        const auto ab = doubles(j["score_alpha_beta"], 2);
        n.score_alpha = ab[0];
        n.score_beta = ab[1];
    }
    if (j.contains("fp_score_alpha_beta")) {
        const auto ab = doubles(j["fp_score_alpha_beta"], 2);
        n.fp_score_alpha = ab[0];
        n.fp_score_beta = ab[1];
    }
    n.fp_rate = j.value("fp_rate", n.fp_rate);
    n.box_jitter = j.value("box_jitter", n.box_jitter);
    n.validate();
    return n;
}

inline Json to_json(const Thresholds& t) {
    return {{"delta_t", t.delta_t}, {"delta_s", t.delta_s}, {"delta_q", t.delta_q},
            {"delta_V", t.delta_V}, {"delta_b", t.delta_b}};
}

inline Thresholds thresholds_from(const Json& j) {
    Thresholds t;
    t.delta_t = j.value("delta_t", t.delta_t);
    t.delta_s = j.value("delta_s", t.delta_s);
    t.delta_q = j.value("delta_q", t.delta_q);
    t.delta_V = j.value("delta_V", t.delta_V);
    t.delta_b = j.value("delta_b", t.delta_b);
    t.validate();
    return t;
}

// ---------------------------------------------------------------------------
// Fused scenes
// ---------------------------------------------------------------------------

inline Json to_json(const FusedScene& f) {
    Json objs = Json::array();
    for (const auto& o : f.objects) {
        Json j = {{"id", o.id},
                  {"category", o.category},
                  {"translation", vec_json(o.translation)},
                  {"log_scale", vec_json(o.log_scale)},
                  {"rotation_bin", o.rotation_bin},
                  {"rotation_quat", quat_json(o.rotation)},
                  {"rotation_cost", vector_json(o.rotation_cost)},
                  {"score", o.score}};
        if (o.box2d) j["box2d"] = box_json(*o.box2d);
        if (!o.shape_ref.empty()) j["shape_ref"] = o.shape_ref;
        objs.push_back(std::move(j));
    }
    return {{"scene_id", f.scene_id}, {"objects", std::move(objs)}};
}

inline FusedScene fused_from_json(const Json& j, ShapeStore* shapes = nullptr) {
    if (!j.contains("scene_id") || !j.contains("objects")) throw Error("invalid fused scene");
    FusedScene f;
    f.scene_id = j["scene_id"].get<std::string>();
    for (const auto& o : j["objects"]) {
        FusedObject x;
        x.id = o.at("id").get<int>();
        x.category = o.value("category", std::string());
        x.translation = vec_from(o.at("translation"));
        x.log_scale = vec_from(o.at("log_scale"));
        x.rotation_bin = o.at("rotation_bin").get<std::size_t>();
        x.rotation = quat_from(o.at("rotation_quat")).normalized();
        x.rotation_cost = doubles(o.at("rotation_cost"));
        x.score = num(o.at("score"));
        if (o.contains("box2d")) x.box2d = box_from(o["box2d"]);
        if (o.contains("shape_ref")) {
            x.shape_ref = o["shape_ref"].get<std::string>();
            if (shapes) x.shape = shapes->get(x.shape_ref);
        }
        f.objects.push_back(std::move(x));
    }
    return f;
}

// ---------------------------------------------------------------------------
// Priors
// ---------------------------------------------------------------------------

inline Json to_json(const PairPrior& p) {
    Json cells = Json::array();
    for (const auto& [key, g] : p.cells) {
        const auto a = key.find('|');
        const auto b = key.find('|', a + 1);
        Json means = Json::array(), vars = Json::array();
        for (const auto& m : g.means) means.push_back(vec_json(m));
        for (const auto& v : g.variances) vars.push_back(vec_json(v));
        cells.push_back({{"source", key.substr(0, a)},
                         {"target", key.substr(a + 1, b - a - 1)},
                         {"modality", key.substr(b + 1)},
                         {"weights", vector_json(g.weights)},
                         {"means", std::move(means)},
                         {"variances", std::move(vars)}});
    }
    return {{"cells", std::move(cells)}};
}

inline PairPrior prior_from(const Json& j) {
    PairPrior p;
    for (const auto& c : j.at("cells")) {
        DiagGmm g;
        g.weights = doubles(c.at("weights"));
        for (const auto& m : c.at("means")) g.means.push_back(vec_from(m));
        for (const auto& v : c.at("variances")) g.variances.push_back(vec_from(v));
        if (g.means.size() != g.weights.size() || g.variances.size() != g.weights.size())
            throw Error("prior component count mismatch");
        p.cells.emplace(PairPrior::key(c.at("source").get<std::string>(), c.at("target").get<std::string>(),
                                       parse_modality(c.at("modality").get<std::string>())),
                        std::move(g));
    }
    return p;
}

// ---------------------------------------------------------------------------
// Evaluation reports
// ---------------------------------------------------------------------------

inline Json to_json(const ComponentStats& s) {
    return {{"median", s.median}, {"mean", s.mean}, {"pct_within", s.pct_within}, {"count", s.count}};
}

inline Json to_json(const EvalReport& r, bool with_curves = true) {
    Json comps;
    comps["translation"] = to_json(r.translation);
    comps["rotation"] = to_json(r.rotation);
    comps["scale"] = to_json(r.scale);
    if (r.shape) comps["shape"] = to_json(*r.shape);
    Json det = Json::array();
    for (const auto& [name, ap] : r.detection) {
        Json d = {{"criteria", name}, {"ap", ap.ap}};
        if (with_curves) {
            Json pr = Json::array();
            for (const auto& p : ap.curve)
                pr.push_back({{"score", p.score},
                              {"tp", p.true_positive},
                              {"recall", p.recall},
                              {"precision", p.precision},
                              {"interpolated_precision", p.interpolated_precision}});
            d["pr"] = std::move(pr);
        }
        det.push_back(std::move(d));
    }
    return {{"components", std::move(comps)}, {"detection", std::move(det)}};
}

inline std::string short_number(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

inline std::string csv_header(const Thresholds& th, const EvalReport& r) {
    std::string h = "method,trans_median,trans_mean,trans_pct_le_" + short_number(th.delta_t) +
                    "m,rot_median,rot_mean,rot_pct_le_" + short_number(th.delta_q) +
                    "deg,scale_median,scale_mean,scale_pct_le_" + short_number(th.delta_s);
    for (const auto& [name, ap] : r.detection) h += ",ap_" + name;
    return h + "\n";
}

/// One Table-1-style row: median, mean and percent-within per component,
/// then AP (percent) per criteria set.
inline std::string csv_row(const std::string& method, const EvalReport& r) {
    std::string row = method;
    for (const auto* c : {&r.translation, &r.rotation, &r.scale})
        row += "," + format_double(c->median) + "," + format_double(c->mean) + "," + format_double(c->pct_within);
    for (const auto& [name, ap] : r.detection) row += "," + format_double(100.0 * ap.ap);
    return row + "\n";
}

inline std::string pr_csv(const ApResult& ap) {
    std::string out = "rank,score,tp,recall,precision,interpolated_precision\n";
    for (std::size_t i = 0; i < ap.curve.size(); ++i) {
        const auto& p = ap.curve[i];
        out += std::to_string(i + 1) + "," + format_double(p.score) + "," + (p.true_positive ? "1" : "0") + "," +
               format_double(p.recall) + "," + format_double(p.precision) + "," +
               format_double(p.interpolated_precision) + "\n";
    }
    return out;
}

}  // namespace relfuse::io
