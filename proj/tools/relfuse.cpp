#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "relfuse/commands.hpp"

using namespace relfuse;

int main(int argc, char** argv) {
    CLI::App app{"Relative-pose fusion of per-object 3D estimates"};
    app.require_subcommand(1);
    app.fallthrough();
    unsigned jobs = 1;
    app.add_option("--jobs", jobs, "Worker threads")->check(CLI::Range(1u, 256u));

    cmd::GenOptions gen;
    std::string gen_mode = "gt-box";
    auto* g = app.add_subcommand("gen", "Generate a synthetic dataset");
    g->add_option("--scenes", gen.scenes, "Number of scenes")->default_val(100);
    g->add_option("--seed", gen.seed, "Base seed")->envname("RELFUSE_SEED")->default_val(0);
    g->add_option("--layout", gen.layout_file, "Layout config JSON")->check(CLI::ExistingFile);
    g->add_option("--noise", gen.noise_file, "Noise profile JSON")->check(CLI::ExistingFile);
    g->add_option("--mode", gen_mode, "gt-box or detection")->check(CLI::IsMember({"gt-box", "detection"}));
    g->add_option("--out", gen.out, "Output directory")->required();

    cmd::FuseOptions fuse;
    auto* f = app.add_subcommand("fuse", "Fuse unary and relative predictions");
    f->add_option("--in", fuse.in, "Dataset directory")->required();
    f->add_option("--lambda", fuse.lambda, "Unary weight")->default_val(1.0);
    f->add_option("--score-thresh", fuse.score_threshold, "Detection score gate")->default_val(0.3);
    f->add_option("--codebooks", fuse.codebooks, "Codebooks JSON (default: <in>/codebooks.json)");
    f->add_option("--out", fuse.out, "Output directory")->required();

    cmd::EvalOptions ev;
    auto* e = app.add_subcommand("eval", "Evaluate predictions against ground truth");
    e->add_option("--pred", ev.pred, "Prediction directory (fused output or dataset)")->required();
    e->add_option("--gt", ev.gt, "Dataset directory")->required();
    e->add_option("--thresholds", ev.thresholds, "Thresholds JSON")->check(CLI::ExistingFile);
    e->add_option("--criteria", ev.criteria, "Comma-separated criteria sets, e.g. all,box2d+trans");
    e->add_option("--method", ev.method, "Row label in the CSV")->default_val("pred");
    e->add_option("--out", ev.out, "Report JSON path")->required();

    cmd::CompareOptions cmp;
    auto* c = app.add_subcommand("compare", "Compare unary, fused and CRF estimates");
    c->add_option("--in", cmp.in, "Dataset directory")->required();
    c->add_option("--methods", cmp.methods, "Comma-separated subset of unary,fused,crf")->default_val("unary,fused,crf");
    c->add_option("--priors", cmp.priors, "Priors JSON (needed for crf)")->check(CLI::ExistingFile);
    c->add_option("--thresholds", cmp.thresholds, "Thresholds JSON")->check(CLI::ExistingFile);
    c->add_option("--criteria", cmp.criteria, "Comma-separated criteria sets");
    c->add_option("--lambda", cmp.lambda, "Unary weight")->default_val(1.0);
    c->add_option("--score-thresh", cmp.score_threshold, "Detection score gate")->default_val(0.3);
    c->add_option("--out", cmp.out, "Output CSV")->required();

    cmd::FitPriorOptions fit;
    auto* p = app.add_subcommand("fit-prior", "Fit pairwise layout priors");
    p->add_option("--in", fit.in, "Dataset directory")->required();
    p->add_option("--components", fit.components, "Mixture components")->default_val(10);
    p->add_option("--seed", fit.seed, "Seed")->envname("RELFUSE_SEED")->default_val(0);
    p->add_option("--out", fit.out, "Output priors JSON")->required();

    cmd::SweepOptions sw;
    auto* s = app.add_subcommand("sweep", "Re-run fuse and eval over a parameter");
    s->add_option("--in", sw.in, "Dataset directory")->required();
    s->add_option("--param", sw.param, "lambda, kappa or sigma_t_rel")
        ->check(CLI::IsMember({"lambda", "kappa", "sigma_t_rel"}))
        ->required();
    s->add_option("--values", sw.values, "Comma-separated values")->required();
    s->add_option("--thresholds", sw.thresholds, "Thresholds JSON")->check(CLI::ExistingFile);
    s->add_option("--criteria", sw.criteria, "Comma-separated criteria sets");
    s->add_option("--lambda", sw.lambda, "Unary weight when not swept")->default_val(1.0);
    s->add_option("--score-thresh", sw.score_threshold, "Detection score gate")->default_val(0.3);
    s->add_option("--out", sw.out, "Output CSV")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*g) {
            gen.mode = parse_mode(gen_mode);
            gen.jobs = jobs;
            cmd::cmd_gen(gen);
        } else if (*f) {
            fuse.jobs = jobs;
            cmd::cmd_fuse(fuse);
        } else if (*e) {
            ev.jobs = jobs;
            cmd::cmd_eval(ev);
        } else if (*c) {
            cmp.jobs = jobs;
            std::cout << cmd::cmd_compare(cmp);
        } else if (*p) {
            fit.jobs = jobs;
            cmd::cmd_fit_prior(fit);
        } else if (*s) {
            sw.jobs = jobs;
            std::cout << cmd::cmd_sweep(sw);
        }
    } catch (const std::exception& ex) {
        std::fprintf(stderr, "relfuse: %s\n", ex.what());
        return 1;
    }
    return 0;
}
