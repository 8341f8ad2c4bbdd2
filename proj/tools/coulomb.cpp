// coulomb: command-line front end for the experiments module.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "coulomb/experiments.hpp"

namespace {

struct CommonFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    unsigned threads = 0;
};

void add_common(CLI::App* sub, CommonFlags& f, bool config_required) {
    auto* c = sub->add_option("--config", f.config, "Experiment config file (INI)");
    if (config_required) c->required();
    sub->add_option("--seed", f.seed, "Override experiment.seed");
    sub->add_option("--out", f.out, "Override experiment.out (output directory)");
    sub->add_option("--threads", f.threads,
                    std::string("Worker threads (default: $") + coulomb::thread_env_var + ", then hardware count)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Coulomb gas fluctuation experiments"};
    app.require_subcommand(1);

    CommonFlags flags;
    std::vector<std::size_t> gs_n;
    std::string gs_domain;
    std::optional<std::size_t> gs_seeds;
    std::optional<std::uint64_t> gs_budget;

    auto* kernel = app.add_subcommand("kernel-check", "PDE, Ewald splitting and grid-mean diagnostics of the torus kernel");
    auto* sample = app.add_subcommand("sample", "Run chains, write traces and checkpoints, optionally audit");
    auto* ground = app.add_subcommand("ground-state", "Ground-state lower-bound certificates and annealed minima");
    auto* sweep = app.add_subcommand("sweep", "Fluctuation scaling sweep with i.i.d. baseline");
    auto* analyze = app.add_subcommand("analyze", "Refit a scaling CSV and print equilibrium data");
    add_common(kernel, flags, false);
    add_common(sample, flags, true);
    add_common(ground, flags, false);
    add_common(sweep, flags, true);
    add_common(analyze, flags, false);
    ground->add_option("--n", gs_n, "Particle counts (ascending)");
    ground->add_option("--domain", gs_domain, "torus or euclidean")->check(CLI::IsMember({"torus", "euclidean"}));
    ground->add_option("--seeds", gs_seeds, "Number of annealing restarts");
    ground->add_option("--budget", gs_budget, "Annealing move budget (0: 3000 N)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : coulomb::exit_config;
    }

    using namespace coulomb;
    ExperimentKind kind = kernel->parsed()   ? ExperimentKind::kernel_check
                          : sample->parsed() ? ExperimentKind::sample
                          : ground->parsed() ? ExperimentKind::ground_state
                          : sweep->parsed()  ? ExperimentKind::sweep
                                             : ExperimentKind::analyze;
    try {
        ExperimentSpec spec = flags.config.empty() ? ExperimentSpec{} : load_spec(flags.config);
        if (flags.seed) spec.seed = *flags.seed;
        if (flags.out) spec.out = *flags.out;
        if (!gs_domain.empty()) spec.domain = parse_domain(gs_domain);
        if (!gs_n.empty()) spec.ns = gs_n;
        if (gs_seeds) spec.gs_seeds = *gs_seeds;
        if (gs_budget) spec.gs_budget = *gs_budget;
        validate(spec);
        unsigned threads = resolve_threads(flags.threads);
        Report rep = run_experiment(kind, spec, threads);
        std::cout << rep.message;
        if (!rep.message.empty() && rep.message.back() != '\n') std::cout << '\n';
        for (const auto& f : rep.files) std::cout << "wrote " << f << '\n';
        return rep.exit_code;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return exit_config;
    } catch (const UnsupportedDimensionError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return exit_config;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_failure;
    }
}
