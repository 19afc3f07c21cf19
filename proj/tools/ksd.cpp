// ksd: command-line front end.
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "ksd/commands.hpp"
#include "ksd/parallel.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Kirkwood-Salsburg solver for grand-canonical distribution functions"};
    app.set_version_flag("--version", std::string(KSD_VERSION));
    app.require_subcommand(1);

    std::string config;
    std::string out;
    int threads = 0;
    bool override_adm = false;
    std::uint64_t seed = 12345;

    const char* names[][2] = {
        {"check", "report regularity constants and gates"},
        {"solve", "solve the truncated hierarchy for rho_1..rho_M"},
        {"derivative", "compute the functional derivative along a perturbation"},
        {"limit-sweep", "restrict solutions on growing boxes to a fixed inner box"},
        {"oracle", "brute-force grand-canonical sums on the grid"},
    };
    for (const auto& [name, help] : names) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", config, "JSON run configuration")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", out, "output directory (overrides outputs.dir)");
        sub->add_option("--threads", threads, "worker threads (0 = runtime default)")->check(CLI::NonNegativeNumber);
        sub->add_flag("--override-admissibility", override_adm, "proceed past admissibility and activity gates");
        sub->add_option("--seed", seed, "seed for the stability probe");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return ksd::kExitConfig;
    }

    ksd::set_thread_count(threads);
    ksd::CommandOptions opt;
    if (!out.empty()) opt.out = out;
    opt.override_admissibility = override_adm;
    opt.seed = seed;
    return ksd::run_command(app.get_subcommands().front()->get_name(), config, opt);
}
