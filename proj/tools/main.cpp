#include "runner.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"Geodesic X-ray transform experiments"};
    app.require_subcommand(1);
    std::string config;
    auto* run = app.add_subcommand("run", "Execute the experiment selected by a config file");
    run->add_option("config", config, "Config file")->required();
    auto* describe = app.add_subcommand("describe", "Validate a config file and print the resolved plan");
    describe->add_option("config", config, "Config file")->required();
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    if (run->parsed()) return gxr::cli::run(config, std::cout, std::cerr);
    return gxr::cli::describe(config, std::cout, std::cerr);
}
