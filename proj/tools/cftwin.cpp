#include <CLI11.hpp>

#include <iostream>
#include <map>

#include "cftwin/commands.hpp"

int main(int argc, char** argv) {
    namespace cmd = cftwin::commands;
    CLI::App app{"Channel fingerprint reconstruction with conditional diffusion"};
    app.require_subcommand(1);

    cmd::Invocation inv;
    std::string config_path;
    std::uint64_t seed = 0;
    const std::map<std::string, std::string> about{
        {"gen", "Simulate CF pairs and write the train/test datasets"},
        {"train", "Train the conditional denoiser"},
        {"sample", "Reconstruct test maps and write heatmaps"},
        {"prune", "Score layers and remove them under a parameter budget"},
        {"distill", "Fine-tune the pruned student against the teacher"},
        {"eval", "Score a model or baseline on the test set"},
        {"plot", "Render truth, condition and reconstruction side by side"}};
    for (const auto& name : cmd::names()) {
        auto* sub = app.add_subcommand(name, about.at(name));
        sub->add_option("--config", config_path, "JSON configuration file")->check(CLI::ExistingFile);
        sub->add_option("--set", inv.sources.overrides, "Override a config key: dotted.key=value")->take_all();
        sub->add_option("--seed", seed, "Top-level seed (overrides the config)");
        sub->add_option("--out", inv.out, "Run directory for inputs and outputs")->capture_default_str();
        sub->callback([&inv, name] { inv.command = name; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return cmd::kConfigError;
    }
    if (!config_path.empty()) inv.sources.file = config_path;
    if (app.get_subcommand(inv.command)->count("--seed") > 0) inv.sources.seed = seed;
    return cmd::run_guarded(inv, std::cerr);
}
