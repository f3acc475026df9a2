#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mmsense/runner.hpp"

namespace {

const char* const kCommands[] = {"gen", "train", "eval", "ablate", "gradcheck", "splits"};

bool known_command(const std::string& c) {
    for (const char* k : kCommands)
        if (c == k) return true;
    return false;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mmsense: multi-modal multi-task sensing runs"};
    app.require_subcommand(0, 0);

    std::string config_path, out_dir = ".";
    std::vector<std::string> overrides;
    app.add_option("command", overrides,
                   "command (gen|train|eval|ablate|gradcheck|splits) followed by key=value "
                   "overrides")
        ->expected(-1);
    app.add_option("--config", config_path, "JSON config file");
    app.add_option("--out", out_dir, "output directory (default: current directory)");

    CLI11_PARSE(app, argc, argv);

    if (overrides.empty() || !known_command(overrides.front())) {
        std::cerr << "usage: mmsense <gen|train|eval|ablate|gradcheck|splits> "
                     "[--config <path>] [--out <dir>] [key=value ...]\n";
        return 2;
    }
    std::string command = overrides.front();
    overrides.erase(overrides.begin());

    try {
        nlohmann::json tree = mmsense::default_config(command);
        if (!config_path.empty()) {
            std::ifstream f(config_path);
            if (!f) {
                std::cerr << "error: cannot open config file '" << config_path << "'\n";
                return 2;
            }
            nlohmann::json file_tree = nlohmann::json::parse(f);
            tree.merge_patch(file_tree);
        }
        for (const std::string& kv : overrides) mmsense::apply_override(tree, kv);
        mmsense::RunConfig cfg = mmsense::default_config(command);
        tree.get_to(cfg);
        if (const char* env_seed = std::getenv("MMSENSE_SEED")) {
            cfg.seed = std::stoull(env_seed);
        }
        return mmsense::run_command(command, cfg, out_dir, std::cout);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
