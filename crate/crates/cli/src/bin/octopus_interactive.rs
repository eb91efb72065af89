fn main() {
    std::process::exit(octopus_cli::run_interactive_process());
}
