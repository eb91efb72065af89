fn main() {
    std::process::exit(octopus_cli::train::main_process());
}
