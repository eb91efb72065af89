fn main() {
    std::process::exit(octopus_cli::run_batch_process(Some("generate_title")));
}
