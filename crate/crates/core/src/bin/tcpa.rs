fn main() {
    std::process::exit(tcpa_sim::cli::main_with(std::env::args_os()));
}
