fn main() {
    std::process::exit(pillar_edge::cli::main_with_args(std::env::args_os()));
}
