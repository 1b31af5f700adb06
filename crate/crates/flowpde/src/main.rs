fn main() {
    std::process::exit(flowpde::cli::main_with_args(std::env::args_os()));
}
