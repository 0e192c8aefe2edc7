fn main() {
    std::process::exit(compnerf::cli::main_with_args(std::env::args_os()));
}
