fn main() {
    std::process::exit(gaitctl::cli::main_with_args(std::env::args_os()));
}
