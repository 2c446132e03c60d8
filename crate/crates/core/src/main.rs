fn main() {
    std::process::exit(cdanse::cli::main_with_args(std::env::args_os()));
}
