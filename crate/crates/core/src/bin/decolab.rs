fn main() {
    std::process::exit(decolab::cli::main_with(std::env::args_os()));
}
