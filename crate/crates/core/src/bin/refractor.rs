fn main() {
    std::process::exit(refractor_core::cli::run(std::env::args_os()));
}
