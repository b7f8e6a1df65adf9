fn main() {
    std::process::exit(deep_eprop::cli::run(std::env::args_os()));
}
