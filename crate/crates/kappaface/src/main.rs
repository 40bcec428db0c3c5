fn main() {
    std::process::exit(kappaface::cli::run(std::env::args_os()));
}
