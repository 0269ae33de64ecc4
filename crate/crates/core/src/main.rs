fn main() {
    std::process::exit(ezcare::cli::run_from(std::env::args_os()));
}
