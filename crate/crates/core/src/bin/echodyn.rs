fn main() {
    std::process::exit(echodyn::cli::run(std::env::args_os()));
}
