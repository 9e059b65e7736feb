fn main() {
    std::process::exit(slhjb::cli::run(std::env::args_os()));
}
