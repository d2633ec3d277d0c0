fn main() {
    std::process::exit(parcal::cli::run(std::env::args_os()));
}
