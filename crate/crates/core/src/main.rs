fn main() {
    std::process::exit(hypiss::cli::run(std::env::args_os()));
}
