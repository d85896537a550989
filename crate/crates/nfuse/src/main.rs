fn main() {
    std::process::exit(nfuse::cli::run(std::env::args_os()));
}
