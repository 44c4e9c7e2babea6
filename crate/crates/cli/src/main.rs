fn main() {
    std::process::exit(treelcm_cli::run(std::env::args_os()));
}
