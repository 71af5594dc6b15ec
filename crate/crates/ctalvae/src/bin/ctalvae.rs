fn main() {
    std::process::exit(ctalvae::cli::run_cli(std::env::args_os()));
}
