fn main() {
    std::process::exit(roughbvp_cli::run(std::env::args_os()));
}
