fn main() {
    std::process::exit(exformer_cli::run(std::env::args_os()));
}
