fn main() {
    std::process::exit(svformer_cli::run(std::env::args_os()));
}
