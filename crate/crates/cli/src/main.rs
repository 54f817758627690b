fn main() {
    std::process::exit(ptdet_cli::run(std::env::args_os()));
}
