fn main() {
    std::process::exit(blindspot_cli::run(std::env::args_os()));
}
