fn main() {
    std::process::exit(kolmo::cli::run(std::env::args_os()));
}
