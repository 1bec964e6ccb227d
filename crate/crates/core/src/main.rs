fn main() {
    std::process::exit(boxrl::cli::run(std::env::args_os()));
}
