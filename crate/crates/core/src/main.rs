fn main() {
    std::process::exit(emorl::cli::run(std::env::args_os()));
}
