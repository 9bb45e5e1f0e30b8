fn main() {
    std::process::exit(satxplain::cli::run(std::env::args_os()));
}
