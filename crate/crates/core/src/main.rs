fn main() {
    std::process::exit(attnbias::cli::run(std::env::args_os()));
}
