fn main() {
    std::process::exit(miqp::cli::run(std::env::args_os()));
}
