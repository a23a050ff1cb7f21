fn main() {
    std::process::exit(elmi::cli::run(std::env::args_os()));
}
