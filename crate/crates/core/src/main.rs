fn main() {
    std::process::exit(cellstorm::cli::run(std::env::args_os()));
}
