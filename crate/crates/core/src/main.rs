fn main() {
    std::process::exit(cascadeboost::cli::parse_and_dispatch(std::env::args_os()));
}
