fn main() {
    std::process::exit(qla::cli::parse_and_dispatch(std::env::args_os()));
}
