fn main() {
    std::process::exit(dtanet::cli::run_from(std::env::args_os()));
}
