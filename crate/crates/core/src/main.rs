fn main() {
    std::process::exit(oa_core::cli::run(std::env::args_os()));
}
