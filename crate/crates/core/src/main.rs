fn main() {
    std::process::exit(blendsysid_core::harness::cli::run(std::env::args_os()));
}
