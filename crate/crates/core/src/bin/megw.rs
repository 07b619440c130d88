fn main() {
    std::process::exit(megw::cli::run(std::env::args_os()));
}
