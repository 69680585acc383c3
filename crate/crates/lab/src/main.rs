fn main() {
    std::process::exit(hkdyn::cli::run(std::env::args_os()));
}
