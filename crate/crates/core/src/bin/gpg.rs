fn main() {
    std::process::exit(gpg::cli::run(std::env::args_os()));
}
