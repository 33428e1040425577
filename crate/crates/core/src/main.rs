fn main() {
    std::process::exit(lddr::cli::run(std::env::args_os()));
}
