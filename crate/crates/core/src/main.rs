fn main() {
    std::process::exit(tcftl::cli::run(std::env::args_os()));
}
