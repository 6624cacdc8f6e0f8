fn main() {
    std::process::exit(scaletree::cli::run(std::env::args_os()));
}
