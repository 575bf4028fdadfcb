fn main() {
    std::process::exit(stvl::cli::run(std::env::args_os().skip(1)));
}
