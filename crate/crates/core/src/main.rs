fn main() {
    std::process::exit(oncovit::cli::run(std::env::args_os()));
}
