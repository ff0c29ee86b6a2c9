fn main() {
    std::process::exit(cvxnn::cli::run(std::env::args_os()));
}
