fn main() {
    std::process::exit(lowshot::pipeline::cli::run(std::env::args_os()));
}
