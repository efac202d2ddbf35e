fn main() {
    env_logger::init();
    std::process::exit(matforge::cli::run(std::env::args_os()));
}
