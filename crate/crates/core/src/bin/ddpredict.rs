fn main() {
    env_logger::init();
    std::process::exit(ddpredict::cli::main_with_args(std::env::args_os().skip(1)));
}
