fn main() {
    env_logger::init();
    std::process::exit(trajsim::cli::cli_run(std::env::args_os()));
}
