fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter("GRADSYNC_LOG")).init();
    std::process::exit(gradsync::cli::main_with_args(std::env::args_os()));
}
