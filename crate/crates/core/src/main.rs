fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SPECFORGE_LOG", "warn")).init();
    std::process::exit(specforge::cli::run(std::env::args_os()));
}
