fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DWNET_LOG", "warn")).init();
    std::process::exit(dwnet::cli::run(std::env::args_os()));
}
