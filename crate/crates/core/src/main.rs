fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let code = narrative_harness::orchestrator::cli::run(std::env::args_os(), &|name| std::env::var(name).ok());
    std::process::exit(code);
}
