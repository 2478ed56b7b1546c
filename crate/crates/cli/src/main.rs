fn main() {
    let _ = env_logger::try_init();
    std::process::exit(lastiter_cli::cli_main(std::env::args_os()));
}
