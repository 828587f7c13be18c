fn main() {
    env_logger::init();
    std::process::exit(spm_core::harness::cli_main(std::env::args_os()));
}
