fn main() {
    std::process::exit(fbm_ergodic_cli::run(std::env::args_os()));
}
