fn main() {
    std::process::exit(pi_sentry::cli::main());
}
