use delay_action::cli;

fn main() {
    std::process::exit(cli::run_from_args());
}
